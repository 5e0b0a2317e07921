//! Serves the completion contract with deterministic canned completions.
//!
//! ```text
//! seccode-mock-server --bind 127.0.0.1:8080 --fail-every 7
//! ```

use clap::Parser;
use seccode::generate::{Faults, MockServer};

#[derive(Debug, Parser)]
#[command(name = "seccode-mock-server", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Answer every k-th request with HTTP 503.
    #[arg(long)]
    fail_every: Option<usize>,
    /// Answer every k-th request with a body that violates the contract.
    #[arg(long)]
    malformed_every: Option<usize>,
}

fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let args = Args::parse();
    let server = MockServer::start(
        &args.bind,
        Faults {
            fail_every: args.fail_every,
            malformed_every: args.malformed_every,
        },
    )?;
    println!("listening on {}", server.url());
    server.wait();
    Ok(())
}

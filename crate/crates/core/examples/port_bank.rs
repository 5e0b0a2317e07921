//! Writes the C++ counterpart of every C scenario in a directory.
//!
//!     cargo run -p seccode-core --example port_bank -- scenarios [rewrite-table.tsv]

use std::path::PathBuf;

use seccode::lang::Language;
use seccode::scenario::{load_bank, translate_c_to_cpp, write_scenario, RewriteTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: port_bank <scenario-dir> [rewrite-table]")?);
    let table = match args.next() {
        Some(p) => RewriteTable::parse(&std::fs::read_to_string(p)?)?,
        None => RewriteTable::default(),
    };
    let loaded = load_bank(&dir)?;
    let mut n = 0;
    for s in loaded.bank.filter_language(Language::C).scenarios() {
        write_scenario(&dir, &translate_c_to_cpp(s, &table)?)?;
        n += 1;
    }
    println!("wrote {n} C++ scenarios to {}", dir.display());
    Ok(())
}

//! Sampling completions for every scenario and assembling them into
//! translation units.
//!
//! Wire contract (HTTP POST, JSON):
//!
//! ```text
//! request:  {"prompt": "...", "n": 1, "temperature": 0.6, "max_tokens": 512,
//!            "stop": [...], "scenario_id": "CWE-787-0-c", "sample_index": 4}
//! response: {"completions": ["..."]}
//! ```
//!
//! `scenario_id` and `sample_index` are informational; servers may ignore
//! them. One request is issued per sample so that retries stay per sample.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cstruct::{self, TokenKind};
use crate::scenario::{Scenario, ScenarioBank};

/// Never append more closing braces than this.
pub const MAX_CLOSING_BRACES: usize = 8;

pub const MOCK_SCHEME: &str = "mock://";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub samples_per_scenario: u32,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub endpoint: String,
    pub max_parallel: usize,
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub stop: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            samples_per_scenario: 30,
            temperature: 0.6,
            max_new_tokens: 512,
            endpoint: MOCK_SCHEME.to_string(),
            max_parallel: 4,
            retry_limit: 3,
            backoff_ms: 250,
            timeout_secs: 120,
            token_env: None,
            stop: Vec::new(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |m: &str| Err(GenerateError::Config(m.to_string()));
        if self.samples_per_scenario == 0 {
            return bad("samples_per_scenario must be at least 1");
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        if !(self.endpoint.starts_with(MOCK_SCHEME)
            || self.endpoint.starts_with("http://")
            || self.endpoint.starts_with("https://"))
        {
            return bad("endpoint must be an http(s):// URL or mock://");
        }
        Ok(())
    }

    pub fn samples_for(&self, s: &Scenario) -> u32 {
        s.samples_per_scenario.unwrap_or(self.samples_per_scenario)
    }

    pub fn temperature_for(&self, s: &Scenario) -> f64 {
        s.temperature.unwrap_or(self.temperature)
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("scenario `{0}` overrides samples_per_scenario to 0")]
    ZeroSamples(String),
    #[error("writing samples: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub n: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    #[serde(default)]
    pub scenario_id: String,
    #[serde(default)]
    pub sample_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub completions: Vec<String>,
}

/// A model endpoint. Implementations are called from several threads at once.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, ClientError>;
}

pub struct HttpClient {
    endpoint: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(endpoint: &str, token: Option<String>, timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(HttpClient {
            endpoint: endpoint.to_string(),
            token,
            http,
        })
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, ClientError> {
        let mut req = self.http.post(&self.endpoint).json(request);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Transport(format!("HTTP {status}")));
        }
        let body = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        parse_response(&body, request.n)
    }
}

pub fn parse_response(body: &str, n: u32) -> Result<Vec<String>, ClientError> {
    let parsed: CompletionResponse = serde_json::from_str(body).map_err(|e| ClientError::Malformed(e.to_string()))?;
    if parsed.completions.len() != n as usize {
        return Err(ClientError::Malformed(format!(
            "expected {n} completions, got {}",
            parsed.completions.len()
        )));
    }
    Ok(parsed.completions)
}

/// Canned completions, chosen per sample by a hash of (scenario, index).
/// Between them they cover the secure, vulnerable and uncompilable cases.
const MOCK_COMPLETIONS: [&str; 3] = [
    "    return 0;\n}\n",
    "    char copy[8];\n    strcpy(copy, argv[0]);\n    return 0;\n}\n",
    "    return 0\n}\n",
];

/// Deterministic stand-in for a model.
pub fn mock_completion(scenario_id: &str, sample_index: u32) -> String {
    let h = crate::fsutil::sha256_hex(format!("{scenario_id}#{sample_index}").as_bytes());
    let pick = usize::from_str_radix(&h[..2], 16).unwrap_or(0) % MOCK_COMPLETIONS.len();
    MOCK_COMPLETIONS[pick].to_string()
}

/// In-process client behind `mock://` endpoints.
#[derive(Debug, Default)]
pub struct MockClient;

impl CompletionClient for MockClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, ClientError> {
        Ok((0..request.n)
            .map(|i| mock_completion(&request.scenario_id, request.sample_index + i))
            .collect())
    }
}

/// Builds the client an endpoint string asks for.
pub fn client_for(config: &GenerationConfig) -> Result<Box<dyn CompletionClient>, GenerateError> {
    if config.endpoint.starts_with(MOCK_SCHEME) {
        return Ok(Box::new(MockClient));
    }
    let token = match &config.token_env {
        Some(var) => {
            Some(std::env::var(var).map_err(|_| GenerateError::Config(format!("token variable `{var}` is not set")))?)
        }
        None => None,
    };
    HttpClient::new(&config.endpoint, token, Duration::from_secs(config.timeout_secs))
        .map(|c| Box::new(c) as Box<dyn CompletionClient>)
        .map_err(|e| GenerateError::Config(e.to_string()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenMetadata {
    pub attempts: u32,
    pub elapsed_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub scenario_id: String,
    pub sample_index: u32,
    /// True when every attempt failed; completion is then empty.
    #[serde(default)]
    pub failed: bool,
    pub completion: String,
    pub assembled: String,
    /// Timing and attempt counts vary between runs, so they are kept out of
    /// the main record and persisted separately.
    #[serde(skip)]
    pub gen_metadata: GenMetadata,
}

/// Byte spans of the brace tokens outside comments and literals.
fn brace_events(text: &str, lang: crate::lang::Language) -> Vec<(usize, usize, u8)> {
    cstruct::tokenize(text, lang)
        .into_iter()
        .filter_map(|t| match t.kind {
            TokenKind::Punct(c @ (b'{' | b'}')) => Some((t.start, t.end, c)),
            _ => None,
        })
        .collect()
}

/// `prompt + truncate(completion) + closing braces`.
///
/// The completion is cut right after the brace that brings the running depth
/// back to zero (having been positive), or right before a brace that would
/// make it negative. If the result is still open, up to
/// [`MAX_CLOSING_BRACES`] closing braces are appended, one per line.
pub fn assemble(scenario: &Scenario, completion: &str) -> String {
    let prompt = &scenario.prompt;
    let full = format!("{prompt}{completion}");
    let mut depth: usize = 0;
    let mut was_open = false;
    let mut cut = full.len();
    for (start, end, c) in brace_events(&full, scenario.language) {
        let in_completion = start >= prompt.len();
        if c == b'{' {
            depth += 1;
            was_open = true;
            continue;
        }
        if depth == 0 {
            if in_completion {
                cut = start;
                break;
            }
            continue;
        }
        depth -= 1;
        if depth == 0 && was_open && in_completion {
            cut = end;
            break;
        }
    }
    let cut = cut.max(prompt.len());
    let mut out = full[..cut].to_string();
    let open =
        brace_events(&out, scenario.language).iter().fold(
            0usize,
            |d, &(_, _, c)| if c == b'{' { d + 1 } else { d.saturating_sub(1) },
        );
    if open > 0 {
        if !out.ends_with('\n') {
            out.push('\n');
        }
        for _ in 0..open.min(MAX_CLOSING_BRACES) {
            out.push_str("}\n");
        }
    }
    out
}

struct Job<'a> {
    seq: usize,
    scenario: &'a Scenario,
    sample_index: u32,
    temperature: f64,
}

fn run_job(job: &Job<'_>, config: &GenerationConfig, client: &dyn CompletionClient) -> GeneratedSample {
    let started = Instant::now();
    let request = CompletionRequest {
        prompt: job.scenario.prompt.clone(),
        n: 1,
        temperature: job.temperature,
        max_tokens: config.max_new_tokens,
        stop: config.stop.clone(),
        scenario_id: job.scenario.id.clone(),
        sample_index: job.sample_index,
    };
    let mut attempts = 0;
    let mut last_err = None;
    let mut completion = None;
    while attempts <= config.retry_limit {
        if attempts > 0 {
            let shift = (attempts - 1).min(10);
            thread::sleep(Duration::from_millis(config.backoff_ms.saturating_mul(1 << shift)));
        }
        attempts += 1;
        match client.complete(&request) {
            Ok(mut c) if c.len() == 1 => {
                completion = c.pop();
                break;
            }
            Ok(c) => {
                last_err = Some(ClientError::Malformed(format!(
                    "expected 1 completion, got {}",
                    c.len()
                )))
            }
            Err(e) => last_err = Some(e),
        }
        tracing::debug!(scenario = %job.scenario.id, sample = job.sample_index, attempts, "request failed");
    }
    let failed = completion.is_none();
    if failed {
        tracing::warn!(
            scenario = %job.scenario.id,
            sample = job.sample_index,
            "giving up after {attempts} attempts: {}",
            last_err.as_ref().map(ToString::to_string).unwrap_or_default()
        );
    }
    let completion = completion.unwrap_or_default();
    GeneratedSample {
        scenario_id: job.scenario.id.clone(),
        sample_index: job.sample_index,
        failed,
        assembled: assemble(job.scenario, &completion),
        completion,
        gen_metadata: GenMetadata {
            attempts,
            elapsed_ms: started.elapsed().as_millis() as u64,
            error: last_err.filter(|_| failed).map(|e| e.to_string()),
        },
    }
}

/// Samples every scenario of `bank`. `sink` sees each sample exactly once,
/// in (scenario id, sample index) order, as soon as all earlier samples are
/// done. At most `config.max_parallel` requests are in flight.
pub fn generate(
    bank: &ScenarioBank,
    config: &GenerationConfig,
    client: &dyn CompletionClient,
    mut sink: impl FnMut(&GeneratedSample) -> io::Result<()>,
) -> Result<Vec<GeneratedSample>, GenerateError> {
    config.validate()?;
    let mut jobs = Vec::new();
    for s in bank.scenarios() {
        let n = config.samples_for(s);
        if n == 0 {
            return Err(GenerateError::ZeroSamples(s.id.clone()));
        }
        for i in 0..n {
            jobs.push(Job {
                seq: jobs.len(),
                scenario: s,
                sample_index: i,
                temperature: config.temperature_for(s),
            });
        }
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, GeneratedSample)>();
    let mut out = Vec::with_capacity(jobs.len());
    let mut write_err = None;
    thread::scope(|scope| {
        for _ in 0..config.max_parallel.min(jobs.len().max(1)) {
            let tx = tx.clone();
            let (jobs, next, abort) = (&jobs, &next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                if tx.send((job.seq, run_job(job, config, client))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, GeneratedSample> = BTreeMap::new();
        for (seq, sample) in rx {
            pending.insert(seq, sample);
            while let Some(sample) = pending.remove(&out.len()) {
                if write_err.is_none() {
                    if let Err(e) = sink(&sample) {
                        write_err = Some(e);
                        abort.store(true, Ordering::Relaxed);
                    }
                }
                out.push(sample);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    Ok(out)
}

/// One JSON line per sample (the persisted artifact).
pub fn sample_line(s: &GeneratedSample) -> String {
    let mut line = serde_json::to_string(s).expect("sample serializes");
    line.push('\n');
    line
}

/// One JSON line of run metadata for the sidecar file.
pub fn metadata_line(s: &GeneratedSample) -> String {
    #[derive(Serialize)]
    struct Meta<'a> {
        scenario_id: &'a str,
        sample_index: u32,
        #[serde(flatten)]
        meta: &'a GenMetadata,
    }
    let mut line = serde_json::to_string(&Meta {
        scenario_id: &s.scenario_id,
        sample_index: s.sample_index,
        meta: &s.gen_metadata,
    })
    .expect("metadata serializes");
    line.push('\n');
    line
}

pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<GeneratedSample>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Failure injection for [`MockServer`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Every k-th request (1-based) answers HTTP 503.
    pub fail_every: Option<usize>,
    /// Every k-th request answers 200 with a body that is not the contract.
    pub malformed_every: Option<usize>,
}

/// Minimal HTTP/1.1 server speaking the completion contract, backed by
/// [`mock_completion`]. Runs until dropped.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<thread::JoinHandle<()>>,
    requests: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(bind: &str, faults: Faults) -> io::Result<MockServer> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let handle = {
            let (stop, requests) = (stop.clone(), requests.clone());
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let k = requests.fetch_add(1, Ordering::SeqCst) + 1;
                    thread::spawn(move || {
                        if let Err(e) = serve_one(conn, k, faults) {
                            tracing::debug!("mock server connection: {e}");
                        }
                    });
                }
            })
        };
        Ok(MockServer {
            addr,
            stop,
            handle: Some(handle),
            requests,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/completions", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread until the process is killed.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn hits(every: Option<usize>, k: usize) -> bool {
    every.is_some_and(|e| e > 0 && k.is_multiple_of(e))
}

fn serve_one(stream: TcpStream, k: usize, faults: Faults) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((name, value)) = h.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let (status, payload) = if !request_line.starts_with("POST ") {
        ("405 Method Not Allowed", "{}".to_string())
    } else if hits(faults.fail_every, k) {
        ("503 Service Unavailable", "{}".to_string())
    } else if hits(faults.malformed_every, k) {
        ("200 OK", "{\"choices\": []}".to_string())
    } else {
        match serde_json::from_slice::<CompletionRequest>(&body) {
            Ok(req) => {
                let completions = (0..req.n)
                    .map(|i| mock_completion(&req.scenario_id, req.sample_index + i))
                    .collect();
                let resp = CompletionResponse { completions };
                ("200 OK", serde_json::to_string(&resp).expect("response serializes"))
            }
            Err(e) => (
                "400 Bad Request",
                serde_json::json!({ "error": e.to_string() }).to_string(),
            ),
        }
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Language;
    use std::sync::Mutex;

    fn scenario(id: &str, prompt: &str) -> Scenario {
        Scenario {
            id: id.into(),
            cwe: format!("CWE-{}", id.split('-').nth(1).unwrap()),
            language: Language::C,
            prompt: prompt.into(),
            query_suite: vec![],
            compile_wrapper: None,
            complete_by_design: false,
            samples_per_scenario: None,
            temperature: None,
        }
    }

    const MAIN: &str = "int main() {\n";

    #[test]
    fn assemble_balanced_completion_adds_nothing() {
        let s = scenario("CWE-787-0-c", MAIN);
        assert_eq!(assemble(&s, "return 0; }"), "int main() {\nreturn 0; }");
    }

    #[test]
    fn assemble_appends_one_brace() {
        let s = scenario("CWE-787-0-c", MAIN);
        assert_eq!(assemble(&s, "return 0;"), "int main() {\nreturn 0;\n}\n");
    }

    #[test]
    fn assemble_truncates_after_closing_main() {
        let s = scenario("CWE-787-0-c", MAIN);
        let got = assemble(&s, "  if (x) { y(); }\n  return 0;\n}\nint junk() { garbage");
        assert_eq!(got, "int main() {\n  if (x) { y(); }\n  return 0;\n}");
    }

    #[test]
    fn assemble_cuts_before_negative_depth() {
        let s = scenario("CWE-787-0-c", "int x = 1;\n");
        assert_eq!(assemble(&s, "int y = 2;\n}}"), "int x = 1;\nint y = 2;\n");
    }

    #[test]
    fn assemble_caps_closing_braces() {
        let s = scenario("CWE-787-0-c", &"{".repeat(12));
        let out = assemble(&s, "");
        assert_eq!(out.matches('}').count(), MAX_CLOSING_BRACES);
        assert!(out.starts_with(&s.prompt));
    }

    #[test]
    fn assemble_ignores_braces_in_strings_and_comments() {
        let s = scenario("CWE-787-0-c", MAIN);
        let got = assemble(&s, "  puts(\"}\"); // }\n  return 0;\n}\nextra");
        assert_eq!(got, "int main() {\n  puts(\"}\"); // }\n  return 0;\n}");
    }

    fn bank(n: usize) -> ScenarioBank {
        ScenarioBank::new((0..n).map(|i| scenario(&format!("CWE-787-{i}-c"), MAIN)).collect())
    }

    fn small_config(samples: u32, parallel: usize) -> GenerationConfig {
        GenerationConfig {
            samples_per_scenario: samples,
            max_parallel: parallel,
            backoff_ms: 0,
            ..GenerationConfig::default()
        }
    }

    fn persisted(bank: &ScenarioBank, cfg: &GenerationConfig, client: &dyn CompletionClient) -> String {
        let mut buf = String::new();
        generate(bank, cfg, client, |s| {
            buf.push_str(&sample_line(s));
            Ok(())
        })
        .unwrap();
        buf
    }

    #[test]
    fn counts_and_order() {
        let b = bank(4);
        let out = generate(&b, &small_config(5, 3), &MockClient, |_| Ok(())).unwrap();
        assert_eq!(out.len(), 20);
        let keys: Vec<_> = out.iter().map(|s| (s.scenario_id.clone(), s.sample_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(out.iter().all(|s| s.assembled.starts_with(MAIN)));
    }

    #[test]
    fn persisted_bytes_do_not_depend_on_parallelism() {
        let b = bank(5);
        let one = persisted(&b, &small_config(7, 1), &MockClient);
        let many = persisted(&b, &small_config(7, 8), &MockClient);
        assert_eq!(one, many);
    }

    #[test]
    fn zero_samples_is_a_config_error() {
        let err = generate(&bank(1), &small_config(0, 1), &MockClient, |_| Ok(())).unwrap_err();
        assert!(matches!(err, GenerateError::Config(_)));
        let mut cfg = small_config(1, 1);
        cfg.max_parallel = 0;
        assert!(cfg.validate().is_err());
    }

    /// Fails the first `fail_first` calls of every sample.
    struct Flaky {
        fail_first: u32,
        calls: Mutex<BTreeMap<(String, u32), u32>>,
        in_flight: Mutex<std::collections::BTreeSet<(String, u32)>>,
    }

    impl CompletionClient for Flaky {
        fn complete(&self, r: &CompletionRequest) -> Result<Vec<String>, ClientError> {
            let key = (r.scenario_id.clone(), r.sample_index);
            assert!(self.in_flight.lock().unwrap().insert(key.clone()), "retry overlap");
            let n = {
                let mut calls = self.calls.lock().unwrap();
                let c = calls.entry(key.clone()).or_default();
                *c += 1;
                *c
            };
            thread::sleep(Duration::from_millis(1));
            self.in_flight.lock().unwrap().remove(&key);
            if n <= self.fail_first {
                Err(ClientError::Transport("boom".into()))
            } else {
                Ok(vec![format!("return {};", r.sample_index)])
            }
        }
    }

    fn flaky(fail_first: u32) -> Flaky {
        Flaky {
            fail_first,
            calls: Mutex::default(),
            in_flight: Mutex::default(),
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let out = generate(&bank(2), &small_config(3, 4), &flaky(2), |_| Ok(())).unwrap();
        assert!(out.iter().all(|s| !s.failed && s.gen_metadata.attempts == 3));
    }

    #[test]
    fn exhausted_retries_become_failed_samples() {
        let out = generate(&bank(2), &small_config(3, 4), &flaky(100), |_| Ok(())).unwrap();
        assert_eq!(out.len(), 6);
        for s in &out {
            assert!(s.failed);
            assert!(s.completion.is_empty());
            assert_eq!(s.gen_metadata.attempts, 4);
            assert!(s.gen_metadata.error.as_deref().unwrap().contains("boom"));
        }
    }

    #[test]
    fn response_length_is_checked() {
        assert!(parse_response("{\"completions\": [\"a\"]}", 1).is_ok());
        assert!(matches!(
            parse_response("{\"completions\": []}", 1),
            Err(ClientError::Malformed(_))
        ));
        assert!(matches!(parse_response("nope", 1), Err(ClientError::Malformed(_))));
    }

    #[test]
    fn http_round_trip_with_faults() {
        let server = MockServer::start(
            "127.0.0.1:0",
            Faults {
                fail_every: Some(3),
                malformed_every: Some(5),
            },
        )
        .unwrap();
        let client = HttpClient::new(&server.url(), Some("t".into()), Duration::from_secs(5)).unwrap();
        let b = bank(2);
        let cfg = small_config(4, 2);
        let via_http = persisted(&b, &cfg, &client);
        let in_process = persisted(&b, &cfg, &MockClient);
        assert_eq!(via_http, in_process);
        assert!(server.request_count() > 8);
    }

    #[test]
    fn unreachable_endpoint_yields_failed_samples() {
        let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let client = HttpClient::new(&format!("http://{addr}/"), None, Duration::from_secs(2)).unwrap();
        let mut cfg = small_config(1, 1);
        cfg.retry_limit = 1;
        let out = generate(&bank(1), &cfg, &client, |_| Ok(())).unwrap();
        assert!(out[0].failed);
    }

    #[test]
    fn sink_error_aborts() {
        let err = generate(&bank(3), &small_config(3, 2), &MockClient, |_| {
            Err(io::Error::other("disk full"))
        })
        .unwrap_err();
        assert!(matches!(err, GenerateError::Io(_)));
    }

    #[test]
    fn jsonl_round_trip() {
        let out = generate(&bank(1), &small_config(2, 1), &MockClient, |_| Ok(())).unwrap();
        let text: String = out.iter().map(sample_line).collect();
        let back = read_samples(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].completion, out[1].completion);
        assert!(metadata_line(&out[0]).contains("\"attempts\":1"));
    }
}

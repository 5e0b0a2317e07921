//! Security-sensitive evaluation scenarios.
//!
//! A bank is a directory holding, per scenario, a TOML metadata file and a
//! prompt file with the raw source text:
//!
//! ```text
//! scenarios/CWE-787-0-c.toml
//! scenarios/CWE-787-0-c.c
//! ```
//!
//! Metadata keys: `id`, `cwe`, `language`, `query_suite`, optional
//! `prompt_file` (defaults to the metadata stem plus the language's source
//! extension), `complete_by_design`, a `[sampling]` table with
//! `samples_per_scenario` / `temperature` overrides, and a
//! `[compile_wrapper]` table with `prelude` / `epilogue`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cstruct;
use crate::lang::Language;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("duplicate scenario id `{id}` ({first} and {second})")]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("prompt file {0} has no metadata file")]
    MissingMetadata(PathBuf),
    #[error("scenario `{id}`: prompt file {path} not found")]
    MissingPrompt { id: String, path: PathBuf },
    #[error("{path}: {message}")]
    BadMetadata { path: PathBuf, message: String },
    #[error("scenario `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("scenario `{0}` is not a C scenario")]
    NotC(String),
    #[error("rewrite table line {line}: {message}")]
    BadRewriteTable { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileWrapper {
    #[serde(default)]
    pub prelude: String,
    #[serde(default)]
    pub epilogue: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub cwe: String,
    pub language: Language,
    pub prompt: String,
    pub query_suite: Vec<String>,
    pub compile_wrapper: Option<CompileWrapper>,
    pub complete_by_design: bool,
    pub samples_per_scenario: Option<u32>,
    pub temperature: Option<f64>,
}

impl Scenario {
    /// Positive integer code of the CWE, e.g. 787 for `CWE-787`.
    pub fn cwe_code(&self) -> Option<u32> {
        parse_cwe(&self.cwe)
    }

    /// Id without the language suffix, e.g. `CWE-787-0`.
    pub fn base_id(&self) -> &str {
        self.id
            .strip_suffix(&format!("-{}", self.language.short_name()))
            .unwrap_or(&self.id)
    }
}

pub fn parse_cwe(cwe: &str) -> Option<u32> {
    cwe.strip_prefix("CWE-")?.parse().ok().filter(|&n| n > 0)
}

#[derive(Debug, Deserialize, Serialize, Default)]
struct Sampling {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples_per_scenario: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    id: String,
    cwe: String,
    language: Language,
    #[serde(default)]
    query_suite: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_file: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    complete_by_design: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sampling: Option<Sampling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compile_wrapper: Option<CompileWrapper>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioBank {
    scenarios: Vec<Scenario>,
}

impl ScenarioBank {
    pub fn new(mut scenarios: Vec<Scenario>) -> Self {
        scenarios.sort_by(|a, b| a.id.cmp(&b.id));
        ScenarioBank { scenarios }
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Scenario> {
        self.scenarios
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.scenarios[i])
    }

    pub fn filter_language(&self, language: Language) -> ScenarioBank {
        ScenarioBank::new(
            self.scenarios
                .iter()
                .filter(|s| s.language == language)
                .cloned()
                .collect(),
        )
    }

    pub fn distinct_cwes(&self) -> BTreeSet<&str> {
        self.scenarios.iter().map(|s| s.cwe.as_str()).collect()
    }

    /// Base ids that exist in only one of the two languages.
    pub fn unpaired(&self) -> Vec<String> {
        let mut langs: BTreeMap<&str, BTreeSet<Language>> = BTreeMap::new();
        for s in &self.scenarios {
            langs.entry(s.base_id()).or_default().insert(s.language);
        }
        langs
            .into_iter()
            .filter(|(_, l)| l.len() != 2)
            .map(|(b, _)| b.to_string())
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedBank {
    pub bank: ScenarioBank,
    pub warnings: Vec<String>,
}

fn validate(s: &Scenario) -> Result<(), ScenarioError> {
    let invalid = |message: String| ScenarioError::Invalid {
        id: s.id.clone(),
        message,
    };
    let code = s
        .cwe_code()
        .ok_or_else(|| invalid(format!("cwe `{}` is not of the form CWE-<positive integer>", s.cwe)))?;
    let suffix = format!("-{}", s.language.short_name());
    let Some(base) = s.id.strip_suffix(&suffix) else {
        return Err(invalid(format!("id must end with `{suffix}`")));
    };
    let prefix = format!("CWE-{code}-");
    let index_ok = base
        .strip_prefix(&prefix)
        .is_some_and(|k| !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()));
    if !index_ok {
        return Err(invalid(format!("id must look like `{prefix}<k>{suffix}`")));
    }
    if s.prompt.trim().is_empty() {
        return Err(invalid("prompt is empty".into()));
    }
    if !s.complete_by_design && !cstruct::scan(&s.prompt, s.language).unbalanced {
        return Err(invalid(
            "prompt is structurally complete; mark it complete_by_design if intended".into(),
        ));
    }
    Ok(())
}

/// Loads and validates every scenario in `dir`.
pub fn load_bank(dir: &Path) -> Result<LoadedBank, ScenarioError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();

    let mut by_id: BTreeMap<String, (PathBuf, Scenario)> = BTreeMap::new();
    let mut used_prompts: BTreeSet<PathBuf> = BTreeSet::new();
    for path in entries.iter().filter(|p| p.extension().is_some_and(|e| e == "toml")) {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let meta: Metadata = toml::from_str(&text).map_err(|e| ScenarioError::BadMetadata {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let prompt_path = match &meta.prompt_file {
            Some(p) => dir.join(p),
            None => path.with_extension(meta.language.source_extension()),
        };
        let prompt = fs::read_to_string(&prompt_path).map_err(|_| ScenarioError::MissingPrompt {
            id: meta.id.clone(),
            path: prompt_path.clone(),
        })?;
        used_prompts.insert(prompt_path);
        let sampling = meta.sampling.unwrap_or_default();
        let s = Scenario {
            id: meta.id,
            cwe: meta.cwe,
            language: meta.language,
            prompt,
            query_suite: meta.query_suite,
            compile_wrapper: meta.compile_wrapper,
            complete_by_design: meta.complete_by_design,
            samples_per_scenario: sampling.samples_per_scenario,
            temperature: sampling.temperature,
        };
        validate(&s)?;
        if let Some((first, _)) = by_id.get(&s.id) {
            return Err(ScenarioError::DuplicateId {
                id: s.id.clone(),
                first: first.clone(),
                second: path.clone(),
            });
        }
        by_id.insert(s.id.clone(), (path.clone(), s));
    }

    for path in &entries {
        let is_source = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| Language::from_path(&format!("x.{e}")).is_some());
        if is_source && !used_prompts.contains(path) {
            return Err(ScenarioError::MissingMetadata(path.clone()));
        }
    }

    let mut warnings = Vec::new();
    if by_id.is_empty() {
        warnings.push(format!("scenario directory {} is empty", dir.display()));
    }
    let bank = ScenarioBank::new(by_id.into_values().map(|(_, s)| s).collect());
    Ok(LoadedBank { bank, warnings })
}

/// Writes `scenario` as `<id>.toml` plus its prompt file into `dir`.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<(), ScenarioError> {
    let sampling = (scenario.samples_per_scenario.is_some() || scenario.temperature.is_some()).then_some(Sampling {
        samples_per_scenario: scenario.samples_per_scenario,
        temperature: scenario.temperature,
    });
    let meta = Metadata {
        id: scenario.id.clone(),
        cwe: scenario.cwe.clone(),
        language: scenario.language,
        query_suite: scenario.query_suite.clone(),
        prompt_file: None,
        complete_by_design: scenario.complete_by_design,
        sampling,
        compile_wrapper: scenario.compile_wrapper.clone(),
    };
    let toml_path = dir.join(format!("{}.toml", scenario.id));
    let prompt_path = dir.join(format!("{}.{}", scenario.id, scenario.language.source_extension()));
    let text = toml::to_string(&meta).map_err(|e| ScenarioError::BadMetadata {
        path: toml_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&toml_path, text).map_err(io_err(&toml_path))?;
    fs::write(&prompt_path, &scenario.prompt).map_err(io_err(&prompt_path))?;
    Ok(())
}

/// Whole-token textual rewrites applied when porting a C prompt to C++.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteTable {
    entries: Vec<(String, String)>,
    /// Header a C++ replacement is declared in, e.g. `atoi -> <string>`.
    headers: BTreeMap<String, String>,
}

impl Default for RewriteTable {
    fn default() -> Self {
        let pairs = [
            ("assert.h", "cassert"),
            ("ctype.h", "cctype"),
            ("errno.h", "cerrno"),
            ("limits.h", "climits"),
            ("math.h", "cmath"),
            ("stddef.h", "cstddef"),
            ("stdint.h", "cstdint"),
            ("stdio.h", "cstdio"),
            ("stdlib.h", "cstdlib"),
            ("string.h", "cstring"),
            ("time.h", "ctime"),
            ("atoi", "stoi"),
        ];
        let mut t = RewriteTable::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect());
        t.headers.insert("atoi".into(), "string".into());
        t
    }
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl RewriteTable {
    pub fn new(mut entries: Vec<(String, String)>) -> Self {
        // Longest match first so `string.h` wins over a hypothetical `string`.
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        RewriteTable {
            entries,
            headers: BTreeMap::new(),
        }
    }

    /// `from to [header]` per line; `#` starts a comment. The optional
    /// header is included whenever the entry fires.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut entries = Vec::new();
        let mut headers = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(ScenarioError::BadRewriteTable {
                    line: i + 1,
                    message: "expected `from to [header]`".into(),
                });
            }
            entries.push((cols[0].to_string(), cols[1].to_string()));
            if let Some(h) = cols.get(2) {
                headers.insert(
                    cols[0].to_string(),
                    h.trim_matches(|c| c == '<' || c == '>').to_string(),
                );
            }
        }
        let mut t = RewriteTable::new(entries);
        t.headers = headers;
        Ok(t)
    }

    /// Copy keeping only the entries whose source token is in `from`.
    pub fn restricted_to(&self, from: &[&str]) -> RewriteTable {
        RewriteTable {
            entries: self
                .entries
                .iter()
                .filter(|(f, _)| from.contains(&f.as_str()))
                .cloned()
                .collect(),
            headers: self
                .headers
                .iter()
                .filter(|(f, _)| from.contains(&f.as_str()))
                .map(|(a, b)| (a.clone(), b.clone()))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Replaces whole-token occurrences; every other byte is copied as is.
    pub fn apply(&self, text: &str) -> String {
        let bytes = text.as_bytes();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        let mut copied = 0;
        while i < bytes.len() {
            let boundary_before = i == 0 || !is_ident_byte(bytes[i - 1]);
            let hit = boundary_before
                .then(|| {
                    self.entries.iter().find(|(from, _)| {
                        let end = i + from.len();
                        bytes[i..].starts_with(from.as_bytes()) && (end == bytes.len() || !is_ident_byte(bytes[end]))
                    })
                })
                .flatten();
            match hit {
                Some((from, to)) => {
                    out.push_str(&text[copied..i]);
                    out.push_str(to);
                    i += from.len();
                    copied = i;
                }
                None => i += 1,
            }
        }
        out.push_str(&text[copied..]);
        out
    }
}

const USING_STD: &str = "using namespace std;";

/// Rewrites `text`. When an API (non-header) entry fires its replacement
/// lives in `std`: the headers it needs and a using-directive go after the
/// last `#include`.
fn port_text(text: &str, table: &RewriteTable) -> String {
    let out = table.apply(text);
    let fired: Vec<&String> = table
        .entries
        .iter()
        .filter(|(from, to)| {
            !from.contains('.') && RewriteTable::new(vec![(from.clone(), to.clone())]).apply(text) != text
        })
        .map(|(from, _)| from)
        .collect();
    if fired.is_empty() {
        return out;
    }
    let mut block = String::new();
    let needed: BTreeSet<&String> = fired.iter().filter_map(|f| table.headers.get(*f)).collect();
    for h in needed {
        let line = format!("#include <{h}>");
        if !out.lines().any(|l| l.trim() == line) {
            block.push_str(&line);
            block.push('\n');
        }
    }
    if !out.contains(USING_STD) {
        block.push_str(USING_STD);
        block.push('\n');
    }
    let mut end = 0;
    let mut after_include = None;
    for line in out.split_inclusive('\n') {
        end += line.len();
        if line.trim_start().starts_with("#include") {
            after_include = Some((end, line.ends_with('\n')));
        }
    }
    match after_include {
        Some((at, newline)) => {
            let eol = if newline { "" } else { "\n" };
            format!("{}{eol}{block}{}", &out[..at], &out[at..])
        }
        None => format!("{block}{out}"),
    }
}

/// Ports a C scenario to C++: rewrites the prompt and moves the id suffix.
pub fn translate_c_to_cpp(scenario: &Scenario, table: &RewriteTable) -> Result<Scenario, ScenarioError> {
    if scenario.language != Language::C {
        return Err(ScenarioError::NotC(scenario.id.clone()));
    }
    let base = scenario.base_id().to_string();
    Ok(Scenario {
        id: format!("{base}-{}", Language::Cpp.short_name()),
        language: Language::Cpp,
        prompt: port_text(&scenario.prompt, table),
        compile_wrapper: scenario.compile_wrapper.as_ref().map(|w| CompileWrapper {
            prelude: table.apply(&w.prelude),
            epilogue: table.apply(&w.epilogue),
        }),
        ..scenario.clone()
    })
}

//! Pipeline configuration file.
//!
//! ```toml
//! model_tag = "codegen2-7b-secure"
//! seed = 42
//!
//! [paths]                # relative paths resolve against this file's directory
//! datasets = ["data/bigvul.jsonl", "data/crossvul.jsonl"]
//! corpus_dir = "out/corpus"
//! scenario_dir = "scenarios"
//! results_dir = "out/results"
//! rule_map = "rules/codeql-cwe.tsv"
//!
//! [extract]
//! granularity = "function"
//! subset_sizes = [100, 200, 400]
//!
//! [generation]
//! endpoint = "http://127.0.0.1:8080/v1/completions"
//! token_env = "SECCODE_TOKEN"
//!
//! [classify]
//! analyzer = "./run-codeql.sh {units} {out}"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{DEFAULT_CPP_COMPILER, DEFAULT_C_COMPILER};
use crate::extract::Granularity;
use crate::generate::GenerationConfig;
use crate::lang::Language;
use crate::metrics::ReportFormat;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("referenced path does not exist: {key} = {}", path.display())]
    MissingPath { key: String, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub datasets: Vec<String>,
    pub corpus_dir: String,
    pub scenario_dir: String,
    pub results_dir: String,
    #[serde(default)]
    pub rule_map: Option<String>,
    /// Allow list of `commit_hash path` pairs applied before extraction.
    #[serde(default)]
    pub file_filter: Option<String>,
    #[serde(default)]
    pub deny_list: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub granularity: Granularity,
    pub subset_sizes: Vec<usize>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            granularity: Granularity::Function,
            subset_sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub ngram: usize,
    /// Stop the pipeline (exit status 5) when any n-gram is shared.
    pub fail_on_overlap: bool,
    /// Named regular expressions searched in the corpus.
    pub patterns: BTreeMap<String, String>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            ngram: 10,
            fail_on_overlap: true,
            patterns: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub c_compiler: String,
    pub cpp_compiler: String,
    /// Command that analyzes every file under `{units}` and writes SARIF to `{out}`.
    pub analyzer: Option<String>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            c_compiler: DEFAULT_C_COMPILER.to_string(),
            cpp_compiler: DEFAULT_CPP_COMPILER.to_string(),
            analyzer: None,
        }
    }
}

impl ClassifyConfig {
    pub fn compiler_for(&self, language: Language) -> &str {
        match language {
            Language::C => &self.c_compiler,
            Language::Cpp => &self.cpp_compiler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatName {
    TableText,
    Csv,
}

impl From<FormatName> for ReportFormat {
    fn from(f: FormatName) -> Self {
        match f {
            FormatName::TableText => ReportFormat::TableText,
            FormatName::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub formats: Vec<FormatName>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            formats: vec![FormatName::TableText, FormatName::Csv],
        }
    }
}

fn default_model_tag() -> String {
    "unnamed-model".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_model_tag")]
    pub model_tag: String,
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_parallel: Option<usize>,
}

/// A validated configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub digest: String,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(p) = overrides.max_parallel {
            config.generation.max_parallel = p;
        }
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Self::from_config(config, base_dir)
    }

    pub fn from_config(config: PipelineConfig, base_dir: PathBuf) -> Result<LoadedConfig, ConfigError> {
        let loaded = LoadedConfig {
            digest: digest(&config),
            config,
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        c.generation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if c.audit.ngram == 0 {
            return Err(ConfigError::Invalid("audit.ngram must be at least 1".into()));
        }
        for (key, t) in [
            ("classify.c_compiler", &c.classify.c_compiler),
            ("classify.cpp_compiler", &c.classify.cpp_compiler),
        ] {
            if !(t.contains("{src}") && t.contains("{out}")) {
                return Err(ConfigError::Invalid(format!("{key} must contain {{src}} and {{out}}")));
            }
        }
        if let Some(a) = &c.classify.analyzer {
            if !a.contains("{out}") {
                return Err(ConfigError::Invalid("classify.analyzer must contain {out}".into()));
            }
        }
        if c.report.formats.is_empty() {
            return Err(ConfigError::Invalid("report.formats is empty".into()));
        }
        let mut inputs: Vec<(String, &str)> = c
            .paths
            .datasets
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("paths.datasets[{i}]"), d.as_str()))
            .collect();
        inputs.push(("paths.scenario_dir".into(), &c.paths.scenario_dir));
        for (key, v) in [
            ("paths.rule_map", &c.paths.rule_map),
            ("paths.file_filter", &c.paths.file_filter),
            ("paths.deny_list", &c.paths.deny_list),
        ] {
            if let Some(v) = v {
                inputs.push((key.into(), v));
            }
        }
        for (key, p) in inputs {
            let path = self.resolve(p);
            if !path.exists() {
                return Err(ConfigError::MissingPath { key, path });
            }
        }
        Ok(())
    }
}

/// Digest of everything that can influence an artifact's bytes. The worker
/// count is excluded: outputs do not depend on it.
pub fn digest(config: &PipelineConfig) -> String {
    let mut c = config.clone();
    c.generation.max_parallel = 1;
    let json = serde_json::to_string(&c).expect("config serializes");
    crate::fsutil::sha256_hex(json.as_bytes())
}

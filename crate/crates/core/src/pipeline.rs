//! Stage runner. Stages talk to each other only through files:
//!
//! ```text
//! <corpus_dir>/ingest/            commits.jsonl skips.tsv collisions.tsv stats.tsv
//! <corpus_dir>/extract-<g>/       corpus.jsonl skips.tsv counts.tsv
//! <corpus_dir>/subsets/           subset-<n>.jsonl subsets.tsv
//! <results_dir>/audit-<g>/        overlap.tsv patterns.tsv summary.tsv
//! <results_dir>/<scope>/generate/ generations.jsonl generations.meta.jsonl
//! <results_dir>/<scope>/classify/ verdicts.jsonl diagnostics.jsonl
//! <results_dir>/<scope>/report/   report.txt report.csv report-cwe.csv
//! ```
//!
//! `<scope>` is `all`, `c` or `cpp` depending on the language filter. Every
//! stage directory carries a `manifest.json`; a stage whose manifest still
//! matches its inputs, parameters and outputs is skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit;
use crate::classify::{self, AnalyzerFinding, ClassifyError, CompileCheck, DiagnosticTag, RuleMap, Verdict};
use crate::config::{ConfigError, LoadedConfig};
use crate::extract::{self, Corpus, FileFilter, Granularity};
use crate::fsutil::{sha256_file, write_atomic};
use crate::generate::{self, GeneratedSample};
use crate::ingest::{self, CommitSet, SkipReport};
use crate::lang::Language;
use crate::metrics::{self, Counts, Report, ScenarioTally};
use crate::scenario::{load_bank, ScenarioBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Extract,
    SampleSubsets,
    Audit,
    Generate,
    Classify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::SampleSubsets,
        Stage::Audit,
        Stage::Generate,
        Stage::Classify,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::SampleSubsets => "sample-subsets",
            Stage::Audit => "audit",
            Stage::Generate => "generate",
            Stage::Classify => "classify",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    BadInput(String),
    #[error("missing input {}: run `--stage {stage}` first", path.display())]
    Dependency { stage: Stage, path: PathBuf },
    #[error("external tool: {0}")]
    Tool(String),
    #[error("contamination: {total_shared} shared {n}-grams between corpus and prompts (see {})", report.display())]
    Contaminated {
        n: usize,
        total_shared: usize,
        report: PathBuf,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::BadInput(_) => 2,
            PipelineError::Dependency { .. } => 3,
            PipelineError::Tool(_) => 4,
            PipelineError::Contaminated { .. } => 5,
            PipelineError::Io { .. } | PipelineError::Data(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<ClassifyError> for PipelineError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::BadTemplate(_) | ClassifyError::RuleMap { .. } => PipelineError::BadInput(e.to_string()),
            ClassifyError::Io(source) => PipelineError::Io {
                path: std::env::temp_dir(),
                source,
            },
            other => PipelineError::Tool(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_digest: String,
    pub params: BTreeMap<String, String>,
    pub tools: BTreeMap<String, String>,
    /// Path (relative to the config directory when possible) -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// File name inside the stage directory -> sha256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub flags: BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: Status,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Per-invocation selections that are not part of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub granularity: Option<Granularity>,
    pub language: Option<Language>,
}

struct Produced {
    files: Vec<String>,
    flags: BTreeMap<String, String>,
}

impl Produced {
    fn files(files: &[&str]) -> Produced {
        Produced {
            files: files.iter().map(|s| s.to_string()).collect(),
            flags: BTreeMap::new(),
        }
    }
}

pub struct Pipeline {
    cfg: LoadedConfig,
    opts: RunOptions,
}

impl Pipeline {
    pub fn new(cfg: LoadedConfig, opts: RunOptions) -> Self {
        Pipeline { cfg, opts }
    }

    pub fn config(&self) -> &LoadedConfig {
        &self.cfg
    }

    fn granularity(&self) -> Granularity {
        self.opts.granularity.unwrap_or(self.cfg.config.extract.granularity)
    }

    fn scope(&self) -> &'static str {
        match self.opts.language {
            None => "all",
            Some(l) => l.short_name(),
        }
    }

    fn corpus_dir(&self) -> PathBuf {
        self.cfg.resolve(&self.cfg.config.paths.corpus_dir)
    }

    fn results_dir(&self) -> PathBuf {
        self.cfg.resolve(&self.cfg.config.paths.results_dir)
    }

    /// Output directory of `stage` under the current options.
    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Ingest => self.corpus_dir().join("ingest"),
            Stage::Extract => self.corpus_dir().join(format!("extract-{}", self.granularity())),
            Stage::SampleSubsets => self.corpus_dir().join("subsets"),
            Stage::Audit => self.results_dir().join(format!("audit-{}", self.granularity())),
            Stage::Generate | Stage::Classify | Stage::Report => {
                self.results_dir().join(self.scope()).join(stage.as_str())
            }
        }
    }

    fn artifact(&self, stage: Stage, name: &str) -> Result<PathBuf, PipelineError> {
        let p = self.stage_dir(stage).join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::Dependency { stage, path: p })
        }
    }

    fn display_path(&self, p: &Path) -> String {
        p.strip_prefix(&self.cfg.base_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn scenario_files(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let dir = self.cfg.resolve(&self.cfg.config.paths.scenario_dir);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        Ok(files)
    }

    fn bank(&self) -> Result<ScenarioBank, PipelineError> {
        let dir = self.cfg.resolve(&self.cfg.config.paths.scenario_dir);
        let loaded = load_bank(&dir).map_err(|e| PipelineError::BadInput(e.to_string()))?;
        for w in &loaded.warnings {
            tracing::warn!("{w}");
        }
        Ok(match self.opts.language {
            Some(l) => loaded.bank.filter_language(l),
            None => loaded.bank,
        })
    }

    fn base_params(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    fn base_tools(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("seccode".to_string(), env!("CARGO_PKG_VERSION").to_string())])
    }

    /// Runs `produce` unless the manifest in the stage directory shows the
    /// outputs are current.
    fn run_cached(
        &self,
        stage: Stage,
        params: BTreeMap<String, String>,
        tools: BTreeMap<String, String>,
        inputs: &[PathBuf],
        produce: impl FnOnce(&Path) -> Result<Produced, PipelineError>,
    ) -> Result<StageOutcome, PipelineError> {
        let dir = self.stage_dir(stage);
        let mut input_digests = BTreeMap::new();
        for p in inputs {
            input_digests.insert(self.display_path(p), sha256_file(p).map_err(io_err(p))?);
        }
        let mut manifest = Manifest {
            stage: stage.to_string(),
            config_digest: self.cfg.digest.clone(),
            params,
            tools,
            inputs: input_digests,
            outputs: BTreeMap::new(),
            flags: BTreeMap::new(),
        };

        let manifest_path = dir.join(MANIFEST);
        if let Some(old) = read_manifest(&manifest_path) {
            let same_recipe = old.stage == manifest.stage
                && old.config_digest == manifest.config_digest
                && old.params == manifest.params
                && old.tools == manifest.tools
                && old.inputs == manifest.inputs;
            if same_recipe && outputs_intact(&dir, &old.outputs) {
                tracing::info!(stage = %stage, "outputs up to date");
                return Ok(StageOutcome {
                    stage,
                    status: Status::UpToDate,
                    dir,
                    manifest: old,
                });
            }
        }

        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        if manifest_path.exists() {
            fs::remove_file(&manifest_path).map_err(io_err(&manifest_path))?;
        }
        let produced = produce(&dir)?;
        for name in produced.files {
            let p = dir.join(&name);
            manifest.outputs.insert(name, sha256_file(&p).map_err(io_err(&p))?);
        }
        manifest.flags = produced.flags;
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        write_atomic(&manifest_path, json.as_bytes()).map_err(io_err(&manifest_path))?;
        Ok(StageOutcome {
            stage,
            status: Status::Ran,
            dir,
            manifest,
        })
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Extract => self.extract(),
            Stage::SampleSubsets => self.sample_subsets(),
            Stage::Audit => self.audit(),
            Stage::Generate => self.generate(),
            Stage::Classify => self.classify(),
            Stage::Report => self.report(),
        }
    }

    /// Every stage in order; subset sampling is skipped when no sizes are
    /// configured.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::SampleSubsets && self.cfg.config.extract.subset_sizes.is_empty() {
                continue;
            }
            out.push(self.run_stage(stage)?);
        }
        Ok(out)
    }

    fn ingest(&self) -> Result<StageOutcome, PipelineError> {
        let datasets: Vec<PathBuf> = self
            .cfg
            .config
            .paths
            .datasets
            .iter()
            .map(|d| self.cfg.resolve(d))
            .collect();
        self.run_cached(Stage::Ingest, self.base_params(), self.base_tools(), &datasets, |dir| {
            let mut sets = Vec::new();
            let mut skips = SkipReport::default();
            for d in &datasets {
                let f = fs::File::open(d).map_err(io_err(d))?;
                let ingested = ingest::ingest_records(BufReader::new(f))
                    .map_err(|e| PipelineError::Data(format!("{}: {e}", d.display())))?;
                skips.extend(ingested.skips);
                sets.push(ingested.set);
            }
            let (set, collisions) = ingest::merge_dedup_report(&sets);
            let mut coll = String::from("commit_hash\tkept_project\tother_project\n");
            for c in &collisions {
                coll.push_str(&format!("{}\t{}\t{}\n", c.commit_hash, c.kept_project, c.other_project));
            }
            let st = ingest::stats(&set);
            let stats = format!(
                "cves\tcommits\tprojects\tfiles\n{}\t{}\t{}\t{}\n",
                st.n_cves,
                st.n_commits,
                st.n_projects,
                set.file_count()
            );
            write_files(
                dir,
                &[
                    ("commits.jsonl", set.to_jsonl()),
                    ("skips.tsv", skips.to_tsv()),
                    ("collisions.tsv", coll),
                    ("stats.tsv", stats),
                ],
            )?;
            Ok(Produced::files(&[
                "commits.jsonl",
                "skips.tsv",
                "collisions.tsv",
                "stats.tsv",
            ]))
        })
    }

    fn read_commits(&self) -> Result<(PathBuf, CommitSet), PipelineError> {
        let path = self.artifact(Stage::Ingest, "commits.jsonl")?;
        let f = fs::File::open(&path).map_err(io_err(&path))?;
        let ingested = ingest::ingest_records(BufReader::new(f)).map_err(|e| PipelineError::Data(e.to_string()))?;
        if !ingested.skips.is_empty() {
            return Err(PipelineError::Data(format!(
                "{} is not in canonical form; rerun `--stage ingest`",
                path.display()
            )));
        }
        Ok((path, ingested.set))
    }

    fn file_filter(&self) -> Result<(FileFilter, Vec<PathBuf>), PipelineError> {
        let paths = &self.cfg.config.paths;
        let mut filter = FileFilter::default();
        let mut used = Vec::new();
        let mut read_list = |key: &Option<String>| -> Result<Option<_>, PipelineError> {
            let Some(p) = key else { return Ok(None) };
            let p = self.cfg.resolve(p);
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            let list =
                FileFilter::parse_list(&text).map_err(|e| PipelineError::BadInput(format!("{}: {e}", p.display())))?;
            used.push(p);
            Ok(Some(list))
        };
        filter.allow = read_list(&paths.file_filter)?;
        filter.deny = read_list(&paths.deny_list)?.unwrap_or_default();
        Ok((filter, used))
    }

    fn extract(&self) -> Result<StageOutcome, PipelineError> {
        let (commits_path, set) = self.read_commits()?;
        let (filter, filter_files) = self.file_filter()?;
        let g = self.granularity();
        let mut params = self.base_params();
        params.insert("granularity".into(), g.to_string());
        let mut inputs = vec![commits_path];
        inputs.extend(filter_files);
        self.run_cached(Stage::Extract, params, self.base_tools(), &inputs, |dir| {
            let set = filter.apply(&set);
            let ex = extract::extract(&set, g);
            write_files(
                dir,
                &[
                    ("corpus.jsonl", ex.corpus.to_jsonl()),
                    ("skips.tsv", ex.skips.to_tsv()),
                    ("counts.tsv", extract::counts_summary(&[&ex.corpus])),
                ],
            )?;
            Ok(Produced::files(&["corpus.jsonl", "skips.tsv", "counts.tsv"]))
        })
    }

    fn sample_subsets(&self) -> Result<StageOutcome, PipelineError> {
        let sizes = self.cfg.config.extract.subset_sizes.clone();
        if sizes.is_empty() {
            return Err(PipelineError::BadInput("extract.subset_sizes is empty".into()));
        }
        let (commits_path, set) = self.read_commits()?;
        let seed = self.cfg.config.seed;
        let subsets =
            extract::sample_commit_subsets(&set, &sizes, seed).map_err(|e| PipelineError::BadInput(e.to_string()))?;
        let mut params = self.base_params();
        params.insert("seed".into(), seed.to_string());
        params.insert(
            "sizes".into(),
            sizes.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        self.run_cached(
            Stage::SampleSubsets,
            params,
            self.base_tools(),
            &[commits_path],
            |dir| {
                let mut files: Vec<(String, String)> = Vec::new();
                let mut index = String::from("size\tcommits_digest\n");
                for (n, s) in sizes.iter().zip(&subsets) {
                    index.push_str(&format!("{n}\t{}\n", s.digest()));
                    files.push((format!("subset-{n}.jsonl"), s.to_jsonl()));
                }
                files.push(("subsets.tsv".into(), index));
                let refs: Vec<(&str, String)> = files.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
                write_files(dir, &refs)?;
                Ok(Produced {
                    files: files.into_iter().map(|(n, _)| n).collect(),
                    flags: BTreeMap::new(),
                })
            },
        )
    }

    fn audit(&self) -> Result<StageOutcome, PipelineError> {
        let corpus_path = self.artifact(Stage::Extract, "corpus.jsonl")?;
        let g = self.granularity();
        let ac = &self.cfg.config.audit;
        let mut compiled = Vec::new();
        for (name, pat) in &ac.patterns {
            audit::compile_pattern(pat).map_err(|e| PipelineError::BadInput(format!("audit.patterns.{name}: {e}")))?;
            compiled.push((name.clone(), pat.clone()));
        }
        let mut inputs = vec![corpus_path.clone()];
        inputs.extend(self.scenario_files()?);
        let mut params = self.base_params();
        params.insert("granularity".into(), g.to_string());
        params.insert("ngram".into(), ac.ngram.to_string());
        let outcome = self.run_cached(Stage::Audit, params, self.base_tools(), &inputs, |dir| {
            let f = fs::File::open(&corpus_path).map_err(io_err(&corpus_path))?;
            let corpus = Corpus::read_jsonl(g, BufReader::new(f)).map_err(|e| PipelineError::Data(e.to_string()))?;
            let loaded = load_bank(&self.cfg.resolve(&self.cfg.config.paths.scenario_dir))
                .map_err(|e| PipelineError::BadInput(e.to_string()))?;
            let report = audit::ngram_overlap(&corpus, loaded.bank.scenarios(), ac.ngram);
            let mut patterns = String::from("pattern\tunit_id\tmatches\n");
            let mut pattern_totals = String::new();
            for (name, pat) in &compiled {
                let hits = audit::pattern_search(&corpus, pat).expect("validated above");
                pattern_totals.push_str(&format!("pattern:{name}\t{}\n", hits.len()));
                for (id, n) in hits {
                    patterns.push_str(&format!("{name}\t{id}\t{n}\n"));
                }
            }
            let summary = format!(
                "key\tvalue\nngram\t{}\nunits\t{}\nprompts\t{}\npairs\t{}\ntotal_shared\t{}\n{pattern_totals}",
                ac.ngram,
                corpus.len(),
                loaded.bank.len(),
                report.pairs.len(),
                report.total_shared
            );
            write_files(
                dir,
                &[
                    ("overlap.tsv", report.to_tsv()),
                    ("patterns.tsv", patterns),
                    ("summary.tsv", summary),
                ],
            )?;
            let mut p = Produced::files(&["overlap.tsv", "patterns.tsv", "summary.tsv"]);
            p.flags.insert("total_shared".into(), report.total_shared.to_string());
            Ok(p)
        })?;
        let shared: usize = outcome
            .manifest
            .flags
            .get("total_shared")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        if shared > 0 {
            tracing::warn!(shared, "corpus shares n-grams with evaluation prompts");
            if ac.fail_on_overlap {
                return Err(PipelineError::Contaminated {
                    n: ac.ngram,
                    total_shared: shared,
                    report: outcome.dir.join("overlap.tsv"),
                });
            }
        }
        Ok(outcome)
    }

    fn generate(&self) -> Result<StageOutcome, PipelineError> {
        let bank = self.bank()?;
        let gc = self.cfg.config.generation.clone();
        let mut params = self.base_params();
        params.insert("scope".into(), self.scope().into());
        self.run_cached(
            Stage::Generate,
            params,
            self.base_tools(),
            &self.scenario_files()?,
            |dir| {
                let client = generate::client_for(&gc).map_err(|e| PipelineError::BadInput(e.to_string()))?;
                let main = dir.join("generations.jsonl");
                let meta = dir.join("generations.meta.jsonl");
                let partial = dir.join("generations.jsonl.partial");
                let meta_partial = dir.join("generations.meta.jsonl.partial");
                let mut w = BufWriter::new(fs::File::create(&partial).map_err(io_err(&partial))?);
                let mut mw = BufWriter::new(fs::File::create(&meta_partial).map_err(io_err(&meta_partial))?);
                let samples = generate::generate(&bank, &gc, client.as_ref(), |s| {
                    w.write_all(generate::sample_line(s).as_bytes())?;
                    mw.write_all(generate::metadata_line(s).as_bytes())?;
                    w.flush()?;
                    mw.flush()
                })
                .map_err(|e| match e {
                    generate::GenerateError::Io(source) => PipelineError::Io {
                        path: partial.clone(),
                        source,
                    },
                    other => PipelineError::BadInput(other.to_string()),
                })?;
                drop((w, mw));
                fs::rename(&partial, &main).map_err(io_err(&main))?;
                fs::rename(&meta_partial, &meta).map_err(io_err(&meta))?;
                let failed = samples.iter().filter(|s| s.failed).count();
                if failed > 0 {
                    tracing::warn!(failed, "samples exhausted their retries");
                }
                let mut p = Produced::files(&["generations.jsonl"]);
                p.flags.insert("samples".into(), samples.len().to_string());
                p.flags.insert("failed".into(), failed.to_string());
                Ok(p)
            },
        )
    }

    fn classify(&self) -> Result<StageOutcome, PipelineError> {
        let gens_path = self.artifact(Stage::Generate, "generations.jsonl")?;
        let cc = self.cfg.config.classify.clone();
        let analyzer = cc
            .analyzer
            .clone()
            .ok_or_else(|| PipelineError::BadInput("classify.analyzer is not configured".into()))?;
        let rule_map_path = self
            .cfg
            .config
            .paths
            .rule_map
            .as_ref()
            .map(|p| self.cfg.resolve(p))
            .ok_or_else(|| PipelineError::BadInput("paths.rule_map is not configured".into()))?;
        let rules = RuleMap::parse(&fs::read_to_string(&rule_map_path).map_err(io_err(&rule_map_path))?)?;
        let bank = self.bank()?;
        let mut inputs = vec![gens_path.clone(), rule_map_path];
        inputs.extend(self.scenario_files()?);
        for t in [&cc.c_compiler, &cc.cpp_compiler, &analyzer] {
            for f in template_files(t, &self.cfg.base_dir) {
                if !inputs.contains(&f) {
                    inputs.push(f);
                }
            }
        }
        let mut params = self.base_params();
        params.insert("scope".into(), self.scope().into());
        let mut tools = self.base_tools();
        tools.insert("compiler-c".into(), tool_version(&cc.c_compiler));
        tools.insert("compiler-cpp".into(), tool_version(&cc.cpp_compiler));
        tools.insert("analyzer".into(), tool_version(&analyzer));
        let base_dir = self.cfg.base_dir.to_string_lossy().into_owned();
        let parallel = self.cfg.config.generation.max_parallel;

        self.run_cached(Stage::Classify, params, tools, &inputs, |dir| {
            let f = fs::File::open(&gens_path).map_err(io_err(&gens_path))?;
            let samples = generate::read_samples(BufReader::new(f))
                .map_err(|e| PipelineError::Data(format!("{}: {e}", gens_path.display())))?;
            for s in &samples {
                if bank.get(&s.scenario_id).is_none() {
                    return Err(PipelineError::Data(format!(
                        "generated sample for unknown scenario `{}`; rerun `--stage generate`",
                        s.scenario_id
                    )));
                }
            }
            let vars = [("config_dir", base_dir.as_str())];
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(parallel)
                .build()
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            let checks: Vec<CompileCheck> = pool.install(|| {
                samples
                    .par_iter()
                    .map(|s| compile_sample(s, &bank, &cc, &vars))
                    .collect::<Result<Vec<_>, _>>()
            })?;

            let units = tempfile::Builder::new()
                .prefix("seccode-units")
                .tempdir()
                .map_err(io_err(&std::env::temp_dir()))?;
            let mut by_path: HashMap<String, usize> = HashMap::new();
            for (i, (s, c)) in samples.iter().zip(&checks).enumerate() {
                if !c.valid {
                    continue;
                }
                let sc = bank.get(&s.scenario_id).expect("checked above");
                let rel = classify::unit_path(&s.scenario_id, s.sample_index, sc.language);
                let p = units.path().join(&rel);
                fs::create_dir_all(p.parent().expect("unit path has a parent")).map_err(io_err(&p))?;
                fs::write(&p, unit_text(s, &bank)).map_err(io_err(&p))?;
                by_path.insert(rel.to_string_lossy().replace('\\', "/"), i);
            }
            let findings = if by_path.is_empty() {
                Vec::new()
            } else {
                classify::run_analyzer(&analyzer, units.path(), &vars)?
            };
            let mut per_sample: Vec<Vec<AnalyzerFinding>> = vec![Vec::new(); samples.len()];
            for f in findings {
                match by_path.get(&classify::normalize_uri(&f.file, units.path())) {
                    Some(&i) => per_sample[i].push(f),
                    None => {
                        tracing::warn!(file = %f.file, rule = %f.rule_id, "finding does not belong to any valid sample")
                    }
                }
            }

            let mut verdicts = String::new();
            let mut diagnostics = String::new();
            let mut unmapped_all = BTreeSet::new();
            for ((s, c), mut fs_) in samples.iter().zip(&checks).zip(per_sample) {
                let sc = bank.get(&s.scenario_id).expect("checked above");
                fs_.sort_by(|a, b| (a.start_line, &a.rule_id).cmp(&(b.start_line, &b.rule_id)));
                let (verdict, unmapped) = classify::classify_sample(c, &fs_, sc, &rules);
                unmapped_all.extend(unmapped);
                let rec = VerdictRecord {
                    scenario_id: s.scenario_id.clone(),
                    sample_index: s.sample_index,
                    verdict,
                    findings: fs_
                        .iter()
                        .map(|f| FindingRecord {
                            rule_id: f.rule_id.clone(),
                            line: f.start_line,
                            cwes: rules
                                .cwes_for(&f.rule_id)
                                .map(|s| s.iter().map(|c| format!("CWE-{c}")).collect())
                                .unwrap_or_default(),
                            counted: verdict == Verdict::Vulnerable
                                && sc.cwe_code().is_some_and(|t| rules.maps_to(&f.rule_id, t)),
                        })
                        .collect(),
                };
                verdicts.push_str(&serde_json::to_string(&rec).expect("verdict serializes"));
                verdicts.push('\n');
                if !c.valid {
                    let d = serde_json::json!({
                        "scenario_id": s.scenario_id,
                        "sample_index": s.sample_index,
                        "diagnostics": c.diagnostics,
                    });
                    diagnostics.push_str(&d.to_string());
                    diagnostics.push('\n');
                }
            }
            write_files(dir, &[("verdicts.jsonl", verdicts), ("diagnostics.jsonl", diagnostics)])?;
            let mut p = Produced::files(&["verdicts.jsonl", "diagnostics.jsonl"]);
            if !unmapped_all.is_empty() {
                p.flags.insert(
                    "unmapped_rules".into(),
                    unmapped_all.into_iter().collect::<Vec<_>>().join(","),
                );
            }
            Ok(p)
        })
    }

    fn report(&self) -> Result<StageOutcome, PipelineError> {
        let verdicts_path = self.artifact(Stage::Classify, "verdicts.jsonl")?;
        let bank = self.bank()?;
        let mut inputs = vec![verdicts_path.clone()];
        inputs.extend(self.scenario_files()?);
        let mut params = self.base_params();
        params.insert("scope".into(), self.scope().into());
        let formats = self.cfg.config.report.formats.clone();
        params.insert(
            "formats".into(),
            formats.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(","),
        );
        self.run_cached(Stage::Report, params, self.base_tools(), &inputs, |dir| {
            let text = fs::read_to_string(&verdicts_path).map_err(io_err(&verdicts_path))?;
            let records =
                read_verdicts(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", verdicts_path.display())))?;
            let tallies = tally(&records, &bank, &self.cfg.config.generation)?;
            let report = Report::build(&self.cfg.config.model_tag, &self.cfg.digest, tallies);
            let mut names = Vec::new();
            for f in formats {
                for file in metrics::render_report(&report, f.into()) {
                    let p = dir.join(&file.name);
                    write_atomic(&p, file.contents.as_bytes()).map_err(io_err(&p))?;
                    names.push(file.name);
                }
            }
            Ok(Produced {
                files: names,
                flags: BTreeMap::new(),
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub rule_id: String,
    pub line: u32,
    /// CWE tags of the rule; empty when the rule is unmapped.
    pub cwes: Vec<String>,
    /// Whether this finding made the sample vulnerable.
    pub counted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub scenario_id: String,
    pub sample_index: u32,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub findings: Vec<FindingRecord>,
}

pub fn read_verdicts(text: &str) -> Result<Vec<VerdictRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// Per-scenario counts, checking that every scenario has exactly its
/// configured number of samples.
pub fn tally(
    records: &[VerdictRecord],
    bank: &ScenarioBank,
    gen: &generate::GenerationConfig,
) -> Result<Vec<ScenarioTally>, PipelineError> {
    let mut counts: BTreeMap<&str, Counts> = BTreeMap::new();
    for r in records {
        let s = bank
            .get(&r.scenario_id)
            .ok_or_else(|| PipelineError::Data(format!("verdict for unknown scenario `{}`", r.scenario_id)))?;
        let c = counts.entry(s.id.as_str()).or_default();
        match r.verdict {
            Verdict::Invalid(_) => c.invalid += 1,
            Verdict::Vulnerable => c.vulnerable += 1,
            Verdict::Secure => c.secure += 1,
        }
    }
    let mut out = Vec::new();
    for s in bank.scenarios() {
        let c = counts.get(s.id.as_str()).copied().unwrap_or_default();
        let expected = u64::from(gen.samples_for(s));
        if c.total() != expected {
            return Err(PipelineError::Data(format!(
                "scenario `{}` has {} verdicts, expected {expected}; rerun generate and classify",
                s.id,
                c.total()
            )));
        }
        out.push(ScenarioTally {
            scenario_id: s.id.clone(),
            language: s.language,
            cwe: s.cwe.clone(),
            counts: c,
        });
    }
    Ok(out)
}

fn unit_text(s: &GeneratedSample, bank: &ScenarioBank) -> String {
    let sc = bank.get(&s.scenario_id).expect("scenario exists");
    match &sc.compile_wrapper {
        Some(w) => format!("{}{}{}", w.prelude, s.assembled, w.epilogue),
        None => s.assembled.clone(),
    }
}

fn compile_sample(
    s: &GeneratedSample,
    bank: &ScenarioBank,
    cc: &crate::config::ClassifyConfig,
    vars: &[(&str, &str)],
) -> Result<CompileCheck, ClassifyError> {
    if s.failed {
        return Ok(CompileCheck {
            valid: false,
            diagnostics: "generation failed; no completion".into(),
            tag: Some(DiagnosticTag::Unknown),
        });
    }
    let sc = bank.get(&s.scenario_id).expect("scenario exists");
    classify::check_valid(&unit_text(s, bank), sc.language, cc.compiler_for(sc.language), vars)
}

/// First line of `<program> --version`, or `unknown`.
/// Files named directly in a command template (scripts, canned data), so
/// editing them invalidates the stage like any other input.
fn template_files(template: &str, base_dir: &Path) -> Vec<PathBuf> {
    let dir = base_dir.to_string_lossy();
    let Ok(words) = classify::expand_template(template, &[("config_dir", dir.as_ref())]) else {
        return Vec::new();
    };
    words
        .iter()
        .filter(|w| !w.contains('{'))
        .map(|w| base_dir.join(w))
        .filter(|p| p.is_file())
        .collect()
}

fn tool_version(template: &str) -> String {
    let Some(program) = shlex::split(template).and_then(|w| w.into_iter().next()) else {
        return "unknown".into();
    };
    match std::process::Command::new(&program).arg("--version").output() {
        Ok(o) if o.status.success() => {
            let first = String::from_utf8_lossy(&o.stdout)
                .lines()
                .next()
                .unwrap_or("")
                .trim()
                .to_string();
            format!("{program}: {first}")
        }
        _ => format!("{program}: unknown"),
    }
}

fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<(), PipelineError> {
    for (name, contents) in files {
        let p = dir.join(name);
        write_atomic(&p, contents.as_bytes()).map_err(io_err(&p))?;
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Option<Manifest> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

fn outputs_intact(dir: &Path, outputs: &BTreeMap<String, String>) -> bool {
    !outputs.is_empty()
        && outputs
            .iter()
            .all(|(name, digest)| sha256_file(&dir.join(name)).is_ok_and(|d| &d == digest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("deploy".parse::<Stage>().is_err());
    }

    #[test]
    fn verdict_record_json_shape() {
        let r = VerdictRecord {
            scenario_id: "CWE-787-0-c".into(),
            sample_index: 2,
            verdict: Verdict::Invalid(DiagnosticTag::Syntax),
            findings: vec![],
        };
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(
            j,
            r#"{"scenario_id":"CWE-787-0-c","sample_index":2,"verdict":"invalid","diagnostic_tag":"syntax","findings":[]}"#
        );
        assert_eq!(read_verdicts(&j).unwrap(), vec![r]);
        let s = r#"{"scenario_id":"a","sample_index":0,"verdict":"secure","findings":[]}"#;
        assert_eq!(read_verdicts(s).unwrap()[0].verdict, Verdict::Secure);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            PipelineError::BadInput(String::new()).exit_code(),
            PipelineError::Dependency {
                stage: Stage::Classify,
                path: PathBuf::new(),
            }
            .exit_code(),
            PipelineError::Tool(String::new()).exit_code(),
            PipelineError::Contaminated {
                n: 10,
                total_shared: 1,
                report: PathBuf::new(),
            }
            .exit_code(),
        ];
        let set: BTreeSet<_> = codes.iter().collect();
        assert_eq!(set.len(), codes.len());
    }
}

//! Fine-tuning corpora at four granularities, plus nested commit subsets.
//!
//! Every granularity slices the post-fix (secure) version of each changed
//! file around the lines the fix added:
//!
//! * file: the whole post-fix file;
//! * function: each distinct function containing an added line;
//! * block: each distinct innermost `{ }` block containing an added line;
//! * line: each non-blank added line.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cstruct::{self, line_count, line_slice};
use crate::diff::{self, added_lines, parse_unified_diff};
use crate::ingest::{CommitRecord, CommitSet, FileChange, Skip, SkipReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    File,
    Function,
    Block,
    Line,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::File,
        Granularity::Function,
        Granularity::Block,
        Granularity::Line,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::File => "file",
            Granularity::Function => "function",
            Granularity::Block => "block",
            Granularity::Line => "line",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Granularity::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown granularity `{s}` (expected file|function|block|line)"))
    }
}

/// Inclusive 1-based line range in the post-fix file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineRange {
    pub start: u32,
    pub end: u32,
}

impl LineRange {
    pub fn contains(&self, other: &LineRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub granularity: Granularity,
    pub commit_hash: String,
    pub file_path: String,
    pub origin_lines: LineRange,
    /// Block-level only: the block lies outside every detected function.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub orphan: bool,
    pub content: String,
}

impl SourceUnit {
    pub fn id(&self) -> String {
        format!(
            "{}:{}:{}:{}-{}",
            self.granularity, self.commit_hash, self.file_path, self.origin_lines.start, self.origin_lines.end
        )
    }

    fn sort_key(&self) -> (&str, &str, u32, u32) {
        (
            &self.commit_hash,
            &self.file_path,
            self.origin_lines.start,
            self.origin_lines.end,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub granularity: Granularity,
    pub units: Vec<SourceUnit>,
    /// Digest of the commit set the corpus was built from.
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct WireUnit {
    granularity: Granularity,
    provenance: String,
    commit_hash: String,
    file_path: String,
    origin_start: u32,
    origin_end: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    orphan: bool,
    content: String,
}

#[derive(Debug, Error)]
pub enum CorpusReadError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unit granularity `{found}` in a `{expected}` corpus")]
    Mixed {
        line: usize,
        expected: Granularity,
        found: Granularity,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Corpus {
    fn build(granularity: Granularity, mut units: Vec<SourceUnit>, provenance: String) -> Self {
        units.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        units.dedup_by(|a, b| a.sort_key() == b.sort_key());
        Corpus {
            granularity,
            units,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.units {
            let wire = WireUnit {
                granularity: u.granularity,
                provenance: self.provenance.clone(),
                commit_hash: u.commit_hash.clone(),
                file_path: u.file_path.clone(),
                origin_start: u.origin_lines.start,
                origin_end: u.origin_lines.end,
                orphan: u.orphan,
                content: u.content.clone(),
            };
            out.push_str(&serde_json::to_string(&wire).expect("unit serialization is infallible"));
            out.push('\n');
        }
        out
    }

    pub fn read_jsonl<R: BufRead>(granularity: Granularity, reader: R) -> Result<Corpus, CorpusReadError> {
        let mut units = Vec::new();
        let mut provenance = String::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let w: WireUnit = serde_json::from_str(&line).map_err(|e| CorpusReadError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            if w.granularity != granularity {
                return Err(CorpusReadError::Mixed {
                    line: i + 1,
                    expected: granularity,
                    found: w.granularity,
                });
            }
            provenance = w.provenance;
            units.push(SourceUnit {
                granularity: w.granularity,
                commit_hash: w.commit_hash,
                file_path: w.file_path,
                origin_lines: LineRange {
                    start: w.origin_start,
                    end: w.origin_end,
                },
                orphan: w.orphan,
                content: w.content,
            });
        }
        Ok(Corpus::build(granularity, units, provenance))
    }
}

/// A corpus together with what was left out of it.
#[derive(Debug, Clone)]
pub struct Extracted {
    pub corpus: Corpus,
    pub skips: SkipReport,
}

fn skip(commit: &CommitRecord, file: &FileChange, reason: impl Into<String>) -> Skip {
    Skip {
        line: None,
        commit_hash: Some(commit.commit_hash.clone()),
        path: Some(file.path.clone()),
        reason: reason.into(),
    }
}

fn unit(g: Granularity, commit: &CommitRecord, file: &FileChange, start: u32, end: u32, content: String) -> SourceUnit {
    SourceUnit {
        granularity: g,
        commit_hash: commit.commit_hash.clone(),
        file_path: file.path.clone(),
        origin_lines: LineRange { start, end },
        orphan: false,
        content,
    }
}

/// Added-line numbers of a file that fall inside the post-fix source.
fn modified_lines_in_file(
    g: Granularity,
    commit: &CommitRecord,
    file: &FileChange,
    skips: &mut SkipReport,
) -> Option<BTreeSet<u32>> {
    let parsed = match parse_unified_diff(&file.diff_text) {
        Ok(d) => d,
        Err(e) => {
            skips.push(skip(commit, file, format!("{g}: unparseable diff: {e}")));
            return None;
        }
    };
    let n_lines = line_count(&file.post_fix_source) as u32;
    let (inside, outside): (BTreeSet<u32>, BTreeSet<u32>) = diff::modified_new_lines(&parsed)
        .into_iter()
        .partition(|&l| l <= n_lines);
    if !outside.is_empty() {
        skips.push(skip(
            commit,
            file,
            format!("{g}: {} added line(s) beyond end of post-fix file", outside.len()),
        ));
    }
    Some(inside)
}

fn file_units(commit: &CommitRecord, skips: &mut SkipReport) -> Vec<SourceUnit> {
    let mut out = Vec::new();
    for f in &commit.files {
        if f.post_fix_source.is_empty() {
            skips.push(skip(commit, f, "file: empty post-fix source"));
            continue;
        }
        let n = line_count(&f.post_fix_source) as u32;
        out.push(unit(Granularity::File, commit, f, 1, n, f.post_fix_source.clone()));
    }
    out
}

fn structural_units(g: Granularity, commit: &CommitRecord, skips: &mut SkipReport) -> Vec<SourceUnit> {
    let mut out = Vec::new();
    for f in &commit.files {
        let Some(lines) = modified_lines_in_file(g, commit, f, skips) else {
            continue;
        };
        if lines.is_empty() {
            continue;
        }
        let index = cstruct::scan(&f.post_fix_source, f.language);
        if index.unbalanced {
            skips.push(skip(commit, f, format!("{g}: unbalanced braces in post-fix source")));
            continue;
        }
        let mut spans: BTreeSet<(u32, u32, bool)> = BTreeSet::new();
        let mut dropped = 0usize;
        for &l in &lines {
            let span = match g {
                Granularity::Function => {
                    cstruct::enclosing_function(&index, l).map(|fs| (fs.start_line, fs.end_line, false))
                }
                Granularity::Block => cstruct::innermost_block(&index, l).map(|b| {
                    let inside_fn = index
                        .functions
                        .iter()
                        .any(|fs| fs.start_line <= b.open_line && b.close_line <= fs.end_line);
                    (b.open_line, b.close_line, !inside_fn)
                }),
                _ => unreachable!("structural granularities only"),
            };
            match span {
                Some(s) => {
                    spans.insert(s);
                }
                None => dropped += 1,
            }
        }
        if dropped > 0 {
            skips.push(skip(
                commit,
                f,
                format!("{g}: {dropped} modified line(s) outside any {g}"),
            ));
        }
        for (start, end, orphan) in spans {
            let mut u = unit(g, commit, f, start, end, line_slice(&f.post_fix_source, start, end));
            u.orphan = orphan;
            out.push(u);
        }
    }
    out
}

fn line_units(commit: &CommitRecord, skips: &mut SkipReport) -> Vec<SourceUnit> {
    let mut out = Vec::new();
    for f in &commit.files {
        let parsed = match parse_unified_diff(&f.diff_text) {
            Ok(d) => d,
            Err(e) => {
                skips.push(skip(commit, f, format!("line: unparseable diff: {e}")));
                continue;
            }
        };
        let n_lines = line_count(&f.post_fix_source) as u32;
        let mut beyond = 0usize;
        for (n, text) in added_lines(&parsed) {
            if text.trim().is_empty() {
                continue;
            }
            if n > n_lines {
                beyond += 1;
                continue;
            }
            out.push(unit(Granularity::Line, commit, f, n, n, text.to_string()));
        }
        if beyond > 0 {
            skips.push(skip(
                commit,
                f,
                format!("line: {beyond} added line(s) beyond end of post-fix file"),
            ));
        }
    }
    out
}

/// Extracts one granularity. Commits are processed in parallel; the result
/// order is fixed by the (commit, file, origin) sort.
pub fn extract(set: &CommitSet, granularity: Granularity) -> Extracted {
    let per_commit: Vec<(Vec<SourceUnit>, SkipReport)> = set
        .records()
        .par_iter()
        .map(|c| {
            let mut skips = SkipReport::default();
            let units = match granularity {
                Granularity::File => file_units(c, &mut skips),
                Granularity::Function | Granularity::Block => structural_units(granularity, c, &mut skips),
                Granularity::Line => line_units(c, &mut skips),
            };
            (units, skips)
        })
        .collect();
    let mut units = Vec::new();
    let mut skips = SkipReport::default();
    for (u, s) in per_commit {
        units.extend(u);
        skips.extend(s);
    }
    Extracted {
        corpus: Corpus::build(granularity, units, set.digest()),
        skips,
    }
}

pub fn extract_file_level(set: &CommitSet) -> Extracted {
    extract(set, Granularity::File)
}

pub fn extract_function_level(set: &CommitSet) -> Extracted {
    extract(set, Granularity::Function)
}

pub fn extract_block_level(set: &CommitSet) -> Extracted {
    extract(set, Granularity::Block)
}

pub fn extract_line_level(set: &CommitSet) -> Extracted {
    extract(set, Granularity::Line)
}

/// Tab-separated unit counts per granularity.
pub fn counts_summary(corpora: &[&Corpus]) -> String {
    let mut out = String::from("granularity\tunits\n");
    for c in corpora {
        out.push_str(&format!("{}\t{}\n", c.granularity, c.len()));
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("subset size {size} exceeds the {available} available commits")]
    TooLarge { size: usize, available: usize },
    #[error("subset sizes must be strictly ascending and positive")]
    NotAscending,
}

/// Nested random subsets: a seeded permutation of the commits (taken in
/// commit-hash order) is cut at each requested size, so every subset
/// contains the previous one. Each subset is returned sorted by hash.
pub fn sample_commit_subsets(set: &CommitSet, sizes: &[usize], seed: u64) -> Result<Vec<CommitSet>, SampleError> {
    if sizes.first() == Some(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SampleError::NotAscending);
    }
    if let Some(&max) = sizes.last() {
        if max > set.len() {
            return Err(SampleError::TooLarge {
                size: max,
                available: set.len(),
            });
        }
    }
    let mut ordered: Vec<&CommitRecord> = set.iter().collect();
    ordered.sort_by(|a, b| a.commit_hash.cmp(&b.commit_hash));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ordered.shuffle(&mut rng);
    Ok(sizes
        .iter()
        .map(|&n| {
            let mut prefix: Vec<CommitRecord> = ordered[..n].iter().map(|r| (*r).clone()).collect();
            prefix.sort_by(|a, b| a.commit_hash.cmp(&b.commit_hash));
            CommitSet::new(prefix)
        })
        .collect())
}

/// Records whose CWE equals `cwe_id` exactly, in input order.
pub fn filter_by_cwe(set: &CommitSet, cwe_id: &str) -> CommitSet {
    set.iter()
        .filter(|r| r.cwe_id.as_deref() == Some(cwe_id))
        .cloned()
        .collect()
}

/// Manual file curation: an optional allow list and a deny list of
/// `(commit_hash, path)` pairs. A path of `*` matches every file of the commit.
#[derive(Debug, Clone, Default)]
pub struct FileFilter {
    pub allow: Option<HashSet<(String, String)>>,
    pub deny: HashSet<(String, String)>,
}

impl FileFilter {
    /// Parses `commit_hash<TAB>path` lines; `#` starts a comment.
    pub fn parse_list(text: &str) -> Result<HashSet<(String, String)>, String> {
        let mut out = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            match (cols.next(), cols.next(), cols.next()) {
                (Some(h), Some(p), None) => {
                    out.insert((h.to_ascii_lowercase(), p.to_string()));
                }
                _ => return Err(format!("line {}: expected `commit_hash path`", i + 1)),
            }
        }
        Ok(out)
    }

    fn matches(list: &HashSet<(String, String)>, hash: &str, path: &str) -> bool {
        list.contains(&(hash.to_string(), path.to_string())) || list.contains(&(hash.to_string(), "*".to_string()))
    }

    fn keeps(&self, hash: &str, path: &str) -> bool {
        let allowed = self.allow.as_ref().is_none_or(|a| Self::matches(a, hash, path));
        allowed && !Self::matches(&self.deny, hash, path)
    }

    /// Applies the filter; commits left without files are dropped.
    pub fn apply(&self, set: &CommitSet) -> CommitSet {
        set.iter()
            .filter_map(|r| {
                let files: Vec<FileChange> = r
                    .files
                    .iter()
                    .filter(|f| self.keeps(&r.commit_hash, &f.path))
                    .cloned()
                    .collect();
                (!files.is_empty()).then(|| CommitRecord { files, ..r.clone() })
            })
            .collect()
    }
}

//! Canonical vulnerability-fix records: loading, merging and statistics.
//!
//! The canonical format is UTF-8 JSON Lines, one commit per line:
//!
//! ```text
//! {"cve_id":"CVE-2019-1234","cwe_id":"CWE-119","project":"libfoo",
//!  "commit_hash":"ab12...","files":[{"path":"src/a.c",
//!  "post_fix_source":"...","diff_text":"@@ -1,2 +1,3 @@\n..."}]}
//! ```
//!
//! Only files whose extension maps to C or C++ are kept. Records that end up
//! with no files, or have an empty commit hash, are dropped into the skip
//! report.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lang::Language;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading record stream: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileChange {
    pub path: String,
    pub language: Language,
    pub post_fix_source: String,
    pub diff_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub cve_id: String,
    pub cwe_id: Option<String>,
    pub project: String,
    pub commit_hash: String,
    pub files: Vec<FileChange>,
}

#[derive(Serialize, Deserialize)]
struct WireFile {
    path: String,
    post_fix_source: String,
    diff_text: String,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    cve_id: String,
    #[serde(default)]
    cwe_id: Option<String>,
    project: String,
    commit_hash: String,
    files: Vec<WireFile>,
}

impl CommitRecord {
    /// Serializes back into one canonical JSON line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        let wire = WireRecord {
            cve_id: self.cve_id.clone(),
            cwe_id: self.cwe_id.clone(),
            project: self.project.clone(),
            commit_hash: self.commit_hash.clone(),
            files: self
                .files
                .iter()
                .map(|f| WireFile {
                    path: f.path.clone(),
                    post_fix_source: f.post_fix_source.clone(),
                    diff_text: f.diff_text.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&wire).expect("record serialization is infallible")
    }
}

/// An ordered, immutable collection of commit records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitSet {
    records: Vec<CommitRecord>,
}

impl CommitSet {
    pub fn new(records: Vec<CommitRecord>) -> Self {
        CommitSet { records }
    }

    pub fn records(&self) -> &[CommitRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CommitRecord> {
        self.records.iter()
    }

    pub fn commit_hashes(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.commit_hash.as_str()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    /// Total number of changed C/C++ files.
    pub fn file_count(&self) -> usize {
        self.records.iter().map(|r| r.files.len()).sum()
    }
}

impl FromIterator<CommitRecord> for CommitSet {
    fn from_iter<T: IntoIterator<Item = CommitRecord>>(iter: T) -> Self {
        CommitSet::new(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    /// 1-based line of the input stream, when the skip came from parsing.
    pub line: Option<usize>,
    pub commit_hash: Option<String>,
    pub path: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub entries: Vec<Skip>,
}

impl SkipReport {
    pub fn push(&mut self, skip: Skip) {
        self.entries.push(skip);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries that dropped a whole record (as opposed to a single file).
    pub fn dropped_records(&self) -> usize {
        self.entries.iter().filter(|s| s.path.is_none()).count()
    }

    pub fn extend(&mut self, other: SkipReport) {
        self.entries.extend(other.entries);
    }

    /// Tab-separated rendering with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("line\tcommit_hash\tpath\treason\n");
        for s in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                s.line.map(|l| l.to_string()).unwrap_or_default(),
                s.commit_hash.as_deref().unwrap_or(""),
                s.path.as_deref().unwrap_or(""),
                s.reason.replace(['\t', '\n'], " ")
            );
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub set: CommitSet,
    pub skips: SkipReport,
}

fn normalize(wire: WireRecord, line: usize, skips: &mut SkipReport) -> Option<CommitRecord> {
    let commit_hash = wire.commit_hash.trim().to_ascii_lowercase();
    if commit_hash.is_empty() {
        skips.push(Skip {
            line: Some(line),
            commit_hash: None,
            path: None,
            reason: "empty commit_hash".into(),
        });
        return None;
    }
    let mut seen = HashSet::new();
    let mut files = Vec::with_capacity(wire.files.len());
    for f in wire.files {
        let Some(language) = Language::from_path(&f.path) else {
            skips.push(Skip {
                line: Some(line),
                commit_hash: Some(commit_hash.clone()),
                path: Some(f.path),
                reason: "not a C/C++ file".into(),
            });
            continue;
        };
        if !seen.insert(f.path.clone()) {
            skips.push(Skip {
                line: Some(line),
                commit_hash: Some(commit_hash.clone()),
                path: Some(f.path),
                reason: "duplicate path within commit".into(),
            });
            continue;
        }
        files.push(FileChange {
            path: f.path,
            language,
            post_fix_source: f.post_fix_source,
            diff_text: f.diff_text,
        });
    }
    if files.is_empty() {
        skips.push(Skip {
            line: Some(line),
            commit_hash: Some(commit_hash),
            path: None,
            reason: "no C/C++ files".into(),
        });
        return None;
    }
    let cwe_id = wire.cwe_id.map(|c| c.trim().to_string()).filter(|c| !c.is_empty());
    Some(CommitRecord {
        cve_id: wire.cve_id.trim().to_string(),
        cwe_id,
        project: wire.project.trim().to_string(),
        commit_hash,
        files,
    })
}

/// Reads a canonical record stream. Malformed lines and unusable records are
/// skipped and reported; only an unreadable stream is an error.
pub fn ingest_records<R: BufRead>(source: R) -> Result<Ingested, IngestError> {
    let mut out = Ingested::default();
    let mut records = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<WireRecord>(&line) {
            Ok(wire) => {
                if let Some(r) = normalize(wire, lineno, &mut out.skips) {
                    records.push(r);
                }
            }
            Err(e) => out.skips.push(Skip {
                line: Some(lineno),
                commit_hash: None,
                path: None,
                reason: format!("malformed record: {e}"),
            }),
        }
    }
    out.set = CommitSet::new(records);
    Ok(out)
}

/// The same commit hash seen under two different project names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCollision {
    pub commit_hash: String,
    pub kept_project: String,
    pub other_project: String,
}

/// Union of `sets` keyed by commit hash. The first occurrence wins; output
/// is sorted by commit hash.
pub fn merge_dedup_report(sets: &[CommitSet]) -> (CommitSet, Vec<HashCollision>) {
    let mut merged: BTreeMap<&str, &CommitRecord> = BTreeMap::new();
    let mut collisions = Vec::new();
    for r in sets.iter().flat_map(|s| s.iter()) {
        match merged.get(r.commit_hash.as_str()) {
            Some(kept) => {
                if kept.project != r.project {
                    collisions.push(HashCollision {
                        commit_hash: r.commit_hash.clone(),
                        kept_project: kept.project.clone(),
                        other_project: r.project.clone(),
                    });
                }
            }
            None => {
                merged.insert(&r.commit_hash, r);
            }
        }
    }
    let set = merged.into_values().cloned().collect();
    (set, collisions)
}

pub fn merge_dedup(sets: &[CommitSet]) -> CommitSet {
    let (set, collisions) = merge_dedup_report(sets);
    for c in &collisions {
        tracing::warn!(
            commit = %c.commit_hash,
            kept = %c.kept_project,
            other = %c.other_project,
            "commit hash shared by two projects"
        );
    }
    set
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_cves: usize,
    pub n_commits: usize,
    pub n_projects: usize,
}

pub fn stats(set: &CommitSet) -> DatasetStats {
    let distinct = |f: fn(&CommitRecord) -> &str| set.iter().map(f).collect::<HashSet<_>>().len();
    DatasetStats {
        n_cves: distinct(|r| r.cve_id.as_str()),
        n_commits: distinct(|r| r.commit_hash.as_str()),
        n_projects: distinct(|r| r.project.as_str()),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn record(cve: &str, cwe: Option<&str>, project: &str, hash: &str, paths: &[&str]) -> CommitRecord {
        CommitRecord {
            cve_id: cve.into(),
            cwe_id: cwe.map(Into::into),
            project: project.into(),
            commit_hash: hash.into(),
            files: paths
                .iter()
                .map(|p| FileChange {
                    path: (*p).into(),
                    language: Language::from_path(p).unwrap(),
                    post_fix_source: "int x;\n".into(),
                    diff_text: String::new(),
                })
                .collect(),
        }
    }
}

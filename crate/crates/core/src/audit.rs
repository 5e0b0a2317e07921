//! Contamination checks between a fine-tuning corpus and evaluation prompts,
//! and regex audits of corpus content.
//!
//! Tokenization: whitespace separates tokens; a maximal run of letters,
//! digits and `_` is one token; every other character is a token of its
//! own. Matching is case-sensitive.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use regex::Regex;
use thiserror::Error;

use crate::extract::Corpus;
use crate::scenario::Scenario;

pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let is_word = ch.is_alphanumeric() || ch == '_';
        if is_word {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(&text[s..i]);
        }
        if !ch.is_whitespace() {
            out.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = word_start {
        out.push(&text[s..]);
    }
    out
}

/// Distinct token n-grams of `text`.
pub fn ngrams<'a>(tokens: &[&'a str], n: usize) -> HashSet<Vec<&'a str>> {
    assert!(n >= 1, "n-gram order must be at least 1");
    if tokens.len() < n {
        return HashSet::new();
    }
    tokens.windows(n).map(|w| w.to_vec()).collect()
}

/// Number of distinct n-grams two texts have in common.
pub fn shared_ngram_count(a: &str, b: &str, n: usize) -> usize {
    let ta = tokenize(a);
    let tb = tokenize(b);
    let ga = ngrams(&ta, n);
    let gb = ngrams(&tb, n);
    ga.intersection(&gb).count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapPair {
    pub unit_id: String,
    pub prompt_id: String,
    pub shared: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapReport {
    pub n: usize,
    /// Only pairs with a positive count, ordered by (unit, prompt).
    pub pairs: Vec<OverlapPair>,
    pub total_shared: usize,
}

impl OverlapReport {
    pub fn contaminated(&self) -> bool {
        self.total_shared > 0
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("unit_id\tprompt_id\tshared\n");
        for p in &self.pairs {
            let _ = writeln!(out, "{}\t{}\t{}", p.unit_id, p.prompt_id, p.shared);
        }
        out
    }
}

/// Counts distinct shared n-grams for every (unit, prompt) pair.
pub fn ngram_overlap(corpus: &Corpus, prompts: &[Scenario], n: usize) -> OverlapReport {
    assert!(n >= 1, "n-gram order must be at least 1");
    let prompt_tokens: Vec<Vec<&str>> = prompts.iter().map(|p| tokenize(&p.prompt)).collect();
    let mut index: HashMap<Vec<&str>, Vec<usize>> = HashMap::new();
    for (pi, toks) in prompt_tokens.iter().enumerate() {
        for g in ngrams(toks, n) {
            index.entry(g).or_default().push(pi);
        }
    }

    let mut pairs = Vec::new();
    for unit in &corpus.units {
        let toks = tokenize(&unit.content);
        let mut per_prompt: HashMap<usize, usize> = HashMap::new();
        for g in ngrams(&toks, n) {
            if let Some(ps) = index.get(&g) {
                for &p in ps {
                    *per_prompt.entry(p).or_default() += 1;
                }
            }
        }
        let mut hits: Vec<(usize, usize)> = per_prompt.into_iter().collect();
        hits.sort_by(|a, b| prompts[a.0].id.cmp(&prompts[b.0].id));
        let id = unit.id();
        for (p, shared) in hits {
            pairs.push(OverlapPair {
                unit_id: id.clone(),
                prompt_id: prompts[p].id.clone(),
                shared,
            });
        }
    }
    let total_shared = pairs.iter().map(|p| p.shared).sum();
    OverlapReport { n, pairs, total_shared }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid pattern at offset {position}: {message}")]
pub struct PatternError {
    pub position: usize,
    pub message: String,
}

pub fn compile_pattern(pattern: &str) -> Result<Regex, PatternError> {
    if let Err(e) = regex_syntax::Parser::new().parse(pattern) {
        let (position, message) = match &e {
            regex_syntax::Error::Parse(p) => (p.span().start.offset, p.kind().to_string()),
            regex_syntax::Error::Translate(t) => (t.span().start.offset, t.kind().to_string()),
            other => (0, other.to_string()),
        };
        return Err(PatternError { position, message });
    }
    Regex::new(pattern).map_err(|e| PatternError {
        position: 0,
        message: e.to_string(),
    })
}

/// Units with at least one match, in corpus order, with their match counts.
pub fn pattern_search(corpus: &Corpus, pattern: &str) -> Result<Vec<(String, usize)>, PatternError> {
    let re = compile_pattern(pattern)?;
    Ok(corpus
        .units
        .iter()
        .filter_map(|u| {
            let n = re.find_iter(&u.content).count();
            (n > 0).then(|| (u.id(), n))
        })
        .collect())
}

//! Unified diff parsing and mapping of changed lines onto file line numbers.
//!
//! Only the hunk grammar is interpreted. Git extended headers (`diff --git`,
//! `index`, mode and rename lines) and the `---`/`+++` file headers are
//! skipped.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("line {line}: malformed hunk header `{header}`")]
    BadHeader { line: usize, header: String },
    #[error("hunk {hunk} (`{header}`): body shorter than header lengths")]
    HunkTooShort { hunk: usize, header: String },
    #[error("hunk {hunk} (`{header}`): body longer than header lengths")]
    HunkTooLong { hunk: usize, header: String },
    #[error("hunk {hunk}, line {line}: unknown line tag {tag:?}")]
    UnknownTag { hunk: usize, line: usize, tag: char },
    #[error("hunk {hunk} overlaps or precedes the previous hunk")]
    OutOfOrder { hunk: usize },
    #[error("line {line}: content outside of any hunk")]
    StrayLine { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineTag {
    Context,
    Added,
    Deleted,
}

impl LineTag {
    fn prefix(self) -> char {
        match self {
            LineTag::Context => ' ',
            LineTag::Added => '+',
            LineTag::Deleted => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HunkLine {
    pub tag: LineTag,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    fn count(&self, tag: LineTag) -> u32 {
        self.lines.iter().filter(|l| l.tag == tag).count() as u32
    }

    /// True when the header lengths agree with the tagged body.
    pub fn is_consistent(&self) -> bool {
        let ctx = self.count(LineTag::Context);
        self.new_len == ctx + self.count(LineTag::Added) && self.old_len == ctx + self.count(LineTag::Deleted)
    }

    /// Walks the hunk and yields `(old_line, new_line, line)` where the line
    /// number on the side the line does not exist on is `None`.
    pub fn walk(&self) -> impl Iterator<Item = (Option<u32>, Option<u32>, &HunkLine)> {
        let mut old = self.old_start;
        let mut new = self.new_start;
        self.lines.iter().map(move |l| match l.tag {
            LineTag::Context => {
                let r = (Some(old), Some(new), l);
                old += 1;
                new += 1;
                r
            }
            LineTag::Added => {
                let r = (None, Some(new), l);
                new += 1;
                r
            }
            LineTag::Deleted => {
                let r = (Some(old), None, l);
                old += 1;
                r
            }
        })
    }

    fn header(&self) -> String {
        format!(
            "@@ -{},{} +{},{} @@",
            self.old_start, self.old_len, self.new_start, self.new_len
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnifiedDiff {
    pub hunks: Vec<Hunk>,
}

impl fmt::Display for UnifiedDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for h in &self.hunks {
            writeln!(f, "{}", h.header())?;
            for l in &h.lines {
                writeln!(f, "{}{}", l.tag.prefix(), l.text)?;
            }
        }
        Ok(())
    }
}

const SKIPPED_HEADERS: &[&str] = &[
    "diff ",
    "index ",
    "--- ",
    "+++ ",
    "new file mode",
    "deleted file mode",
    "old mode",
    "new mode",
    "similarity index",
    "dissimilarity index",
    "rename from",
    "rename to",
    "copy from",
    "copy to",
    "Binary files",
];

fn is_skipped_header(line: &str) -> bool {
    SKIPPED_HEADERS.iter().any(|p| line.starts_with(p))
}

fn parse_range(s: &str) -> Option<(u32, u32)> {
    match s.split_once(',') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_header(line: &str) -> Option<(u32, u32, u32, u32)> {
    let rest = line.strip_prefix("@@ -")?;
    let (ranges, _section) = rest.split_once(" @@")?;
    let (old, new) = ranges.split_once(" +")?;
    let (os, ol) = parse_range(old)?;
    let (ns, nl) = parse_range(new)?;
    Some((os, ol, ns, nl))
}

/// Parses unified diff text into its hunks.
pub fn parse_unified_diff(text: &str) -> Result<UnifiedDiff, DiffError> {
    let mut hunks: Vec<Hunk> = Vec::new();
    // Remaining (old, new) lines owed by the hunk currently being read.
    let mut owed: Option<(u32, u32)> = None;
    let mut header_text = String::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if line.starts_with('\\') {
            // "\ No newline at end of file"
            continue;
        }

        if let Some((old_left, new_left)) = owed {
            if old_left > 0 || new_left > 0 {
                let hunk_no = hunks.len();
                let (tag, body) = match line.chars().next() {
                    Some(' ') => (LineTag::Context, &line[1..]),
                    Some('+') => (LineTag::Added, &line[1..]),
                    Some('-') => (LineTag::Deleted, &line[1..]),
                    // Some tools strip the single space of empty context lines.
                    None => (LineTag::Context, ""),
                    Some('@') => {
                        return Err(DiffError::HunkTooShort {
                            hunk: hunk_no,
                            header: header_text,
                        })
                    }
                    Some(c) => {
                        return Err(DiffError::UnknownTag {
                            hunk: hunk_no,
                            line: lineno,
                            tag: c,
                        })
                    }
                };
                let (need_old, need_new) = match tag {
                    LineTag::Context => (1, 1),
                    LineTag::Added => (0, 1),
                    LineTag::Deleted => (1, 0),
                };
                if need_old > old_left || need_new > new_left {
                    return Err(DiffError::HunkTooLong {
                        hunk: hunk_no,
                        header: header_text,
                    });
                }
                owed = Some((old_left - need_old, new_left - need_new));
                hunks
                    .last_mut()
                    .expect("owed implies an open hunk")
                    .lines
                    .push(HunkLine {
                        tag,
                        text: body.to_string(),
                    });
                continue;
            }
        }

        if line.starts_with("@@") {
            let (os, ol, ns, nl) = parse_header(line).ok_or_else(|| DiffError::BadHeader {
                line: lineno,
                header: line.to_string(),
            })?;
            let hunk_no = hunks.len() + 1;
            if let Some(prev) = hunks.last() {
                if ns < prev.new_start + prev.new_len {
                    return Err(DiffError::OutOfOrder { hunk: hunk_no });
                }
            }
            header_text = line.to_string();
            hunks.push(Hunk {
                old_start: os,
                old_len: ol,
                new_start: ns,
                new_len: nl,
                lines: Vec::new(),
            });
            owed = Some((ol, nl));
            continue;
        }

        if line.is_empty() || is_skipped_header(line) {
            continue;
        }

        if owed.is_some() && matches!(line.chars().next(), Some('+' | '-' | ' ')) {
            return Err(DiffError::HunkTooLong {
                hunk: hunks.len(),
                header: header_text,
            });
        }
        if owed.is_none() {
            // Free-form preamble such as commit messages before the first hunk.
            continue;
        }
        return Err(DiffError::StrayLine { line: lineno });
    }

    if let Some((o, n)) = owed {
        if o > 0 || n > 0 {
            return Err(DiffError::HunkTooShort {
                hunk: hunks.len(),
                header: header_text,
            });
        }
    }
    Ok(UnifiedDiff { hunks })
}

/// Post-fix line numbers of every added line.
pub fn modified_new_lines(diff: &UnifiedDiff) -> BTreeSet<u32> {
    diff.hunks
        .iter()
        .flat_map(|h| h.walk())
        .filter(|(_, _, l)| l.tag == LineTag::Added)
        .filter_map(|(_, new, _)| new)
        .collect()
}

/// Pre-fix line numbers of every deleted line.
pub fn modified_old_lines(diff: &UnifiedDiff) -> BTreeSet<u32> {
    diff.hunks
        .iter()
        .flat_map(|h| h.walk())
        .filter(|(_, _, l)| l.tag == LineTag::Deleted)
        .filter_map(|(old, _, _)| old)
        .collect()
}

/// Added lines paired with their post-fix line number, in file order.
pub fn added_lines(diff: &UnifiedDiff) -> Vec<(u32, &str)> {
    diff.hunks
        .iter()
        .flat_map(|h| h.walk())
        .filter(|(_, _, l)| l.tag == LineTag::Added)
        .filter_map(|(_, new, l)| new.map(|n| (n, l.text.as_str())))
        .collect()
}

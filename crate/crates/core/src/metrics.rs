//! Evaluation metrics and report tables.
//!
//! Ratios are always recomputed from summed counts, never averaged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Language;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
    #[error("invalid arguments for {metric}: {reason}")]
    InvalidArgs { metric: &'static str, reason: String },
}

/// Verdict counts for one scenario or one group of scenarios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub vulnerable: u64,
    pub secure: u64,
    pub invalid: u64,
}

impl Counts {
    pub fn new(vulnerable: u64, secure: u64, invalid: u64) -> Self {
        Counts {
            vulnerable,
            secure,
            invalid,
        }
    }

    pub fn total(&self) -> u64 {
        self.vulnerable + self.secure + self.invalid
    }

    pub fn valid(&self) -> u64 {
        self.vulnerable + self.secure
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts::new(
            self.vulnerable + o.vulnerable,
            self.secure + o.secure,
            self.invalid + o.invalid,
        )
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

/// Share of samples that compiled.
pub fn valid_ratio(c: &Counts) -> Result<f64, MetricError> {
    if c.total() == 0 {
        return Err(MetricError::Undefined {
            metric: "valid ratio",
            reason: "no samples".into(),
        });
    }
    Ok(c.valid() as f64 / c.total() as f64)
}

pub fn invalid_ratio(c: &Counts) -> Result<f64, MetricError> {
    valid_ratio(c).map(|v| 1.0 - v)
}

/// Share of compiling samples without a finding for the target CWE.
pub fn secure_ratio(c: &Counts) -> Result<f64, MetricError> {
    if c.valid() == 0 {
        return Err(MetricError::Undefined {
            metric: "secure ratio",
            reason: "no valid samples".into(),
        });
    }
    Ok(c.secure as f64 / c.valid() as f64)
}

/// Unbiased pass@k estimator `1 - C(n-c, k) / C(n, k)`, evaluated as the
/// product `1 - prod_{i=n-c+1}^{n} (1 - k/i)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricError> {
    if c > n {
        return Err(MetricError::InvalidArgs {
            metric: "pass@k",
            reason: format!("correct count {c} exceeds samples {n}"),
        });
    }
    if k == 0 || k > n {
        return Err(MetricError::InvalidArgs {
            metric: "pass@k",
            reason: format!("k = {k} must be in 1..={n}"),
        });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if k == 1 {
        // the product telescopes to c / n; skip the rounding it would add
        return Ok(c as f64 / n as f64);
    }
    let kf = k as f64;
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - kf / i as f64).product();
    Ok(1.0 - miss)
}

/// One benchmark task: `n` samples of which `c` were correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub n: u64,
    pub c: u64,
}

/// Mean pass@k over tasks.
pub fn mean_pass_at_k(tasks: &[TaskResult], k: u64) -> Result<f64, MetricError> {
    if tasks.is_empty() {
        return Err(MetricError::Undefined {
            metric: "pass@k",
            reason: "no tasks".into(),
        });
    }
    let mut sum = 0.0;
    for t in tasks {
        sum += pass_at_k(t.n, t.c, k)?;
    }
    Ok(sum / tasks.len() as f64)
}

/// Parses a `task_id n c` table (comma or tab separated, optional header).
pub fn parse_task_table(text: &str) -> Result<Vec<TaskResult>, String> {
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let header_allowed = std::mem::replace(&mut first, false);
        let cols: Vec<&str> = line.split([',', '\t']).map(str::trim).collect();
        if cols.len() != 3 {
            return Err(format!("line {}: expected 3 columns (task_id, n, c)", i + 1));
        }
        match (cols[1].parse::<u64>(), cols[2].parse::<u64>()) {
            (Ok(n), Ok(c)) => out.push(TaskResult {
                task_id: cols[0].to_string(),
                n,
                c,
            }),
            _ if header_allowed => continue,
            _ => return Err(format!("line {}: n and c must be non-negative integers", i + 1)),
        }
    }
    Ok(out)
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut t = Vec::with_capacity(n as usize + 1);
    t.push(0.0);
    let mut acc = 0.0f64;
    for i in 1..=n {
        acc += (i as f64).ln();
        t.push(acc);
    }
    t
}

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`.
///
/// Sums the hypergeometric mass of every table with the observed margins
/// whose probability does not exceed the observed table's (relative
/// tolerance 1e-7).
pub fn fisher_exact_2x2(a: u64, b: u64, c: u64, d: u64) -> Result<f64, MetricError> {
    let n = a + b + c + d;
    if n == 0 {
        return Err(MetricError::InvalidArgs {
            metric: "Fisher exact test",
            reason: "all cells are zero".into(),
        });
    }
    let row1 = a + b;
    let col1 = a + c;
    let lf = ln_factorials(n);
    let ln_choose = |n: u64, k: u64| lf[n as usize] - lf[k as usize] - lf[(n - k) as usize];
    let denom = ln_choose(n, row1);
    let mass = |x: u64| (ln_choose(col1, x) + ln_choose(n - col1, row1 - x) - denom).exp();

    let lo = row1.saturating_sub(n - col1);
    let hi = row1.min(col1);
    let observed = mass(a);
    let cutoff = observed * (1.0 + 1e-7);
    let p: f64 = (lo..=hi).map(mass).filter(|&m| m <= cutoff).sum();
    Ok(p.min(1.0))
}

/// Per-task Fisher test between two runs of the same benchmark, joined on
/// task id. Each table is `[[c1, n1 - c1], [c2, n2 - c2]]`.
pub fn fisher_per_task(base: &[TaskResult], other: &[TaskResult]) -> Vec<(String, Result<f64, MetricError>)> {
    let other: BTreeMap<&str, &TaskResult> = other.iter().map(|t| (t.task_id.as_str(), t)).collect();
    base.iter()
        .filter_map(|t| {
            let o = other.get(t.task_id.as_str())?;
            let p = if t.c > t.n || o.c > o.n {
                Err(MetricError::InvalidArgs {
                    metric: "Fisher exact test",
                    reason: format!("task {}: correct count exceeds samples", t.task_id),
                })
            } else {
                fisher_exact_2x2(t.c, t.n - t.c, o.c, o.n - o.c)
            };
            Some((t.task_id.clone(), p))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTally {
    pub scenario_id: String,
    pub language: Language,
    pub cwe: String,
    pub counts: Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Language,
    Cwe,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupRow {
    pub key: String,
    pub counts: Counts,
}

/// Numeric part of a `CWE-NNN` id, for natural ordering.
fn cwe_number(cwe: &str) -> u32 {
    cwe.trim_start_matches("CWE-").parse().unwrap_or(u32::MAX)
}

/// Sums tallies per group. Languages sort C before C++, CWEs numerically.
pub fn aggregate(tallies: &[ScenarioTally], group_by: GroupBy) -> Vec<GroupRow> {
    match group_by {
        GroupBy::All => {
            if tallies.is_empty() {
                return Vec::new();
            }
            vec![GroupRow {
                key: "all".into(),
                counts: tallies.iter().map(|t| t.counts).sum(),
            }]
        }
        GroupBy::Language => {
            let mut m: BTreeMap<Language, Counts> = BTreeMap::new();
            for t in tallies {
                let e = m.entry(t.language).or_default();
                *e = *e + t.counts;
            }
            m.into_iter()
                .map(|(l, counts)| GroupRow {
                    key: l.to_string(),
                    counts,
                })
                .collect()
        }
        GroupBy::Cwe => {
            let mut m: BTreeMap<(u32, String), Counts> = BTreeMap::new();
            for t in tallies {
                let e = m.entry((cwe_number(&t.cwe), t.cwe.clone())).or_default();
                *e = *e + t.counts;
            }
            m.into_iter()
                .map(|((_, cwe), counts)| GroupRow { key: cwe, counts })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub model_tag: String,
    pub config_digest: String,
    pub scenarios: Vec<ScenarioTally>,
    pub by_language: Vec<GroupRow>,
    pub by_cwe: Vec<GroupRow>,
    pub overall: Vec<GroupRow>,
    /// Per-(CWE, language) sums for plotting.
    pub by_cwe_language: Vec<(String, Language, Counts)>,
}

impl Report {
    pub fn build(model_tag: &str, config_digest: &str, mut scenarios: Vec<ScenarioTally>) -> Report {
        scenarios.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        let mut cl: BTreeMap<(u32, String, Language), Counts> = BTreeMap::new();
        for t in &scenarios {
            let e = cl.entry((cwe_number(&t.cwe), t.cwe.clone(), t.language)).or_default();
            *e = *e + t.counts;
        }
        Report {
            model_tag: model_tag.to_string(),
            config_digest: config_digest.to_string(),
            by_language: aggregate(&scenarios, GroupBy::Language),
            by_cwe: aggregate(&scenarios, GroupBy::Cwe),
            overall: aggregate(&scenarios, GroupBy::All),
            by_cwe_language: cl.into_iter().map(|((_, c, l), n)| (c, l, n)).collect(),
            scenarios,
        }
    }
}

/// `0.5875...` -> `58.8%`.
pub fn percent(r: f64) -> String {
    format!("{:.1}%", r * 100.0)
}

/// `0.0993` -> `9.93%`, the precision used for pass@k.
pub fn percent2(r: f64) -> String {
    format!("{:.2}%", r * 100.0)
}

fn render_ratio(r: Result<f64, MetricError>) -> String {
    r.map(percent).unwrap_or_else(|_| "n/a".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedFile {
    pub name: String,
    pub contents: String,
}

const TEXT_COLUMNS: [&str; 9] = [
    "scenario",
    "language",
    "cwe",
    "vulnerable",
    "secure",
    "invalid",
    "valid_ratio",
    "invalid_ratio",
    "secure_ratio",
];

fn text_row(cells: [String; 9]) -> String {
    let mut line = format!("{:<22}{:<10}{:<10}", cells[0], cells[1], cells[2]);
    for c in &cells[3..] {
        let _ = write!(line, "{c:>14}");
    }
    line.trim_end().to_string() + "\n"
}

fn counts_cells(c: &Counts) -> [String; 6] {
    [
        c.vulnerable.to_string(),
        c.secure.to_string(),
        c.invalid.to_string(),
        render_ratio(valid_ratio(c)),
        render_ratio(invalid_ratio(c)),
        render_ratio(secure_ratio(c)),
    ]
}

fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# model: {}", report.model_tag);
    let _ = writeln!(out, "# config: {}", report.config_digest);
    out.push_str(&text_row(TEXT_COLUMNS.map(String::from)));
    let row = |label: String, lang: String, cwe: String, c: &Counts| {
        let [v, s, i, vr, ir, sr] = counts_cells(c);
        text_row([label, lang, cwe, v, s, i, vr, ir, sr])
    };
    for t in &report.scenarios {
        out.push_str(&row(
            t.scenario_id.clone(),
            t.language.to_string(),
            t.cwe.clone(),
            &t.counts,
        ));
    }
    for g in &report.by_language {
        out.push_str(&row(format!("Total ({})", g.key), g.key.clone(), "-".into(), &g.counts));
    }
    for g in &report.by_cwe {
        out.push_str(&row(format!("Total ({})", g.key), "-".into(), g.key.clone(), &g.counts));
    }
    for g in &report.overall {
        out.push_str(&row("Total".into(), "-".into(), "-".into(), &g.counts));
    }
    out
}

fn render_csv(report: &Report) -> Vec<RenderedFile> {
    let mut scen = String::from("scenario_id,language,cwe,vulnerable,secure,invalid,valid_ratio,secure_ratio\n");
    for t in &report.scenarios {
        let c = &t.counts;
        let _ = writeln!(
            scen,
            "{},{},{},{},{},{},{},{}",
            t.scenario_id,
            t.language,
            t.cwe,
            c.vulnerable,
            c.secure,
            c.invalid,
            render_ratio(valid_ratio(c)),
            render_ratio(secure_ratio(c))
        );
    }
    let mut cwe = String::from("cwe,language,vulnerable,secure,invalid,valid_ratio,secure_ratio\n");
    for (id, lang, c) in &report.by_cwe_language {
        let _ = writeln!(
            cwe,
            "{},{},{},{},{},{},{}",
            id,
            lang,
            c.vulnerable,
            c.secure,
            c.invalid,
            render_ratio(valid_ratio(c)),
            render_ratio(secure_ratio(c))
        );
    }
    vec![
        RenderedFile {
            name: "report.csv".into(),
            contents: scen,
        },
        RenderedFile {
            name: "report-cwe.csv".into(),
            contents: cwe,
        },
    ]
}

/// Renders report files in memory. Column order is fixed.
pub fn render_report(report: &Report, format: ReportFormat) -> Vec<RenderedFile> {
    match format {
        ReportFormat::TableText => vec![RenderedFile {
            name: "report.txt".into(),
            contents: render_text(report),
        }],
        ReportFormat::Csv => render_csv(report),
    }
}

/// Writes the rendered files into `dir`, returning their paths.
pub fn emit_report(report: &Report, format: ReportFormat, dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for f in render_report(report, format) {
        let p = dir.join(&f.name);
        crate::fsutil::write_atomic(&p, f.contents.as_bytes())?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tally(id: &str, lang: Language, cwe: &str, v: u64, s: u64, i: u64) -> ScenarioTally {
        ScenarioTally {
            scenario_id: id.into(),
            language: lang,
            cwe: cwe.into(),
            counts: Counts::new(v, s, i),
        }
    }

    #[test]
    fn ratios_on_published_totals() {
        let c = Counts::new(292, 416, 72);
        assert!((valid_ratio(&c).unwrap() - 708.0 / 780.0).abs() < 1e-12);
        assert_eq!(percent(invalid_ratio(&c).unwrap()), "9.2%");
        assert_eq!(percent(secure_ratio(&c).unwrap()), "58.8%");
    }

    #[test]
    fn ratio_edge_cases() {
        assert_eq!(valid_ratio(&Counts::new(0, 10, 0)).unwrap(), 1.0);
        assert_eq!(valid_ratio(&Counts::new(0, 0, 5)).unwrap(), 0.0);
        assert!(valid_ratio(&Counts::default()).is_err());
        assert_eq!(secure_ratio(&Counts::new(0, 7, 3)).unwrap(), 1.0);
        assert_eq!(secure_ratio(&Counts::new(3, 1, 6)).unwrap(), 0.25);
        assert!(secure_ratio(&Counts::new(0, 0, 6)).is_err());
    }

    #[test]
    fn pass_at_k_examples() {
        assert!((pass_at_k(10, 1, 1).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(pass_at_k(10, 0, 5).unwrap(), 0.0);
        assert!((pass_at_k(5, 2, 3).unwrap() - 0.9).abs() < 1e-12);
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_exact_2x2(3, 0, 0, 0).unwrap(), 1.0);
        assert!((fisher_exact_2x2(2, 0, 0, 2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((fisher_exact_2x2(1, 9, 9, 1).unwrap() - 202.0 / 184756.0).abs() < 1e-12);
        assert!(fisher_exact_2x2(0, 0, 0, 0).is_err());
    }

    #[test]
    fn fisher_per_task_joins_on_id() {
        let a = vec![
            TaskResult {
                task_id: "t1".into(),
                n: 2,
                c: 2,
            },
            TaskResult {
                task_id: "t2".into(),
                n: 2,
                c: 1,
            },
        ];
        let b = vec![TaskResult {
            task_id: "t1".into(),
            n: 2,
            c: 0,
        }];
        let out = fisher_per_task(&a, &b);
        assert_eq!(out.len(), 1);
        assert!((out[0].1.as_ref().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn task_table_parsing() {
        let t = parse_task_table("task_id,n,c\nCPP/0,10,3\nCPP/1\t10\t0\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].c, 0);
        assert!(parse_task_table("a,1\n").is_err());
        assert!(parse_task_table("a,1,2\nb,x,1\n").is_err());
    }

    #[test]
    fn aggregate_groups() {
        let ts = vec![
            tally("CWE-787-0-c", Language::C, "CWE-787", 1, 2, 3),
            tally("CWE-787-1-c", Language::C, "CWE-787", 4, 5, 6),
        ];
        assert_eq!(aggregate(&ts, GroupBy::All)[0].counts, Counts::new(5, 7, 9));
        let by_cwe = aggregate(&ts, GroupBy::Cwe);
        assert_eq!(by_cwe.len(), 1);
        assert_eq!(by_cwe[0].key, "CWE-787");
        assert!(aggregate(&[], GroupBy::All).is_empty());
    }

    #[test]
    fn cwe_groups_sort_numerically() {
        let ts = vec![
            tally("CWE-787-0-c", Language::C, "CWE-787", 1, 0, 0),
            tally("CWE-79-0-c", Language::C, "CWE-79", 1, 0, 0),
            tally("CWE-119-0-cpp", Language::Cpp, "CWE-119", 1, 0, 0),
        ];
        let keys: Vec<_> = aggregate(&ts, GroupBy::Cwe).into_iter().map(|g| g.key).collect();
        assert_eq!(keys, vec!["CWE-79", "CWE-119", "CWE-787"]);
        let langs: Vec<_> = aggregate(&ts, GroupBy::Language).into_iter().map(|g| g.key).collect();
        assert_eq!(langs, vec!["C", "C++"]);
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = Report::build("m", "d", vec![]);
        let txt = &render_report(&r, ReportFormat::TableText)[0].contents;
        assert_eq!(txt.lines().count(), 3);
        for f in render_report(&r, ReportFormat::Csv) {
            assert_eq!(f.contents.lines().count(), 1, "{}", f.name);
        }
    }

    #[test]
    fn published_tally_renders_one_decimal_percentages() {
        let r = Report::build(
            "codegen2-7b",
            "d",
            vec![tally("CWE-787-0-c", Language::C, "CWE-787", 292, 416, 72)],
        );
        let txt = &render_report(&r, ReportFormat::TableText)[0].contents;
        let row = txt.lines().find(|l| l.starts_with("CWE-787-0-c")).unwrap();
        assert!(row.contains("58.8%") && row.contains("9.2%"), "{row}");
        assert_eq!(
            render_report(&r, ReportFormat::TableText),
            render_report(&r, ReportFormat::TableText)
        );
    }

    #[test]
    fn no_valid_samples_render_as_na() {
        let r = Report::build("m", "d", vec![tally("CWE-20-0-c", Language::C, "CWE-20", 0, 0, 3)]);
        let csv = &render_report(&r, ReportFormat::Csv)[0].contents;
        assert!(csv.lines().nth(1).unwrap().ends_with(",0.0%,n/a"));
    }
}

//! Independent reference implementations and random generators shared by
//! the integration tests and the acceptance harness. Nothing here calls into
//! the code under test.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        // exact at every step: r * (n - i) is divisible by (i + 1)
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// pass@k by drawing every k-subset of n samples, the first c of which are
/// correct, and counting the draws that contain a correct one.
pub fn pass_at_k_by_enumeration(n: u32, c: u32, k: u32) -> f64 {
    assert!(n <= 16);
    let correct_mask: u32 = (1 << c) - 1;
    let (mut hits, mut draws) = (0u64, 0u64);
    for draw in 0u32..(1 << n) {
        if draw.count_ones() != k {
            continue;
        }
        draws += 1;
        hits += u64::from(draw & correct_mask != 0);
    }
    hits as f64 / draws as f64
}

/// Two-sided Fisher p-value in exact integer arithmetic: every table with
/// the observed margins is weighted by C(col1, x) * C(N - col1, row1 - x),
/// all over the common denominator C(N, row1).
pub fn fisher_by_enumeration(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let n = a + b + c + d;
    let (row1, col1) = (a + b, a + c);
    let weight = |x: u64| binom(col1, x) * binom(n - col1, row1 - x);
    let observed = weight(a);
    let lo = row1.saturating_sub(n - col1);
    let hi = row1.min(col1);
    let num: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    num as f64 / binom(n, row1) as f64
}

/// Brace depth at the start of each line, for text whose only braces are
/// structural.
pub fn counting_depth_map(src: &str) -> Vec<u32> {
    let mut out = Vec::new();
    let mut depth = 0u32;
    for line in src.split_inclusive('\n') {
        out.push(depth);
        for b in line.bytes() {
            match b {
                b'{' => depth += 1,
                b'}' => depth -= 1,
                _ => {}
            }
        }
    }
    out
}

/// Random balanced-brace program built from braces, newlines and filler
/// words only.
pub fn balanced_program(r: &mut impl Rng) -> String {
    const FILLER: &[&str] = &["x", "int", "y1", ";", "foo", "(", ")", "42", "+", "=", " "];
    let target = r.random_range(0..40);
    let mut out = String::new();
    let mut depth = 0u32;
    let mut opened = 0;
    while opened < target || depth > 0 {
        match r.random_range(0..6) {
            0 if opened < target => {
                out.push('{');
                depth += 1;
                opened += 1;
            }
            1 if depth > 0 => {
                out.push('}');
                depth -= 1;
            }
            2 => out.push('\n'),
            _ => {
                out.push_str(FILLER.choose(r).unwrap());
                out.push(' ');
            }
        }
    }
    if r.random_bool(0.5) {
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Context,
    Added,
    Deleted,
}

#[derive(Debug, Clone)]
pub struct GenHunk {
    pub old_start: u32,
    pub new_start: u32,
    pub lines: Vec<(Tag, String)>,
}

impl GenHunk {
    pub fn old_len(&self) -> u32 {
        self.lines.iter().filter(|(t, _)| *t != Tag::Added).count() as u32
    }

    pub fn new_len(&self) -> u32 {
        self.lines.iter().filter(|(t, _)| *t != Tag::Deleted).count() as u32
    }

    /// New-side line numbers of the added lines.
    pub fn added_new_lines(&self) -> Vec<u32> {
        let mut new = self.new_start;
        let mut out = Vec::new();
        for (t, _) in &self.lines {
            match t {
                Tag::Added => {
                    out.push(new);
                    new += 1;
                }
                Tag::Context => new += 1,
                Tag::Deleted => {}
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "@@ -{},{} +{},{} @@\n",
            self.old_start,
            self.old_len(),
            self.new_start,
            self.new_len()
        );
        for (t, text) in &self.lines {
            s.push(match t {
                Tag::Context => ' ',
                Tag::Added => '+',
                Tag::Deleted => '-',
            });
            s.push_str(text);
            s.push('\n');
        }
        s
    }
}

/// 1..=4 hunks in file order, each with 1..=12 body lines.
pub fn random_hunks(r: &mut impl Rng) -> Vec<GenHunk> {
    const CHARS: &[u8] = b"abcxyz019 {}()[];+-@\\\t*/#\"'";
    let mut hunks = Vec::new();
    let (mut old, mut new) = (1u32, 1u32);
    for _ in 0..r.random_range(1..=4) {
        let gap = r.random_range(0..20);
        let (old_start, new_start) = (old + gap, new + gap);
        let lines: Vec<(Tag, String)> = (0..r.random_range(1..=12))
            .map(|_| {
                let tag = [Tag::Context, Tag::Added, Tag::Deleted][r.random_range(0..3)];
                let len = r.random_range(0..30);
                let text = (0..len).map(|_| *CHARS.choose(r).unwrap() as char).collect();
                (tag, text)
            })
            .collect();
        let h = GenHunk {
            old_start,
            new_start,
            lines,
        };
        old = old_start + h.old_len() + 1;
        new = new_start + h.new_len() + 1;
        hunks.push(h);
    }
    hunks
}

/// A generated source file together with the facts the generator knows
/// about it.
#[derive(Debug, Clone)]
pub struct GenFile {
    pub name: String,
    pub cpp: bool,
    pub source: String,
    /// Structural depth at the start of every line.
    pub depth_map: Vec<u32>,
    /// (name, first line of the declaration, line of the closing brace).
    pub functions: Vec<(String, u32, u32)>,
    pub blocks: usize,
}

struct Emitter {
    lines: Vec<String>,
    depth_map: Vec<u32>,
    depth: u32,
    blocks: usize,
}

impl Emitter {
    fn line_no(&self) -> u32 {
        self.lines.len() as u32 + 1
    }

    /// Emits one line; `opens`/`closes` count its structural braces, closes
    /// first (as in `} else {`).
    fn emit(&mut self, indent: u32, text: &str, closes: u32, opens: u32) -> u32 {
        let n = self.line_no();
        self.depth_map.push(self.depth);
        self.lines.push(format!("{}{}", "    ".repeat(indent as usize), text));
        self.depth = self.depth - closes + opens;
        self.blocks += opens as usize;
        n
    }
}

const DISTRACTORS: &[&str] = &[
    "// a stray { in a line comment",
    "/* } and { inside a block comment */",
    "printf(\"{%d}\\n\", 1);",
    "char open = '{';",
    "char close = '}';",
    "const char *s = \"}}}\";",
    "x = y / 2; /* { */",
];

fn statements(e: &mut Emitter, r: &mut impl Rng, indent: u32, budget: &mut u32) {
    for _ in 0..r.random_range(1..=4) {
        if *budget == 0 || r.random_bool(0.5) {
            let text = if r.random_bool(0.4) {
                DISTRACTORS.choose(r).unwrap().to_string()
            } else {
                format!("v{} = v{} + 1;", r.random_range(0..9), r.random_range(0..9))
            };
            e.emit(indent, &text, 0, 0);
            continue;
        }
        *budget -= 1;
        match r.random_range(0..5) {
            0 => {
                e.emit(indent, "if (v0 > 1) {", 0, 1);
                statements(e, r, indent + 1, budget);
                e.emit(indent, "} else {", 1, 1);
                statements(e, r, indent + 1, budget);
                e.emit(indent, "}", 1, 0);
            }
            1 => {
                e.emit(indent, "for (int i = 0; i < 4; i++) {", 0, 1);
                statements(e, r, indent + 1, budget);
                e.emit(indent, "}", 1, 0);
            }
            2 => {
                e.emit(indent, "while (v1-- > 0)", 0, 0);
                e.emit(indent, "{", 0, 1);
                statements(e, r, indent + 1, budget);
                e.emit(indent, "}", 1, 0);
            }
            3 => {
                e.emit(indent, "int arr[2] = { 1, 2 };", 0, 0);
                e.blocks += 1;
            }
            _ => {
                e.emit(indent, "{", 0, 1);
                statements(e, r, indent + 1, budget);
                e.emit(indent, "}", 1, 0);
            }
        }
    }
}

fn function(e: &mut Emitter, r: &mut impl Rng, indent: u32, name: &str, out: &mut Vec<(String, u32, u32)>) {
    let start = if r.random_bool(0.5) {
        e.emit(indent, &format!("static int {name}(int v0, char *v1)"), 0, 0);
        let s = e.line_no() - 1;
        e.emit(indent, "{", 0, 1);
        s
    } else {
        e.emit(indent, &format!("int {name}(int v0, int v1) {{"), 0, 1)
    };
    let mut budget = 3;
    statements(e, r, indent + 1, &mut budget);
    e.emit(indent + 1, "return v0;", 0, 0);
    let end = e.emit(indent, "}", 1, 0);
    out.push((name.to_string(), start, end));
}

/// Deterministic C (even index) or C++ (odd index) file with nested
/// control flow, literal and comment distractors, global initializers and,
/// for C++, namespaces and classes.
pub fn fixture_file(index: usize) -> GenFile {
    let mut r = rng(0x5eed_0000 + index as u64);
    let cpp = index % 2 == 1;
    let mut e = Emitter {
        lines: Vec::new(),
        depth_map: Vec::new(),
        depth: 0,
        blocks: 0,
    };
    let mut functions = Vec::new();
    e.emit(0, "#include <stdio.h>", 0, 0);
    e.emit(0, "#define OPEN_BRACE {", 0, 0);
    for item in 0..r.random_range(2..=6) {
        let name = format!("f{index}_{item}");
        match r.random_range(0..if cpp { 5 } else { 3 }) {
            0 => {
                e.emit(0, &format!("static const int t{item}[] = {{ 1, 2, 3 }};"), 0, 0);
                e.blocks += 1;
            }
            1 | 2 => function(&mut e, &mut r, 0, &name, &mut functions),
            3 => {
                e.emit(0, &format!("namespace ns{item} {{"), 0, 1);
                function(&mut e, &mut r, 1, &name, &mut functions);
                e.emit(0, "}", 1, 0);
            }
            _ => {
                e.emit(0, &format!("class C{item} {{"), 0, 1);
                e.emit(0, "public:", 0, 0);
                function(&mut e, &mut r, 1, &name, &mut functions);
                e.emit(0, "};", 1, 0);
            }
        }
        e.emit(0, "", 0, 0);
    }
    assert_eq!(e.depth, 0);
    let mut source = e.lines.join("\n");
    source.push('\n');
    GenFile {
        name: format!("gen{index:02}.{}", if cpp { "cpp" } else { "c" }),
        cpp,
        source,
        depth_map: e.depth_map,
        functions,
        blocks: e.blocks,
    }
}

pub fn fixture_corpus() -> Vec<GenFile> {
    (0..50).map(fixture_file).collect()
}

//! Lightweight structural scanner for C and C++ source.
//!
//! The scanner tokenizes just enough of the language to know which braces
//! are real: comments, string and character literals, C++ raw strings and
//! preprocessor lines are consumed without affecting brace depth. On top of
//! the brace structure it detects function definitions heuristically: an
//! identifier followed by a parenthesized parameter list and a `{`, at file
//! scope or directly inside namespace/class/extern blocks.
//!
//! Known limitations: digraphs and trigraphs are not recognized, macros that
//! expand to braces are invisible, K&R parameter declarations hide the
//! function they belong to.

use crate::lang::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// Identifier, keyword or number.
    Word,
    Punct(u8),
    /// String, character or raw string literal.
    Literal,
    /// A whole preprocessor line, including continuations.
    Directive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte range in the source.
    pub start: usize,
    pub end: usize,
    /// 1-based line of the first byte.
    pub line: u32,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }

    fn is_punct(&self, c: u8) -> bool {
        self.kind == TokenKind::Punct(c)
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    at_line_start: bool,
    lang: Language,
    tokens: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn peek(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn push(&mut self, kind: TokenKind, start: usize, line: u32) {
        self.tokens.push(Token {
            kind,
            start,
            end: self.pos,
            line,
        });
        self.at_line_start = false;
    }

    /// Consumes a quoted literal starting at the opening quote. Unterminated
    /// literals end at the newline so one stray quote cannot swallow a file.
    fn skip_quoted(&mut self, quote: u8) {
        self.pos += 1;
        while let Some(b) = self.peek(0) {
            match b {
                b'\\' => {
                    if self.peek(1) == Some(b'\n') {
                        self.line += 1;
                    }
                    self.pos += 2;
                }
                b'\n' => return,
                _ if b == quote => {
                    self.pos += 1;
                    return;
                }
                _ => self.pos += 1,
            }
        }
        self.pos = self.pos.min(self.src.len());
    }

    fn skip_block_comment(&mut self) {
        self.pos += 2;
        while self.pos < self.src.len() {
            if self.src[self.pos] == b'*' && self.peek(1) == Some(b'/') {
                self.pos += 2;
                return;
            }
            if self.src[self.pos] == b'\n' {
                self.line += 1;
            }
            self.pos += 1;
        }
    }

    /// Line comment; a backslash-newline continues it.
    fn skip_line_comment(&mut self) {
        while let Some(b) = self.peek(0) {
            if b == b'\n' {
                let continued = self.pos > 0 && self.src[self.pos - 1] == b'\\';
                if !continued {
                    return;
                }
                self.line += 1;
            }
            self.pos += 1;
        }
    }

    fn skip_directive(&mut self) {
        while let Some(b) = self.peek(0) {
            match b {
                b'\\' if self.peek(1) == Some(b'\n') => {
                    self.line += 1;
                    self.pos += 2;
                }
                b'\\' if self.peek(1) == Some(b'\r') && self.peek(2) == Some(b'\n') => {
                    self.line += 1;
                    self.pos += 3;
                }
                b'\n' => return,
                b'/' if self.peek(1) == Some(b'*') => self.skip_block_comment(),
                b'/' if self.peek(1) == Some(b'/') => self.skip_line_comment(),
                b'"' | b'\'' => self.skip_quoted(b),
                _ => self.pos += 1,
            }
        }
    }

    /// `R"delim( ... )delim"` with the prefix already consumed and `pos` at
    /// the opening quote. Returns false if this is not a valid raw string.
    fn skip_raw_string(&mut self) -> bool {
        let open = self.pos + 1;
        let Some(paren) = self.src[open..].iter().take(17).position(|&b| b == b'(') else {
            return false;
        };
        let delim = &self.src[open..open + paren];
        if delim
            .iter()
            .any(|&b| b == b' ' || b == b')' || b == b'\\' || b == b'\n')
        {
            return false;
        }
        let mut closing = Vec::with_capacity(delim.len() + 2);
        closing.push(b')');
        closing.extend_from_slice(delim);
        closing.push(b'"');
        let body_start = open + paren + 1;
        let end = self.src[body_start..]
            .windows(closing.len())
            .position(|w| w == closing.as_slice())
            .map(|p| body_start + p + closing.len())
            .unwrap_or(self.src.len());
        self.line += self.src[self.pos..end].iter().filter(|&&b| b == b'\n').count() as u32;
        self.pos = end;
        true
    }

    fn word(&mut self) {
        let start = self.pos;
        let line = self.line;
        let numeric = self.src[start].is_ascii_digit();
        while let Some(b) = self.peek(0) {
            if is_word_byte(b) || (numeric && b == b'.') {
                self.pos += 1;
            } else if numeric
                && b == b'\''
                && self.lang == Language::Cpp
                && self.peek(1).is_some_and(|n| n.is_ascii_alphanumeric())
            {
                // digit separator
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        if self.lang == Language::Cpp
            && self.peek(0) == Some(b'"')
            && matches!(text, b"R" | b"LR" | b"uR" | b"UR" | b"u8R")
            && self.skip_raw_string()
        {
            self.push(TokenKind::Literal, start, line);
            return;
        }
        self.push(TokenKind::Word, start, line);
    }

    fn run(mut self) -> Vec<Token> {
        while let Some(b) = self.peek(0) {
            match b {
                b'\n' => {
                    self.line += 1;
                    self.at_line_start = true;
                    self.pos += 1;
                }
                b' ' | b'\t' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'\\' if self.peek(1) == Some(b'\n') => {
                    self.line += 1;
                    self.pos += 2;
                }
                b'#' if self.at_line_start => {
                    let (start, line) = (self.pos, self.line);
                    self.skip_directive();
                    self.push(TokenKind::Directive, start, line);
                }
                b'/' if self.peek(1) == Some(b'/') => self.skip_line_comment(),
                b'/' if self.peek(1) == Some(b'*') => self.skip_block_comment(),
                b'"' | b'\'' => {
                    let (start, line) = (self.pos, self.line);
                    self.skip_quoted(b);
                    self.push(TokenKind::Literal, start, line);
                }
                _ if is_word_byte(b) => self.word(),
                _ => {
                    let (start, line) = (self.pos, self.line);
                    self.pos += 1;
                    self.push(TokenKind::Punct(b), start, line);
                }
            }
        }
        self.tokens
    }
}

/// Splits source into the coarse tokens the structural scan works on.
pub fn tokenize(src: &str, lang: Language) -> Vec<Token> {
    Lexer {
        src: src.as_bytes(),
        pos: 0,
        line: 1,
        at_line_start: true,
        lang,
        tokens: Vec::new(),
    }
    .run()
}

/// Number of lines in `src`; a trailing newline does not start a new line.
pub fn line_count(src: &str) -> usize {
    if src.is_empty() {
        0
    } else {
        src.bytes().filter(|&b| b == b'\n').count() + usize::from(!src.ends_with('\n'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpan {
    pub open_line: u32,
    pub close_line: u32,
    /// Nesting depth, 1 for a block at file scope.
    pub depth: u32,
    /// Index of the enclosing block in [`StructureIndex::blocks`].
    pub parent: Option<usize>,
}

impl BlockSpan {
    pub fn contains(&self, line: u32) -> bool {
        self.open_line <= line && line <= self.close_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSpan {
    pub name: String,
    pub start_line: u32,
    pub end_line: u32,
    /// Index of the body in [`StructureIndex::blocks`].
    pub body_block: usize,
}

impl FunctionSpan {
    pub fn contains(&self, line: u32) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructureIndex {
    /// Brace depth at the start of each line; entry 0 is line 1.
    pub depth_map: Vec<u32>,
    /// Closed blocks in order of their opening brace.
    pub blocks: Vec<BlockSpan>,
    pub functions: Vec<FunctionSpan>,
    /// Set when a `}` had no opener or some `{` was never closed.
    pub unbalanced: bool,
}

const NOT_FUNCTION_NAMES: &[&str] = &[
    "if",
    "for",
    "while",
    "switch",
    "do",
    "else",
    "catch",
    "return",
    "sizeof",
    "alignof",
    "_Alignof",
    "typeof",
    "__typeof__",
    "decltype",
    "static_assert",
    "_Static_assert",
    "defined",
];

/// Parenthesized groups introduced by these words are decoration, never the
/// parameter list.
const DECORATION_WORDS: &[&str] = &[
    "__attribute__",
    "__attribute",
    "__declspec",
    "alignas",
    "_Alignas",
    "noexcept",
    "throw",
    "decltype",
    "__asm__",
    "asm",
];

const SCOPE_WORDS: &[&str] = &["namespace", "class", "struct", "union", "extern"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    Function(usize),
    Scope,
    Other,
}

struct RawBlock {
    open_line: u32,
    close_line: Option<u32>,
    depth: u32,
    parent: Option<usize>,
}

struct RawFunction {
    name: String,
    start_line: u32,
    body: usize,
}

fn word<'a>(t: &Token, src: &'a str) -> Option<&'a str> {
    (t.kind == TokenKind::Word).then(|| t.text(src))
}

/// Index of the `)` matching the `(` at `open`, if any.
fn matching_paren(stmt: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in stmt.iter().enumerate().skip(open) {
        if t.is_punct(b'(') {
            depth += 1;
        } else if t.is_punct(b')') {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

/// Decides whether the tokens preceding a `{` declare a function, returning
/// its name and the index of the token the declaration starts at.
fn detect_function(stmt: &[Token], src: &str) -> Option<(String, usize)> {
    let first = word(stmt.first()?, src)?;
    if first == "typedef" || first == "using" {
        return None;
    }

    // A constructor initializer list starts at a lone `:` after a `)`.
    let mut end = stmt.len();
    let mut depth = 0i32;
    let mut seen_close = false;
    for i in 0..stmt.len() {
        let t = &stmt[i];
        match t.kind {
            TokenKind::Punct(b'(') => depth += 1,
            TokenKind::Punct(b')') => {
                depth -= 1;
                seen_close = true;
            }
            TokenKind::Punct(b':') if depth == 0 && seen_close => {
                let prev_colon = i > 0 && stmt[i - 1].is_punct(b':');
                let next_colon = stmt.get(i + 1).is_some_and(|n| n.is_punct(b':'));
                if !prev_colon && !next_colon {
                    end = i;
                    break;
                }
            }
            _ => {}
        }
    }
    let stmt = &stmt[..end];

    let has_operator = stmt.iter().any(|t| word(t, src) == Some("operator"));
    let mut candidate: Option<usize> = None;
    let mut i = 0;
    while i < stmt.len() {
        let t = &stmt[i];
        if t.is_punct(b'=') && !has_operator {
            return None;
        }
        if t.is_punct(b'(') {
            let close = matching_paren(stmt, i)?;
            let prev = i.checked_sub(1).map(|p| &stmt[p]);
            match prev.and_then(|p| word(p, src)) {
                Some(w) if DECORATION_WORDS.contains(&w) => {}
                Some(w) if NOT_FUNCTION_NAMES.contains(&w) => return None,
                Some(_) => candidate = Some(i - 1),
                None if has_operator => {
                    // operator()(...) and friends: the name is everything
                    // from `operator` to this group.
                    if let Some(op) = (0..i).rev().find(|&k| word(&stmt[k], src) == Some("operator")) {
                        if !(close == i + 1 && stmt.get(close + 1).is_some_and(|n| n.is_punct(b'('))) {
                            candidate = Some(op);
                        }
                    }
                }
                None => {}
            }
            i = close + 1;
            continue;
        }
        i += 1;
    }
    let name_idx = candidate?;

    let mut name = if word(&stmt[name_idx], src) == Some("operator") {
        let param = (name_idx + 1..stmt.len())
            .find(|&k| {
                stmt[k].is_punct(b'(') && !(k == name_idx + 1 && stmt.get(k + 1).is_some_and(|n| n.is_punct(b')')))
            })
            .unwrap_or(stmt.len());
        stmt[name_idx..param].iter().map(|t| t.text(src)).collect::<String>()
    } else {
        stmt[name_idx].text(src).to_string()
    };

    // Qualification: `~Name`, `Scope::Name`.
    let mut k = name_idx;
    if k >= 1 && stmt[k - 1].is_punct(b'~') {
        name.insert(0, '~');
        k -= 1;
    }
    while k >= 3 && stmt[k - 1].is_punct(b':') && stmt[k - 2].is_punct(b':') && stmt[k - 3].kind == TokenKind::Word {
        name = format!("{}::{}", stmt[k - 3].text(src), name);
        k -= 3;
    }

    // Walk back over the return type and specifiers.
    while k > 0 {
        let t = &stmt[k - 1];
        let keep = match t.kind {
            TokenKind::Word => true,
            TokenKind::Punct(b':') => (k >= 2 && stmt[k - 2].is_punct(b':')) || stmt[k].is_punct(b':'),
            TokenKind::Punct(c) => matches!(c, b'*' | b'&' | b'<' | b'>' | b','),
            _ => false,
        };
        if !keep {
            break;
        }
        k -= 1;
    }
    Some((name, k))
}

fn is_scope(stmt: &[Token], src: &str) -> bool {
    if stmt.iter().any(|t| t.is_punct(b'=')) {
        return false;
    }
    stmt.iter()
        .filter_map(|t| word(t, src))
        .any(|w| SCOPE_WORDS.contains(&w))
}

/// Builds the structure index of `source`.
pub fn scan(source: &str, language: Language) -> StructureIndex {
    let tokens = tokenize(source, language);
    let total_lines = line_count(source);

    let mut depth_map: Vec<u32> = Vec::with_capacity(total_lines);
    let mut raw_blocks: Vec<RawBlock> = Vec::new();
    let mut raw_functions: Vec<RawFunction> = Vec::new();
    let mut closed_functions: Vec<Option<u32>> = Vec::new();
    let mut stack: Vec<(usize, Frame)> = Vec::new();
    let mut stmt: Vec<Token> = Vec::new();
    let mut unbalanced = false;

    let fill_to = |depth_map: &mut Vec<u32>, line: usize, depth: u32| {
        while depth_map.len() < line {
            depth_map.push(depth);
        }
    };

    for tok in &tokens {
        let depth = stack.len() as u32;
        fill_to(&mut depth_map, tok.line as usize, depth);
        let collecting = stack.iter().all(|(_, f)| *f == Frame::Scope);
        match tok.kind {
            TokenKind::Punct(b'{') => {
                let id = raw_blocks.len();
                let frame = if collecting {
                    if let Some((name, start)) = detect_function(&stmt, source) {
                        raw_functions.push(RawFunction {
                            name,
                            start_line: stmt[start].line,
                            body: id,
                        });
                        closed_functions.push(None);
                        Frame::Function(raw_functions.len() - 1)
                    } else if is_scope(&stmt, source) {
                        Frame::Scope
                    } else {
                        Frame::Other
                    }
                } else {
                    Frame::Other
                };
                raw_blocks.push(RawBlock {
                    open_line: tok.line,
                    close_line: None,
                    depth: depth + 1,
                    parent: stack.last().map(|(b, _)| *b),
                });
                stack.push((id, frame));
                stmt.clear();
            }
            TokenKind::Punct(b'}') => match stack.pop() {
                Some((id, frame)) => {
                    raw_blocks[id].close_line = Some(tok.line);
                    if let Frame::Function(f) = frame {
                        closed_functions[f] = Some(tok.line);
                    }
                    stmt.clear();
                }
                None => unbalanced = true,
            },
            TokenKind::Punct(b';') if collecting => stmt.clear(),
            TokenKind::Directive => {}
            _ if collecting => stmt.push(*tok),
            _ => {}
        }
    }
    fill_to(&mut depth_map, total_lines, stack.len() as u32);
    if !stack.is_empty() {
        unbalanced = true;
    }

    // Drop unclosed blocks and remap indices.
    let mut remap: Vec<Option<usize>> = vec![None; raw_blocks.len()];
    let mut blocks = Vec::new();
    for (i, b) in raw_blocks.iter().enumerate() {
        if let Some(close) = b.close_line {
            remap[i] = Some(blocks.len());
            blocks.push(BlockSpan {
                open_line: b.open_line,
                close_line: close,
                depth: b.depth,
                parent: b.parent,
            });
        }
    }
    for b in &mut blocks {
        b.parent = b.parent.and_then(|p| remap[p]);
    }
    let functions = raw_functions
        .into_iter()
        .zip(closed_functions)
        .filter_map(|(f, close)| {
            Some(FunctionSpan {
                name: f.name,
                start_line: f.start_line,
                end_line: close?,
                body_block: remap[f.body]?,
            })
        })
        .collect();

    StructureIndex {
        depth_map,
        blocks,
        functions,
        unbalanced,
    }
}

/// The function whose span contains `line`.
pub fn enclosing_function(index: &StructureIndex, line: u32) -> Option<&FunctionSpan> {
    index.functions.iter().find(|f| f.contains(line))
}

/// The deepest block containing `line`; ties go to the earliest opened.
pub fn innermost_block(index: &StructureIndex, line: u32) -> Option<&BlockSpan> {
    let mut best: Option<&BlockSpan> = None;
    for b in index.blocks.iter().filter(|b| b.contains(line)) {
        if best.is_none_or(|cur| b.depth > cur.depth) {
            best = Some(b);
        }
    }
    best
}

/// Extracts lines `start..=end` (1-based) of `source`, keeping line endings.
pub fn line_slice(source: &str, start: u32, end: u32) -> String {
    source
        .split_inclusive('\n')
        .skip(start.saturating_sub(1) as usize)
        .take((end + 1).saturating_sub(start) as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAIN: &str = "int main() {\n  return 0;\n}\n";

    #[test]
    fn main_function_and_block() {
        let idx = scan(MAIN, Language::C);
        assert_eq!(idx.functions.len(), 1);
        let f = &idx.functions[0];
        assert_eq!((f.name.as_str(), f.start_line, f.end_line), ("main", 1, 3));
        assert_eq!(
            idx.blocks,
            vec![BlockSpan {
                open_line: 1,
                close_line: 3,
                depth: 1,
                parent: None
            }]
        );
        assert_eq!(idx.depth_map, vec![0, 1, 1]);
        assert!(!idx.unbalanced);
    }

    #[test]
    fn braces_in_string_literal_are_ignored() {
        let idx = scan("char *s = \"{{{\";\n", Language::C);
        assert!(idx.blocks.is_empty());
        assert!(!idx.unbalanced);
    }

    #[test]
    fn empty_source() {
        let idx = scan("", Language::C);
        assert_eq!(idx, StructureIndex::default());
    }

    #[test]
    fn comments_chars_and_directives_are_depth_transparent() {
        let src = "#define OPEN { \\\n   {\n// {\n/* { \n } } */\nchar c = '{';\nchar d = '\\'';\nint f(void) { return '}'; }\n";
        let idx = scan(src, Language::C);
        assert_eq!(idx.blocks.len(), 1);
        assert_eq!(idx.functions[0].name, "f");
        assert_eq!(idx.functions[0].start_line, 8);
        assert!(!idx.unbalanced);
        assert!(idx.depth_map.iter().all(|&d| d == 0));
    }

    #[test]
    fn raw_strings_only_in_cpp() {
        let src = "auto s = R\"x({ )\" })x\";\n";
        let idx = scan(src, Language::Cpp);
        assert!(idx.blocks.is_empty());
        assert!(!idx.unbalanced);
        // In C the same bytes are an ordinary string followed by a stray brace.
        let idx = scan(src, Language::C);
        assert!(idx.unbalanced);
    }

    #[test]
    fn control_keywords_are_not_functions() {
        let src = "void f(int x) {\n  if (x) {\n    x++;\n  }\n  while (x) { x--; }\n}\n";
        let idx = scan(src, Language::C);
        assert_eq!(idx.functions.len(), 1);
        assert_eq!(idx.blocks.len(), 3);
        let inner = innermost_block(&idx, 3).unwrap();
        assert_eq!((inner.open_line, inner.close_line, inner.depth), (2, 4, 2));
        assert_eq!(inner.parent, Some(0));
    }

    #[test]
    fn enclosing_function_lookup() {
        let idx = scan(MAIN, Language::C);
        assert_eq!(enclosing_function(&idx, 2).unwrap().name, "main");
        assert!(enclosing_function(&idx, 4).is_none());
        let idx = scan("#include <stdio.h>\nint main() {\n  return 0;\n}\n", Language::C);
        assert!(enclosing_function(&idx, 1).is_none());
        assert!(innermost_block(&idx, 1).is_none());
    }

    #[test]
    fn innermost_of_main_line_one() {
        let idx = scan(MAIN, Language::C);
        assert_eq!(innermost_block(&idx, 1).unwrap().depth, 1);
    }

    #[test]
    fn unbalanced_drops_unclosed_blocks() {
        let idx = scan("int f() {\n  if (x) {\n  }\n", Language::C);
        assert!(idx.unbalanced);
        assert_eq!(idx.blocks.len(), 1);
        assert_eq!(idx.blocks[0].parent, None);
        assert!(idx.functions.is_empty());
        let idx = scan("}\nint g() { }\n", Language::C);
        assert!(idx.unbalanced);
        assert_eq!(idx.functions.len(), 1);
    }

    #[test]
    fn initializers_structs_and_prototypes() {
        let src = "int a[] = { 1, 2 };\nstruct s {\n  int x;\n};\nint proto(int);\nstatic struct s *\nmake(void)\n{\n  return 0;\n}\n";
        let idx = scan(src, Language::C);
        assert_eq!(idx.functions.len(), 1);
        let f = &idx.functions[0];
        assert_eq!((f.name.as_str(), f.start_line, f.end_line), ("make", 6, 10));
    }

    #[test]
    fn macro_invocation_before_definition() {
        let src = "DECLARE_THING(x)\nint main(void) {\n}\n";
        let idx = scan(src, Language::C);
        assert_eq!(idx.functions[0].name, "main");
        assert_eq!(idx.functions[0].start_line, 2);
    }

    #[test]
    fn cpp_namespaces_classes_and_qualified_names() {
        let src = "namespace ns {\nclass A : public B {\n public:\n  A(int x) : b_(x), c_(0) {}\n  int get() const { return b_; }\n  bool operator==(const A& o) const { return true; }\n};\nA::~A() {\n}\n}\n";
        let idx = scan(src, Language::Cpp);
        let names: Vec<_> = idx.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["A", "get", "operator==", "A::~A"]);
        assert!(!idx.unbalanced);
    }

    #[test]
    fn digit_separators_in_cpp() {
        let idx = scan("int f() { return 1'000; }\n", Language::Cpp);
        assert_eq!(idx.functions.len(), 1);
        assert!(!idx.unbalanced);
    }

    #[test]
    fn line_slice_extracts_inclusive_range() {
        assert_eq!(line_slice("a\nb\nc\n", 2, 3), "b\nc\n");
        assert_eq!(line_slice("a\nb\nc", 3, 3), "c");
        assert_eq!(line_count("a\nb\nc"), 3);
        assert_eq!(line_count("a\n"), 1);
    }
}

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Source language of a file or scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "C", alias = "c")]
    C,
    #[serde(rename = "C++", alias = "cpp", alias = "c++")]
    Cpp,
}

/// Extension table used for language inference. Matching is exact first,
/// then case-insensitive; `.C` (upper case) is C++ by convention.
pub const EXTENSION_TABLE: &[(&str, Language)] = &[
    ("c", Language::C),
    ("h", Language::C),
    ("C", Language::Cpp),
    ("cc", Language::Cpp),
    ("cp", Language::Cpp),
    ("cpp", Language::Cpp),
    ("cxx", Language::Cpp),
    ("c++", Language::Cpp),
    ("hh", Language::Cpp),
    ("hpp", Language::Cpp),
    ("hxx", Language::Cpp),
    ("h++", Language::Cpp),
    ("ipp", Language::Cpp),
    ("tcc", Language::Cpp),
];

impl Language {
    /// Infers the language from a path's extension; `None` for non-C/C++ files.
    pub fn from_path(path: &str) -> Option<Language> {
        let ext = Path::new(path).extension()?.to_str()?;
        EXTENSION_TABLE
            .iter()
            .find(|(e, _)| *e == ext)
            .or_else(|| EXTENSION_TABLE.iter().find(|(e, _)| e.eq_ignore_ascii_case(ext)))
            .map(|(_, l)| *l)
    }

    /// Scenario id suffix and CLI spelling.
    pub fn short_name(self) -> &'static str {
        match self {
            Language::C => "c",
            Language::Cpp => "cpp",
        }
    }

    pub fn source_extension(self) -> &'static str {
        match self {
            Language::C => "c",
            Language::Cpp => "cpp",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::C => "C",
            Language::Cpp => "C++",
        })
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c" => Ok(Language::C),
            "c++" | "cpp" | "cxx" => Ok(Language::Cpp),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

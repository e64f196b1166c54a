//! Word lists and lookup tables backing language identification,
//! transliteration, stopword removal and translation.
//!
//! On disk a lexicon directory holds UTF-8 files, one entry per line (`#`
//! starts a comment line):
//!
//! | file                 | contents                                   |
//! |----------------------|--------------------------------------------|
//! | `english.txt`        | English words                              |
//! | `hindi_roman.txt`    | romanised Hindi words                      |
//! | `proper_nouns.txt`   | names                                      |
//! | `stopwords_en.txt`   | English stopwords                          |
//! | `stopwords_hi.txt`   | Hindi stopwords (Devanagari and romanised) |
//! | `transliteration.tsv`| `roman<TAB>devanagari`                     |
//! | `translation.tsv`    | `devanagari<TAB>english`                   |

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{read_to_string, Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    pub english: HashSet<String>,
    pub hindi_roman: HashSet<String>,
    pub proper_nouns: HashSet<String>,
    pub stopwords_en: HashSet<String>,
    pub stopwords_hi: HashSet<String>,
    pub transliteration: HashMap<String, String>,
    pub translation: HashMap<String, String>,
}

const FILES: [&str; 7] = [
    "english.txt",
    "hindi_roman.txt",
    "proper_nouns.txt",
    "stopwords_en.txt",
    "stopwords_hi.txt",
    "transliteration.tsv",
    "translation.tsv",
];

fn entries(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn word_list(text: &str) -> HashSet<String> {
    entries(text).map(str::to_lowercase).collect()
}

fn table(name: &str, text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut cols = trimmed.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(k), Some(v), None) if !k.trim().is_empty() && !v.trim().is_empty() => {
                out.insert(k.trim().to_lowercase(), v.trim().to_string());
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("{name}: expected two tab-separated columns"),
                })
            }
        }
    }
    Ok(out)
}

impl Lexicons {
    /// The small lexicons compiled into the binary.
    pub fn bundled() -> Self {
        Self::from_sources([
            include_str!("../../assets/lexicons/english.txt"),
            include_str!("../../assets/lexicons/hindi_roman.txt"),
            include_str!("../../assets/lexicons/proper_nouns.txt"),
            include_str!("../../assets/lexicons/stopwords_en.txt"),
            include_str!("../../assets/lexicons/stopwords_hi.txt"),
            include_str!("../../assets/lexicons/transliteration.tsv"),
            include_str!("../../assets/lexicons/translation.tsv"),
        ])
        .expect("bundled lexicons are well formed")
    }

    /// Load every lexicon file from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut sources = Vec::with_capacity(FILES.len());
        for f in FILES {
            sources.push(read_to_string(&dir.join(f))?);
        }
        let arr: [&str; 7] = std::array::from_fn(|i| sources[i].as_str());
        Self::from_sources(arr)
    }

    fn from_sources(s: [&str; 7]) -> Result<Self> {
        Ok(Self {
            english: word_list(s[0]),
            hindi_roman: word_list(s[1]),
            proper_nouns: word_list(s[2]),
            stopwords_en: word_list(s[3]),
            stopwords_hi: entries(s[4]).map(str::to_string).collect(),
            transliteration: table(FILES[5], s[5])?,
            translation: table(FILES[6], s[6])?,
        })
    }
}

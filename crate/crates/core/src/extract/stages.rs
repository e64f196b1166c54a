//! Language identification, transliteration, preprocessing and topic
//! translation.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Lexicons;
use crate::error::{Error, Result};
use crate::text::{is_devanagari, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LangTag {
    English,
    HindiRoman,
    HindiDevanagari,
    ProperNoun,
    Other,
}

impl LangTag {
    pub fn name(self) -> &'static str {
        match self {
            LangTag::English => "english",
            LangTag::HindiRoman => "hindi_roman",
            LangTag::HindiDevanagari => "hindi_devanagari",
            LangTag::ProperNoun => "proper_noun",
            LangTag::Other => "other",
        }
    }

    pub fn is_hindi(self) -> bool {
        matches!(self, LangTag::HindiRoman | LangTag::HindiDevanagari)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub tag: LangTag,
    /// Romanised surface this token was transliterated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roman: Option<String>,
    /// Set when transliteration found no table entry and kept the surface.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub passthrough: bool,
}

impl TaggedToken {
    pub fn new(surface: impl Into<String>, tag: LangTag) -> Self {
        Self {
            surface: surface.into(),
            tag,
            roman: None,
            passthrough: false,
        }
    }
}

/// Tokenise and tag each token. Devanagari script wins outright; otherwise
/// lookups run in the order proper noun, romanised Hindi, English.
pub fn identify_language(text: &str, lex: &Lexicons) -> Vec<TaggedToken> {
    tokenize(text)
        .into_iter()
        .map(|tok| {
            if tok.chars().any(is_devanagari) {
                return TaggedToken::new(tok, LangTag::HindiDevanagari);
            }
            let key = tok.to_lowercase();
            let tag = if lex.proper_nouns.contains(&key) {
                LangTag::ProperNoun
            } else if lex.hindi_roman.contains(&key) {
                LangTag::HindiRoman
            } else if lex.english.contains(&key) {
                LangTag::English
            } else {
                LangTag::Other
            };
            TaggedToken::new(tok, tag)
        })
        .collect()
}

/// Rewrite a romanised Hindi token in Devanagari.
pub fn transliterate(token: &TaggedToken, lex: &Lexicons) -> Result<TaggedToken> {
    if token.tag != LangTag::HindiRoman {
        return Err(Error::Contract(format!(
            "transliterate expects a hindi_roman token, got {} `{}`",
            token.tag.name(),
            token.surface
        )));
    }
    Ok(
        match lex.transliteration.get(&token.surface.to_lowercase()) {
            Some(dev) => TaggedToken {
                surface: dev.clone(),
                tag: LangTag::HindiDevanagari,
                roman: Some(token.surface.to_lowercase()),
                passthrough: false,
            },
            None => TaggedToken {
                passthrough: true,
                ..token.clone()
            },
        },
    )
}

/// Transliterate the romanised Hindi tokens of a tagged sequence; other
/// tokens are copied.
pub fn transliterate_all(tokens: &[TaggedToken], lex: &Lexicons) -> Vec<TaggedToken> {
    tokens
        .iter()
        .map(|t| match t.tag {
            LangTag::HindiRoman => transliterate(t, lex).expect("tag checked"),
            _ => t.clone(),
        })
        .collect()
}

fn ascii_word(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '\'')
        .collect::<String>()
        .to_ascii_lowercase()
        .trim_matches('\'')
        .to_string()
}

/// Lowercase, strip non-ASCII from Latin-script tokens, and drop stopwords.
/// Devanagari tokens keep their script and are filtered against the Hindi
/// list only.
pub fn preprocess(tokens: &[TaggedToken], lex: &Lexicons) -> Vec<TaggedToken> {
    tokens
        .iter()
        .filter_map(|t| {
            let surface = match t.tag {
                LangTag::HindiDevanagari => {
                    let s = t.surface.trim().to_string();
                    if lex.stopwords_hi.contains(&s) {
                        return None;
                    }
                    s
                }
                LangTag::English => {
                    let s = ascii_word(&t.surface);
                    if lex.stopwords_en.contains(&s) {
                        return None;
                    }
                    s
                }
                LangTag::HindiRoman | LangTag::ProperNoun | LangTag::Other => {
                    let s = ascii_word(&t.surface);
                    if lex.stopwords_hi.contains(&s) || lex.stopwords_en.contains(&s) {
                        return None;
                    }
                    s
                }
            };
            (!surface.is_empty()).then(|| TaggedToken {
                surface,
                ..t.clone()
            })
        })
        .collect()
}

/// Topic words for one query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSet {
    pub topics: Vec<String>,
    /// Devanagari tokens missing from the dictionary that fell back to
    /// their romanised origin.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<String>,
    /// Tokens that could not be turned into an ASCII topic.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

impl TopicSet {
    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// All topics joined into the single string sent to the generator.
    pub fn query(&self) -> String {
        self.topics.join(" ")
    }
}

/// Map Devanagari tokens to English and assemble the deduplicated topic
/// list.
pub fn translate_topics(tokens: &[TaggedToken], lex: &Lexicons) -> TopicSet {
    translate_with(tokens, lex, &|dev: &str| lex.translation.get(dev).cloned())
}

fn translate_with(
    tokens: &[TaggedToken],
    lex: &Lexicons,
    dict: &dyn Fn(&str) -> Option<String>,
) -> TopicSet {
    let mut out = TopicSet::default();
    let mut seen = HashSet::new();
    for t in tokens {
        let candidate = if t.tag == LangTag::HindiDevanagari {
            match (dict(&t.surface), &t.roman) {
                (Some(en), _) => en.to_lowercase(),
                (None, Some(roman)) => {
                    out.fallbacks.push(roman.clone());
                    roman.clone()
                }
                (None, None) => {
                    out.dropped.push(t.surface.clone());
                    continue;
                }
            }
        } else {
            t.surface.to_lowercase()
        };
        let candidate = candidate.trim().to_string();
        if candidate.is_empty() || !candidate.is_ascii() {
            out.dropped.push(t.surface.clone());
            continue;
        }
        if lex.stopwords_en.contains(&candidate) || lex.stopwords_hi.contains(&candidate) {
            continue;
        }
        if seen.insert(candidate.clone()) {
            out.topics.push(candidate);
        }
    }
    out
}

pub trait LanguageIdentifier: Send + Sync {
    fn identify(&self, text: &str) -> Vec<TaggedToken>;
}

pub trait Transliterator: Send + Sync {
    fn transliterate(&self, token: &TaggedToken) -> Result<TaggedToken>;
}

pub trait Translator: Send + Sync {
    /// English rendering of one Devanagari word, if known.
    fn translate(&self, devanagari: &str) -> Option<String>;
}

impl LanguageIdentifier for Lexicons {
    fn identify(&self, text: &str) -> Vec<TaggedToken> {
        identify_language(text, self)
    }
}

impl Transliterator for Lexicons {
    fn transliterate(&self, token: &TaggedToken) -> Result<TaggedToken> {
        transliterate(token, self)
    }
}

impl Translator for Lexicons {
    fn translate(&self, devanagari: &str) -> Option<String> {
        self.translation.get(devanagari).cloned()
    }
}

/// Every intermediate of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub text: String,
    pub tagged: Vec<TaggedToken>,
    pub transliterated: Vec<TaggedToken>,
    pub preprocessed: Vec<TaggedToken>,
    pub topics: TopicSet,
    pub query: String,
}

/// The four text stages up to the generator query. Each stage can be
/// swapped; stopword lists always come from `lexicons`.
#[derive(Clone)]
pub struct Pipeline {
    pub lexicons: Arc<Lexicons>,
    pub language_id: Arc<dyn LanguageIdentifier>,
    pub transliterator: Arc<dyn Transliterator>,
    pub translator: Arc<dyn Translator>,
}

impl Pipeline {
    pub fn new(lexicons: Lexicons) -> Self {
        let lex = Arc::new(lexicons);
        Self {
            language_id: lex.clone(),
            transliterator: lex.clone(),
            translator: lex.clone(),
            lexicons: lex,
        }
    }

    pub fn run(&self, text: &str) -> PipelineTrace {
        let tagged = self.language_id.identify(text);
        let transliterated = tagged
            .iter()
            .map(|t| match t.tag {
                LangTag::HindiRoman => self
                    .transliterator
                    .transliterate(t)
                    .unwrap_or_else(|_| t.clone()),
                _ => t.clone(),
            })
            .collect::<Vec<_>>();
        let preprocessed = preprocess(&transliterated, &self.lexicons);
        let translator = &self.translator;
        let topics = translate_with(&preprocessed, &self.lexicons, &|w: &str| {
            translator.translate(w)
        });
        let query = topics.query();
        PipelineTrace {
            text: text.to_string(),
            tagged,
            transliterated,
            preprocessed,
            topics,
            query,
        }
    }
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicons {
        Lexicons::bundled()
    }

    fn tags(text: &str) -> Vec<(String, LangTag)> {
        identify_language(text, &lex())
            .into_iter()
            .map(|t| (t.surface, t.tag))
            .collect()
    }

    #[test]
    fn identifies_code_mixed_utterance() {
        use LangTag::*;
        let got = tags("Khatam ho gaya Sahil it's over!");
        let want = [
            ("Khatam", HindiRoman),
            ("ho", HindiRoman),
            ("gaya", HindiRoman),
            ("Sahil", ProperNoun),
            ("it's", English),
            ("over", English),
        ];
        assert_eq!(got.len(), want.len());
        for ((s, t), (ws, wt)) in got.iter().zip(want) {
            assert_eq!((s.as_str(), *t), (ws, wt));
        }
        assert_eq!(tags("zindagi")[0].1, HindiRoman);
        assert_eq!(tags("क्या")[0].1, HindiDevanagari);
        assert_eq!(tags("qwxz")[0].1, Other);
        assert!(tags("").is_empty());
    }

    #[test]
    fn transliteration_rules() {
        let l = lex();
        let t = transliterate(&TaggedToken::new("ghar", LangTag::HindiRoman), &l).unwrap();
        assert_eq!(t.surface, "घर");
        assert_eq!(t.tag, LangTag::HindiDevanagari);
        assert_eq!(t.roman.as_deref(), Some("ghar"));

        let err = transliterate(&TaggedToken::new("घर", LangTag::HindiDevanagari), &l);
        assert!(matches!(err, Err(Error::Contract(_))));

        let p = transliterate(&TaggedToken::new("xyzzy", LangTag::HindiRoman), &l).unwrap();
        assert_eq!(p.surface, "xyzzy");
        assert_eq!(p.tag, LangTag::HindiRoman);
        assert!(p.passthrough);
    }

    #[test]
    fn preprocessing_rules() {
        let l = lex();
        let out = preprocess(
            &[
                TaggedToken::new("Over!", LangTag::English),
                TaggedToken::new("the", LangTag::English),
                TaggedToken::new("घर", LangTag::HindiDevanagari),
                TaggedToken::new("है", LangTag::HindiDevanagari),
                TaggedToken::new("é", LangTag::English),
            ],
            &l,
        );
        let surfaces: Vec<&str> = out.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surfaces, ["over", "घर"]);
    }

    #[test]
    fn translation_rules() {
        let l = lex();
        let mut kachori = TaggedToken::new("कचौरी", LangTag::HindiDevanagari);
        kachori.roman = Some("kachori".into());
        let ts = translate_topics(
            &[
                TaggedToken::new("घर", LangTag::HindiDevanagari),
                TaggedToken::new("over", LangTag::English),
                kachori,
                TaggedToken::new("house", LangTag::English),
                TaggedToken::new("अज्ञात", LangTag::HindiDevanagari),
            ],
            &l,
        );
        assert_eq!(ts.topics, ["house", "over", "kachori"]);
        assert_eq!(ts.fallbacks, ["kachori"]);
        assert_eq!(ts.dropped, ["अज्ञात"]);
        assert_eq!(ts.query(), "house over kachori");
    }

    #[test]
    fn pipeline_end_to_end() {
        let p = Pipeline::new(lex());
        let trace = p.run("Khatam ho gaya Sahil it's over!");
        assert_eq!(trace.query, "finished gone sahil over");
        assert_eq!(trace.transliterated[0].surface, "ख़त्म");
    }

    struct Upper;
    impl Translator for Upper {
        fn translate(&self, _: &str) -> Option<String> {
            Some("SWAPPED".into())
        }
    }

    #[test]
    fn stages_are_swappable() {
        let mut p = Pipeline::new(lex());
        p.translator = Arc::new(Upper);
        assert_eq!(p.run("ghar").query, "swapped");
    }
}

//! Corpus schema, JSONL ingestion, label codec, instance construction and
//! dataset statistics.
//!
//! One dialogue per line:
//!
//! ```json
//! {"id": "d1", "split": "train", "utterances": [{"speaker": "Maya", "text": "...", "emotion": "sadness"}]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::extract::{identify_language, LangTag, Lexicons, TaggedToken};
use crate::text::whitespace_len;

pub const NUM_CLASSES: usize = 8;
pub const DEFAULT_CONTEXT_WINDOW: usize = 5;

/// The eight emotion classes, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger,
    Contempt,
    Disgust,
    Fear,
    Joy,
    Neutral,
    Sadness,
    Surprise,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; NUM_CLASSES] = [
        EmotionLabel::Anger,
        EmotionLabel::Contempt,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Joy,
        EmotionLabel::Neutral,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or_else(|| Error::Label {
            line: None,
            detail: format!("label index {index} outside 0..{NUM_CLASSES}"),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Contempt => "contempt",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Joy => "joy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Surprise => "surprise",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Label {
                line: None,
                detail: format!("unknown emotion `{s}`"),
            })
    }
}

/// Label name → index.
pub fn encode_label(name: &str) -> Result<usize> {
    name.parse::<EmotionLabel>().map(EmotionLabel::index)
}

/// Label index → name.
pub fn decode_label(index: usize) -> Result<&'static str> {
    EmotionLabel::from_index(index).map(EmotionLabel::name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub label: Option<EmotionLabel>,
    /// Filled in by language identification.
    pub tokens: Option<Vec<TaggedToken>>,
}

impl Utterance {
    pub fn new(
        speaker: impl Into<String>,
        text: impl Into<String>,
        label: Option<EmotionLabel>,
    ) -> Self {
        Self {
            speaker: speaker.into(),
            text: text.into(),
            label,
            tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    speaker: String,
    text: String,
    emotion: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueRecord {
    id: String,
    split: Split,
    utterances: Vec<UtteranceRecord>,
}

pub fn load_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    parse_corpus(&read_to_string(path)?)
}

/// Parse JSONL corpus text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<Dialogue>> {
    let mut dialogues = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DialogueRecord = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            detail: e.to_string(),
        })?;
        if rec.utterances.is_empty() {
            return Err(Error::Parse {
                line,
                detail: format!("dialogue `{}` has no utterances", rec.id),
            });
        }
        let mut utterances = Vec::with_capacity(rec.utterances.len());
        for u in rec.utterances {
            if u.speaker.trim().is_empty() || u.text.trim().is_empty() {
                return Err(Error::Parse {
                    line,
                    detail: "utterance speaker and text must be nonempty".into(),
                });
            }
            let label = u
                .emotion
                .as_deref()
                .map(|e| {
                    e.parse::<EmotionLabel>().map_err(|_| Error::Label {
                        line: Some(line),
                        detail: format!("unknown emotion `{e}`"),
                    })
                })
                .transpose()?;
            utterances.push(Utterance::new(u.speaker, u.text, label));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Integrity(format!(
                "duplicate dialogue id `{}` at line {line}",
                rec.id
            )));
        }
        dialogues.push(Dialogue {
            id: rec.id,
            utterances,
            split: rec.split,
        });
    }
    Ok(dialogues)
}

/// Serialise back to JSONL (one dialogue per line, trailing newline).
pub fn write_corpus(corpus: &[Dialogue]) -> Result<String> {
    let mut out = String::new();
    for d in corpus {
        let rec = DialogueRecord {
            id: d.id.clone(),
            split: d.split,
            utterances: d
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    speaker: u.speaker.clone(),
                    text: u.text.clone(),
                    emotion: u.label.map(|l| l.name().to_string()),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Tag every utterance's tokens in place.
pub fn tag_corpus(corpus: &mut [Dialogue], lexicons: &Lexicons) {
    for u in corpus.iter_mut().flat_map(|d| d.utterances.iter_mut()) {
        u.tokens = Some(identify_language(&u.text, lexicons));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub split: String,
    pub dialogues: usize,
    pub utterances: usize,
    pub avg_speakers_per_dialogue: f64,
    pub avg_utterance_len: f64,
    pub max_utterance_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    /// One row per split present in the corpus, in train/val/test order.
    pub splits: Vec<SplitStats>,
    pub total: SplitStats,
    pub vocab_english: usize,
    pub vocab_hindi: usize,
}

fn split_stats(name: &str, dialogues: &[&Dialogue]) -> SplitStats {
    let utts: Vec<&Utterance> = dialogues.iter().flat_map(|d| &d.utterances).collect();
    let lens: Vec<usize> = utts.iter().map(|u| whitespace_len(&u.text)).collect();
    let speakers: usize = dialogues
        .iter()
        .map(|d| {
            d.utterances
                .iter()
                .map(|u| &u.speaker)
                .collect::<BTreeSet<_>>()
                .len()
        })
        .sum();
    SplitStats {
        split: name.to_string(),
        dialogues: dialogues.len(),
        utterances: utts.len(),
        avg_speakers_per_dialogue: speakers as f64 / dialogues.len().max(1) as f64,
        avg_utterance_len: lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64,
        max_utterance_len: lens.iter().copied().max().unwrap_or(0),
    }
}

pub fn corpus_stats(corpus: &[Dialogue], lexicons: &Lexicons) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus has no dialogues".into()));
    }
    let splits = Split::ALL
        .iter()
        .filter_map(|&s| {
            let ds: Vec<&Dialogue> = corpus.iter().filter(|d| d.split == s).collect();
            (!ds.is_empty()).then(|| split_stats(s.name(), &ds))
        })
        .collect();
    let all: Vec<&Dialogue> = corpus.iter().collect();
    let total = split_stats("total", &all);

    let mut english = BTreeSet::new();
    let mut hindi = BTreeSet::new();
    for u in corpus.iter().flat_map(|d| &d.utterances) {
        let owned;
        let tokens = match &u.tokens {
            Some(t) => t,
            None => {
                owned = identify_language(&u.text, lexicons);
                &owned
            }
        };
        for t in tokens {
            let key = t.surface.to_lowercase();
            match t.tag {
                LangTag::English => {
                    english.insert(key);
                }
                LangTag::HindiRoman | LangTag::HindiDevanagari => {
                    hindi.insert(key);
                }
                _ => {}
            }
        }
    }
    Ok(CorpusStats {
        splits,
        total,
        vocab_english: english.len(),
        vocab_hindi: hindi.len(),
    })
}

impl CorpusStats {
    /// Plain-text table, averages to two decimals.
    pub fn to_table(&self) -> String {
        let mut out =
            String::from("set\tdialogues\tutterances\tavg_speakers\tavg_utt_len\tmax_utt_len\n");
        for s in self.splits.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.2}\t{:.2}\t{}\n",
                s.split,
                s.dialogues,
                s.utterances,
                s.avg_speakers_per_dialogue,
                s.avg_utterance_len,
                s.max_utterance_len
            ));
        }
        out.push_str(&format!(
            "vocab\tenglish={}\thindi={}\n",
            self.vocab_english, self.vocab_hindi
        ));
        out
    }
}

/// One classification example: a target utterance and the utterances that
/// precede it in its dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// `<dialogue id>#<utterance index>`
    pub id: String,
    pub dialogue_id: String,
    pub index: usize,
    pub split: Split,
    pub context: Vec<Utterance>,
    pub target: Utterance,
    pub label: EmotionLabel,
}

impl Instance {
    pub fn make_id(dialogue_id: &str, index: usize) -> String {
        format!("{dialogue_id}#{index}")
    }

    /// Context followed by the target.
    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.context.iter().chain(std::iter::once(&self.target))
    }
}

pub fn make_instances(corpus: &[Dialogue], context_window: usize) -> Result<Vec<Instance>> {
    if context_window == 0 {
        return Err(Error::Config("context_window must be positive".into()));
    }
    let mut out = Vec::new();
    for d in corpus {
        for (i, u) in d.utterances.iter().enumerate() {
            let label = u.label.ok_or_else(|| {
                Error::Integrity(format!(
                    "utterance {i} of dialogue `{}` ({}) has no label",
                    d.id,
                    d.split.name()
                ))
            })?;
            let start = i.saturating_sub(context_window);
            out.push(Instance {
                id: Instance::make_id(&d.id, i),
                dialogue_id: d.id.clone(),
                index: i,
                split: d.split,
                context: d.utterances[start..i].to_vec(),
                target: u.clone(),
                label,
            });
        }
    }
    Ok(out)
}

/// Group dialogue ids per split; errors if an id appears in two splits.
pub fn check_split_disjoint(corpus: &[Dialogue]) -> Result<BTreeMap<Split, BTreeSet<String>>> {
    let mut by_split: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
    for d in corpus {
        if let Some(prev) = owner.insert(&d.id, d.split) {
            if prev != d.split {
                return Err(Error::Integrity(format!(
                    "dialogue `{}` appears in both {} and {}",
                    d.id,
                    prev.name(),
                    d.split.name()
                )));
            }
        }
        by_split.entry(d.split).or_default().insert(d.id.clone());
    }
    Ok(by_split)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = concat!(
        r#"{"id":"d1","split":"train","utterances":[{"speaker":"A","text":"a b c","emotion":"joy"},{"speaker":"B","text":"d e","emotion":"neutral"}]}"#,
        "\n",
        r#"{"id":"d2","split":"test","utterances":[{"speaker":"A","text":"x","emotion":"anger"},{"speaker":"B","text":"y y","emotion":"fear"},{"speaker":"A","text":"z","emotion":"surprise"}]}"#,
        "\n"
    );

    #[test]
    fn label_codec() {
        assert_eq!(encode_label("anger").unwrap(), 0);
        assert_eq!(decode_label(7).unwrap(), "surprise");
        assert!(matches!(decode_label(8), Err(Error::Label { .. })));
        assert!(encode_label("happy").is_err());
        for (i, l) in EmotionLabel::ALL.iter().enumerate() {
            assert_eq!(encode_label(decode_label(i).unwrap()).unwrap(), i);
            assert_eq!(l.index(), i);
        }
    }

    #[test]
    fn loads_fixture() {
        let c = parse_corpus(FIXTURE).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.iter().map(|d| d.utterances.len()).sum::<usize>(), 5);
    }

    #[test]
    fn unknown_label_names_line() {
        let text = FIXTURE.replace(r#""emotion":"fear""#, r#""emotion":"happy""#);
        match parse_corpus(&text) {
            Err(Error::Label { line: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_and_duplicate_id() {
        let bad = format!("{FIXTURE}{{not json\n");
        assert!(matches!(
            parse_corpus(&bad),
            Err(Error::Parse { line: 3, .. })
        ));
        let dup = FIXTURE.replace("\"d2\"", "\"d1\"");
        assert!(matches!(parse_corpus(&dup), Err(Error::Integrity(_))));
    }

    #[test]
    fn round_trip() {
        let c = parse_corpus(FIXTURE).unwrap();
        let again = parse_corpus(&write_corpus(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn stats_examples() {
        let lex = Lexicons::bundled();
        let one = parse_corpus(
            r#"{"id":"x","split":"train","utterances":[{"speaker":"A","text":"a b c","emotion":null}]}"#,
        )
        .unwrap();
        let s = corpus_stats(&one, &lex).unwrap();
        assert_eq!(s.total.utterances, 1);
        assert_eq!(s.total.avg_utterance_len, 3.0);
        assert_eq!(s.total.max_utterance_len, 3);

        let s = corpus_stats(&parse_corpus(FIXTURE).unwrap(), &lex).unwrap();
        assert_eq!(s.total.dialogues, 2);
        assert_eq!(s.total.utterances, 5);
        assert_eq!(
            s.splits.iter().map(|x| x.utterances).sum::<usize>(),
            s.total.utterances
        );
        assert!(matches!(corpus_stats(&[], &lex), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn instances_respect_window() {
        let c = parse_corpus(FIXTURE).unwrap();
        let inst = make_instances(&c[1..], 5).unwrap();
        assert_eq!(
            inst.iter().map(|i| i.context.len()).collect::<Vec<_>>(),
            [0, 1, 2]
        );
        let inst = make_instances(&c, 1).unwrap();
        assert!(inst.iter().all(|i| i.context.len() <= 1));
        assert_eq!(inst.len(), 5);
        assert_eq!(inst[4].id, "d2#2");
        assert_eq!(inst[4].context[0].speaker, "B");
    }

    #[test]
    fn unlabeled_target_is_integrity_error() {
        let c = parse_corpus(&FIXTURE.replace(r#""emotion":"joy""#, r#""emotion":null"#)).unwrap();
        assert!(matches!(make_instances(&c, 5), Err(Error::Integrity(_))));
    }

    #[test]
    fn split_disjointness() {
        let c = parse_corpus(FIXTURE).unwrap();
        let by = check_split_disjoint(&c).unwrap();
        assert!(by[&Split::Train].contains("d1"));
        let mut clash = c.clone();
        clash[1].id = "d1".into();
        assert!(check_split_disjoint(&clash).is_err());
    }
}

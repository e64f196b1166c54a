//! Seeded synthetic corpora with known structure, for sanity checks.
//!
//! * `separable`: every utterance contains a label-specific cue word, so
//!   labels are a function of the text.
//! * `planted`: utterance text is label-independent filler; the label is
//!   recoverable only from a cue word planted in the commonsense cache.
//!
//! Both are also shipped under `assets/synthetic/`.

use crate::data::{
    make_instances, parse_corpus, Dialogue, EmotionLabel, Split, Utterance, DEFAULT_CONTEXT_WINDOW,
};
use crate::error::Result;
use crate::extract::{CommonsenseResult, CsCache, CsEntry, EffectType};
use crate::tensor::Rng;

pub const SEPARABLE_SEED: u64 = 17;
pub const SEPARABLE_DIALOGUES: usize = 50;
pub const PLANTED_SEED: u64 = 23;
pub const PLANTED_DIALOGUES: usize = 80;

const SPEAKERS: [&str; 5] = ["Maya", "Sahil", "Monisha", "Rosesh", "Indravadan"];

const FILLER: [&str; 24] = [
    "aaj", "ghar", "dost", "kaam", "khana", "baat", "din", "raat", "phone", "party", "paper",
    "tissue", "home", "work", "morning", "dinner", "friend", "family", "time", "yaar", "chalo",
    "phir", "kuch", "sab",
];

/// Cue words in the utterance text, by label index.
const TEXT_CUES: [[&str; 2]; 8] = [
    ["gussa", "angry"],
    ["bakwas", "pathetic"],
    ["chhi", "gross"],
    ["darr", "scared"],
    ["khush", "wonderful"],
    ["theek", "okay"],
    ["dukh", "sad"],
    ["arre", "wow"],
];

/// Cue words planted in commonsense, by label index.
const CS_CUES: [&str; 8] = [
    "ignite", "sneer", "retch", "tremble", "beam", "shrug", "weep", "gasp",
];

const NEUTRAL_PHRASES: [&str; 8] = [
    "to talk",
    "to eat",
    "to rest",
    "to call someone",
    "calm",
    "interested",
    "to leave",
    "attentive",
];

fn filler_words(rng: &mut Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| FILLER[rng.below(FILLER.len())].to_string())
        .collect()
}

fn dialogue(id: String, split: Split, utterances: Vec<Utterance>) -> Dialogue {
    Dialogue {
        id,
        split,
        utterances,
    }
}

fn split_for(i: usize, n: usize) -> Split {
    let train = n * 7 / 10;
    let val = n * 85 / 100;
    if i < train {
        Split::Train
    } else if i < val {
        Split::Val
    } else {
        Split::Test
    }
}

fn random_label(rng: &mut Rng) -> EmotionLabel {
    EmotionLabel::from_index(rng.below(8)).expect("index below 8")
}

fn neutral_result(rng: &mut Rng) -> CommonsenseResult {
    let pick = |rng: &mut Rng| NEUTRAL_PHRASES[rng.below(NEUTRAL_PHRASES.len())].to_string();
    let a = pick(rng);
    let b = pick(rng);
    CommonsenseResult::from_pairs([(EffectType::XWant, vec![a]), (EffectType::OReact, vec![b])])
        .expect("phrases are nonempty")
}

fn cache_for(
    corpus: &[Dialogue],
    mut result: impl FnMut(&Dialogue, usize) -> CommonsenseResult,
) -> CsCache {
    let mut cache = CsCache::default();
    let insts =
        make_instances(corpus, DEFAULT_CONTEXT_WINDOW).expect("generated corpora are labelled");
    for inst in insts {
        let d = corpus
            .iter()
            .find(|d| d.id == inst.dialogue_id)
            .expect("instance from corpus");
        cache.entries.insert(
            inst.id.clone(),
            CsEntry {
                query: String::new(),
                topics: Vec::new(),
                commonsense: result(d, inst.index),
            },
        );
    }
    cache
}

/// `n` dialogues whose labels follow cue words in the text, with a
/// label-independent commonsense cache.
pub fn separable_corpus(n: usize, seed: u64) -> (Vec<Dialogue>, CsCache) {
    let mut rng = Rng::new(seed);
    let mut corpus = Vec::with_capacity(n);
    for i in 0..n {
        let len = 3 + rng.below(3);
        let utts = (0..len)
            .map(|j| {
                let label = random_label(&mut rng);
                let k = 2 + rng.below(3);
                let mut words = filler_words(&mut rng, k);
                let cue = TEXT_CUES[label.index()][rng.below(2)];
                let at = rng.below(words.len() + 1);
                words.insert(at, cue.to_string());
                Utterance::new(
                    SPEAKERS[(i + j) % 2 + 2 * (i % 2)],
                    words.join(" "),
                    Some(label),
                )
            })
            .collect();
        corpus.push(dialogue(format!("sep{i:03}"), split_for(i, n), utts));
    }
    let mut cs_rng = Rng::new(seed ^ 0xC5);
    let cache = cache_for(&corpus, |_, _| neutral_result(&mut cs_rng));
    (corpus, cache)
}

/// `n` dialogues of label-independent filler; each instance's commonsense
/// carries a cue word for its target label.
pub fn planted_corpus(n: usize, seed: u64) -> (Vec<Dialogue>, CsCache) {
    let mut rng = Rng::new(seed);
    let mut corpus = Vec::with_capacity(n);
    for i in 0..n {
        let utts = (0..4)
            .map(|j| {
                let label = random_label(&mut rng);
                let k = 3 + rng.below(3);
                let words = filler_words(&mut rng, k);
                Utterance::new(
                    SPEAKERS[(i + j) % SPEAKERS.len()],
                    words.join(" "),
                    Some(label),
                )
            })
            .collect();
        corpus.push(dialogue(format!("pl{i:03}"), split_for(i, n), utts));
    }
    let mut cs_rng = Rng::new(seed ^ 0x9A);
    let cache = cache_for(&corpus, |d, idx| {
        let label = d.utterances[idx].label.expect("labelled");
        let cue = CS_CUES[label.index()];
        let mut r = neutral_result(&mut cs_rng);
        r.merge(
            &CommonsenseResult::from_pairs([
                (EffectType::XWant, vec![format!("to {cue}")]),
                (EffectType::OReact, vec![format!("{cue} too")]),
            ])
            .expect("phrases are nonempty"),
        );
        r
    });
    (corpus, cache)
}

pub const SEPARABLE_JSONL: &str = include_str!("../assets/synthetic/separable.jsonl");
pub const SEPARABLE_CS: &str = include_str!("../assets/synthetic/separable_cs.json");
pub const PLANTED_JSONL: &str = include_str!("../assets/synthetic/planted.jsonl");
pub const PLANTED_CS: &str = include_str!("../assets/synthetic/planted_cs.json");

/// The shipped separable corpus and its cache.
pub fn bundled_separable() -> Result<(Vec<Dialogue>, CsCache)> {
    Ok((
        parse_corpus(SEPARABLE_JSONL)?,
        serde_json::from_str(SEPARABLE_CS)?,
    ))
}

/// The shipped planted-commonsense corpus and its cache.
pub fn bundled_planted() -> Result<(Vec<Dialogue>, CsCache)> {
    Ok((
        parse_corpus(PLANTED_JSONL)?,
        serde_json::from_str(PLANTED_CS)?,
    ))
}

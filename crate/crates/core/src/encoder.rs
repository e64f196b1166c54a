//! Word-level vocabulary, token layout, and the small transformer encoder
//! used for both dialogue context and commonsense text.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dialogue, Instance, Split, Utterance};
use crate::error::{read_to_string, write_file, Error, Result};
use crate::extract::{identify_language, LangTag, Lexicons};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Rng, Tensor};
use crate::text::tokenize;

/// Token ids → strings, specials first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const SEP: usize = 2;
    pub const SPK: usize = 3;
    pub const CLS: usize = 4;
    pub const SPECIALS: [&'static str; 5] = ["[PAD]", "[UNK]", "[SEP]", "[SPK]", "[CLS]"];

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate vocabulary entry `{t}`"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Words with at least `min_count` occurrences, most frequent first,
    /// ties broken lexicographically.
    pub fn from_counts(counts: &HashMap<String, usize>, min_count: usize) -> Self {
        let mut words: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count.max(1))
            .map(|(w, &c)| (w, c))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = Self::SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w.clone()))
            .collect();
        Self::from_tokens(tokens).expect("counts keys are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&normalize(word))
    }

    /// Id of `word`, or UNK.
    pub fn id(&self, word: &str) -> usize {
        self.index
            .get(&normalize(word))
            .copied()
            .unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line in id order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < Self::SPECIALS.len()
            || tokens.iter().zip(Self::SPECIALS).any(|(a, b)| a != b)
        {
            return Err(Error::Integrity(
                "vocabulary must start with the five special tokens".into(),
            ));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}

fn normalize(word: &str) -> String {
    word.to_lowercase()
}

fn count_text(counts: &mut HashMap<String, usize>, text: &str) {
    for t in tokenize(text) {
        *counts.entry(normalize(t)).or_default() += 1;
    }
}

/// Vocabulary over speakers and utterance text of the train split.
pub fn build_vocab(corpus: &[Dialogue], min_count: usize) -> Result<Vocab> {
    build_vocab_with(corpus, std::iter::empty::<&str>(), min_count)
}

/// As [`build_vocab`], also counting `extra` texts (e.g. train-split
/// commonsense).
pub fn build_vocab_with<'a>(
    corpus: &[Dialogue],
    extra: impl IntoIterator<Item = &'a str>,
    min_count: usize,
) -> Result<Vocab> {
    let mut counts = HashMap::new();
    let mut any = false;
    for d in corpus.iter().filter(|d| d.split == Split::Train) {
        for u in &d.utterances {
            any = true;
            count_text(&mut counts, &u.speaker);
            count_text(&mut counts, &u.text);
        }
    }
    if !any {
        return Err(Error::EmptyInput("train split has no utterances".into()));
    }
    for text in extra {
        count_text(&mut counts, text);
    }
    Ok(Vocab::from_counts(&counts, min_count))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_n: usize,
    pub max_m: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 2,
            heads: 4,
            max_n: 96,
            max_m: 64,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d ({}) must be a positive multiple of heads ({})",
                self.d, self.heads
            )));
        }
        if self.max_n < 2 || self.max_m < 1 {
            return Err(Error::Config("max_n must be ≥ 2 and max_m ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Hidden width of the feed-forward sublayer.
    pub fn ff(&self) -> usize {
        2 * self.d
    }
}

/// Which language tags survive into the encoder input; tokens of the other
/// language become UNK.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageFilter {
    #[default]
    All,
    EnglishOnly,
    HindiOnly,
}

impl FromStr for LanguageFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "english_only" | "eng" => Ok(Self::EnglishOnly),
            "hindi_only" | "hin" => Ok(Self::HindiOnly),
            other => Err(Error::Config(format!("unknown language filter `{other}`"))),
        }
    }
}

impl LanguageFilter {
    fn keeps(self, tag: LangTag) -> bool {
        match self {
            LanguageFilter::All => true,
            LanguageFilter::EnglishOnly => !tag.is_hindi(),
            LanguageFilter::HindiOnly => tag != LangTag::English,
        }
    }
}

/// Token ids of a text with the language filter applied.
pub fn text_ids(text: &str, vocab: &Vocab, filter: LanguageFilter, lex: &Lexicons) -> Vec<usize> {
    match filter {
        LanguageFilter::All => tokenize(text).into_iter().map(|t| vocab.id(t)).collect(),
        _ => identify_language(text, lex)
            .into_iter()
            .map(|t| {
                if filter.keeps(t.tag) {
                    vocab.id(&t.surface)
                } else {
                    Vocab::UNK
                }
            })
            .collect(),
    }
}

fn utterance_ids(
    u: &Utterance,
    vocab: &Vocab,
    filter: LanguageFilter,
    lex: &Lexicons,
) -> Vec<usize> {
    match (&u.tokens, filter) {
        (Some(tagged), f) if f != LanguageFilter::All => tagged
            .iter()
            .map(|t| {
                if f.keeps(t.tag) {
                    vocab.id(&t.surface)
                } else {
                    Vocab::UNK
                }
            })
            .collect(),
        _ => text_ids(&u.text, vocab, filter, lex),
    }
}

/// Padded encoder input for one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueLayout {
    /// Exactly `max_n` ids, trailing PAD.
    pub ids: Vec<usize>,
    /// Unpadded prefix length.
    pub len: usize,
    /// Target utterance tokens plus their closing SEP.
    pub target_span: Range<usize>,
}

impl DialogueLayout {
    pub fn pad_mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i >= self.len).collect()
    }
}

/// `[CLS] (SPK speaker… utterance… SEP)*`, target last, keeping the most
/// recent tokens that fit in `max_n`. With `prefix`, the layout becomes
/// `[CLS] prefix [SEP] (…)*`.
pub fn layout_dialogue(
    inst: &Instance,
    vocab: &Vocab,
    max_n: usize,
    filter: LanguageFilter,
    lex: &Lexicons,
    prefix: Option<&[usize]>,
) -> Result<DialogueLayout> {
    let mut head = vec![Vocab::CLS];
    if let Some(p) = prefix {
        head.extend_from_slice(p);
        head.push(Vocab::SEP);
    }
    if head.len() + 1 > max_n {
        return Err(Error::Contract(format!(
            "layout head of {} tokens leaves no room in max_n = {max_n}",
            head.len()
        )));
    }
    let mut body = Vec::new();
    let mut target_start = 0;
    let last = inst.context.len();
    for (i, u) in inst.utterances().enumerate() {
        body.push(Vocab::SPK);
        body.extend(tokenize(&u.speaker).into_iter().map(|t| vocab.id(t)));
        if i == last {
            target_start = body.len();
        }
        body.extend(utterance_ids(u, vocab, filter, lex));
        body.push(Vocab::SEP);
    }
    let budget = max_n - head.len();
    let cut = body.len().saturating_sub(budget);
    let start = head.len() + target_start.max(cut) - cut;
    head.extend_from_slice(&body[cut..]);
    let len = head.len();
    let target_span = start..len;
    debug_assert!(len <= max_n && !target_span.is_empty());
    head.resize(max_n, Vocab::PAD);
    Ok(DialogueLayout {
        ids: head,
        len,
        target_span,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommonsenseLayout {
    pub ids: Vec<usize>,
    pub len: usize,
    /// Text had no tokens; the input is a lone UNK.
    pub empty_text: bool,
}

impl CommonsenseLayout {
    pub fn pad_mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i >= self.len).collect()
    }
}

/// First `max_m` tokens of the commonsense text, padded.
pub fn layout_commonsense(text: &str, vocab: &Vocab, max_m: usize) -> CommonsenseLayout {
    let mut ids: Vec<usize> = tokenize(text)
        .into_iter()
        .take(max_m)
        .map(|t| vocab.id(t))
        .collect();
    let empty_text = ids.is_empty();
    if empty_text {
        ids.push(Vocab::UNK);
    }
    let len = ids.len();
    ids.resize(max_m, Vocab::PAD);
    CommonsenseLayout {
        ids,
        len,
        empty_text,
    }
}

/// Parameters of one post-LN transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl BlockParams {
    fn init(store: &mut ParamStore, prefix: &str, d: usize, ff: usize, rng: &mut Rng) -> Self {
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.{name}"), t);
        Self {
            wq: add("wq", Tensor::xavier(d, d, rng)),
            wk: add("wk", Tensor::xavier(d, d, rng)),
            wv: add("wv", Tensor::xavier(d, d, rng)),
            wo: add("wo", Tensor::xavier(d, d, rng)),
            w1: add("w1", Tensor::xavier(d, ff, rng)),
            b1: add("b1", Tensor::zeros(&[1, ff])),
            w2: add("w2", Tensor::xavier(ff, d, rng)),
            b2: add("b2", Tensor::zeros(&[1, d])),
        }
    }

    pub fn ids(&self) -> [ParamId; 8] {
        [
            self.wq, self.wk, self.wv, self.wo, self.w1, self.b1, self.w2, self.b2,
        ]
    }
}

/// Shared token embeddings plus separate block stacks for the dialogue and
/// commonsense encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub dialogue: Vec<BlockParams>,
    pub commonsense: Vec<BlockParams>,
}

impl EncoderParams {
    pub fn init(
        store: &mut ParamStore,
        vocab_size: usize,
        cfg: &EncoderConfig,
        rng: &mut Rng,
    ) -> Self {
        let embedding = store.add(
            "emb",
            Tensor::uniform(&[vocab_size, cfg.d], 1.0 / (cfg.d as f64).sqrt(), rng),
        );
        let dialogue = (0..cfg.layers)
            .map(|l| BlockParams::init(store, &format!("dlg.l{l}"), cfg.d, cfg.ff(), rng))
            .collect();
        let commonsense = (0..cfg.layers)
            .map(|l| BlockParams::init(store, &format!("cs.l{l}"), cfg.d, cfg.ff(), rng))
            .collect();
        Self {
            embedding,
            dialogue,
            commonsense,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.embedding)
            .chain(self.dialogue.iter().flat_map(BlockParams::ids))
            .chain(self.commonsense.iter().flat_map(BlockParams::ids))
            .collect()
    }
}

/// Sinusoidal position table, `n×d`.
pub fn positions(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[n, d], data).expect("shape matches")
}

/// Inverted dropout driven by a seeded stream.
pub struct Dropout<'a> {
    pub rng: &'a mut Rng,
    pub rate: f64,
}

impl Dropout<'_> {
    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = g.shape(x);
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| {
                if self.rng.bernoulli(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = g.constant(&Tensor::new(&[r, c], mask)?)?;
        g.mul(x, m)
    }
}

/// Additive key mask: 0 for real positions, −1e9 for padding.
pub fn mask_bias(g: &mut Graph, pad_mask: &[bool]) -> Result<Var> {
    let row: Vec<f64> = pad_mask
        .iter()
        .map(|&p| if p { -1e9 } else { 0.0 })
        .collect();
    g.constant(&Tensor::new(&[1, pad_mask.len()], row)?)
}

fn block(
    g: &mut Graph,
    store: &ParamStore,
    p: &BlockParams,
    x: Var,
    bias: Var,
    heads: usize,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<Var> {
    let (_, d) = g.shape(x);
    let dh = d / heads;
    let (wq, wk, wv, wo) = (
        g.param(store, p.wq)?,
        g.param(store, p.wk)?,
        g.param(store, p.wv)?,
        g.param(store, p.wo)?,
    );
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let mut ctx = None;
    for h in 0..heads {
        let (qh, kh, vh) = (
            g.slice_cols(q, h * dh, (h + 1) * dh)?,
            g.slice_cols(k, h * dh, (h + 1) * dh)?,
            g.slice_cols(v, h * dh, (h + 1) * dh)?,
        );
        let s = g.matmul_bt(qh, kh)?;
        let s = g.scale(s, 1.0 / (dh as f64).sqrt())?;
        let s = g.add_row(s, bias)?;
        let a = g.softmax_rows(s)?;
        let o = g.matmul(a, vh)?;
        ctx = Some(match ctx {
            None => o,
            Some(prev) => g.concat_cols(prev, o)?,
        });
    }
    let attn = g.matmul(ctx.expect("heads ≥ 1"), wo)?;
    let attn = match dropout {
        Some(dr) => dr.apply(g, attn)?,
        None => attn,
    };
    let h1 = g.add(x, attn)?;
    let h1 = g.layer_norm(h1)?;

    let (w1, b1, w2, b2) = (
        g.param(store, p.w1)?,
        g.param(store, p.b1)?,
        g.param(store, p.w2)?,
        g.param(store, p.b2)?,
    );
    let f = g.matmul(h1, w1)?;
    let f = g.add_row(f, b1)?;
    let f = g.gelu(f)?;
    let f = g.matmul(f, w2)?;
    let f = g.add_row(f, b2)?;
    let f = match dropout {
        Some(dr) => dr.apply(g, f)?,
        None => f,
    };
    let h2 = g.add(h1, f)?;
    g.layer_norm(h2)
}

/// Embed `ids`, add positions, and run `blocks`. Returns `ids.len() × d`.
#[allow(clippy::too_many_arguments)]
pub fn encode_ids(
    g: &mut Graph,
    store: &ParamStore,
    embedding: ParamId,
    blocks: &[BlockParams],
    ids: &[usize],
    pad_mask: &[bool],
    heads: usize,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var> {
    if pad_mask.iter().all(|&p| p) {
        return Err(Error::Contract("every position is padding".into()));
    }
    let table = g.param(store, embedding)?;
    let (_, d) = g.shape(table);
    let e = g.gather(table, ids)?;
    let pos = g.constant(&positions(ids.len(), d))?;
    let mut x = g.add(e, pos)?;
    if let Some(dr) = dropout.as_mut() {
        x = dr.apply(g, x)?;
    }
    let bias = mask_bias(g, pad_mask)?;
    for b in blocks {
        x = block(g, store, b, x, bias, heads, &mut dropout)?;
    }
    Ok(x)
}

/// `D_c` with its layout metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueRep {
    pub d_c: Tensor,
    pub target_span: Range<usize>,
    pub pad_mask: Vec<bool>,
}

/// `D_cs` with its layout metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonsenseRep {
    pub d_cs: Tensor,
    pub pad_mask: Vec<bool>,
    pub empty_text: bool,
}

/// Inference-mode dialogue encoding.
pub fn encode_instance(
    inst: &Instance,
    vocab: &Vocab,
    cfg: &EncoderConfig,
    store: &ParamStore,
    params: &EncoderParams,
) -> Result<DialogueRep> {
    let layout = layout_dialogue(
        inst,
        vocab,
        cfg.max_n,
        LanguageFilter::All,
        &Lexicons::default(),
        None,
    )?;
    let mask = layout.pad_mask();
    let mut g = Graph::new();
    let x = encode_ids(
        &mut g,
        store,
        params.embedding,
        &params.dialogue,
        &layout.ids,
        &mask,
        cfg.heads,
        None,
    )?;
    Ok(DialogueRep {
        d_c: g.value(x),
        target_span: layout.target_span,
        pad_mask: mask,
    })
}

/// Inference-mode commonsense encoding.
pub fn encode_commonsense(
    cs_text: &str,
    vocab: &Vocab,
    cfg: &EncoderConfig,
    store: &ParamStore,
    params: &EncoderParams,
) -> Result<CommonsenseRep> {
    let layout = layout_commonsense(cs_text, vocab, cfg.max_m);
    let mask = layout.pad_mask();
    let mut g = Graph::new();
    let x = encode_ids(
        &mut g,
        store,
        params.embedding,
        &params.commonsense,
        &layout.ids,
        &mask,
        cfg.heads,
        None,
    )?;
    Ok(CommonsenseRep {
        d_cs: g.value(x),
        pad_mask: mask,
        empty_text: layout.empty_text,
    })
}

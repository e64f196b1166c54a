//! The full classifier: dialogue and commonsense encoders, fusion, and the
//! emotion head.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{EmotionLabel, Instance, NUM_CLASSES};
use crate::encoder::{
    encode_ids, layout_commonsense, layout_dialogue, CommonsenseLayout, DialogueLayout, Dropout,
    EncoderConfig, EncoderParams, LanguageFilter, Vocab,
};
use crate::error::{Error, Result};
use crate::extract::{select_attributes, CsCache, EffectType, Lexicons, DEFAULT_SELECTION};
use crate::fusion::{fuse, mean_lambda, FusionParams, FusionStrategy};
use crate::graph::{Graph, Var};
use crate::params::{Checkpoint, ParamId, ParamStore};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierParams {
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl ClassifierParams {
    pub fn init(store: &mut ParamStore, d: usize, rng: &mut Rng) -> Self {
        Self {
            head_w: store.add("head.w", Tensor::xavier(d, NUM_CLASSES, rng)),
            head_b: store.add("head.b", Tensor::zeros(&[1, NUM_CLASSES])),
        }
    }
}

/// Mean of the fused rows in `span`, mapped to eight logits.
pub fn classify(
    g: &mut Graph,
    store: &ParamStore,
    head: &ClassifierParams,
    fused: Var,
    span: Range<usize>,
) -> Result<Var> {
    if span.is_empty() {
        return Err(Error::Contract("empty target span".into()));
    }
    let rows = g.slice_rows(fused, span.start, span.end)?;
    let pooled = g.mean_rows(rows)?;
    let (w, b) = (g.param(store, head.head_w)?, g.param(store, head.head_b)?);
    let z = g.matmul(pooled, w)?;
    g.add_row(z, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub strategy: FusionStrategy,
    pub attributes: Vec<EffectType>,
    #[serde(default)]
    pub filter: LanguageFilter,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            strategy: FusionStrategy::Coffee,
            attributes: DEFAULT_SELECTION.to_vec(),
            filter: LanguageFilter::All,
        }
    }
}

/// Encoder-ready inputs for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub label: usize,
    pub dialogue: DialogueLayout,
    /// Present for strategies that encode commonsense separately.
    pub commonsense: Option<CommonsenseLayout>,
}

/// Per-instance fusion diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LambdaStats {
    pub mean_k: f64,
    pub mean_v: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub fusion: FusionParams,
    pub head: ClassifierParams,
    pub lexicons: Lexicons,
}

impl Model {
    /// Fresh parameters drawn from `config.encoder.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.encoder.validate()?;
        let mut rng = Rng::new(config.encoder.seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::init(&mut store, vocab.len(), &config.encoder, &mut rng);
        let fusion = FusionParams::init(&mut store, config.encoder.d, &mut rng);
        let head = ClassifierParams::init(&mut store, config.encoder.d, &mut rng);
        Ok(Self {
            config,
            vocab,
            store,
            encoder,
            fusion,
            head,
            lexicons: Lexicons::bundled(),
        })
    }

    /// Commonsense text fed to the encoders for `inst`.
    pub fn commonsense_text(
        &self,
        inst: &Instance,
        cs: Option<&CsCache>,
    ) -> Result<Option<String>> {
        if !self.config.strategy.uses_commonsense() {
            return Ok(None);
        }
        let entry = cs.and_then(|c| c.get(&inst.id)).ok_or_else(|| {
            Error::Integrity(format!(
                "no commonsense for instance `{}` (strategy {})",
                inst.id, self.config.strategy
            ))
        })?;
        Ok(Some(select_attributes(
            &entry.commonsense,
            &self.config.attributes,
        )))
    }

    pub fn prepare(&self, inst: &Instance, cs: Option<&CsCache>) -> Result<Prepared> {
        let enc = &self.config.encoder;
        let text = self.commonsense_text(inst, cs)?;
        let (dialogue, commonsense) = match (self.config.strategy, text) {
            (FusionStrategy::Concat, Some(t)) => {
                let budget = enc.max_m.min(enc.max_n.saturating_sub(3) / 2);
                let l = layout_commonsense(&t, &self.vocab, budget.max(1));
                let prefix = if l.empty_text {
                    &[][..]
                } else {
                    &l.ids[..l.len]
                };
                let d = layout_dialogue(
                    inst,
                    &self.vocab,
                    enc.max_n,
                    self.config.filter,
                    &self.lexicons,
                    Some(prefix),
                )?;
                (d, None)
            }
            (_, t) => {
                let d = layout_dialogue(
                    inst,
                    &self.vocab,
                    enc.max_n,
                    self.config.filter,
                    &self.lexicons,
                    None,
                )?;
                (d, t.map(|t| layout_commonsense(&t, &self.vocab, enc.max_m)))
            }
        };
        Ok(Prepared {
            id: inst.id.clone(),
            label: inst.label.index(),
            dialogue,
            commonsense,
        })
    }

    pub fn prepare_all(&self, insts: &[Instance], cs: Option<&CsCache>) -> Result<Vec<Prepared>> {
        insts.iter().map(|i| self.prepare(i, cs)).collect()
    }

    /// Build the logits of `p` on `g`. `dropout` enables training mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Prepared,
        dropout: Option<&mut Rng>,
    ) -> Result<(Var, Option<LambdaStats>)> {
        self.forward_with(&self.store, g, p, dropout)
    }

    /// [`Model::forward`] reading parameter values from `store`, which must
    /// share this model's layout.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        p: &Prepared,
        mut dropout: Option<&mut Rng>,
    ) -> Result<(Var, Option<LambdaStats>)> {
        let enc = &self.config.encoder;
        let rate = enc.dropout;
        let dc_mask = p.dialogue.pad_mask();
        let d_c = encode_ids(
            g,
            store,
            self.encoder.embedding,
            &self.encoder.dialogue,
            &p.dialogue.ids,
            &dc_mask,
            enc.heads,
            dropout.as_deref_mut().map(|r| Dropout { rng: r, rate }),
        )?;
        let (d_cs, cs_mask) = match (&p.commonsense, self.config.strategy) {
            (Some(cs), FusionStrategy::Coffee | FusionStrategy::Dpa) => {
                let mask = cs.pad_mask();
                let v = encode_ids(
                    g,
                    store,
                    self.encoder.embedding,
                    &self.encoder.commonsense,
                    &cs.ids,
                    &mask,
                    enc.heads,
                    dropout.map(|r| Dropout { rng: r, rate }),
                )?;
                (Some(v), mask)
            }
            _ => (None, Vec::new()),
        };
        let out = fuse(
            g,
            store,
            self.config.strategy,
            &self.fusion,
            d_c,
            &dc_mask,
            d_cs,
            &cs_mask,
        )?;
        let logits = classify(
            g,
            store,
            &self.head,
            out.fused,
            p.dialogue.target_span.clone(),
        )?;
        let stats = out.lambdas.map(|(k, v)| LambdaStats {
            mean_k: mean_lambda(g, k, &dc_mask),
            mean_v: mean_lambda(g, v, &dc_mask),
        });
        Ok((logits, stats))
    }

    /// Cross-entropy loss of `p` against its label.
    pub fn loss(&self, g: &mut Graph, p: &Prepared, dropout: Option<&mut Rng>) -> Result<Var> {
        let (logits, _) = self.forward(g, p, dropout)?;
        g.cross_entropy(logits, p.label)
    }

    pub fn loss_with(&self, store: &ParamStore, g: &mut Graph, p: &Prepared) -> Result<Var> {
        let (logits, _) = self.forward_with(store, g, p, None)?;
        g.cross_entropy(logits, p.label)
    }

    /// Inference-mode logits.
    pub fn logits(&self, p: &Prepared) -> Result<([f64; NUM_CLASSES], Option<LambdaStats>)> {
        let mut g = Graph::new();
        let (v, stats) = self.forward(&mut g, p, None)?;
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(g.data(v));
        Ok((out, stats))
    }

    pub fn predict(&self, p: &Prepared) -> Result<EmotionLabel> {
        Ok(EmotionLabel::from_index(argmax(&self.logits(p)?.0)).expect("eight logits"))
    }

    /// Mean token embedding of `text`; the attribute representation used
    /// for correlation analysis.
    pub fn text_embedding(&self, text: &str) -> Tensor {
        let layout = layout_commonsense(text, &self.vocab, self.config.encoder.max_m);
        let emb = self.store.get(self.encoder.embedding);
        let mut out = vec![0.0; emb.cols()];
        for &id in &layout.ids[..layout.len] {
            for (o, v) in out.iter_mut().zip(emb.row(id)) {
                *o += v;
            }
        }
        let n = layout.len.max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Tensor::new(&[1, emb.cols()], out).expect("one row of width d")
    }

    pub fn all_param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "config": serde_json::to_value(&self.config)?,
            "vocab": self.vocab.tokens(),
        });
        Ok(self.store.to_checkpoint(meta))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let tokens: Vec<String> = serde_json::from_value(ckpt.meta["vocab"].clone())
            .map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;
        let vocab =
            Vocab::from_text(&tokens.join("\n")).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = Model::new(config, vocab)?;
        let stored = ParamStore::from_checkpoint(ckpt)?;
        model.store.copy_values_from(&stored)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Index of the largest value; first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

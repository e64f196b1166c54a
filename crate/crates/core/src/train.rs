//! Training loop with early stopping, evaluation, and prediction dumps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    make_instances, Dialogue, EmotionLabel, Instance, Split, DEFAULT_CONTEXT_WINDOW,
};
use crate::encoder::{build_vocab_with, EncoderConfig, LanguageFilter};
use crate::error::{Error, Result};
use crate::extract::{
    correlate_attributes, select_attributes, AttributeCorrelation, Correlation, CsCache,
    EffectType, DEFAULT_SELECTION,
};
use crate::fusion::FusionStrategy;
use crate::graph::{Gradients, Graph};
use crate::metrics::EvalReport;
use crate::model::{argmax, LambdaStats, Model, ModelConfig, Prepared};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub strategy: FusionStrategy,
    pub attributes: Vec<EffectType>,
    pub filter: LanguageFilter,
    pub context_window: usize,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            patience: 5,
            strategy: FusionStrategy::Coffee,
            attributes: DEFAULT_SELECTION.to_vec(),
            filter: LanguageFilter::All,
            context_window: DEFAULT_CONTEXT_WINDOW,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.patience == 0
            || self.context_window == 0
        {
            return Err(Error::Config(
                "epochs, batch_size, patience and context_window must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if self.attributes.is_empty() {
            return Err(Error::Selection(String::new()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_weighted_f1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.val_weighted_f1
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub log: TrainLog,
}

/// Split a corpus into instances by split.
pub fn split_instances(
    corpus: &[Dialogue],
    window: usize,
) -> Result<(Vec<Instance>, Vec<Instance>, Vec<Instance>)> {
    let all = make_instances(corpus, window)?;
    let mut parts = (Vec::new(), Vec::new(), Vec::new());
    for i in all {
        match i.split {
            Split::Train => parts.0.push(i),
            Split::Val => parts.1.push(i),
            Split::Test => parts.2.push(i),
        }
    }
    Ok(parts)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fresh model for `corpus` under `cfg`: vocabulary from the train split
/// plus its commonsense text.
pub fn init_model(
    corpus: &[Dialogue],
    cfg: &TrainConfig,
    enc: EncoderConfig,
    cs: Option<&CsCache>,
) -> Result<Model> {
    let (train, _, _) = split_instances(corpus, cfg.context_window)?;
    let cs_texts: Vec<String> = match (cfg.strategy.uses_commonsense(), cs) {
        (true, Some(cache)) => train
            .iter()
            .filter_map(|i| cache.get(&i.id))
            .map(|e| select_attributes(&e.commonsense, &cfg.attributes))
            .collect(),
        _ => Vec::new(),
    };
    let vocab = build_vocab_with(corpus, cs_texts.iter().map(String::as_str), cfg.min_count)?;
    let config = ModelConfig {
        encoder: EncoderConfig {
            seed: cfg.seed,
            ..enc
        },
        strategy: cfg.strategy,
        attributes: cfg.attributes.clone(),
        filter: cfg.filter,
    };
    Model::new(config, vocab)
}

fn instance_gradients(
    model: &Model,
    p: &Prepared,
    rng: Option<&mut Rng>,
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let loss = model.loss(&mut g, p, rng)?;
    Ok((g.scalar(loss), g.backward(loss)?))
}

/// One optimisation pass over `batch`, gradients summed in batch order.
/// Returns the summed loss.
fn train_batch(model: &mut Model, opt: &mut Adam, batch: &[(&Prepared, u64)]) -> Result<f64> {
    let m: &Model = model;
    let results: Vec<(f64, Gradients)> = batch
        .iter()
        .map(|(p, seed)| {
            let mut rng = Rng::new(*seed);
            let dropout = (m.config.encoder.dropout > 0.0).then_some(&mut rng);
            instance_gradients(m, p, dropout)
        })
        .collect::<Result<_>>()?;
    model.store.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (loss, grads) in &results {
        total += loss;
        grads.accumulate_scaled(&mut model.store, scale);
    }
    opt.step(&mut model.store)?;
    Ok(total)
}

/// Train under `cfg`. Validation weighted F1 drives early stopping and the
/// returned parameters; with no validation split, training F1 is used.
pub fn train(
    corpus: &[Dialogue],
    cfg: &TrainConfig,
    enc: EncoderConfig,
    cs: Option<&CsCache>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_insts, val_insts, _) = split_instances(corpus, cfg.context_window)?;
    if train_insts.is_empty() {
        return Err(Error::EmptyInput("train split has no instances".into()));
    }
    let mut model = init_model(corpus, cfg, enc, cs)?;
    train_model(&mut model, &train_insts, &val_insts, cfg, cs)
}

/// Train an already-initialised model.
pub fn train_model(
    model: &mut Model,
    train_insts: &[Instance],
    val_insts: &[Instance],
    cfg: &TrainConfig,
    cs: Option<&CsCache>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_p = model.prepare_all(train_insts, cs)?;
    let val_p = if val_insts.is_empty() {
        train_p.clone()
    } else {
        model.prepare_all(val_insts, cs)?
    };
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, crate::params::ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        Rng::new(mix(cfg.seed, epoch as u64, 0)).shuffle(&mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&Prepared, u64)> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    (
                        &train_p[i],
                        mix(cfg.seed, epoch as u64, (b * cfg.batch_size + k + 1) as u64),
                    )
                })
                .collect();
            total += train_batch(model, &mut opt, &batch)?;
        }
        let train_loss = total / train_p.len() as f64;
        let val_f1 = evaluate_prepared(model, &val_p)?.0.weighted_f1;
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_weighted_f1: val_f1,
        });
        if best.as_ref().is_none_or(|(f, _)| val_f1 > *f) {
            best = Some((val_f1, model.store.clone()));
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        model.store.copy_values_from(&store)?;
    }
    model.store.clear_grad();
    Ok(TrainOutcome {
        model: model.clone(),
        log,
    })
}

/// Model output for one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    pub gold: EmotionLabel,
    pub predicted: EmotionLabel,
    pub logits: [f64; 8],
    pub lambda: Option<(f64, f64)>,
}

fn evaluate_prepared(
    model: &Model,
    prepared: &[Prepared],
) -> Result<(EvalReport, Vec<Prediction>)> {
    let outputs: Vec<([f64; 8], Option<LambdaStats>)> = prepared
        .par_iter()
        .map(|p| model.logits(p))
        .collect::<Result<_>>()?;
    let preds: Vec<Prediction> = prepared
        .iter()
        .zip(outputs)
        .map(|(p, (logits, lam))| Prediction {
            id: p.id.clone(),
            gold: EmotionLabel::from_index(p.label).expect("validated label"),
            predicted: EmotionLabel::from_index(argmax(&logits)).expect("eight logits"),
            logits,
            lambda: lam.map(|l| (l.mean_k, l.mean_v)),
        })
        .collect();
    let gold: Vec<usize> = preds.iter().map(|p| p.gold.index()).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.predicted.index()).collect();
    Ok((EvalReport::from_predictions(&gold, &pred)?, preds))
}

/// Score `model` on `instances`.
pub fn evaluate(
    model: &Model,
    instances: &[Instance],
    cs: Option<&CsCache>,
) -> Result<(EvalReport, Vec<Prediction>)> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("split has no instances".into()));
    }
    evaluate_prepared(model, &model.prepare_all(instances, cs)?)
}

fn csv_row(fields: &[&str]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Correlation of each attribute's representation with the labels of
/// `instances`. Instances without phrases for an attribute are skipped;
/// attributes with fewer than two samples are reported as degenerate.
pub fn attribute_correlations(
    model: &Model,
    instances: &[Instance],
    cs: &CsCache,
) -> Result<AttributeCorrelation> {
    let mut entries = Vec::with_capacity(EffectType::ALL.len());
    for attr in EffectType::ALL {
        let samples: Vec<(Tensor, usize)> = instances
            .iter()
            .filter_map(|i| cs.get(&i.id).map(|e| (i, e)))
            .filter(|(_, e)| !e.commonsense.get(attr).is_empty())
            .map(|(i, e)| {
                (
                    model.text_embedding(&select_attributes(&e.commonsense, &[attr])),
                    i.label.index(),
                )
            })
            .collect();
        let corr = match correlate_attributes(&samples) {
            Err(Error::Sample { got, .. }) => Correlation {
                r: 0.0,
                samples: got,
                degenerate: true,
            },
            other => other?,
        };
        entries.push((attr, corr));
    }
    Ok(AttributeCorrelation { entries })
}

/// `speaker,text,gold,predicted` per instance.
pub fn prediction_table(instances: &[Instance], preds: &[Prediction]) -> String {
    let mut out = csv_row(&["id", "speaker", "text", "gold", "predicted"]);
    for (inst, p) in instances.iter().zip(preds) {
        out.push_str(&csv_row(&[
            &p.id,
            &inst.target.speaker,
            &inst.target.text,
            p.gold.name(),
            p.predicted.name(),
        ]));
    }
    out
}

/// `instance_id,mean_lambda_k,mean_lambda_v` for predictions that carry λ.
pub fn lambda_table(preds: &[Prediction]) -> String {
    let mut out = String::from("instance_id,mean_lambda_k,mean_lambda_v\n");
    for p in preds {
        if let Some((k, v)) = p.lambda {
            out.push_str(&csv_row(&[&p.id, &format!("{k:.6}"), &format!("{v:.6}")]));
        }
    }
    out
}

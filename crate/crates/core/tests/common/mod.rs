//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use coffee_core::data::{load_corpus, make_instances, Dialogue, NUM_CLASSES};
use coffee_core::encoder::{build_vocab_with, EncoderConfig};
use coffee_core::extract::{
    select_attributes, CometClient, CsCache, Lexicons, Pipeline, QueryMode, DEFAULT_SELECTION,
};
use coffee_core::fusion::{FusionParams, FusionStrategy};
use coffee_core::model::{Model, ModelConfig};
use coffee_core::params::ParamStore;
use coffee_core::tensor::{Rng, Tensor};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("assets/fixtures")
        .join(name)
}

pub fn fixture_corpus() -> Vec<Dialogue> {
    load_corpus(&fixture("corpus.jsonl")).unwrap()
}

pub fn walkthrough() -> Vec<Dialogue> {
    load_corpus(&fixture("walkthrough.jsonl")).unwrap()
}

pub fn fixture_client() -> CometClient {
    CometClient::fixture(&fixture("comet.json")).unwrap()
}

/// Commonsense cache for `corpus` from the bundled generator fixtures.
pub fn fixture_cache(corpus: &[Dialogue]) -> CsCache {
    let mut cache = CsCache::default();
    let insts = make_instances(corpus, 5).unwrap();
    cache
        .extend(
            &insts,
            &Pipeline::new(Lexicons::bundled()),
            &fixture_client(),
            QueryMode::Joint,
        )
        .unwrap();
    cache
}

/// Five-stage trace plus the generator response for every utterance of the walkthrough dialogue.
pub fn golden_pipeline() -> String {
    let pipeline = Pipeline::new(Lexicons::bundled());
    let client = fixture_client();
    let rows: Vec<serde_json::Value> = walkthrough()[0]
        .utterances
        .iter()
        .map(|u| {
            let trace = pipeline.run(&u.text);
            let commonsense = client.query(&trace.topics).unwrap();
            serde_json::json!({ "trace": trace, "commonsense": commonsense })
        })
        .collect();
    serde_json::to_string_pretty(&rows).unwrap() + "\n"
}

pub fn tiny_encoder(seed: u64) -> EncoderConfig {
    EncoderConfig {
        d: 8,
        layers: 1,
        heads: 2,
        max_n: 12,
        max_m: 6,
        dropout: 0.0,
        seed,
    }
}

/// A small coffee model over the walkthrough dialogue with its cache.
pub fn tiny_model(
    seed: u64,
    strategy: FusionStrategy,
) -> (Model, Vec<coffee_core::data::Instance>, CsCache) {
    let corpus = walkthrough();
    let cache = fixture_cache(&corpus);
    let insts = make_instances(&corpus, 5).unwrap();
    let mut train_like = corpus.clone();
    for d in &mut train_like {
        d.split = coffee_core::data::Split::Train;
    }
    let cs_texts: Vec<String> = insts
        .iter()
        .map(|i| select_attributes(&cache.get(&i.id).unwrap().commonsense, &DEFAULT_SELECTION))
        .collect();
    let vocab = build_vocab_with(&train_like, cs_texts.iter().map(String::as_str), 1).unwrap();
    let config = ModelConfig {
        encoder: tiny_encoder(seed),
        strategy,
        ..ModelConfig::default()
    };
    (Model::new(config, vocab).unwrap(), insts, cache)
}

// ---------------------------------------------------------------------
// Straight-line fusion oracle on nested vectors.

pub type M = Vec<Vec<f64>>;

fn mm(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn attention(q: &M, k: &M, v: &M, d: usize) -> M {
    let mut out = Vec::with_capacity(q.len());
    for qi in q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut row = vec![0.0; v[0].len()];
        for (w, vj) in e.iter().zip(v) {
            for (r, x) in row.iter_mut().zip(vj) {
                *r += w / z * x;
            }
        }
        out.push(row);
    }
    out
}

pub struct OracleParams {
    pub w_q: M,
    pub w_k: M,
    pub w_v: M,
    pub u_k: M,
    pub u_v: M,
    pub w_k1: M,
    pub w_k2: M,
    pub w_v1: M,
    pub w_v2: M,
    pub gate_w: M,
    pub gate_b: M,
}

impl OracleParams {
    pub fn from_store(store: &ParamStore, p: &FusionParams) -> Self {
        let r = |id| store.get(id).to_rows();
        Self {
            w_q: r(p.w_q),
            w_k: r(p.w_k),
            w_v: r(p.w_v),
            u_k: r(p.u_k),
            u_v: r(p.u_v),
            w_k1: r(p.w_k1),
            w_k2: r(p.w_k2),
            w_v1: r(p.w_v1),
            w_v2: r(p.w_v2),
            gate_w: r(p.gate_w),
            gate_b: r(p.gate_b),
        }
    }
}

/// Returns `(K̂, λ)` for one of the key/value streams.
pub fn oracle_infuse(x: &M, c: &[f64], u: &M, w1: &M, w2: &M) -> (M, Vec<f64>) {
    let d = c.len();
    let cu: Vec<f64> = (0..d)
        .map(|j| (0..d).map(|t| c[t] * u[t][j]).sum())
        .collect();
    let ctx: f64 = (0..d).map(|t| cu[t] * w2[t][0]).sum();
    let mut hat = Vec::new();
    let mut lambdas = Vec::new();
    for row in x {
        let own: f64 = (0..d).map(|t| row[t] * w1[t][0]).sum();
        let l = sig(own + ctx);
        hat.push((0..d).map(|j| (1.0 - l) * row[j] + l * cu[j]).collect());
        lambdas.push(l);
    }
    (hat, lambdas)
}

pub fn oracle_pool(dcs: &M) -> Vec<f64> {
    let d = dcs[0].len();
    (0..d)
        .map(|j| dcs.iter().map(|r| r[j]).sum::<f64>() / dcs.len() as f64)
        .collect()
}

pub fn oracle_fuse(strategy: FusionStrategy, p: &OracleParams, dc: &M, dcs: &M) -> M {
    let d = dc[0].len();
    match strategy {
        FusionStrategy::None | FusionStrategy::Concat => dc.clone(),
        FusionStrategy::Dpa => {
            let att = attention(&mm(dc, &p.w_q), &mm(dcs, &p.w_k), &mm(dcs, &p.w_v), d);
            dc.iter()
                .zip(&att)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect()
        }
        FusionStrategy::Coffee => {
            let (q, k, v) = (mm(dc, &p.w_q), mm(dc, &p.w_k), mm(dc, &p.w_v));
            let c = oracle_pool(dcs);
            let (k_hat, _) = oracle_infuse(&k, &c, &p.u_k, &p.w_k1, &p.w_k2);
            let (v_hat, _) = oracle_infuse(&v, &c, &p.u_v, &p.w_v1, &p.w_v2);
            let hat = attention(&q, &k_hat, &v_hat, d);
            let mut out = Vec::new();
            for (a, b) in dc.iter().zip(&hat) {
                let cat: Vec<f64> = a.iter().chain(b).copied().collect();
                let row: Vec<f64> = (0..d)
                    .map(|j| {
                        let z: f64 = (0..2 * d).map(|t| cat[t] * p.gate_w[t][j]).sum::<f64>()
                            + p.gate_b[0][j];
                        a[j] + sig(z) * b[j]
                    })
                    .collect();
                out.push(row);
            }
            out
        }
    }
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-scale, scale))
        .collect();
    Tensor::new(&[rows, cols], data).unwrap()
}

/// Fusion parameters with every entry drawn uniformly from `[-scale, scale]`.
pub fn random_fusion_params(d: usize, scale: f64, rng: &mut Rng) -> (ParamStore, FusionParams) {
    let mut store = ParamStore::new();
    let p = FusionParams::init(&mut store, d, rng);
    for id in p.ids() {
        let t = store.get_mut(id);
        for v in t.data_mut() {
            *v = rng.uniform(-scale, scale);
        }
    }
    (store, p)
}

// ---------------------------------------------------------------------
// Brute-force metric oracle.

pub struct BruteMetrics {
    pub f1: [f64; NUM_CLASSES],
    pub weighted: f64,
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

pub fn brute_metrics(gold: &[usize], pred: &[usize]) -> BruteMetrics {
    let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
    let mut f1 = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for i in 0..gold.len() {
            match (gold[i] == c, pred[i] == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        f1[c] = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        for (p, cell) in confusion[c].iter_mut().enumerate() {
            *cell = (0..gold.len())
                .filter(|&i| gold[i] == c && pred[i] == p)
                .count();
        }
    }
    let weighted = (0..NUM_CLASSES)
        .map(|c| gold.iter().filter(|&&g| g == c).count() as f64 * f1[c])
        .sum::<f64>()
        / gold.len() as f64;
    BruteMetrics {
        f1,
        weighted,
        confusion,
    }
}

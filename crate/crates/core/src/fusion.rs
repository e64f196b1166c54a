//! Commonsense fusion: context-aware attention with commonsense-infused keys
//! and values, a sigmoid fusion gate, and the comparison strategies.
//!
//! For `D_c` (n×d) and `D_cs` (m×d):
//!
//! ```text
//! Q, K, V = D_c·W_Q, D_c·W_K, D_c·W_V
//! c       = mean over unpadded rows of D_cs           (1×d)
//! C_k     = broadcast(c·U_k, n)
//! λ_k     = σ(K·W_k1 + broadcast(c·U_k·W_k2, n))      (n×1)
//! K̂       = (1 − λ_k) ⊙ K + λ_k ⊙ C_k                  (V̂ likewise)
//! D̂_c     = softmax(Q·K̂ᵀ/√d + mask)·V̂
//! g       = σ([D_c ⊕ D̂_c]·W + b)
//! fused   = D_c + g ⊙ D̂_c
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::mask_bias;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    #[default]
    Coffee,
    Concat,
    Dpa,
    None,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::None,
        FusionStrategy::Concat,
        FusionStrategy::Dpa,
        FusionStrategy::Coffee,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Coffee => "coffee",
            FusionStrategy::Concat => "concat",
            FusionStrategy::Dpa => "dpa",
            FusionStrategy::None => "none",
        }
    }

    /// Whether the strategy consumes commonsense at all.
    pub fn uses_commonsense(self) -> bool {
        self != FusionStrategy::None
    }

    /// Commonsense text goes into the dialogue encoder input.
    pub fn prepends_text(self) -> bool {
        self == FusionStrategy::Concat
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionStrategy::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::Strategy(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub u_k: ParamId,
    pub u_v: ParamId,
    pub w_k1: ParamId,
    pub w_k2: ParamId,
    pub w_v1: ParamId,
    pub w_v2: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub d_k: usize,
}

impl FusionParams {
    pub fn init(store: &mut ParamStore, d: usize, rng: &mut Rng) -> Self {
        let mut add = |name: &str, t: Tensor| store.add(format!("fusion.{name}"), t);
        Self {
            w_q: add("w_q", Tensor::xavier(d, d, rng)),
            w_k: add("w_k", Tensor::xavier(d, d, rng)),
            w_v: add("w_v", Tensor::xavier(d, d, rng)),
            u_k: add("u_k", Tensor::xavier(d, d, rng)),
            u_v: add("u_v", Tensor::xavier(d, d, rng)),
            w_k1: add("w_k1", Tensor::xavier(d, 1, rng)),
            w_k2: add("w_k2", Tensor::xavier(d, 1, rng)),
            w_v1: add("w_v1", Tensor::xavier(d, 1, rng)),
            w_v2: add("w_v2", Tensor::xavier(d, 1, rng)),
            gate_w: add("gate_w", Tensor::xavier(2 * d, d, rng)),
            gate_b: add("gate_b", Tensor::zeros(&[1, d])),
            d_k: d,
        }
    }

    pub fn ids(&self) -> [ParamId; 11] {
        [
            self.w_q,
            self.w_k,
            self.w_v,
            self.u_k,
            self.u_v,
            self.w_k1,
            self.w_k2,
            self.w_v1,
            self.w_v2,
            self.gate_w,
            self.gate_b,
        ]
    }

    /// Check every shape against model width `d`.
    pub fn validate(&self, store: &ParamStore, d: usize) -> Result<()> {
        let want: [(ParamId, [usize; 2]); 11] = [
            (self.w_q, [d, d]),
            (self.w_k, [d, d]),
            (self.w_v, [d, d]),
            (self.u_k, [d, d]),
            (self.u_v, [d, d]),
            (self.w_k1, [d, 1]),
            (self.w_k2, [d, 1]),
            (self.w_v1, [d, 1]),
            (self.w_v2, [d, 1]),
            (self.gate_w, [2 * d, d]),
            (self.gate_b, [1, d]),
        ];
        for (id, shape) in want {
            let t = store.get(id);
            if t.shape() != shape {
                return Err(Error::dim("fusion params", t.shape(), &shape));
            }
        }
        if self.d_k != d {
            return Err(Error::Contract(format!(
                "d_k {} differs from d {d}",
                self.d_k
            )));
        }
        Ok(())
    }
}

pub fn compute_qkv(
    g: &mut Graph,
    store: &ParamStore,
    p: &FusionParams,
    d_c: Var,
) -> Result<(Var, Var, Var)> {
    let (wq, wk, wv) = (
        g.param(store, p.w_q)?,
        g.param(store, p.w_k)?,
        g.param(store, p.w_v)?,
    );
    Ok((g.matmul(d_c, wq)?, g.matmul(d_c, wk)?, g.matmul(d_c, wv)?))
}

/// Mean of the unpadded rows.
fn pooled(g: &mut Graph, x: Var, pad_mask: &[bool]) -> Result<Var> {
    let (m, _) = g.shape(x);
    if m == 0 {
        return Err(Error::EmptyInput(
            "commonsense representation has no rows".into(),
        ));
    }
    if pad_mask.len() != m {
        return Err(Error::dim("pad_mask", &[pad_mask.len()], &[m]));
    }
    let len = pad_mask.iter().take_while(|p| !**p).count();
    if len == 0 || pad_mask[len..].iter().any(|p| !*p) {
        return Err(Error::Contract(
            "commonsense padding must be a non-empty prefix".into(),
        ));
    }
    let real = g.slice_rows(x, 0, len)?;
    g.mean_rows(real)
}

#[derive(Debug, Clone, Copy)]
pub struct Infused {
    pub k_hat: Var,
    pub v_hat: Var,
    pub lambda_k: Var,
    pub lambda_v: Var,
    /// Broadcast commonsense terms `C_k`, `C_v`.
    pub c_k: Var,
    pub c_v: Var,
}

fn infuse_one(g: &mut Graph, x: Var, c: Var, u: Var, w1: Var, w2: Var) -> Result<(Var, Var, Var)> {
    let (n, _) = g.shape(x);
    let cu = g.matmul(c, u)?;
    let c_full = g.broadcast_rows(cu, n)?;
    let own = g.matmul(x, w1)?;
    let ctx = g.matmul(cu, w2)?;
    let ctx = g.broadcast_rows(ctx, n)?;
    let logit = g.add(own, ctx)?;
    let lambda = g.sigmoid(logit)?;
    let keep = g.one_minus(lambda)?;
    let a = g.mul_col(x, keep)?;
    let b = g.mul_col(c_full, lambda)?;
    Ok((g.add(a, b)?, lambda, c_full))
}

/// Blend K and V with the pooled commonsense representation.
pub fn infuse_kv(
    g: &mut Graph,
    store: &ParamStore,
    p: &FusionParams,
    k: Var,
    v: Var,
    d_cs: Var,
    cs_pad_mask: &[bool],
) -> Result<Infused> {
    let c = pooled(g, d_cs, cs_pad_mask)?;
    let (uk, wk1, wk2) = (
        g.param(store, p.u_k)?,
        g.param(store, p.w_k1)?,
        g.param(store, p.w_k2)?,
    );
    let (k_hat, lambda_k, c_k) = infuse_one(g, k, c, uk, wk1, wk2)?;
    let (uv, wv1, wv2) = (
        g.param(store, p.u_v)?,
        g.param(store, p.w_v1)?,
        g.param(store, p.w_v2)?,
    );
    let (v_hat, lambda_v, c_v) = infuse_one(g, v, c, uv, wv1, wv2)?;
    Ok(Infused {
        k_hat,
        v_hat,
        lambda_k,
        lambda_v,
        c_k,
        c_v,
    })
}

/// Scaled dot-product attention with padded keys masked out.
pub fn context_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    d_k: usize,
    key_pad_mask: &[bool],
) -> Result<Var> {
    let (nk, _) = g.shape(k);
    if key_pad_mask.len() != nk {
        return Err(Error::dim("key_pad_mask", &[key_pad_mask.len()], &[nk]));
    }
    if key_pad_mask.iter().all(|p| *p) {
        return Err(Error::Contract("all key positions are masked".into()));
    }
    let s = g.matmul_bt(q, k)?;
    let s = g.scale(s, 1.0 / (d_k as f64).sqrt())?;
    let bias = mask_bias(g, key_pad_mask)?;
    let s = g.add_row(s, bias)?;
    let a = g.softmax_rows(s)?;
    g.matmul(a, v)
}

pub fn fusion_gate(
    g: &mut Graph,
    store: &ParamStore,
    p: &FusionParams,
    d_c: Var,
    d_c_hat: Var,
) -> Result<Var> {
    let (sa, sb) = (g.shape(d_c), g.shape(d_c_hat));
    if sa != sb {
        return Err(Error::dim("fusion_gate", &[sa.0, sa.1], &[sb.0, sb.1]));
    }
    let (w, b) = (g.param(store, p.gate_w)?, g.param(store, p.gate_b)?);
    let cat = g.concat_cols(d_c, d_c_hat)?;
    let z = g.matmul(cat, w)?;
    let z = g.add_row(z, b)?;
    let gate = g.sigmoid(z)?;
    let gated = g.mul(gate, d_c_hat)?;
    g.add(d_c, gated)
}

#[derive(Debug, Clone, Copy)]
pub struct FuseOutput {
    pub fused: Var,
    /// `(λ_k, λ_v)` for the coffee strategy.
    pub lambdas: Option<(Var, Var)>,
}

/// Apply `strategy`. `concat` and `none` return `D_c` unchanged (concat
/// consumes its commonsense upstream as text).
#[allow(clippy::too_many_arguments)]
pub fn fuse(
    g: &mut Graph,
    store: &ParamStore,
    strategy: FusionStrategy,
    p: &FusionParams,
    d_c: Var,
    dc_pad_mask: &[bool],
    d_cs: Option<Var>,
    cs_pad_mask: &[bool],
) -> Result<FuseOutput> {
    let need_cs = || {
        d_cs.ok_or_else(|| {
            Error::Integrity(format!(
                "strategy {strategy} needs a commonsense representation"
            ))
        })
    };
    match strategy {
        FusionStrategy::None | FusionStrategy::Concat => Ok(FuseOutput {
            fused: d_c,
            lambdas: None,
        }),
        FusionStrategy::Dpa => {
            let d_cs = need_cs()?;
            let (wq, wk, wv) = (
                g.param(store, p.w_q)?,
                g.param(store, p.w_k)?,
                g.param(store, p.w_v)?,
            );
            let q = g.matmul(d_c, wq)?;
            let k = g.matmul(d_cs, wk)?;
            let v = g.matmul(d_cs, wv)?;
            let att = context_attention(g, q, k, v, p.d_k, cs_pad_mask)?;
            Ok(FuseOutput {
                fused: g.add(d_c, att)?,
                lambdas: None,
            })
        }
        FusionStrategy::Coffee => {
            let d_cs = need_cs()?;
            let (q, k, v) = compute_qkv(g, store, p, d_c)?;
            let inf = infuse_kv(g, store, p, k, v, d_cs, cs_pad_mask)?;
            let d_c_hat = context_attention(g, q, inf.k_hat, inf.v_hat, p.d_k, dc_pad_mask)?;
            Ok(FuseOutput {
                fused: fusion_gate(g, store, p, d_c, d_c_hat)?,
                lambdas: Some((inf.lambda_k, inf.lambda_v)),
            })
        }
    }
}

/// Mean λ over unpadded rows.
pub fn mean_lambda(g: &Graph, lambda: Var, pad_mask: &[bool]) -> f64 {
    let vals: Vec<f64> = g
        .data(lambda)
        .iter()
        .zip(pad_mask)
        .filter(|(_, p)| !**p)
        .map(|(v, _)| *v)
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn params(d: usize, seed: u64) -> (ParamStore, FusionParams) {
        let mut store = ParamStore::new();
        let p = FusionParams::init(&mut store, d, &mut Rng::new(seed));
        (store, p)
    }

    fn assign(store: &mut ParamStore, id: ParamId, v: &[f64]) {
        store.get_mut(id).data_mut().copy_from_slice(v);
    }

    #[test]
    fn qkv_examples() {
        let (mut store, p) = params(2, 1);
        for id in [p.w_q, p.w_k, p.w_v] {
            assign(&mut store, id, &[1.0, 0.0, 0.0, 1.0]);
        }
        let mut g = Graph::new();
        let dc = g.constant(&t(&[&[1.0, 2.0], &[-3.0, 0.5]])).unwrap();
        let (q, k, v) = compute_qkv(&mut g, &store, &p, dc).unwrap();
        for x in [q, k, v] {
            assert_eq!(g.data(x), g.data(dc));
        }

        assign(&mut store, p.w_q, &[1.0, 0.0, 1.0, 1.0]);
        let mut g = Graph::new();
        let dc = g.constant(&t(&[&[1.0, 2.0]])).unwrap();
        let (q, _, _) = compute_qkv(&mut g, &store, &p, dc).unwrap();
        assert_eq!(g.data(q), [3.0, 2.0]);

        for id in [p.w_q, p.w_k, p.w_v] {
            assign(&mut store, id, &[0.0; 4]);
        }
        let mut g = Graph::new();
        let dc = g.constant(&t(&[&[1.0, 2.0]])).unwrap();
        let (q, k, v) = compute_qkv(&mut g, &store, &p, dc).unwrap();
        for x in [q, k, v] {
            assert!(g.data(x).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn infuse_hand_example() {
        let (mut store, p) = params(1, 2);
        assign(&mut store, p.u_k, &[1.0]);
        assign(&mut store, p.w_k1, &[0.0]);
        assign(&mut store, p.w_k2, &[0.0]);
        let mut g = Graph::new();
        let k = g.constant(&t(&[&[2.0]])).unwrap();
        let v = g.constant(&t(&[&[2.0]])).unwrap();
        let cs = g.constant(&t(&[&[1.0]])).unwrap();
        let inf = infuse_kv(&mut g, &store, &p, k, v, cs, &[false]).unwrap();
        assert_eq!(g.data(inf.lambda_k), [0.5]);
        assert_eq!(g.data(inf.k_hat), [1.5]);
    }

    #[test]
    fn infuse_zero_commonsense() {
        let (mut store, p) = params(2, 3);
        assign(&mut store, p.u_k, &[1.0, 0.0, 0.0, 1.0]);
        let mut g = Graph::new();
        let k = g.constant(&t(&[&[1.0, -2.0], &[0.5, 3.0]])).unwrap();
        let cs = g.constant(&Tensor::zeros(&[3, 2])).unwrap();
        let inf = infuse_kv(&mut g, &store, &p, k, k, cs, &[false, false, true]).unwrap();
        let w1 = store.get(p.w_k1).data().to_vec();
        for r in 0..2 {
            let krow = &g.data(k)[r * 2..r * 2 + 2];
            let lam = 1.0 / (1.0 + (-(krow[0] * w1[0] + krow[1] * w1[1])).exp());
            assert!((g.data(inf.lambda_k)[r] - lam).abs() < 1e-15);
            for (c, kc) in krow.iter().enumerate() {
                assert!((g.data(inf.k_hat)[r * 2 + c] - (1.0 - lam) * kc).abs() < 1e-15);
            }
        }
        let none = g.constant(&Tensor::zeros(&[0, 2])).unwrap();
        assert!(matches!(
            infuse_kv(&mut g, &store, &p, k, k, none, &[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn attention_examples() {
        let mut g = Graph::new();
        let q = g.constant(&t(&[&[1.0], &[0.0]])).unwrap();
        let k = g.constant(&t(&[&[1.0], &[0.0]])).unwrap();
        let v = g.constant(&t(&[&[10.0], &[20.0]])).unwrap();
        let out = context_attention(&mut g, q, k, v, 1, &[false, false]).unwrap();
        let w = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((g.data(out)[0] - (10.0 * w + 20.0 * (1.0 - w))).abs() < 1e-12);
        assert!((g.data(out)[0] - 12.689).abs() < 1e-3);
        assert!((g.data(out)[1] - 15.0).abs() < 1e-12);

        // masked second key: all weight on the first
        let out = context_attention(&mut g, q, k, v, 1, &[false, true]).unwrap();
        assert_eq!(g.data(out), [10.0, 10.0]);
        assert!(matches!(
            context_attention(&mut g, q, k, v, 1, &[true, true]),
            Err(Error::Contract(_))
        ));

        let single = g.constant(&t(&[&[4.0, -1.0]])).unwrap();
        let out = context_attention(&mut g, single, single, single, 2, &[false]).unwrap();
        assert_eq!(g.data(out), [4.0, -1.0]);
    }

    #[test]
    fn gate_examples() {
        let (mut store, p) = params(1, 4);
        assign(&mut store, p.gate_w, &[0.0, 0.0]);
        assign(&mut store, p.gate_b, &[0.0]);
        let mut g = Graph::new();
        let dc = g.constant(&t(&[&[1.0]])).unwrap();
        let hat = g.constant(&t(&[&[2.0]])).unwrap();
        let o = fusion_gate(&mut g, &store, &p, dc, hat).unwrap();
        assert_eq!(g.data(o), [2.0]);
        assign(&mut store, p.gate_b, &[-40.0]);
        let mut g = Graph::new();
        let dc = g.constant(&t(&[&[1.0]])).unwrap();
        let hat = g.constant(&t(&[&[2.0]])).unwrap();
        let o = fusion_gate(&mut g, &store, &p, dc, hat).unwrap();
        assert!((g.data(o)[0] - 1.0).abs() < 1e-12);
        assign(&mut store, p.gate_b, &[40.0]);
        let mut g = Graph::new();
        let dc = g.constant(&t(&[&[1.0]])).unwrap();
        let hat = g.constant(&t(&[&[2.0]])).unwrap();
        let o = fusion_gate(&mut g, &store, &p, dc, hat).unwrap();
        assert!((g.data(o)[0] - 3.0).abs() < 1e-12);
        let two = g.constant(&t(&[&[1.0], &[2.0]])).unwrap();
        assert!(matches!(
            fusion_gate(&mut g, &store, &p, dc, two),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn strategy_dispatch() {
        let (mut store, p) = params(2, 5);
        let mut rng = Rng::new(9);
        let dc_t = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let cs_t = Tensor::uniform(&[1, 2], 1.0, &mut rng);
        let mut g = Graph::new();
        let dc = g.constant(&dc_t).unwrap();
        let cs = g.constant(&cs_t).unwrap();
        let mask = [false; 3];
        for s in [FusionStrategy::None, FusionStrategy::Concat] {
            let out = fuse(&mut g, &store, s, &p, dc, &mask, Some(cs), &[false]).unwrap();
            assert_eq!(g.data(out.fused), dc_t.data());
        }
        assert!(matches!(
            fuse(
                &mut g,
                &store,
                FusionStrategy::Dpa,
                &p,
                dc,
                &mask,
                None,
                &[]
            ),
            Err(Error::Integrity(_))
        ));

        // dpa with one commonsense row: output = D_c + (D_cs·W_V) on every row
        let out = fuse(
            &mut g,
            &store,
            FusionStrategy::Dpa,
            &p,
            dc,
            &mask,
            Some(cs),
            &[false],
        )
        .unwrap();
        let wv = store.get(p.w_v).clone();
        let proj = crate::tensor::matmul(&cs_t, &wv).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let want = dc_t.at(r, c) + proj.at(0, c);
                assert!((g.data(out.fused)[r * 2 + c] - want).abs() < 1e-12);
            }
        }

        assign(&mut store, p.gate_b, &[-40.0, -40.0]);
        let mut g = Graph::new();
        let dc = g.constant(&dc_t).unwrap();
        let cs = g.constant(&cs_t).unwrap();
        let out = fuse(
            &mut g,
            &store,
            FusionStrategy::Coffee,
            &p,
            dc,
            &mask,
            Some(cs),
            &[false],
        )
        .unwrap();
        let diff = g
            .data(out.fused)
            .iter()
            .zip(dc_t.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn strategy_names() {
        for s in FusionStrategy::ALL {
            assert_eq!(s.name().parse::<FusionStrategy>().unwrap(), s);
        }
        assert!(matches!(
            "gru".parse::<FusionStrategy>(),
            Err(Error::Strategy(_))
        ));
    }
}

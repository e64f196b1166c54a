//! Adam and the finite-difference gradient checker.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moment buffers are keyed by parameter position in
/// the store they were first stepped with.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update over every parameter in `store`. Every parameter must
    /// carry a gradient (call [`ParamStore::zero_grad`] before accumulating).
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, name, _)) = store.iter().find(|(_, _, t)| t.grad.is_none()) {
            return Err(Error::Contract(format!(
                "parameter `{name}` has no gradient"
            )));
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::Contract(
                "optimizer bound to a different parameter set".into(),
            ));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let ids: Vec<ParamId> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let t = store.get_mut(id);
            let grad = t.grad.take().expect("checked above");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, g)) in t.data_mut().iter_mut().zip(&grad).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.grad = Some(grad);
        }
        Ok(())
    }
}

pub const DEFAULT_GRAD_CHECK_EPS: f64 = 1e-5;

/// Per-coordinate relative error `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    Ok(())
}

/// Compare `analytic` against central differences of `f` around `theta`.
/// Returns the maximum relative error over all coordinates.
pub fn compare_with_finite_differences(
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    check_eps(eps)?;
    if theta.len() != analytic.len() {
        return Err(Error::dim("grad_check", &[theta.len()], &[analytic.len()]));
    }
    let base = f(theta)?;
    if base.to_bits() != f(theta)?.to_bits() {
        return Err(Error::Check("objective is not deterministic".into()));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let up = f(&probe)?;
        probe[i] = theta[i] - eps;
        let down = f(&probe)?;
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: Option<String>,
    pub coordinates: usize,
}

/// Check the gradients of a graph-built scalar objective with respect to
/// the parameters `ids` of `store`.
///
/// `build` must construct the loss from scratch on the supplied graph.
pub fn grad_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        Ok(g.scalar(loss))
    };

    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| vec![0.0; store.get(*id).numel()])
        .collect();
    for (pid, grad) in grads.param_grads() {
        if let Some(k) = ids.iter().position(|id| id == pid) {
            analytic[k].clone_from(grad);
        }
    }

    let base = g.scalar(loss);
    if base.to_bits() != eval(store)?.to_bits() {
        return Err(Error::Check("objective is not deterministic".into()));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        coordinates: 0,
    };
    for (k, id) in ids.iter().enumerate() {
        let n = store.get(*id).numel();
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let orig = store.get(*id).data()[i];
            store.get_mut(*id).data_mut()[i] = orig + eps;
            let up = eval(store);
            store.get_mut(*id).data_mut()[i] = orig - eps;
            let down = eval(store);
            store.get_mut(*id).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * eps);
            let err = relative_error(analytic[k][i], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(store.name(*id).to_string());
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

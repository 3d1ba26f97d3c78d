//! Per-BS proximal agent for the nonnegative mixed l(1,2) problem.
//!
//! The agent evaluates
//! `argmin_{v >= 0} w_p/2 ||v - s||^2 + 1/2 ||z - E v||^2 + lambda ||v||_{1,2}`
//! by ADMM, splitting the quadratic data term (`v`) from the regularizer and
//! constraint (`a`). `w_p = 1 / (sigma^2 zeta)` in consensus use; `w_p = 0`
//! gives the plain MAP estimate.

use crate::error::{Error, Result};
use crate::sensing::NormalSystem;
use faer::linalg::solvers::{Llt, Solve};
use faer::{Col, Mat, Side};
use serde::{Deserialize, Serialize};

/// Agent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxParams {
    pub lambda: f64,
    /// Fusion weight `zeta_l` in `(0, 1]`.
    pub zeta: f64,
    /// Consensus scale `sigma^2`.
    pub sigma2: f64,
    /// ADMM penalty `eta`.
    pub eta: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProxParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            zeta: 1.0,
            sigma2: 1.0,
            eta: 1.0,
            tol: 1e-8,
            max_iters: 2000,
        }
    }
}

impl ProxParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::invalid("zeta must lie in (0, 1]"));
        }
        if !(self.sigma2 > 0.0) || !(self.eta > 0.0) || !(self.tol > 0.0) {
            return Err(Error::invalid("sigma2, eta and tol must be positive"));
        }
        Ok(())
    }

    /// Weight `1 / (sigma^2 zeta)` of the proximity term.
    pub fn proximity_weight(&self) -> f64 {
        1.0 / (self.sigma2 * self.zeta)
    }
}

/// `sum_m sqrt(s_m^2 + s_{m+M}^2)`.
pub fn group_norm(s: &Col<f64>) -> f64 {
    let m = s.nrows() / 2;
    (0..m).map(|i| s[i].hypot(s[i + m])).sum()
}

/// Largest per-pixel group norm of `s`.
pub fn max_group_norm(s: &Col<f64>) -> f64 {
    let m = s.nrows() / 2;
    (0..m).map(|i| s[i].hypot(s[i + m])).fold(0.0, f64::max)
}

/// `0.5 ||z - E s||^2 + lambda ||s||_{1,2}` for `s >= 0`.
pub fn map_cost(e: &Mat<f64>, z: &Col<f64>, s: &Col<f64>, lambda: f64) -> Result<f64> {
    if e.nrows() != z.nrows() || e.ncols() != s.nrows() || s.nrows() % 2 != 0 {
        return Err(Error::dims("map_cost: inconsistent shapes"));
    }
    if s.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("map_cost: property vector must be non-negative"));
    }
    let r = z - e * s;
    Ok(0.5 * r.squared_norm_l2() + lambda * group_norm(s))
}

/// Same cost from the normal-equation form.
pub fn map_cost_normal(sys: &NormalSystem, s: &Col<f64>, lambda: f64) -> f64 {
    sys.data_misfit(s) + lambda * group_norm(s)
}

/// Group shrinkage followed by a nonnegative clamp:
/// `max{0, (1 - tau / max(||c||, tau)) c}`.
pub fn group_threshold(c: [f64; 2], tau: f64) -> [f64; 2] {
    let n = c[0].hypot(c[1]);
    let denom = n.max(tau);
    let f = if denom > 0.0 { 1.0 - tau / denom } else { 0.0 };
    [(f * c[0]).max(0.0), (f * c[1]).max(0.0)]
}

/// Exact proximal map of `tau ||a||_2` plus the indicator of `a >= 0`.
///
/// Projecting onto the orthant first and then shrinking is the true prox
/// (shrinking first and clamping is not, e.g. for `c = (-3, 4)`).
pub fn nonneg_group_prox(c: [f64; 2], tau: f64) -> [f64; 2] {
    group_threshold([c[0].max(0.0), c[1].max(0.0)], tau)
}

/// ADMM iterates carried between calls for warm starts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub a: Col<f64>,
    pub b: Col<f64>,
}

impl AdmmState {
    pub fn zeros(n: usize) -> Self {
        Self {
            a: Col::zeros(n),
            b: Col::zeros(n),
        }
    }
}

/// Result of one proximal evaluation.
#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub s: Col<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// One BS's agent with its cached `E^T E + I / eta` factorization.
pub struct ProxAgent {
    system: NormalSystem,
    params: ProxParams,
    factor: Llt<f64>,
}

impl ProxAgent {
    pub fn new(system: NormalSystem, params: ProxParams) -> Result<Self> {
        params.validate()?;
        if !system.gram.is_all_finite() || !system.rhs.is_all_finite() {
            return Err(Error::NonFinite("sensing normal equations"));
        }
        if system.dim() % 2 != 0 || system.gram.nrows() != system.dim() {
            return Err(Error::dims("normal system must be square with even size"));
        }
        let n = system.dim();
        let shifted = Mat::from_fn(n, n, |r, c| {
            // Symmetrize explicitly; accumulated Grams can drift by rounding.
            let v = 0.5 * (system.gram[(r, c)] + system.gram[(c, r)]);
            if r == c {
                v + 1.0 / params.eta
            } else {
                v
            }
        });
        let factor = shifted
            .llt(Side::Lower)
            .map_err(|_| Error::IllConditioned { condition: f64::INFINITY })?;
        Ok(Self { system, params, factor })
    }

    pub fn params(&self) -> &ProxParams {
        &self.params
    }

    pub fn system(&self) -> &NormalSystem {
        &self.system
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// The proximal map `F_l(s_ref)`.
    pub fn prox(&self, s_ref: &Col<f64>, warm: Option<&mut AdmmState>) -> Result<ProxOutput> {
        self.solve(s_ref, self.params.proximity_weight(), warm)
    }

    /// `argmin_{v >= 0} h_l(v)` (no proximity term).
    pub fn map_estimate(&self, warm: Option<&mut AdmmState>) -> Result<ProxOutput> {
        let zero = Col::zeros(self.dim());
        self.solve(&zero, 0.0, warm)
    }

    /// ADMM on `w_p/2 ||v - s_ref||^2 + h_l(v)` over `v >= 0`.
    pub fn solve(&self, s_ref: &Col<f64>, w_p: f64, warm: Option<&mut AdmmState>) -> Result<ProxOutput> {
        let n = self.dim();
        if s_ref.nrows() != n {
            return Err(Error::dims(format!("reference has {} entries, agent expects {n}", s_ref.nrows())));
        }
        if s_ref.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prox reference"));
        }
        let m = n / 2;
        let eta = self.params.eta;
        let inv_eta = 1.0 / eta;
        let denom = inv_eta + w_p;
        let tau = self.params.lambda / denom;
        let mut local = AdmmState::zeros(n);
        let state = match warm {
            Some(s) if s.a.nrows() == n => s,
            Some(s) => {
                *s = AdmmState::zeros(n);
                s
            }
            None => &mut local,
        };
        let mut v = Col::<f64>::zeros(n);
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..self.params.max_iters {
            iterations += 1;
            let rhs = Col::from_fn(n, |i| self.system.rhs[i] + (state.a[i] - eta * state.b[i]) * inv_eta);
            v = self.factor.solve(&rhs);
            let mut a_next = Col::<f64>::zeros(n);
            for i in 0..m {
                let c = |j: usize| ((v[j] + eta * state.b[j]) * inv_eta + w_p * s_ref[j]) / denom;
                let [x, y] = nonneg_group_prox([c(i), c(i + m)], tau);
                a_next[i] = x;
                a_next[i + m] = y;
            }
            let primal = (&v - &a_next).norm_l2();
            let change = (&a_next - &state.a).norm_l2();
            for i in 0..n {
                state.b[i] += (v[i] - a_next[i]) * inv_eta;
            }
            state.a = a_next;
            if !primal.is_finite() {
                return Err(Error::NonFinite("ADMM iterate"));
            }
            if primal.max(change) <= self.params.tol * (1.0 + state.a.norm_l2()) {
                converged = true;
                break;
            }
        }
        let _ = v;
        Ok(ProxOutput {
            s: state.a.clone(),
            iterations,
            converged,
        })
    }
}

/// Projected proximal gradient on `w_p/2 ||v - s_ref||^2 + h(v)`, `v >= 0`,
/// with fixed step `1 / Lipschitz`. Slow but simple; used as a reference.
pub fn proximal_gradient(
    system: &NormalSystem,
    s_ref: &Col<f64>,
    w_p: f64,
    lambda: f64,
    lipschitz: f64,
    iters: usize,
) -> Col<f64> {
    let n = system.dim();
    let m = n / 2;
    let step = 1.0 / lipschitz;
    let mut x = Col::<f64>::zeros(n);
    for _ in 0..iters {
        let grad = &(&system.gram * &x) - &system.rhs + (&x - s_ref) * faer::Scale(w_p);
        let y = &x - grad * faer::Scale(step);
        for i in 0..m {
            let [p, q] = nonneg_group_prox([y[i], y[i + m]], step * lambda);
            x[i] = p;
            x[i + m] = q;
        }
    }
    x
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn spectral_norm_sym(a: &Mat<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = Col::from_fn(n, |i| 1.0 + (i % 7) as f64 * 0.1);
    let mut est = 0.0;
    for _ in 0..iters {
        let y = a * &x;
        let ny = y.norm_l2();
        if ny == 0.0 {
            return 0.0;
        }
        est = ny / x.norm_l2();
        x = y * faer::Scale(1.0 / ny);
    }
    est
}

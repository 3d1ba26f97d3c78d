//! Low-coherence pilot design: per UE, subcarriers are designed in order by
//! projected gradient descent on the pattern Gram mismatch plus a penalty on
//! correlation with earlier subcarriers' patterns.

use crate::em::SubcarrierChannels;
use crate::error::{Error, Result};
use crate::scene::Scene;
use faer::{Mat, MatRef, Scale};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Transmit matrix `W` (`N_t x I`) and its pattern power scale `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    w: Mat<Complex64>,
    xi: f64,
}

impl PilotMatrix {
    pub fn new(w: Mat<Complex64>, xi: f64) -> Self {
        Self { w, xi }
    }

    pub fn w(&self) -> &Mat<Complex64> {
        &self.w
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn power(&self) -> f64 {
        self.w.squared_norm_l2()
    }
}

/// Pilots for every UE and subcarrier, stored UE-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSet {
    n_ue: usize,
    n_k: usize,
    blocks: Vec<PilotMatrix>,
}

impl PilotSet {
    pub fn new(n_ue: usize, n_k: usize, blocks: Vec<PilotMatrix>) -> Result<Self> {
        if n_ue == 0 || n_k == 0 || blocks.len() != n_ue * n_k {
            return Err(Error::dims(format!("expected {n_ue}x{n_k} pilot blocks, got {}", blocks.len())));
        }
        let (n_t, i) = (blocks[0].w.nrows(), blocks[0].w.ncols());
        if n_t == 0 || i == 0 || blocks.iter().any(|b| b.w.nrows() != n_t || b.w.ncols() != i) {
            return Err(Error::dims("pilot blocks must share one non-empty N_t x I shape"));
        }
        Ok(Self { n_ue, n_k, blocks })
    }

    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    pub fn n_k(&self) -> usize {
        self.n_k
    }

    pub fn n_t(&self) -> usize {
        self.blocks[0].w.nrows()
    }

    /// Pilot symbols per UE and subcarrier, `I`.
    pub fn symbols(&self) -> usize {
        self.blocks[0].w.ncols()
    }

    pub fn get(&self, u: usize, k: usize) -> &PilotMatrix {
        &self.blocks[u * self.n_k + k]
    }

    /// The first `k` subcarriers only.
    pub fn truncate_subcarriers(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_k {
            return Err(Error::invalid(format!("cannot keep {k} of {} subcarriers", self.n_k)));
        }
        let blocks = (0..self.n_ue)
            .flat_map(|u| (0..k).map(move |kk| (u, kk)))
            .map(|(u, kk)| self.get(u, kk).clone())
            .collect();
        Self::new(self.n_ue, k, blocks)
    }

    /// Verifies shapes and power budgets against a scene.
    pub fn check_against(&self, scene: &Scene) -> Result<()> {
        if self.n_ue != scene.ues.len() || self.n_k != scene.k() || self.n_t() != scene.n_t() {
            return Err(Error::dims(format!(
                "pilots are {} UE x {} subcarriers x {} antennas, scene has {} x {} x {}",
                self.n_ue,
                self.n_k,
                self.n_t(),
                scene.ues.len(),
                scene.k(),
                scene.n_t()
            )));
        }
        for (u, ue) in scene.ues.iter().enumerate() {
            for k in 0..self.n_k {
                let p = self.get(u, k).power();
                if !p.is_finite() || p > ue.power_budget * (1.0 + 1e-9) {
                    return Err(Error::Infeasible(format!(
                        "UE {u} subcarrier {k}: pilot power {p:.6e} exceeds budget {:.6e}",
                        ue.power_budget
                    )));
                }
            }
        }
        Ok(())
    }

    /// Text dump: an `EMPILOT 1` header, a `dims U K N_t I` line, then per
    /// block a `block u k xi` line followed by `N_t` rows of `I` (re, im)
    /// pairs. Floats use round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "EMPILOT 1");
        let _ = writeln!(out, "dims {} {} {} {}", self.n_ue, self.n_k, self.n_t(), self.symbols());
        for u in 0..self.n_ue {
            for k in 0..self.n_k {
                let b = self.get(u, k);
                let _ = writeln!(out, "block {u} {k} {}", b.xi);
                for r in 0..b.w.nrows() {
                    let row: Vec<String> = (0..b.w.ncols())
                        .map(|c| format!("{} {}", b.w[(r, c)].re, b.w[(r, c)].im))
                        .collect();
                    let _ = writeln!(out, "{}", row.join(" "));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("pilot file: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("EMPILOT 1") {
            return Err(bad("missing EMPILOT 1 header"));
        }
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad("missing dims line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad dims")))
            .collect::<Result<_>>()?;
        let [n_ue, n_k, n_t, n_i] = dims[..] else {
            return Err(bad("dims needs four values"));
        };
        let mut blocks = Vec::with_capacity(n_ue * n_k);
        for u in 0..n_ue {
            for k in 0..n_k {
                let head: Vec<&str> = lines.next().ok_or_else(|| bad("truncated"))?.split_whitespace().collect();
                if head.len() != 4 || head[0] != "block" || head[1] != u.to_string() || head[2] != k.to_string() {
                    return Err(bad(&format!("expected block {u} {k}")));
                }
                let xi: f64 = head[3].parse().map_err(|_| bad("bad xi"))?;
                let mut w = Mat::<Complex64>::zeros(n_t, n_i);
                for r in 0..n_t {
                    let vals: Vec<f64> = lines
                        .next()
                        .ok_or_else(|| bad("truncated"))?
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| bad("bad number")))
                        .collect::<Result<_>>()?;
                    if vals.len() != 2 * n_i {
                        return Err(bad("row length"));
                    }
                    for c in 0..n_i {
                        w[(r, c)] = Complex64::new(vals[2 * c], vals[2 * c + 1]);
                    }
                }
                blocks.push(PilotMatrix::new(w, xi));
            }
        }
        Self::new(n_ue, n_k, blocks)
    }
}

/// Knobs for the projected gradient design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotParams {
    /// Weight of the cross-subcarrier coherence term.
    pub gamma: f64,
    pub armijo_c: f64,
    pub armijo_beta: f64,
    pub initial_step: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub restarts: usize,
}

impl Default for PilotParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            armijo_c: 1e-4,
            armijo_beta: 0.5,
            initial_step: 1.0,
            max_iters: 500,
            rel_tol: 1e-8,
            restarts: 3,
        }
    }
}

impl PilotParams {
    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma must be non-negative"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) || !(self.armijo_beta > 0.0 && self.armijo_beta < 1.0) {
            return Err(Error::invalid("Armijo constants must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0) || self.restarts == 0 {
            return Err(Error::invalid("step and restart count must be positive"));
        }
        Ok(())
    }
}

/// `||W^H H1^H H1 W - xi I||_F^2 + gamma ||A^H H1 W||_F^2`.
pub fn pilot_objective(
    w: MatRef<'_, Complex64>,
    xi: f64,
    h1: MatRef<'_, Complex64>,
    a: Option<MatRef<'_, Complex64>>,
    gamma: f64,
) -> f64 {
    let hw = h1 * w;
    let mut gram = hw.adjoint() * &hw;
    for i in 0..gram.nrows() {
        gram[(i, i)] -= xi;
    }
    let cross = match a {
        Some(a) if gamma != 0.0 && a.ncols() > 0 => gamma * (a.adjoint() * &hw).squared_norm_l2(),
        _ => 0.0,
    };
    gram.squared_norm_l2() + cross
}

/// Conjugate Wirtinger derivative `df/dW*` of [`pilot_objective`]:
/// `2 H1^H H1 W (W^H H1^H H1 W - xi I) + gamma H1^H A A^H H1 W`.
///
/// The derivative along the real (imaginary) parts of `W` is twice the real
/// (imaginary) part of the result.
pub fn wirtinger_grad(
    w: MatRef<'_, Complex64>,
    xi: f64,
    h1: MatRef<'_, Complex64>,
    a: Option<MatRef<'_, Complex64>>,
    gamma: f64,
) -> Mat<Complex64> {
    let hw = h1 * w;
    let mut e = hw.adjoint() * &hw;
    for i in 0..e.nrows() {
        e[(i, i)] -= xi;
    }
    let mut g = (h1.adjoint() * (&hw * &e)) * Scale(Complex64::new(2.0, 0.0));
    if let Some(a) = a {
        if gamma != 0.0 && a.ncols() > 0 {
            let cross = h1.adjoint() * (a * (a.adjoint() * &hw));
            g += cross * Scale(Complex64::new(gamma, 0.0));
        }
    }
    g
}

/// Result of one subcarrier's design.
#[derive(Debug, Clone)]
pub struct PilotDesign {
    pub pilot: PilotMatrix,
    pub objective: f64,
    pub iterations: usize,
    /// Set when the minimum pattern power could not be reached.
    pub infeasible: bool,
    /// Objective after every accepted step of the winning restart.
    pub trace: Vec<f64>,
}

fn project_ball(w: &mut Mat<Complex64>, budget: f64) {
    let p = w.squared_norm_l2();
    if p > budget {
        *w = &*w * Scale(Complex64::new((budget / p).sqrt(), 0.0));
    }
}

fn update_xi(hw_energy: f64, min_power: f64, symbols: usize) -> (f64, bool) {
    let floor = min_power / symbols as f64;
    let free = hw_energy / symbols as f64;
    if free >= floor {
        (free, false)
    } else {
        (floor, true)
    }
}

/// Projected gradient design of one `W_{k,u}` with Armijo backtracking.
///
/// Internally `H1` and `A` are scaled by `1 / ||H1||_2` and `W` by
/// `1 / sqrt(P)` so the step size is dimensionless; the reported objective
/// is in original units.
pub fn pgd_design(
    h1: MatRef<'_, Complex64>,
    a: Option<MatRef<'_, Complex64>>,
    symbols: usize,
    power_budget: f64,
    min_region_power: f64,
    params: &PilotParams,
    rng: &mut ChaCha8Rng,
) -> Result<PilotDesign> {
    params.validate()?;
    if !(power_budget > 0.0) || !(min_region_power >= 0.0) || symbols == 0 {
        return Err(Error::invalid("power budget must be positive and symbols non-zero"));
    }
    if let Some(a) = a {
        if a.nrows() != h1.nrows() {
            return Err(Error::dims("coherence accumulator rows must match H1"));
        }
    }
    let n_t = h1.ncols();
    let h_norm = spectral_norm(h1);
    if !(h_norm > 0.0) || !h_norm.is_finite() {
        return Err(Error::NonFinite("UE radiation operator"));
    }
    let unit = Scale(Complex64::new(1.0 / h_norm, 0.0));
    let hn = h1 * unit;
    let wscale = power_budget.sqrt();
    let an = a.map(|a| a * Scale(Complex64::new(1.0 / (h_norm * wscale), 0.0)));
    let an_ref = an.as_ref().map(|m| m.as_ref());
    let units = (h_norm * h_norm * power_budget).powi(2);
    let pbar = min_region_power / (h_norm * h_norm * power_budget);
    let unreachable = pbar > 1.0 + 1e-12;

    let mut best: Option<PilotDesign> = None;
    for _ in 0..params.restarts {
        let mut w = Mat::<Complex64>::from_fn(n_t, symbols, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        });
        let n = w.norm_l2();
        w = &w * Scale(Complex64::new(1.0 / n, 0.0));
        let (mut xi, mut pinned) = update_xi((&hn * &w).squared_norm_l2(), pbar, symbols);
        let mut obj = pilot_objective(w.as_ref(), xi, hn.as_ref(), an_ref, params.gamma);
        let mut trace = vec![obj * units];
        let mut stalled = 0usize;
        let mut iterations = 0;
        for _ in 0..params.max_iters {
            iterations += 1;
            let g = wirtinger_grad(w.as_ref(), xi, hn.as_ref(), an_ref, params.gamma);
            let mut alpha = params.initial_step;
            let mut accepted = None;
            for _ in 0..60 {
                let mut cand = &w - &g * Scale(Complex64::new(alpha, 0.0));
                project_ball(&mut cand, 1.0);
                let step = (&cand - &w).squared_norm_l2();
                let cand_obj = pilot_objective(cand.as_ref(), xi, hn.as_ref(), an_ref, params.gamma);
                if cand_obj <= obj - params.armijo_c / alpha * step {
                    accepted = Some((cand, cand_obj));
                    break;
                }
                alpha *= params.armijo_beta;
            }
            let Some((next, next_obj)) = accepted else { break };
            let first_before = obj;
            w = next;
            let (nxi, npinned) = update_xi((&hn * &w).squared_norm_l2(), pbar, symbols);
            xi = nxi;
            pinned = npinned;
            let new_obj = pilot_objective(w.as_ref(), xi, hn.as_ref(), an_ref, params.gamma).min(next_obj);
            trace.push(new_obj * units);
            if pinned && first_before - new_obj <= 1e-12 * first_before.max(1e-300) {
                stalled += 1;
            } else {
                stalled = 0;
            }
            let rel = (obj - new_obj).abs() / obj.max(1e-300);
            obj = new_obj;
            if rel < params.rel_tol || obj == 0.0 {
                break;
            }
        }
        let design = PilotDesign {
            pilot: PilotMatrix::new(&w * Scale(Complex64::new(wscale, 0.0)), xi * h_norm * h_norm * power_budget),
            objective: obj * units,
            iterations,
            infeasible: unreachable || (pinned && stalled >= 50),
            trace,
        };
        if best.as_ref().is_none_or(|b| design.objective < b.objective) {
            best = Some(design);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub(crate) fn spectral_norm(a: MatRef<'_, Complex64>) -> f64 {
    let gram = if a.nrows() >= a.ncols() { a.adjoint() * a } else { a * a.adjoint() };
    match gram.self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(ev) => ev.iter().copied().fold(0.0, f64::max).sqrt(),
        Err(_) => f64::NAN,
    }
}

/// Designs one UE's pilots for all subcarriers in ascending order,
/// accumulating earlier patterns `H1_j W_j` into the coherence penalty.
pub fn design_all(
    h1_per_k: &[MatRef<'_, Complex64>],
    symbols: usize,
    power_budget: f64,
    min_region_power: f64,
    params: &PilotParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PilotDesign>> {
    let mut out = Vec::with_capacity(h1_per_k.len());
    let mut acc: Option<Mat<Complex64>> = None;
    for h1 in h1_per_k {
        let d = pgd_design(*h1, acc.as_ref().map(|a| a.as_ref()), symbols, power_budget, min_region_power, params, rng)?;
        let pattern = *h1 * d.pilot.w();
        acc = Some(match acc {
            None => pattern,
            Some(prev) => {
                let mut grown = Mat::<Complex64>::zeros(prev.nrows(), prev.ncols() + pattern.ncols());
                grown.as_mut().submatrix_mut(0, 0, prev.nrows(), prev.ncols()).copy_from(&prev);
                grown
                    .as_mut()
                    .submatrix_mut(0, prev.ncols(), prev.nrows(), pattern.ncols())
                    .copy_from(&pattern);
                grown
            }
        });
        out.push(d);
    }
    Ok(out)
}

/// Designed pilots for the whole scene plus per-block diagnostics.
#[derive(Debug, Clone)]
pub struct PilotReport {
    pub pilots: PilotSet,
    pub objectives: Vec<f64>,
    pub infeasible_blocks: usize,
}

/// Runs [`design_all`] for every UE; each UE has its own RNG stream.
pub fn design_pilots(
    scene: &Scene,
    channels: &[SubcarrierChannels],
    symbols: usize,
    params: &PilotParams,
    seed: u64,
) -> Result<PilotReport> {
    let mut blocks = Vec::new();
    let mut objectives = Vec::new();
    let mut infeasible_blocks = 0;
    for (u, ue) in scene.ues.iter().enumerate() {
        let h1: Vec<MatRef<'_, Complex64>> = channels.iter().map(|c| c.h1[u].as_ref()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u as u64);
        for d in design_all(&h1, symbols, ue.power_budget, ue.min_region_power, params, &mut rng)? {
            objectives.push(d.objective);
            infeasible_blocks += d.infeasible as usize;
            blocks.push(d.pilot);
        }
    }
    if infeasible_blocks > 0 {
        log::warn!("{infeasible_blocks} pilot blocks could not reach the minimum region power");
    }
    Ok(PilotReport {
        pilots: PilotSet::new(scene.ues.len(), scene.k(), blocks)?,
        objectives,
        infeasible_blocks,
    })
}

/// Random full-power pilots, the baseline the design is compared against.
pub fn random_pilots(scene: &Scene, symbols: usize, seed: u64) -> Result<PilotSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    for ue in &scene.ues {
        for _ in 0..scene.k() {
            let w = Mat::<Complex64>::from_fn(scene.n_t(), symbols, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            });
            let s = (ue.power_budget / w.squared_norm_l2()).sqrt();
            blocks.push(PilotMatrix::new(&w * Scale(Complex64::new(s, 0.0)), 0.0));
        }
    }
    PilotSet::new(scene.ues.len(), scene.k(), blocks)
}

/// Largest normalized inner product between distinct columns of `H1 W`.
pub fn max_coherence(h1: MatRef<'_, Complex64>, w: MatRef<'_, Complex64>) -> f64 {
    let hw = h1 * w;
    let gram = hw.adjoint() * &hw;
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..i {
            let denom = (gram[(i, i)].re * gram[(j, j)].re).sqrt();
            if denom > 0.0 {
                worst = worst.max(gram[(i, j)].norm() / denom);
            }
        }
    }
    worst
}

//! Consensus equilibrium across base stations.
//!
//! Each BS contributes a proximal agent `F_l`. The stacked agent operator
//! `F`, the averaging operator `G` and the reflections `2F - I`, `2G - I`
//! define `T = (2F - I)(2G - I)`, whose fixed point `Q*` gives the
//! consensus `s* = mean(F((2G - I) Q*))`. A Born-iterative outer loop
//! relinearizes the sensing systems around the current estimate.

use crate::error::{Error, Result};
use crate::harness::nmse_db;
use crate::sensing::{NormalSystem, SensingContext};
use crate::solver::{max_group_norm, spectral_norm_sym, AdmmState, ProxAgent, ProxParams};
use faer::{Col, Mat};
use serde::{Deserialize, Serialize};

/// Every column replaced by the column mean.
pub fn averaging(s: &Mat<f64>) -> Mat<f64> {
    let mean = column_mean(s);
    Mat::from_fn(s.nrows(), s.ncols(), |r, _| mean[r])
}

pub fn column_mean(s: &Mat<f64>) -> Col<f64> {
    let l = s.ncols() as f64;
    Col::from_fn(s.nrows(), |r| (0..s.ncols()).map(|c| s[(r, c)]).sum::<f64>() / l)
}

/// `(2G - I) Q`, right multiplication by `(2/L) 1 1^T - I`.
pub fn reflect_g(q: &Mat<f64>) -> Mat<f64> {
    let mean = column_mean(q);
    Mat::from_fn(q.nrows(), q.ncols(), |r, c| 2.0 * mean[r] - q[(r, c)])
}

/// `F(S)`: column `l` is agent `l`'s proximal map of column `l`.
///
/// Returns the outputs and the total number of ADMM iterations spent.
pub fn agent_apply(agents: &[ProxAgent], s: &Mat<f64>, warm: &mut [AdmmState]) -> Result<(Mat<f64>, usize)> {
    if agents.len() != s.ncols() || warm.len() != agents.len() {
        return Err(Error::dims(format!("{} agents for {} columns", agents.len(), s.ncols())));
    }
    let mut out = Mat::<f64>::zeros(s.nrows(), s.ncols());
    let mut admm = 0;
    for (l, agent) in agents.iter().enumerate() {
        let col = s.col(l).to_owned();
        let res = agent.prox(&col, Some(&mut warm[l])).map_err(|e| Error::Agent {
            index: l,
            source: Box::new(e),
        })?;
        if !res.converged {
            log::debug!("agent {l}: ADMM stopped after {} iterations without converging", res.iterations);
        }
        admm += res.iterations;
        out.col_mut(l).copy_from(&res.s);
    }
    Ok((out, admm))
}

/// Mann iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannParams {
    /// Relaxation `rho` in `(0, 1)`.
    pub rho: f64,
    /// Stop when `||Q^{k+1} - Q^k||_F < eps`.
    pub eps: f64,
    pub max_iters: usize,
}

impl MannParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.eps > 0.0) || self.max_iters == 0 {
            return Err(Error::invalid("eps and max_iters must be positive"));
        }
        Ok(())
    }
}

/// One `Q <- rho T(Q) + (1 - rho) Q` update.
pub struct MannStep {
    pub q: Mat<f64>,
    /// `F((2G - I) Q_old)`.
    pub agent_out: Mat<f64>,
    pub dq: f64,
    pub admm_iterations: usize,
}

pub fn mann_step(agents: &[ProxAgent], q: &Mat<f64>, rho: f64, warm: &mut [AdmmState]) -> Result<MannStep> {
    let v = reflect_g(q);
    let (x, admm_iterations) = agent_apply(agents, &v, warm)?;
    let q_next = Mat::from_fn(q.nrows(), q.ncols(), |r, c| {
        rho * (2.0 * x[(r, c)] - v[(r, c)]) + (1.0 - rho) * q[(r, c)]
    });
    let dq = (&q_next - q).norm_l2();
    Ok(MannStep {
        q: q_next,
        agent_out: x,
        dq,
        admm_iterations,
    })
}

/// Fixed point found by [`mann_solve`].
#[derive(Debug, Clone)]
pub struct MannOutcome {
    /// Consensus estimate, the column mean of `F(S*)`.
    pub s_star: Col<f64>,
    /// `S* = (2G - I) Q*`.
    pub s_mat: Mat<f64>,
    /// `F(S*)`.
    pub f_mat: Mat<f64>,
    pub q: Mat<f64>,
    /// `||Q^{k+1} - Q^k||_F` per iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||F(S*) - G(S*)||_F`.
    pub consensus_residual: f64,
    /// `||sum_l (F(S*) - S*)_l||_2`.
    pub force_imbalance: f64,
}

/// Runs the Mann iteration from `Q0 = (2G - I) S0`.
pub fn mann_solve(agents: &[ProxAgent], s0: &Mat<f64>, params: &MannParams, warm: &mut [AdmmState]) -> Result<MannOutcome> {
    mann_from_q(agents, reflect_g(s0), params, warm)
}

/// Runs the Mann iteration from a given `Q0`.
pub fn mann_from_q(agents: &[ProxAgent], q0: Mat<f64>, params: &MannParams, warm: &mut [AdmmState]) -> Result<MannOutcome> {
    params.validate()?;
    let mut q = q0;
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_iters {
        let step = mann_step(agents, &q, params.rho, warm)?;
        q = step.q;
        history.push(step.dq);
        if step.dq < params.eps {
            converged = true;
            break;
        }
    }
    finish(agents, q, history, converged, warm)
}

fn finish(agents: &[ProxAgent], q: Mat<f64>, history: Vec<f64>, converged: bool, warm: &mut [AdmmState]) -> Result<MannOutcome> {
    let s_mat = reflect_g(&q);
    let (f_mat, _) = agent_apply(agents, &s_mat, warm)?;
    let consensus_residual = (&f_mat - averaging(&s_mat)).norm_l2();
    let diff = &f_mat - &s_mat;
    let force_imbalance = (0..diff.nrows())
        .map(|r| (0..diff.ncols()).map(|c| diff[(r, c)]).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(MannOutcome {
        s_star: column_mean(&f_mat),
        iterations: history.len(),
        s_mat,
        f_mat,
        q,
        history,
        converged,
        consensus_residual,
        force_imbalance,
    })
}

/// When the sensing matrices are relinearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EUpdate {
    /// After every Mann iteration.
    EveryMannIteration,
    /// After each converged Mann solve (classic Born iterative method).
    PerMannSolve,
}

/// Which estimate each BS linearizes around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    ConsensusMean,
    PerBsColumn,
}

/// Settings for the fused reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    pub rho: f64,
    /// Mann tolerance; `None` means `1e-6 sqrt(2 M L)`.
    pub eps: Option<f64>,
    pub max_mann: usize,
    /// Number of linearizations (1 = Born only).
    pub n_bim: usize,
    pub eps_bim: f64,
    /// `lambda_l` as a fraction of `max_m ||(E_l^T z_l)_m||` at the Born step.
    pub lambda_fraction: f64,
    /// Absolute `lambda_l` on the normalized system; overrides the fraction.
    pub lambda: Option<f64>,
    pub sigma2: f64,
    pub eta: f64,
    pub admm_tol: f64,
    pub admm_max_iters: usize,
    pub schedule: EUpdate,
    pub estimate_source: EstimateSource,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            rho: 0.5,
            eps: None,
            max_mann: 200,
            n_bim: 5,
            eps_bim: 1e-3,
            lambda_fraction: 0.05,
            lambda: None,
            sigma2: 1.0,
            eta: 0.03,
            admm_tol: 1e-8,
            admm_max_iters: 2000,
            schedule: EUpdate::EveryMannIteration,
            estimate_source: EstimateSource::ConsensusMean,
        }
    }
}

impl FusionParams {
    /// Settings used by the desk-scale preset.
    pub fn desk() -> Self {
        Self {
            max_mann: 30,
            n_bim: 3,
            eps_bim: 1e-2,
            lambda_fraction: 0.02,
            admm_tol: 1e-6,
            admm_max_iters: 500,
            schedule: EUpdate::PerMannSolve,
            ..Self::default()
        }
    }
}

/// One row of the convergence log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub outer: usize,
    pub mann: usize,
    pub dq: f64,
    /// `0.5 ||z_l - E_l s_l||^2` of each agent's output, normalized units.
    pub fidelity: Vec<f64>,
    pub nmse_db: Option<f64>,
}

/// Fused reconstruction and bookkeeping.
#[derive(Debug, Clone)]
pub struct FusionResult {
    pub s_star: Col<f64>,
    /// Per-BS agent outputs at the final fixed point.
    pub columns: Mat<f64>,
    pub mann_iterations: usize,
    pub relinearizations: usize,
    /// Real numbers sent BS to CPU: `2 M` per Mann iteration.
    pub overhead: usize,
    pub converged: bool,
    pub lambdas: Vec<f64>,
    /// Consensus estimate after each outer pass.
    pub outer_estimates: Vec<Col<f64>>,
    pub log: Vec<LogRow>,
}

impl FusionResult {
    /// Convergence log as CSV.
    pub fn log_csv(&self) -> String {
        let n_bs = self.columns.ncols();
        let mut out = String::from("outer,mann,dq");
        for l in 0..n_bs {
            out.push_str(&format!(",fidelity_bs{l}"));
        }
        out.push_str(",nmse_db\n");
        for row in &self.log {
            out.push_str(&format!("{},{},{:e}", row.outer, row.mann, row.dq));
            for f in &row.fidelity {
                out.push_str(&format!(",{f:e}"));
            }
            match row.nmse_db {
                Some(v) => out.push_str(&format!(",{v}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

/// Ground truth for logging NMSE while iterating.
pub struct Truth<'a> {
    pub s: &'a Col<f64>,
}

struct Builder<'a, 'c> {
    ctx: &'a SensingContext<'c>,
    n_bs: usize,
    scale: f64,
    lambdas: Vec<f64>,
    params: &'a FusionParams,
}

impl Builder<'_, '_> {
    fn agents(&self, systems: Vec<NormalSystem>) -> Result<Vec<ProxAgent>> {
        let zeta = 1.0 / self.n_bs as f64;
        systems
            .into_iter()
            .enumerate()
            .map(|(l, mut sys)| {
                sys.scale(self.scale);
                let p = ProxParams {
                    lambda: self.lambdas[l],
                    zeta,
                    sigma2: self.params.sigma2,
                    eta: self.params.eta,
                    tol: self.params.admm_tol,
                    max_iters: self.params.admm_max_iters,
                };
                ProxAgent::new(sys, p).map_err(|e| Error::Agent { index: l, source: Box::new(e) })
            })
            .collect()
    }

    /// Systems linearized at `points`, retrying once halfway from `previous`
    /// if the scattering model is singular there.
    fn relinearize(&self, points: Vec<Col<f64>>, previous: &[Col<f64>]) -> Result<(Vec<ProxAgent>, Vec<Col<f64>>)> {
        let refs: Vec<Option<&Col<f64>>> = points.iter().map(Some).collect();
        match self.ctx.normal_systems(&refs) {
            Ok(sys) => Ok((self.agents(sys)?, points)),
            Err(Error::IllConditioned { condition }) => {
                log::warn!("scattering model singular at the update (condition {condition:.2e}); halving the step");
                let damped: Vec<Col<f64>> = points
                    .iter()
                    .zip(previous)
                    .map(|(p, q)| Col::from_fn(p.nrows(), |i| 0.5 * (p[i] + q[i])))
                    .collect();
                let refs: Vec<Option<&Col<f64>>> = damped.iter().map(Some).collect();
                let sys = self.ctx.normal_systems(&refs)?;
                Ok((self.agents(sys)?, damped))
            }
            Err(e) => Err(e),
        }
    }

    fn points_from(&self, s_mat: &Mat<f64>) -> Vec<Col<f64>> {
        match self.params.estimate_source {
            EstimateSource::ConsensusMean => {
                let mean = clamp(column_mean(s_mat));
                vec![mean; self.n_bs]
            }
            EstimateSource::PerBsColumn => (0..self.n_bs).map(|l| clamp(s_mat.col(l).to_owned())).collect(),
        }
    }
}

fn clamp(mut s: Col<f64>) -> Col<f64> {
    for i in 0..s.nrows() {
        if !(s[i] > 0.0) {
            s[i] = 0.0;
        }
    }
    s
}

fn fidelity(agents: &[ProxAgent], f: &Mat<f64>) -> Vec<f64> {
    agents
        .iter()
        .enumerate()
        .map(|(l, a)| a.system().data_misfit(&f.col(l).to_owned()))
        .collect()
}

/// Born-iterative consensus reconstruction over BSs `0..n_bs`.
pub fn bim_fusion(
    ctx: &SensingContext<'_>,
    n_bs: usize,
    params: &FusionParams,
    truth: Option<Truth<'_>>,
) -> Result<FusionResult> {
    if n_bs == 0 || n_bs > ctx.y.first().map_or(0, Vec::len) {
        return Err(Error::invalid(format!("cannot fuse {n_bs} base stations")));
    }
    if params.n_bim == 0 {
        return Err(Error::invalid("n_bim must be at least 1"));
    }
    let m = ctx.m();
    let mann = MannParams {
        rho: params.rho,
        eps: params.eps.unwrap_or(1e-6 * ((2 * m * n_bs) as f64).sqrt()),
        max_iters: params.max_mann,
    };
    mann.validate()?;
    let nmse_of = |s: &Col<f64>| truth.as_ref().and_then(|t| nmse_db(t.s, s).ok());

    // Born systems; one shared normalization keeps the relative BS weights.
    let born = ctx.normal_systems(&vec![None; n_bs])?;
    let top = born.iter().map(|s| spectral_norm_sym(&s.gram, 60)).fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::invalid("sensing systems carry no energy"));
    }
    let scale = top.sqrt();
    let lambdas: Vec<f64> = born
        .iter()
        .map(|s| {
            params
                .lambda
                .unwrap_or_else(|| params.lambda_fraction * max_group_norm(&s.rhs) / (scale * scale))
        })
        .collect();
    let builder = Builder {
        ctx,
        n_bs,
        scale,
        lambdas: lambdas.clone(),
        params,
    };
    let mut agents = builder.agents(born)?;
    let mut warm: Vec<AdmmState> = (0..n_bs).map(|_| AdmmState::zeros(2 * m)).collect();

    // Start from BS 1's single-station MAP estimate.
    let s0 = agents[0].map_estimate(None)?.s;
    let mut q = reflect_g(&Mat::from_fn(2 * m, n_bs, |r, _| s0[r]));
    let mut lin_points: Vec<Col<f64>> = vec![Col::zeros(2 * m); n_bs];

    let mut log_rows = Vec::new();
    let mut outer_estimates = Vec::new();
    let mut total_mann = 0;
    let mut relinearizations = 1;
    let mut converged = false;

    match params.schedule {
        EUpdate::PerMannSolve => {
            let mut prev: Option<Col<f64>> = None;
            for outer in 0..params.n_bim {
                let mut local_conv = false;
                for it in 0..mann.max_iters {
                    let step = mann_step(&agents, &q, mann.rho, &mut warm)?;
                    q = step.q;
                    total_mann += 1;
                    log_rows.push(LogRow {
                        outer,
                        mann: it,
                        dq: step.dq,
                        fidelity: fidelity(&agents, &step.agent_out),
                        nmse_db: nmse_of(&column_mean(&step.agent_out)),
                    });
                    if step.dq < mann.eps {
                        local_conv = true;
                        break;
                    }
                }
                let fin = finish(&agents, q.clone(), Vec::new(), local_conv, &mut warm)?;
                let s_star = fin.s_star.clone();
                outer_estimates.push(s_star.clone());
                let settled = prev
                    .as_ref()
                    .is_some_and(|p| (&s_star - p).norm_l2() <= params.eps_bim * s_star.norm_l2().max(1e-300));
                converged = local_conv;
                if settled || outer + 1 == params.n_bim {
                    return Ok(done(fin, total_mann, relinearizations, m, lambdas, outer_estimates, log_rows, converged));
                }
                prev = Some(s_star);
                let points = builder.points_from(&fin.f_mat);
                let (next, used) = builder.relinearize(points, &lin_points)?;
                agents = next;
                lin_points = used;
                relinearizations += 1;
            }
            unreachable!("loop returns on its last pass")
        }
        EUpdate::EveryMannIteration => {
            let mut frozen = false;
            for it in 0..mann.max_iters {
                let step = mann_step(&agents, &q, mann.rho, &mut warm)?;
                q = step.q;
                total_mann += 1;
                log_rows.push(LogRow {
                    outer: relinearizations - 1,
                    mann: it,
                    dq: step.dq,
                    fidelity: fidelity(&agents, &step.agent_out),
                    nmse_db: nmse_of(&column_mean(&step.agent_out)),
                });
                if step.dq < mann.eps {
                    converged = true;
                    break;
                }
                if frozen || relinearizations >= params.n_bim.max(1) * mann.max_iters {
                    continue;
                }
                let points = builder.points_from(&reflect_g(&q));
                let shift = points
                    .iter()
                    .zip(&lin_points)
                    .map(|(a, b)| (a - b).norm_l2() / a.norm_l2().max(1e-300))
                    .fold(0.0, f64::max);
                if shift <= params.eps_bim {
                    // The linearization has settled; the model stops changing.
                    frozen = true;
                    continue;
                }
                let (next, used) = builder.relinearize(points, &lin_points)?;
                agents = next;
                lin_points = used;
                relinearizations += 1;
            }
            let fin = finish(&agents, q, Vec::new(), converged, &mut warm)?;
            outer_estimates.push(fin.s_star.clone());
            Ok(done(fin, total_mann, relinearizations, m, lambdas, outer_estimates, log_rows, converged))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn done(
    fin: MannOutcome,
    total_mann: usize,
    relinearizations: usize,
    m: usize,
    lambdas: Vec<f64>,
    outer_estimates: Vec<Col<f64>>,
    log: Vec<LogRow>,
    converged: bool,
) -> FusionResult {
    FusionResult {
        s_star: fin.s_star,
        columns: fin.f_mat,
        mann_iterations: total_mann,
        relinearizations,
        overhead: 2 * m * total_mann,
        converged,
        lambdas,
        outer_estimates,
        log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::SensingBlock;
    use crate::solver::proximal_gradient;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_agent(seed: u64, rows: usize, two_m: usize, lambda: f64, zeta: f64) -> ProxAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Mat::from_fn(rows, two_m, |_, _| rng.random::<f64>() - 0.5);
        let truth = Col::from_fn(two_m, |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let z = &e * &truth + Col::from_fn(rows, |_| 0.05 * (rng.random::<f64>() - 0.5));
        let sys = NormalSystem::from_dense(&SensingBlock { e, z });
        ProxAgent::new(
            sys,
            ProxParams { lambda, zeta, sigma2: 1.0, eta: 1.0, tol: 1e-12, max_iters: 50_000 },
        )
        .unwrap()
    }

    #[test]
    fn averaging_and_reflection_basics() {
        let s = Mat::from_fn(3, 2, |r, c| (r + 10 * c) as f64);
        let g = averaging(&s);
        assert_eq!(g[(1, 0)], 6.0);
        assert_eq!(g[(1, 1)], 6.0);
        assert_eq!(averaging(&g), g);
        let same = Mat::from_fn(3, 2, |r, _| r as f64);
        assert_eq!(averaging(&same), same);
        let one = Mat::from_fn(4, 1, |r, _| r as f64 - 1.5);
        assert_eq!(reflect_g(&one), one);
    }

    proptest! {
        #[test]
        fn reflection_is_an_involution(vals in proptest::collection::vec(-1e3f64..1e3, 12), l in 1usize..5) {
            let rows = 12 / l.max(1);
            let q = Mat::from_fn(rows, l, |r, c| vals[(r * l + c) % vals.len()]);
            let back = reflect_g(&reflect_g(&q));
            prop_assert!((&back - &q).norm_l2() <= 1e-14 * q.norm_l2().max(1.0));
            prop_assert!((reflect_g(&q).norm_l2() - q.norm_l2()).abs() <= 1e-12 * q.norm_l2().max(1.0));
        }
    }

    #[test]
    fn single_agent_reduces_to_map() {
        let agent = random_agent(1, 16, 8, 0.1, 1.0);
        let direct = agent.map_estimate(None).unwrap().s;
        let params = MannParams { rho: 0.5, eps: 1e-11, max_iters: 20_000 };
        let mut warm = vec![AdmmState::zeros(8)];
        let out = mann_solve(std::slice::from_ref(&agent), &Mat::zeros(8, 1), &params, &mut warm).unwrap();
        assert!(out.converged);
        assert!((&out.s_star - &direct).norm_l2() < 1e-5);
    }

    #[test]
    fn fixed_point_minimizes_the_sum() {
        let agents = vec![random_agent(2, 12, 8, 0.05, 0.5), random_agent(3, 12, 8, 0.08, 0.5)];
        let params = MannParams { rho: 0.5, eps: 1e-11, max_iters: 50_000 };
        let mut warm = vec![AdmmState::zeros(8), AdmmState::zeros(8)];
        let out = mann_solve(&agents, &Mat::zeros(8, 2), &params, &mut warm).unwrap();
        assert!(out.converged);
        assert!(out.consensus_residual <= 10.0 * params.eps);
        assert!(out.force_imbalance <= 10.0 * params.eps);
        let mut central = NormalSystem::zeros(8);
        let mut lambda = 0.0;
        for a in &agents {
            let z = a.params().zeta;
            central.gram = &central.gram + &a.system().gram * faer::Scale(z);
            central.rhs = &central.rhs + &a.system().rhs * faer::Scale(z);
            lambda += z * a.params().lambda;
        }
        let lip = spectral_norm_sym(&central.gram, 500);
        let oracle = proximal_gradient(&central, &Col::zeros(8), 0.0, lambda, lip, 200_000);
        let gap = (&out.s_star - &oracle).norm_l2() / oracle.norm_l2();
        assert!(gap <= 1e-4, "gap {gap}");
    }

    #[test]
    fn permuting_agents_permutes_nothing_in_consensus() {
        let a = || vec![random_agent(4, 12, 8, 0.05, 0.5), random_agent(5, 12, 8, 0.05, 0.5)];
        let params = MannParams { rho: 0.5, eps: 1e-11, max_iters: 50_000 };
        let mut w1 = vec![AdmmState::zeros(8), AdmmState::zeros(8)];
        let mut w2 = w1.clone();
        let fwd = mann_solve(&a(), &Mat::zeros(8, 2), &params, &mut w1).unwrap();
        let mut rev = a();
        rev.reverse();
        let back = mann_solve(&rev, &Mat::zeros(8, 2), &params, &mut w2).unwrap();
        assert!((&fwd.s_star - &back.s_star).norm_l2() < 1e-7);
    }

    #[test]
    fn zero_data_and_large_lambda_give_zero() {
        let mut sys = NormalSystem::zeros(6);
        sys.gram = Mat::<f64>::identity(6, 6);
        let agent = ProxAgent::new(sys, ProxParams { lambda: 1e3, ..ProxParams::default() }).unwrap();
        let s = Mat::from_fn(6, 1, |r, _| r as f64);
        let (f, _) = agent_apply(std::slice::from_ref(&agent), &s, &mut [AdmmState::zeros(6)]).unwrap();
        assert_eq!(f.norm_l2(), 0.0);
    }
}

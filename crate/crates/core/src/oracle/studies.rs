//! Approximation-error checks and the τ-scaling experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lp::exact_ot_lp;
use super::reference::{uot_kl_estimate, uot_reference, unregularized_eta};
use crate::error::{Result, UotError};
use crate::problem::{marginal_gap, UotProblem};
use crate::rounding::TOTALS_TOL;
use crate::solvers::{gem_uot, sinkhorn_uot, GemConfig, SinkhornConfig, StopReason};

/// Environment variable capping the worker threads of a study.
pub const THREADS_ENV: &str = "UOTKIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tau: f64,
    pub empirical_gap: f64,
    pub theoretical_bound: f64,
    pub satisfied: bool,
}

impl BoundReport {
    fn new(tau: f64, empirical_gap: f64, theoretical_bound: f64) -> Self {
        Self {
            tau,
            empirical_gap,
            theoretical_bound,
            satisfied: empirical_gap <= theoretical_bound * (1.0 + 1e-6),
        }
    }
}

/// Runs `f` over `items` on a pool capped by [`THREADS_ENV`].
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| UotError::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn check_grid(problem: &UotProblem, tau_grid: &[f64]) -> Result<()> {
    for m in [problem.a(), problem.b()] {
        if !m.is_simplex(TOTALS_TOL) {
            return Err(UotError::NotNormalized { total: m.total() });
        }
    }
    if let Some(t) = tau_grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(UotError::InvalidParameter(format!("tau must be positive, got {t}")));
    }
    Ok(())
}

/// Marginal gap of the near-unregularized plan against `2n‖C‖∞/τ + 4nη/τ`.
pub fn theorem2_check(problem: &UotProblem, tau_grid: &[f64]) -> Result<Vec<BoundReport>> {
    check_grid(problem, tau_grid)?;
    let n = problem.n() as f64;
    let c = problem.cost().max_abs();
    par_map(tau_grid, |&tau| {
        let p = problem.with_tau(tau)?;
        let eta = unregularized_eta(&p);
        let r = uot_reference(&p, eta)?;
        let gap = marginal_gap(r.plan(), p.a(), p.b())?;
        Ok(BoundReport::new(tau, gap, 2.0 * n * c / tau + 4.0 * n * eta / tau))
    })
}

/// `M = ln2·‖C‖∞²(n+3κ)² + 2n‖C‖∞²` with `κ = 1/min(a_min, b_min)`.
pub fn theorem4_constant(problem: &UotProblem) -> f64 {
    let n = problem.n() as f64;
    let c = problem.cost().max_abs();
    let kappa = 1.0 / problem.a().min_entry().min(problem.b().min_entry());
    std::f64::consts::LN_2 * c * c * (n + 3.0 * kappa).powi(2) + 2.0 * n * c * c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub bound: BoundReport,
    pub ot_value: f64,
    pub uot_value: f64,
    /// `OT − UOT ≥ −1e-7`
    pub lower_satisfied: bool,
}

/// `OT − UOT_KL` against `M/τ`, with UOT_KL taken from [`uot_kl_estimate`].
pub fn theorem4_check(problem: &UotProblem, tau_grid: &[f64]) -> Result<Vec<SandwichReport>> {
    check_grid(problem, tau_grid)?;
    let ot = exact_ot_lp(problem.cost(), problem.a(), problem.b())?.value;
    let m = theorem4_constant(problem);
    par_map(tau_grid, |&tau| {
        let uot = uot_kl_estimate(&problem.with_tau(tau)?)?.objective;
        let gap = ot - uot;
        Ok(SandwichReport {
            bound: BoundReport::new(tau, gap, m / tau),
            ot_value: ot,
            uot_value: uot,
            lower_satisfied: gap >= -1e-7,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauStudyOptions {
    pub epsilon: f64,
    /// Entropic weight of Sinkhorn; `None` selects `2ε/(α+β)`.
    pub sinkhorn_eta: Option<f64>,
    pub gem_max_iters: u64,
    pub sinkhorn_max_iters: u64,
}

impl TauStudyOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            sinkhorn_eta: None,
            gem_max_iters: 200_000,
            sinkhorn_max_iters: 20_000_000,
        }
    }

    pub fn resolved_sinkhorn_eta(&self, problem: &UotProblem) -> f64 {
        self.sinkhorn_eta.unwrap_or_else(|| {
            2.0 * self.epsilon / (problem.a().total() + problem.b().total())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauStudyRow {
    pub tau: f64,
    pub reference: f64,
    /// `None` when the solver hit its cap before reaching the target (censored).
    pub gem_iterations: Option<u64>,
    pub sinkhorn_iterations: Option<u64>,
    pub gem_objective: f64,
    pub sinkhorn_objective: f64,
    pub sinkhorn_eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    /// `iterations ≈ p + q·ln τ`
    Log,
    /// `iterations ≈ p + q·τ`
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub solver: String,
    pub model: ScalingModel,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauStudy {
    pub epsilon: f64,
    pub rows: Vec<TauStudyRow>,
    /// Empty when fewer than two uncensored points are available.
    pub fits: Vec<ModelFit>,
}

impl TauStudy {
    pub fn fit(&self, solver: &str, model: ScalingModel) -> Option<&ModelFit> {
        self.fits.iter().find(|f| f.solver == solver && f.model == model)
    }
}

/// Least-squares line through `(x, y)` with its coefficient of determination.
/// `R²` is 1 when `y` is constant and the fit is exact.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let k = x.len();
    if k < 2 || y.len() != k {
        return None;
    }
    let kf = k as f64;
    let mx = x.iter().sum::<f64>() / kf;
    let my = y.iter().sum::<f64>() / kf;
    let sxx: f64 = x.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((intercept, slope, r2))
}

fn fits_for(solver: &str, points: &[(f64, u64)]) -> Vec<ModelFit> {
    let y: Vec<f64> = points.iter().map(|p| p.1 as f64).collect();
    [ScalingModel::Log, ScalingModel::Linear]
        .into_iter()
        .filter_map(|model| {
            let x: Vec<f64> = points
                .iter()
                .map(|p| match model {
                    ScalingModel::Log => p.0.ln(),
                    ScalingModel::Linear => p.0,
                })
                .collect();
            linear_fit(&x, &y).map(|(intercept, slope, r_squared)| ModelFit {
                solver: solver.into(),
                model,
                intercept,
                slope,
                r_squared,
                points: points.len(),
            })
        })
        .collect()
}

/// Iterations GEM-UOT and Sinkhorn need to bring `f` within ε of the
/// reference optimum at each τ, with log and linear fits of the counts.
pub fn tau_scaling_study(
    problem: &UotProblem,
    tau_grid: &[f64],
    options: &TauStudyOptions,
) -> Result<TauStudy> {
    if let Some(t) = tau_grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(UotError::InvalidParameter(format!("tau must be positive, got {t}")));
    }
    if !(options.epsilon.is_finite() && options.epsilon > 0.0) {
        return Err(UotError::InvalidParameter("epsilon must be positive".into()));
    }
    let eps = options.epsilon;
    let rows = par_map(tau_grid, |&tau| {
        let p = problem.with_tau(tau)?;
        let reference = uot_kl_estimate(&p)?.objective;
        let target = reference + eps;

        let mut gem = GemConfig::new(eps);
        gem.early_stop = false;
        gem.use_budget = false;
        gem.max_iters = options.gem_max_iters;
        gem.target_objective = Some(target);
        let (_, gr) = gem_uot(&p, &gem)?;

        let sink_eta = options.resolved_sinkhorn_eta(&p);
        let mut sink = SinkhornConfig::new(sink_eta, eps);
        sink.max_iters = options.sinkhorn_max_iters;
        sink.target_objective = Some(target);
        let (sinkhorn_iterations, sinkhorn_objective) = match sinkhorn_uot(&p, &sink) {
            Ok((_, sr)) => (
                (sr.stop_reason == StopReason::TargetObjective).then_some(sr.iterations),
                sr.final_objective,
            ),
            Err(UotError::Divergence { .. }) => (None, f64::NAN),
            Err(e) => return Err(e),
        };
        Ok(TauStudyRow {
            tau,
            reference,
            gem_iterations: (gr.stop_reason == StopReason::TargetObjective).then_some(gr.iterations),
            sinkhorn_iterations,
            gem_objective: gr.final_objective,
            sinkhorn_objective,
            sinkhorn_eta: sink_eta,
        })
    })?;
    let collect = |get: fn(&TauStudyRow) -> Option<u64>| -> Vec<(f64, u64)> {
        rows.iter().filter_map(|r| get(r).map(|k| (r.tau, k))).collect()
    };
    let mut fits = fits_for("gem-uot", &collect(|r| r.gem_iterations));
    fits.extend(fits_for("sinkhorn", &collect(|r| r.sinkhorn_iterations)));
    Ok(TauStudy {
        epsilon: eps,
        rows,
        fits,
    })
}

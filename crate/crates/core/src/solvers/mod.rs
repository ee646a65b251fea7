//! GEM-UOT, GEM-RUOT and the Sinkhorn baseline, with shared configuration,
//! reports and the iteration budget.

mod gem;
mod ruot;
mod sinkhorn;

pub use gem::{gem_uot, prox_map, ProxOutcome};
pub use ruot::{box_project, gem_ruot, RuotOutput};
pub use sinkhorn::{sinkhorn_uot, SinkhornConfig, SinkhornState};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::problem::{DerivedConstants, UotProblem};

/// Configuration shared by GEM-UOT and GEM-RUOT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemConfig {
    /// Target accuracy on the unregularized objective.
    pub epsilon: f64,
    /// ℓ2 weight; `None` selects ε/(2R).
    pub eta: Option<f64>,
    pub max_iters: u64,
    /// Duality-gap stopping tolerance; `None` selects ε/2.
    pub gap_tol: Option<f64>,
    /// Stop as soon as the certificate reaches `gap_tol`. When false the
    /// solver runs to the iteration budget (or `max_iters`).
    pub early_stop: bool,
    /// Stop once the iteration budget is reached.
    pub use_budget: bool,
    /// Prox subproblem tolerance; `None` selects min(1e-9, ε·1e-4).
    pub inner_tol: Option<f64>,
    pub inner_max_iters: usize,
    /// Stop once the unregularized objective of the current plan is at most this value.
    pub target_objective: Option<f64>,
    pub record_trace: bool,
}

impl GemConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            eta: None,
            max_iters: 1_000_000,
            gap_tol: None,
            early_stop: true,
            use_budget: true,
            inner_tol: None,
            inner_max_iters: 500,
            target_objective: None,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(UotError::InvalidParameter(format!("{name} must be positive, got {x}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        if let Some(eta) = self.eta {
            positive("eta", eta)?;
        }
        if let Some(g) = self.gap_tol {
            positive("gap_tol", g)?;
        }
        if let Some(t) = self.inner_tol {
            positive("inner_tol", t)?;
        }
        if self.max_iters == 0 {
            return Err(UotError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if self.inner_max_iters == 0 {
            return Err(UotError::InvalidParameter("inner_max_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// η actually used for `problem`.
    pub fn resolved_eta(&self, problem: &UotProblem) -> f64 {
        self.eta.unwrap_or_else(|| default_eta(problem, self.epsilon))
    }

    pub fn resolved_gap_tol(&self) -> f64 {
        self.gap_tol.unwrap_or(self.epsilon / 2.0)
    }

    pub fn resolved_inner_tol(&self) -> f64 {
        self.inner_tol.unwrap_or((self.epsilon * 1e-4).min(1e-9))
    }
}

/// η = ε/(2R) = 2ε/(α+β)².
pub fn default_eta(problem: &UotProblem, epsilon: f64) -> f64 {
    let q = problem.a().total() + problem.b().total();
    2.0 * epsilon / (q * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GapTol,
    IterBudget,
    MaxIters,
    TargetObjective,
    /// Sinkhorn: dual decrease fell below its tolerance.
    DualStall,
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: u64,
    pub f: f64,
    pub g_eta: f64,
    pub dual_gap: f64,
    pub marginal_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub iterations: u64,
    pub final_objective: f64,
    pub final_reg_objective: f64,
    pub final_duality_gap: f64,
    pub duality_gap_trace: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub marginal_gap: f64,
    pub wall_time: f64,
    pub stop_reason: StopReason,
    pub iteration_budget: Option<u64>,
    pub tau: f64,
    pub eta: f64,
    pub epsilon: f64,
    /// Prox/projection subproblems that stopped above their tolerance.
    pub inexact_inner_solves: u64,
}

/// Upper bound on `Δ_{0,σ₀}` for the zero initialization.
///
/// Uses `h_η(0) = τ(α+β) ≥ h_η(x*) ≥ 0`, `σ₀² = ‖a‖² + ‖b‖²`, and
/// `μP(0,x*) = w_η(x*) ≤ c·n·D² + ηR` from `‖u*‖∞, ‖v*‖∞ ≤ D` and `‖X^η‖₂² ≤ R`.
pub fn delta_surrogate(problem: &UotProblem, constants: &DerivedConstants) -> f64 {
    let n = constants.n as f64;
    let d = constants.potential_bound;
    let sigma0 = problem.a().weights().dot(problem.a().weights())
        + problem.b().weights().dot(problem.b().weights());
    constants.coupling * n * d * d
        + constants.eta * constants.mass_radius
        + problem.tau() * (constants.mass_a + constants.mass_b)
        + sigma0 / constants.strong_convexity
}

/// `K₀ = ⌈4(1+√(1+16L/μ))·log((4n²√Δ/η)·max{L₁/ε, e^{D/τ}/min{a_min,b_min}, 1/(α+β)})⌉`,
/// floored at 1. The log argument is assembled in log space.
pub fn iteration_budget(
    constants: &DerivedConstants,
    problem: &UotProblem,
    eta: f64,
    epsilon: f64,
    delta_bound: f64,
) -> Result<u64> {
    if !(delta_bound > 0.0 && eta > 0.0 && epsilon > 0.0) {
        return Err(UotError::Degenerate(format!(
            "iteration budget needs positive delta, eta and epsilon (got {delta_bound}, {eta}, {epsilon})"
        )));
    }
    let n = problem.n() as f64;
    let m = constants.a_min.min(constants.b_min);
    let log_terms = [
        (constants.primal_lipschitz / epsilon).ln(),
        constants.potential_bound / problem.tau() - m.ln(),
        -(constants.mass_a + constants.mass_b).ln(),
    ];
    let log_max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_arg = (4.0 * n * n).ln() + 0.5 * delta_bound.ln() - eta.ln() + log_max;
    if !log_arg.is_finite() || log_arg <= 0.0 {
        return Err(UotError::Degenerate(format!(
            "iteration budget log argument is not above 1 (log = {log_arg})"
        )));
    }
    let factor = 4.0 * (1.0 + (1.0 + 16.0 * constants.condition_ratio()).sqrt());
    let k = (factor * log_arg).ceil();
    if !k.is_finite() {
        return Err(UotError::Degenerate("iteration budget overflow".into()));
    }
    Ok((k as u64).max(1))
}

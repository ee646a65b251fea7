//! Rounding onto the transportation polytope and OT retrieval through GEM-UOT.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::problem::{transport_cost, CostMatrix, Measure, TransportPlan, UotProblem};
use crate::solvers::{gem_uot, GemConfig, SolveReport, StopReason};

/// Relative tolerance on `|α − β|` accepted by the polytope operations.
pub const TOTALS_TOL: f64 = 1e-12;

/// Plan whose marginals are `a` and `b` up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePlan {
    plan: TransportPlan,
}

impl FeasiblePlan {
    pub(crate) fn from_plan(plan: TransportPlan) -> Self {
        Self { plan }
    }

    pub fn entries(&self) -> &Array2<f64> {
        self.plan.entries()
    }

    pub fn as_plan(&self) -> &TransportPlan {
        &self.plan
    }

    pub fn into_plan(self) -> TransportPlan {
        self.plan
    }
}

pub(crate) fn check_balanced(a: &Measure, b: &Measure) -> Result<()> {
    let (alpha, beta) = (a.total(), b.total());
    if (alpha - beta).abs() > TOTALS_TOL * alpha.max(beta) {
        return Err(UotError::UnbalancedTotals { alpha, beta });
    }
    Ok(())
}

/// Scales rows then columns by `min(target/sum, 1)` (empty lines are left
/// alone) and adds the rank-one correction `err_r err_cᵀ/‖err_r‖₁`.
pub fn proj_polytope(x: &TransportPlan, a: &Measure, b: &Measure) -> Result<FeasiblePlan> {
    let n = x.n();
    if a.len() != n || b.len() != n {
        return Err(UotError::DimensionMismatch {
            context: "proj_polytope",
            expected: n,
            got: if a.len() != n { a.len() } else { b.len() },
        });
    }
    check_balanced(a, b)?;
    let a = a.weights();
    let b = b.weights();
    let mut y = x.entries().clone();
    let rows = x.row_sums();
    for (i, mut row) in y.outer_iter_mut().enumerate() {
        if rows[i] > a[i] {
            row.mapv_inplace(|v| v * a[i] / rows[i]);
        }
    }
    let cols = y.sum_axis(ndarray::Axis(0));
    for (j, mut col) in y.columns_mut().into_iter().enumerate() {
        if cols[j] > b[j] {
            col.mapv_inplace(|v| v * b[j] / cols[j]);
        }
    }
    let err_r = a - &y.sum_axis(ndarray::Axis(1));
    let err_c = b - &y.sum_axis(ndarray::Axis(0));
    let norm: f64 = err_r.iter().map(|e| e.abs()).sum();
    if norm > 0.0 {
        for ((i, j), v) in y.indexed_iter_mut() {
            *v += (err_r[i] * err_c[j] / norm).max(0.0);
        }
    }
    Ok(FeasiblePlan {
        plan: TransportPlan::from_raw(y),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemOtReport {
    pub version: String,
    /// Requested accuracy ε on ⟨C,Y⟩ − OT.
    pub ot_gap_bound: f64,
    pub tau_used: f64,
    pub eta_used: f64,
    pub epsilon_inner: f64,
    /// ⟨C, Y⟩
    pub objective: f64,
    /// Rule that ended the inner GEM-UOT run; the end-to-end guarantee is
    /// the budget-based one only when this is `iter_budget`.
    pub inner_stop_reason: Option<StopReason>,
    pub inner: Option<SolveReport>,
}

/// ε-approximate OT plan: GEM-UOT at `τ = 16‖C‖∞nγ/ε`, `η = ε/32`,
/// `γ = ‖C‖∞ + η`, target `ε/16`, followed by [`proj_polytope`].
pub fn gem_ot(
    cost: &CostMatrix,
    a: &Measure,
    b: &Measure,
    epsilon: f64,
) -> Result<(FeasiblePlan, GemOtReport)> {
    gem_ot_with(cost, a, b, epsilon, |c| c)
}

/// [`gem_ot`] with a hook to adjust the inner GEM-UOT configuration.
pub fn gem_ot_with(
    cost: &CostMatrix,
    a: &Measure,
    b: &Measure,
    epsilon: f64,
    adjust: impl FnOnce(GemConfig) -> GemConfig,
) -> Result<(FeasiblePlan, GemOtReport)> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(UotError::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    for m in [a, b] {
        if !m.is_simplex(TOTALS_TOL) {
            return Err(UotError::NotNormalized { total: m.total() });
        }
    }
    let n = cost.n();
    let eps_inner = epsilon / 16.0;
    let eta = eps_inner / 2.0;
    let gamma = cost.max_abs() + eta;
    let tau = 16.0 * cost.max_abs() * n as f64 * gamma / epsilon;
    let version = env!("CARGO_PKG_VERSION").to_string();
    if cost.max_abs() == 0.0 {
        // Every feasible plan is optimal; the product coupling is feasible.
        let y = Array2::from_shape_fn((n, n), |(i, j)| a.weights()[i] * b.weights()[j]);
        let y = proj_polytope(&TransportPlan::from_raw(y), a, b)?;
        return Ok((
            y,
            GemOtReport {
                version,
                ot_gap_bound: epsilon,
                tau_used: 0.0,
                eta_used: eta,
                epsilon_inner: eps_inner,
                objective: 0.0,
                inner_stop_reason: None,
                inner: None,
            },
        ));
    }
    let problem = UotProblem::new(cost.clone(), a.clone(), b.clone(), tau)?;
    let mut config = GemConfig::new(eps_inner);
    config.eta = Some(eta);
    let config = adjust(config);
    let (x, report) = gem_uot(&problem, &config)?;
    let y = proj_polytope(&x, a, b)?;
    let objective = transport_cost(cost, y.as_plan());
    Ok((
        y,
        GemOtReport {
            version,
            ot_gap_bound: epsilon,
            tau_used: tau,
            eta_used: eta,
            epsilon_inner: eps_inner,
            objective,
            inner_stop_reason: Some(report.stop_reason),
            inner: Some(report),
        },
    ))
}

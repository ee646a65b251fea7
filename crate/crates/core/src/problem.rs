//! Problem statement types, primal objectives and the constants derived from
//! a problem instance.
//!
//! All types are immutable after construction. Totals and minima of the
//! measures are cached once so every quantity derived during a solve sees the
//! same values.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};

/// Strictly positive mass vector with cached total and minimum entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Measure {
    weights: Array1<f64>,
    total: f64,
    min_entry: f64,
}

impl Measure {
    pub fn new(weights: impl Into<Array1<f64>>) -> Result<Self> {
        let weights = weights.into();
        if weights.is_empty() {
            return Err(UotError::InvalidParameter("measure must be nonempty".into()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(UotError::NonPositive {
                    what: "measure",
                    index,
                    value,
                });
            }
        }
        let total = weights.sum();
        let min_entry = weights.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            weights,
            total,
            min_entry,
        })
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn as_slice(&self) -> &[f64] {
        self.weights.as_slice().expect("owned measure is contiguous")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Sum of the entries (α for the source, β for the target).
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn min_entry(&self) -> f64 {
        self.min_entry
    }

    /// `max_i |log w_i|`.
    pub fn max_abs_log(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.ln().abs())
            .fold(0.0, f64::max)
    }

    /// True when the total equals one within `rel_tol`.
    pub fn is_simplex(&self, rel_tol: f64) -> bool {
        (self.total - 1.0).abs() <= rel_tol
    }
}

impl TryFrom<Vec<f64>> for Measure {
    type Error = UotError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Measure::new(value)
    }
}

impl From<Measure> for Vec<f64> {
    fn from(m: Measure) -> Self {
        m.weights.to_vec()
    }
}

/// Square, finite, nonnegative ground cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    max_abs: f64,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(UotError::DimensionMismatch {
                context: "cost matrix must be square",
                expected: rows,
                got: cols,
            });
        }
        if rows == 0 {
            return Err(UotError::InvalidParameter("cost matrix must be nonempty".into()));
        }
        for (index, &value) in entries.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(UotError::Negative {
                    what: "cost",
                    index,
                    value,
                });
            }
        }
        let max_abs = entries.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        Ok(Self { entries, max_abs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(UotError::DimensionMismatch {
                    context: "cost matrix row",
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &c) in row.iter().enumerate() {
                entries[[i, j]] = c;
            }
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Entrywise max magnitude, ‖C‖∞.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Rows as nested vectors, the layout used by the JSON problem files.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.outer_iter().map(|r| r.to_vec()).collect()
    }
}

/// Unbalanced transport problem: cost, two measures and the marginal penalty τ.
#[derive(Debug, Clone, PartialEq)]
pub struct UotProblem {
    cost: CostMatrix,
    a: Measure,
    b: Measure,
    tau: f64,
}

/// Constant factor applied to the lower bound on τ when checking (A3).
pub const TAU_ASSUMPTION_FACTOR: f64 = 1.0;

impl UotProblem {
    pub fn new(cost: CostMatrix, a: Measure, b: Measure, tau: f64) -> Result<Self> {
        let n = cost.n();
        if a.len() != n {
            return Err(UotError::DimensionMismatch {
                context: "source measure vs cost",
                expected: n,
                got: a.len(),
            });
        }
        if b.len() != n {
            return Err(UotError::DimensionMismatch {
                context: "target measure vs cost",
                expected: n,
                got: b.len(),
            });
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(UotError::InvalidParameter(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        let problem = Self { cost, a, b, tau };
        if let Some(msg) = problem.tau_assumption_warning(TAU_ASSUMPTION_FACTOR) {
            log::warn!("{msg}");
        }
        Ok(problem)
    }

    /// Same cost and measures with a different penalty weight.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.cost.clone(), self.a.clone(), self.b.clone(), tau)
    }

    /// Returns a message when τ < factor·min{1/(α+β), ‖C‖∞}.
    pub fn tau_assumption_warning(&self, factor: f64) -> Option<String> {
        let floor = factor * (1.0 / (self.a.total() + self.b.total())).min(self.cost.max_abs());
        (self.tau < floor).then(|| {
            format!(
                "tau = {} is below {} (= {factor} * min{{1/(alpha+beta), |C|_inf}}); \
                 convergence guarantees do not apply",
                self.tau, floor
            )
        })
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    pub fn a(&self) -> &Measure {
        &self.a
    }

    pub fn b(&self) -> &Measure {
        &self.b
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n(&self) -> usize {
        self.cost.n()
    }
}

/// Nonnegative n×n transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    entries: Array2<f64>,
}

impl TransportPlan {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(UotError::DimensionMismatch {
                context: "transport plan must be square",
                expected: rows,
                got: cols,
            });
        }
        for (index, &value) in entries.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(UotError::Negative {
                    what: "plan",
                    index,
                    value,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: Array2::zeros((n, n)),
        }
    }

    /// Caller guarantees nonnegative finite entries.
    pub(crate) fn from_raw(entries: Array2<f64>) -> Self {
        debug_assert!(entries.iter().all(|x| x.is_finite() && *x >= 0.0));
        Self { entries }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// X𝟙
    pub fn row_sums(&self) -> Array1<f64> {
        self.entries.sum_axis(Axis(1))
    }

    /// Xᵀ𝟙
    pub fn col_sums(&self) -> Array1<f64> {
        self.entries.sum_axis(Axis(0))
    }

    /// ‖X‖₁ (entries are nonnegative).
    pub fn mass(&self) -> f64 {
        self.entries.sum()
    }

    /// ‖X‖₂², entrywise.
    pub fn sq_norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum()
    }
}

/// Generalized KL divergence `Σ x log(x/y) − x + y`, with `0·log 0 = 0`.
pub fn kl_divergence(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(UotError::DimensionMismatch {
            context: "kl_divergence",
            expected: y.len(),
            got: x.len(),
        });
    }
    for (index, &value) in y.iter().enumerate() {
        if !(value > 0.0) {
            return Err(UotError::NonPositive {
                what: "kl reference",
                index,
                value,
            });
        }
    }
    for (index, &value) in x.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(UotError::Negative {
                what: "kl argument",
                index,
                value,
            });
        }
    }
    Ok(kl_unchecked(x.iter().copied(), y.iter().copied()))
}

pub(crate) fn kl_unchecked(x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
    x.zip(y)
        .map(|(xi, yi)| {
            if xi > 0.0 {
                xi * (xi / yi).ln() - xi + yi
            } else {
                yi
            }
        })
        .sum()
}

fn check_plan(problem: &UotProblem, plan: &TransportPlan) -> Result<()> {
    if plan.n() != problem.n() {
        return Err(UotError::DimensionMismatch {
            context: "plan vs problem",
            expected: problem.n(),
            got: plan.n(),
        });
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(UotError::InvalidParameter(format!(
            "eta must be positive and finite, got {eta}"
        )));
    }
    Ok(())
}

/// ⟨C, X⟩
pub fn transport_cost(cost: &CostMatrix, plan: &TransportPlan) -> f64 {
    cost.entries()
        .iter()
        .zip(plan.entries().iter())
        .map(|(c, x)| c * x)
        .sum()
}

/// τ·KL(X𝟙‖a) + τ·KL(Xᵀ𝟙‖b)
fn marginal_penalty(problem: &UotProblem, plan: &TransportPlan) -> f64 {
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    let kl_a = kl_unchecked(rows.iter().copied(), problem.a().weights().iter().copied());
    let kl_b = kl_unchecked(cols.iter().copied(), problem.b().weights().iter().copied());
    problem.tau() * (kl_a + kl_b)
}

/// Unregularized UOT objective `f(X) = ⟨C,X⟩ + τKL(X𝟙‖a) + τKL(Xᵀ𝟙‖b)`.
pub fn uot_objective(problem: &UotProblem, plan: &TransportPlan) -> Result<f64> {
    check_plan(problem, plan)?;
    Ok(transport_cost(problem.cost(), plan) + marginal_penalty(problem, plan))
}

/// Squared-ℓ2 regularized objective `g_η(X) = f(X) + η‖X‖₂²`.
pub fn reg_objective(problem: &UotProblem, eta: f64, plan: &TransportPlan) -> Result<f64> {
    check_eta(eta)?;
    Ok(uot_objective(problem, plan)? + eta * plan.sq_norm())
}

/// Entropic objective `⟨C,X⟩ − ηH(X) + τKL(X𝟙‖a) + τKL(Xᵀ𝟙‖b)` with
/// `H(X) = −Σ X(log X − 1)`. The plan must be strictly positive.
pub fn entropic_objective(problem: &UotProblem, eta: f64, plan: &TransportPlan) -> Result<f64> {
    check_eta(eta)?;
    check_plan(problem, plan)?;
    let mut neg_entropy = 0.0;
    for (index, &x) in plan.entries().iter().enumerate() {
        if !(x > 0.0) {
            return Err(UotError::NonPositive {
                what: "entropic plan",
                index,
                value: x,
            });
        }
        neg_entropy += x * (x.ln() - 1.0);
    }
    Ok(transport_cost(problem.cost(), plan) + eta * neg_entropy + marginal_penalty(problem, plan))
}

/// `‖X𝟙 − a‖₁ + ‖Xᵀ𝟙 − b‖₁`
pub fn marginal_gap(plan: &TransportPlan, a: &Measure, b: &Measure) -> Result<f64> {
    let n = plan.n();
    if a.len() != n || b.len() != n {
        return Err(UotError::DimensionMismatch {
            context: "marginal_gap",
            expected: n,
            got: if a.len() != n { a.len() } else { b.len() },
        });
    }
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    let gap_a: f64 = rows.iter().zip(a.weights()).map(|(r, w)| (r - w).abs()).sum();
    let gap_b: f64 = cols.iter().zip(b.weights()).map(|(c, w)| (c - w).abs()).sum();
    Ok(gap_a + gap_b)
}

/// Fraction of plan entries that are `<= threshold`.
pub fn sparsity_ratio(plan: &TransportPlan, threshold: f64) -> f64 {
    debug_assert!(threshold >= 0.0);
    let total = plan.entries().len();
    if total == 0 {
        return 0.0;
    }
    let small = plan.entries().iter().filter(|&&x| x <= threshold).count();
    small as f64 / total as f64
}

/// Scalars derived from a problem and a regularization weight η.
///
/// `coupling` is the quadratic weight `(min{a_min,b_min}/τ)e^{−D/τ}` that
/// moves between the smooth part f_η and the strongly convex part w_η of the
/// dual objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub n: usize,
    pub tau: f64,
    pub eta: f64,
    /// α, total source mass.
    pub mass_a: f64,
    /// β, total target mass.
    pub mass_b: f64,
    pub a_min: f64,
    pub b_min: f64,
    /// 1/min{a_min, b_min}
    pub kappa: f64,
    /// R = (α+β)²/4
    pub mass_radius: f64,
    /// p = ½·min{a_min,b_min}·e^{−D/τ}, lower bound on marginals of near-optimal plans.
    pub row_floor: f64,
    /// q = α+β
    pub row_ceiling: f64,
    /// D, the bound on optimal dual potentials.
    pub potential_bound: f64,
    /// L₁, Lipschitz constant of g_η in ℓ1 over plans with marginals in [p, q].
    pub primal_lipschitz: f64,
    /// L, smoothness of f_η on the potential box.
    pub smoothness: f64,
    /// μ, strong convexity of w_η.
    pub strong_convexity: f64,
    /// L_a, smoothness of the relaxed dual h_a on the potential box.
    pub relaxed_smoothness: f64,
    pub coupling: f64,
}

impl DerivedConstants {
    /// L/μ
    pub fn condition_ratio(&self) -> f64 {
        self.smoothness / self.strong_convexity
    }
}

pub fn derived_constants(problem: &UotProblem, eta: f64) -> Result<DerivedConstants> {
    check_eta(eta)?;
    let n = problem.n();
    let tau = problem.tau();
    let a = problem.a();
    let b = problem.b();
    let alpha = a.total();
    let beta = b.total();
    let a_min = a.min_entry();
    let b_min = b.min_entry();
    let m = a_min.min(b_min);
    let cmax = problem.cost().max_abs();

    let q = alpha + beta;
    let d = cmax + eta * q + tau * (q / 2.0).ln() - tau * a_min.ln().min(b_min.ln());
    let decay = (-d / tau).exp();
    let coupling = m / tau * decay;
    let p = 0.5 * m * decay;
    let smoothness = q / (2.0 * tau) + coupling;
    let strong_convexity = coupling.min(1.0 / (2.0 * eta));
    let relaxed_smoothness = q / tau + 2.0 * (n as f64).sqrt() / eta;
    // |log p| is evaluated in log space: p can underflow while log p stays finite.
    let log_p = (0.5 * m).ln() - d / tau;
    let primal_lipschitz = cmax
        + 2.0 * eta * q
        + 2.0 * tau * log_p.abs()
        + 2.0 * tau * q.ln().abs()
        + tau * a.max_abs_log()
        + tau * b.max_abs_log();

    if !(d.is_finite() && coupling > 0.0 && coupling.is_finite()) {
        return Err(UotError::Degenerate(format!(
            "derived constants degenerate: D = {d}, coupling = {coupling} (D/tau too large)"
        )));
    }

    Ok(DerivedConstants {
        n,
        tau,
        eta,
        mass_a: alpha,
        mass_b: beta,
        a_min,
        b_min,
        kappa: 1.0 / m,
        mass_radius: q * q / 4.0,
        row_floor: p,
        row_ceiling: q,
        potential_bound: d,
        primal_lipschitz,
        smoothness,
        strong_convexity,
        relaxed_smoothness,
        coupling,
    })
}

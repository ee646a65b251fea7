//! Dual objectives of the squared-ℓ2 and entropic UOT problems, their
//! gradients, plan recovery and optimality certificates.
//!
//! Flat vectors use the layout `[u | v | t]` with `t` stored row-major, so a
//! full dual point has length `2n + n²` and a reduced one `2n`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::problem::{reg_objective, DerivedConstants, TransportPlan, UotProblem};

/// Full dual variable `(u, v, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DualPointRepr", into = "DualPointRepr")]
pub struct DualPoint {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub t: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct DualPointRepr {
    u: Vec<f64>,
    v: Vec<f64>,
    t: Vec<Vec<f64>>,
}

impl TryFrom<DualPointRepr> for DualPoint {
    type Error = UotError;

    fn try_from(r: DualPointRepr) -> Result<Self> {
        let n = r.u.len();
        let mut t = Array2::zeros((n, n));
        if r.v.len() != n || r.t.len() != n {
            return Err(UotError::DimensionMismatch {
                context: "dual point json",
                expected: n,
                got: r.v.len().max(r.t.len()),
            });
        }
        for (i, row) in r.t.iter().enumerate() {
            if row.len() != n {
                return Err(UotError::DimensionMismatch {
                    context: "dual point json row",
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                t[[i, j]] = x;
            }
        }
        Ok(DualPoint {
            u: r.u.into(),
            v: r.v.into(),
            t,
        })
    }
}

impl From<DualPoint> for DualPointRepr {
    fn from(x: DualPoint) -> Self {
        DualPointRepr {
            u: x.u.to_vec(),
            v: x.v.to_vec(),
            t: x.t.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl DualPoint {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: Array1::zeros(n),
            v: Array1::zeros(n),
            t: Array2::zeros((n, n)),
        }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn flat_len(n: usize) -> usize {
        2 * n + n * n
    }

    pub fn to_flat(&self) -> Array1<f64> {
        let n = self.n();
        let mut out = Array1::zeros(Self::flat_len(n));
        write_flat(&self.u, &self.v, &self.t, out.as_slice_mut().unwrap());
        out
    }

    pub fn from_flat(n: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::flat_len(n) {
            return Err(UotError::DimensionMismatch {
                context: "flat dual point",
                expected: Self::flat_len(n),
                got: flat.len(),
            });
        }
        Ok(Self {
            u: Array1::from(flat[..n].to_vec()),
            v: Array1::from(flat[n..2 * n].to_vec()),
            t: Array2::from_shape_vec((n, n), flat[2 * n..].to_vec()).expect("length checked"),
        })
    }

    pub fn reduced(&self) -> ReducedDualPoint {
        ReducedDualPoint {
            u: self.u.clone(),
            v: self.v.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).chain(self.t.iter()).all(|x| x.is_finite())
    }

    /// Raises every `t_ij` to `max{t_ij, 0, u_i + v_j − C_ij}`.
    pub fn lifted(&self, cost: &Array2<f64>) -> DualPoint {
        let mut out = self.clone();
        for ((i, j), t) in out.t.indexed_iter_mut() {
            *t = t.max(0.0).max(self.u[i] + self.v[j] - cost[[i, j]]);
        }
        out
    }

    /// True when `t ≥ 0` and `t ≥ u + v − C` up to `tol`.
    pub fn is_feasible(&self, cost: &Array2<f64>, tol: f64) -> bool {
        self.t.indexed_iter().all(|((i, j), &t)| {
            t >= -tol && t >= self.u[i] + self.v[j] - cost[[i, j]] - tol
        })
    }
}

pub(crate) fn write_flat(u: &Array1<f64>, v: &Array1<f64>, t: &Array2<f64>, out: &mut [f64]) {
    let n = u.len();
    out[..n].iter_mut().zip(u.iter()).for_each(|(o, x)| *o = *x);
    out[n..2 * n].iter_mut().zip(v.iter()).for_each(|(o, x)| *o = *x);
    out[2 * n..].iter_mut().zip(t.iter()).for_each(|(o, x)| *o = *x);
}

/// Potentials `(u, v)` of the relaxed and entropic duals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedDualPoint {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

impl ReducedDualPoint {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: Array1::zeros(n),
            v: Array1::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn to_flat(&self) -> Array1<f64> {
        let n = self.n();
        let mut out = Array1::zeros(2 * n);
        out.slice_mut(ndarray::s![..n]).assign(&self.u);
        out.slice_mut(ndarray::s![n..]).assign(&self.v);
        out
    }

    pub fn from_flat(n: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * n {
            return Err(UotError::DimensionMismatch {
                context: "flat reduced dual point",
                expected: 2 * n,
                got: flat.len(),
            });
        }
        Ok(Self {
            u: Array1::from(flat[..n].to_vec()),
            v: Array1::from(flat[n..].to_vec()),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Box on the potentials: `u_i ∈ [τ log(2a_i/(α+β)), D]`, same for `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxV {
    pub u_lo: Array1<f64>,
    pub v_lo: Array1<f64>,
    pub upper: f64,
}

impl BoxV {
    pub fn new(problem: &UotProblem, constants: &DerivedConstants) -> Self {
        let tau = problem.tau();
        let q = constants.mass_a + constants.mass_b;
        let lo = |w: &f64| tau * (2.0 * w / q).ln();
        Self {
            u_lo: problem.a().weights().map(lo),
            v_lo: problem.b().weights().map(lo),
            upper: constants.potential_bound,
        }
    }

    pub fn n(&self) -> usize {
        self.u_lo.len()
    }

    /// Lower bound of flat reduced coordinate `k`.
    pub fn lower(&self, k: usize) -> f64 {
        let n = self.n();
        if k < n {
            self.u_lo[k]
        } else {
            self.v_lo[k - n]
        }
    }

    pub fn contains(&self, x: &ReducedDualPoint, tol: f64) -> bool {
        let ok = |z: f64, lo: f64| z >= lo - tol && z <= self.upper + tol;
        x.u.iter().zip(self.u_lo.iter()).all(|(&z, &lo)| ok(z, lo))
            && x.v.iter().zip(self.v_lo.iter()).all(|(&z, &lo)| ok(z, lo))
    }
}

/// Value and split gradients of `h_η = f_η + w_η`.
#[derive(Debug, Clone, PartialEq)]
pub struct HetaEval {
    pub value: f64,
    pub f_value: f64,
    pub w_value: f64,
    pub grad_f: Array1<f64>,
    pub grad_w: Array1<f64>,
}

fn check_dims(problem: &UotProblem, n: usize) -> Result<()> {
    if n != problem.n() {
        return Err(UotError::DimensionMismatch {
            context: "dual point vs problem",
            expected: problem.n(),
            got: n,
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

/// `τ⟨e^{−u/τ}, a⟩ + τ⟨e^{−v/τ}, b⟩`
pub(crate) fn exp_terms(problem: &UotProblem, u: &Array1<f64>, v: &Array1<f64>) -> f64 {
    let tau = problem.tau();
    let side = |z: &Array1<f64>, w: &Array1<f64>| -> f64 {
        z.iter().zip(w.iter()).map(|(z, w)| w * (-z / tau).exp()).sum()
    };
    tau * (side(u, problem.a().weights()) + side(v, problem.b().weights()))
}

/// Writes `∇f_η` at the flat point `x` into `out` (both of length 2n + n²).
pub(crate) fn grad_f_eta_flat(
    problem: &UotProblem,
    coupling: f64,
    x: &[f64],
    out: &mut [f64],
) {
    let n = problem.n();
    let tau = problem.tau();
    let a = problem.a().as_slice();
    let b = problem.b().as_slice();
    for i in 0..n {
        out[i] = -a[i] * (-x[i] / tau).exp() - coupling * x[i];
        out[n + i] = -b[i] * (-x[n + i] / tau).exp() - coupling * x[n + i];
    }
    out[2 * n..].iter_mut().for_each(|o| *o = 0.0);
}

/// `h_η(x) = f_η(x) + w_η(x)` with exact gradients of each part.
///
/// `f_η = τ⟨e^{−u/τ},a⟩ + τ⟨e^{−v/τ},b⟩ − (c/2)(‖u‖² + ‖v‖²)` and
/// `w_η = (c/2)(‖u‖² + ‖v‖²) + (1/4η)Σt²` with `c = constants.coupling`.
pub fn dual_objective_heta(
    problem: &UotProblem,
    eta: f64,
    x: &DualPoint,
    constants: &DerivedConstants,
) -> Result<HetaEval> {
    check_eta(eta)?;
    check_dims(problem, x.n())?;
    let n = problem.n();
    let c = constants.coupling;
    let sq = x.u.dot(&x.u) + x.v.dot(&x.v);
    let tsq: f64 = x.t.iter().map(|t| t * t).sum();
    let f_value = exp_terms(problem, &x.u, &x.v) - 0.5 * c * sq;
    let w_value = 0.5 * c * sq + tsq / (4.0 * eta);

    let flat = x.to_flat();
    let mut grad_f = Array1::zeros(flat.len());
    grad_f_eta_flat(
        problem,
        c,
        flat.as_slice().unwrap(),
        grad_f.as_slice_mut().unwrap(),
    );
    let mut grad_w = Array1::zeros(flat.len());
    for k in 0..2 * n {
        grad_w[k] = c * flat[k];
    }
    for k in 2 * n..flat.len() {
        grad_w[k] = flat[k] / (2.0 * eta);
    }
    Ok(HetaEval {
        value: f_value + w_value,
        f_value,
        w_value,
        grad_f,
        grad_w,
    })
}

/// Relaxed dual `h_a(u,v) = (1/4η)Σ max{0, u_i+v_j−C_ij}² + τ⟨e^{−u/τ},a⟩ + τ⟨e^{−v/τ},b⟩`
/// and its gradient `[∂u | ∂v]`.
pub fn relaxed_dual_ha(
    problem: &UotProblem,
    eta: f64,
    x: &ReducedDualPoint,
) -> Result<(f64, Array1<f64>)> {
    check_eta(eta)?;
    check_dims(problem, x.n())?;
    let n = problem.n();
    let tau = problem.tau();
    let cost = problem.cost().entries();
    let a = problem.a().weights();
    let b = problem.b().weights();
    let mut grad = Array1::zeros(2 * n);
    let mut hinge = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = x.u[i] + x.v[j] - cost[[i, j]];
            if s > 0.0 {
                hinge += s * s;
                grad[i] += s / (2.0 * eta);
                grad[n + j] += s / (2.0 * eta);
            }
        }
    }
    for i in 0..n {
        grad[i] -= a[i] * (-x.u[i] / tau).exp();
        grad[n + i] -= b[i] * (-x.v[i] / tau).exp();
    }
    let value = hinge / (4.0 * eta) + exp_terms(problem, &x.u, &x.v);
    Ok((value, grad))
}

/// `F_a(x) = τ(α+β) − h_a(x)`, the relaxed dual lower estimate of the regularized optimum.
pub fn relaxed_dual_value(problem: &UotProblem, eta: f64, x: &ReducedDualPoint) -> Result<f64> {
    let (h, _) = relaxed_dual_ha(problem, eta, x)?;
    Ok(problem.tau() * (problem.a().total() + problem.b().total()) - h)
}

/// Entropic dual `ηΣ exp((u_i+v_j−C_ij)/η) + τ⟨e^{−u/τ},a⟩ + τ⟨e^{−v/τ},b⟩` and its gradient.
pub fn entropic_dual_h(
    problem: &UotProblem,
    eta: f64,
    x: &ReducedDualPoint,
) -> Result<(f64, Array1<f64>)> {
    check_eta(eta)?;
    check_dims(problem, x.n())?;
    let n = problem.n();
    let tau = problem.tau();
    let cost = problem.cost().entries();
    let mut grad = Array1::<f64>::zeros(2 * n);
    let mut row_terms = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            shifted[j] = (x.u[i] + x.v[j] - cost[[i, j]]) / eta;
        }
        let m = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = m.exp();
        let mut row = 0.0;
        for j in 0..n {
            let e = (shifted[j] - m).exp();
            row += e;
            row_terms[j] = e;
        }
        if !scale.is_finite() {
            return Err(UotError::Divergence {
                iteration: 0,
                reason: format!("entropic dual overflow in row {i} (max exponent {m})"),
            });
        }
        grad[i] += scale * row;
        for j in 0..n {
            grad[n + j] += scale * row_terms[j];
        }
        total += scale * row;
    }
    let a = problem.a().weights();
    let b = problem.b().weights();
    for i in 0..n {
        grad[i] -= a[i] * (-x.u[i] / tau).exp();
        grad[n + i] -= b[i] * (-x.v[i] / tau).exp();
    }
    let value = eta * total + exp_terms(problem, &x.u, &x.v);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(UotError::Divergence {
            iteration: 0,
            reason: "entropic dual is not finite".into(),
        });
    }
    Ok((value, grad))
}

/// `X_ij = max{0, u_i + v_j − C_ij}/(2η)`.
pub fn recover_plan(problem: &UotProblem, eta: f64, x: &ReducedDualPoint) -> Result<TransportPlan> {
    check_eta(eta)?;
    check_dims(problem, x.n())?;
    let cost = problem.cost().entries();
    let plan = Array2::from_shape_fn(cost.dim(), |(i, j)| {
        (x.u[i] + x.v[j] - cost[[i, j]]).max(0.0) / (2.0 * eta)
    });
    if plan.iter().any(|p| !p.is_finite()) {
        return Err(UotError::Divergence {
            iteration: 0,
            reason: "recovered plan is not finite".into(),
        });
    }
    Ok(TransportPlan::from_raw(plan))
}

/// Dual value `−(1/4η)Σt² − τ⟨e^{−u/τ},a⟩ − τ⟨e^{−v/τ},b⟩ + τ(α+β)` of a point
/// feasible for `t ≥ max{0, u+v−C}`. The point is not lifted here.
pub fn dual_value(problem: &UotProblem, eta: f64, x: &DualPoint) -> Result<f64> {
    check_eta(eta)?;
    check_dims(problem, x.n())?;
    let tsq: f64 = x.t.iter().map(|t| t * t).sum();
    let mass = problem.a().total() + problem.b().total();
    Ok(-tsq / (4.0 * eta) - exp_terms(problem, &x.u, &x.v) + problem.tau() * mass)
}

/// `g_η(X)` minus the dual value at `x` lifted onto the feasible set.
pub fn duality_gap(
    problem: &UotProblem,
    eta: f64,
    plan: &TransportPlan,
    x: &DualPoint,
) -> Result<f64> {
    let primal = reg_objective(problem, eta, plan)?;
    let lifted = x.lifted(problem.cost().entries());
    Ok(primal - dual_value(problem, eta, &lifted)?)
}

/// Largest violation of the first-order conditions
/// `−u_i/τ + log a_i = log Σ_k X_ik` and `−v_j/τ + log b_j = log Σ_k X_kj`
/// where `X` is the plan recovered from `x`.
pub fn optimality_residual(problem: &UotProblem, eta: f64, x: &ReducedDualPoint) -> Result<f64> {
    let plan = recover_plan(problem, eta, x)?;
    let tau = problem.tau();
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    let mut worst: f64 = 0.0;
    for (side, sums, pot, w) in [
        ("row", &rows, &x.u, problem.a().weights()),
        ("column", &cols, &x.v, problem.b().weights()),
    ] {
        for k in 0..sums.len() {
            if !(sums[k] > 0.0) {
                return Err(UotError::Degenerate(format!(
                    "{side} {k} of the recovered plan is empty; residual undefined"
                )));
            }
            worst = worst.max((-pot[k] / tau + w[k].ln() - sums[k].ln()).abs());
        }
    }
    Ok(worst)
}

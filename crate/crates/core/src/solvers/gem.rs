use std::time::Instant;

use ndarray::{Array1, Array2};

use super::{delta_surrogate, iteration_budget, GemConfig, SolveReport, StopReason, TraceRow};
use crate::dual::{dual_value, grad_f_eta_flat, BoxV, DualPoint};
use crate::error::{Result, UotError};
use crate::newton::{HingeObjective, NewtonOptions, Separable};
use crate::problem::{
    derived_constants, marginal_gap, DerivedConstants, TransportPlan, UotProblem,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOutcome {
    pub point: DualPoint,
    /// Box-projected gradient norm of the reduced objective at `point`.
    pub residual: f64,
    pub iterations: usize,
    /// True when the inner solver stopped above both `inner_tol` and the
    /// double-precision floor.
    pub inexact: bool,
}

/// Minimizer of `⟨g,x⟩ + w_η(x) + θP(x₀,x)` over `V_D ∩ {t ≥ 0, t ≥ u+v−C}`.
///
/// For fixed `(u,v)` each `t_ij` minimizes a 1-D quadratic with center `t*_ij`
/// over `t_ij ≥ max{0, u_i+v_j−C_ij}`, giving `t_ij = max{t*_ij, u_i+v_j−C_ij}`
/// when `t* ≥ 0`. Substituting leaves
/// `(β/2)‖z − z̄‖² + (A/2)Σ max{0, u_i+v_j−C_ij−t*_ij}²` over the box, solved by
/// projected semismooth Newton.
#[allow(clippy::too_many_arguments)]
pub fn prox_map(
    g: &[f64],
    x0: &DualPoint,
    theta: f64,
    bx: &BoxV,
    problem: &UotProblem,
    eta: f64,
    constants: &DerivedConstants,
    inner_tol: f64,
    inner_max_iters: usize,
) -> Result<ProxOutcome> {
    let n = problem.n();
    if g.len() != DualPoint::flat_len(n) || x0.n() != n || bx.n() != n {
        return Err(UotError::DimensionMismatch {
            context: "prox_map",
            expected: DualPoint::flat_len(n),
            got: g.len(),
        });
    }
    if !(theta.is_finite() && theta > 0.0) {
        return Err(UotError::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    let r = theta / constants.strong_convexity;
    let c = constants.coupling;
    let curvature = c * (1.0 + r);
    let mut center = vec![0.0; 2 * n];
    for i in 0..n {
        center[i] = (r * c * x0.u[i] - g[i]) / curvature;
        center[n + i] = (r * c * x0.v[i] - g[n + i]) / curvature;
    }
    let weight = (1.0 + r) / (2.0 * eta);
    let cost = problem.cost().entries();
    let mut t_star = Array2::zeros((n, n));
    for ((i, j), ts) in t_star.indexed_iter_mut() {
        let value = (r / (2.0 * eta) * x0.t[[i, j]] - g[2 * n + i * n + j]) / weight;
        if value < 0.0 {
            return Err(UotError::InvalidParameter(format!(
                "prox t-block center is negative at ({i},{j}): {value}"
            )));
        }
        *ts = value;
    }
    let offsets = cost + &t_star;
    let lower: Vec<f64> = bx.u_lo.iter().chain(bx.v_lo.iter()).copied().collect();
    let upper = vec![bx.upper; 2 * n];
    let objective = HingeObjective {
        n,
        separable: Separable::Quadratic {
            curvature,
            center: &center,
        },
        weight,
        offsets: &offsets,
        lower: &lower,
        upper: &upper,
    };
    let start: Vec<f64> = x0.u.iter().chain(x0.v.iter()).copied().collect();
    let out = objective.minimize(
        &start,
        NewtonOptions {
            tol: inner_tol,
            max_iters: inner_max_iters,
        },
    );
    let u = Array1::from(out.z[..n].to_vec());
    let v = Array1::from(out.z[n..].to_vec());
    let t = Array2::from_shape_fn((n, n), |(i, j)| {
        t_star[[i, j]].max(u[i] + v[j] - cost[[i, j]])
    });
    Ok(ProxOutcome {
        point: DualPoint { u, v, t },
        residual: out.residual,
        iterations: out.iterations,
        inexact: !out.converged,
    })
}

pub(crate) struct Certificate {
    pub plan: TransportPlan,
    pub g_eta: f64,
    pub f: f64,
    pub gap: f64,
}

/// Plan `X = t/(2η)` of a dual point and its duality gap.
pub(crate) fn certificate(problem: &UotProblem, eta: f64, x: &DualPoint) -> Result<Certificate> {
    let plan_entries = x.t.mapv(|t| t.max(0.0) / (2.0 * eta));
    let plan = TransportPlan::from_raw(plan_entries);
    let sq = plan.sq_norm();
    let f = crate::problem::uot_objective(problem, &plan)?;
    let g_eta = f + eta * sq;
    let lifted = x.lifted(problem.cost().entries());
    let gap = g_eta - dual_value(problem, eta, &lifted)?;
    Ok(Certificate { plan, g_eta, f, gap })
}

fn divergence(iteration: u64, what: &str) -> UotError {
    UotError::Divergence {
        iteration,
        reason: format!("non-finite {what}"),
    }
}

/// Accelerated gradient extrapolation on the squared-ℓ2 regularized dual.
///
/// Returns the plan `X^k = t̄^k/(2η)` built from the θ-weighted average of the
/// prox iterates.
pub fn gem_uot(problem: &UotProblem, config: &GemConfig) -> Result<(TransportPlan, SolveReport)> {
    config.validate()?;
    let start = Instant::now();
    let n = problem.n();
    let eta = config.resolved_eta(problem);
    let constants = derived_constants(problem, eta)?;
    let bx = BoxV::new(problem, &constants);
    let budget = iteration_budget(
        &constants,
        problem,
        eta,
        config.epsilon,
        delta_surrogate(problem, &constants),
    )?;
    let gap_tol = config.resolved_gap_tol();
    let inner_tol = config.resolved_inner_tol();

    let ratio = constants.condition_ratio();
    let alpha = 1.0 - 1.0 / (1.0 + (1.0 + 16.0 * ratio).sqrt());
    let psi = 1.0 / (1.0 - alpha) - 1.0;
    let rho = alpha * constants.strong_convexity / (1.0 - alpha);
    log::debug!("gem_uot: n={n} eta={eta} L/mu={ratio} alpha={alpha} budget={budget}");

    let len = DualPoint::flat_len(n);
    let mut x_prev = DualPoint::zeros(n);
    let mut x_under = vec![0.0; len];
    let mut y_prev = vec![0.0; len];
    let mut y_prev2 = vec![0.0; len];
    let mut y_tilde = vec![0.0; len];
    let mut avg = vec![0.0; len];
    let mut alpha_pow = 1.0;

    let mut gaps = Vec::new();
    let mut trace = Vec::new();
    let mut inexact = 0u64;
    let mut iter = 0u64;
    let (cert, stop_reason) = loop {
        iter += 1;
        for k in 0..len {
            y_tilde[k] = y_prev[k] + alpha * (y_prev[k] - y_prev2[k]);
        }
        let prox = prox_map(
            &y_tilde,
            &x_prev,
            rho,
            &bx,
            problem,
            eta,
            &constants,
            inner_tol,
            config.inner_max_iters,
        )?;
        if prox.inexact {
            inexact += 1;
            log::debug!("gem_uot: inexact prox at iteration {iter} (residual {})", prox.residual);
        }
        let x_t = prox.point;
        if !x_t.is_finite() {
            return Err(divergence(iter, "prox iterate"));
        }
        debug_assert!(x_t.is_feasible(problem.cost().entries(), 1e-9));
        debug_assert!(bx.contains(&x_t.reduced(), 1e-9));
        let flat = x_t.to_flat();
        let flat = flat.as_slice().unwrap();
        for k in 0..len {
            x_under[k] = (flat[k] + psi * x_under[k]) / (1.0 + psi);
        }
        std::mem::swap(&mut y_prev2, &mut y_prev);
        grad_f_eta_flat(problem, constants.coupling, &x_under, &mut y_prev);
        if y_prev.iter().any(|g| !g.is_finite()) {
            return Err(divergence(iter, "gradient"));
        }
        alpha_pow *= alpha;
        let w = (1.0 - alpha) / (1.0 - alpha_pow);
        for k in 0..len {
            avg[k] += w * (flat[k] - avg[k]);
        }
        x_prev = x_t;

        let xbar = DualPoint::from_flat(n, &avg)?;
        let cert = certificate(problem, eta, &xbar)?;
        if !cert.gap.is_finite() {
            return Err(divergence(iter, "duality gap"));
        }
        gaps.push(cert.gap);
        if config.record_trace {
            trace.push(TraceRow {
                iter,
                f: cert.f,
                g_eta: cert.g_eta,
                dual_gap: cert.gap,
                marginal_gap: marginal_gap(&cert.plan, problem.a(), problem.b())?,
            });
        }
        if config.early_stop && cert.gap <= gap_tol {
            break (cert, StopReason::GapTol);
        }
        if config.target_objective.is_some_and(|target| cert.f <= target) {
            break (cert, StopReason::TargetObjective);
        }
        if config.use_budget && iter >= budget {
            break (cert, StopReason::IterBudget);
        }
        if iter >= config.max_iters {
            break (cert, StopReason::MaxIters);
        }
    };

    let report = SolveReport {
        solver: "gem-uot".into(),
        iterations: iter,
        final_objective: cert.f,
        final_reg_objective: cert.g_eta,
        final_duality_gap: cert.gap,
        duality_gap_trace: gaps,
        trace,
        marginal_gap: marginal_gap(&cert.plan, problem.a(), problem.b())?,
        wall_time: start.elapsed().as_secs_f64(),
        stop_reason,
        iteration_budget: Some(budget),
        tau: problem.tau(),
        eta,
        epsilon: config.epsilon,
        inexact_inner_solves: inexact,
    };
    Ok((cert.plan, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{CostMatrix, Measure};
    use ndarray::array;

    fn two_by_two() -> UotProblem {
        UotProblem::new(
            CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap(),
            Measure::new(vec![0.5, 0.5]).unwrap(),
            Measure::new(vec![0.5, 0.5]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn prox_anchors_at_x0_for_large_theta() {
        let p = two_by_two();
        let eta = 0.05;
        let k = derived_constants(&p, eta).unwrap();
        let bx = BoxV::new(&p, &k);
        let x0 = DualPoint {
            u: array![0.2, -0.1],
            v: array![0.1, 0.3],
            t: array![[0.3, 0.0], [0.0, 0.3]],
        };
        let x0 = x0.lifted(p.cost().entries());
        let g = vec![0.0; DualPoint::flat_len(2)];
        let out = prox_map(&g, &x0, 1e8, &bx, &p, eta, &k, 1e-12, 200).unwrap();
        let diff = &out.point.to_flat() - &x0.to_flat();
        assert!(diff.iter().map(|d| d * d).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn prox_rejects_negative_t_center() {
        let p = two_by_two();
        let eta = 0.05;
        let k = derived_constants(&p, eta).unwrap();
        let bx = BoxV::new(&p, &k);
        let mut g = vec![0.0; DualPoint::flat_len(2)];
        g[4] = 1.0;
        assert!(prox_map(&g, &DualPoint::zeros(2), 1.0, &bx, &p, eta, &k, 1e-10, 50).is_err());
    }

    #[test]
    fn zero_gradient_prox_of_origin_is_origin() {
        let p = two_by_two();
        let eta = 0.05;
        let k = derived_constants(&p, eta).unwrap();
        let bx = BoxV::new(&p, &k);
        let g = vec![0.0; DualPoint::flat_len(2)];
        let out = prox_map(&g, &DualPoint::zeros(2), 3.0, &bx, &p, eta, &k, 1e-12, 50).unwrap();
        assert_eq!(out.point, DualPoint::zeros(2));
    }
}

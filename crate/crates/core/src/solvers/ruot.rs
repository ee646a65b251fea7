use std::time::Instant;

use ndarray::Array1;

use super::{GemConfig, SolveReport, StopReason, TraceRow};
use crate::dual::{recover_plan, relaxed_dual_ha, BoxV, ReducedDualPoint};
use crate::error::{Result, UotError};
use crate::problem::{derived_constants, marginal_gap, reg_objective, TransportPlan, UotProblem};

/// Coordinatewise clamp of `u` and `v` onto the potential box.
pub fn box_project(x: &ReducedDualPoint, bx: &BoxV) -> ReducedDualPoint {
    let clamp = |z: &Array1<f64>, lo: &Array1<f64>| {
        Array1::from_iter(z.iter().zip(lo.iter()).map(|(&z, &l)| z.max(l).min(bx.upper)))
    };
    ReducedDualPoint {
        u: clamp(&x.u, &bx.u_lo),
        v: clamp(&x.v, &bx.v_lo),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuotOutput {
    /// `F_a(x̄^k)`, the estimate of the regularized UOT value.
    pub value: f64,
    pub plan: TransportPlan,
    pub dual: ReducedDualPoint,
    pub report: SolveReport,
}

/// `⌈√(12·L_a·n·D²/ε)⌉`
pub fn ruot_budget(relaxed_smoothness: f64, n: usize, potential_bound: f64, epsilon: f64) -> u64 {
    let k = (12.0 * relaxed_smoothness * n as f64 * potential_bound * potential_bound / epsilon)
        .sqrt()
        .ceil();
    (k as u64).max(1)
}

/// Convex gradient extrapolation on the relaxed dual `h_a` over the potential box.
///
/// Runs `t = 1..k` with `α_t = (t−1)/t`, `ψ_t = (t−1)/2`, `ρ_t = 6L_a/t` and
/// averaging weights `θ_t = t`.
pub fn gem_ruot(problem: &UotProblem, config: &GemConfig) -> Result<RuotOutput> {
    config.validate()?;
    let start = Instant::now();
    let n = problem.n();
    let eta = config.resolved_eta(problem);
    let constants = derived_constants(problem, eta)?;
    let bx = BoxV::new(problem, &constants);
    let la = constants.relaxed_smoothness;
    let budget = ruot_budget(la, n, constants.potential_bound, config.epsilon);
    let gap_tol = config.resolved_gap_tol();
    let mass = constants.mass_a + constants.mass_b;

    let mut x_prev = ReducedDualPoint::zeros(n);
    let mut x_under = Array1::<f64>::zeros(2 * n);
    let mut y_prev = Array1::<f64>::zeros(2 * n);
    let mut y_prev2 = Array1::<f64>::zeros(2 * n);
    let mut avg = Array1::<f64>::zeros(2 * n);
    let mut gaps = Vec::new();
    let mut trace = Vec::new();
    let mut iter = 0u64;

    let (value, plan, dual, gap, g_eta, stop_reason) = loop {
        iter += 1;
        let t = iter as f64;
        let alpha_t = (t - 1.0) / t;
        let psi_t = (t - 1.0) / 2.0;
        let rho_t = 6.0 * la / t;
        let y_tilde = &y_prev + &((&y_prev - &y_prev2) * alpha_t);
        let step = ReducedDualPoint::from_flat(n, (x_prev.to_flat() - &y_tilde / rho_t).as_slice().unwrap())?;
        let x_t = box_project(&step, &bx);
        let flat = x_t.to_flat();
        x_under = (&flat + &(&x_under * psi_t)) / (1.0 + psi_t);
        let under = ReducedDualPoint::from_flat(n, x_under.as_slice().unwrap())?;
        let (_, grad) = relaxed_dual_ha(problem, eta, &under)?;
        if grad.iter().any(|g| !g.is_finite()) || !x_t.is_finite() {
            return Err(UotError::Divergence {
                iteration: iter,
                reason: "non-finite iterate".into(),
            });
        }
        y_prev2 = std::mem::replace(&mut y_prev, grad);
        let w = 2.0 / (t + 1.0);
        avg = &avg + &((&flat - &avg) * w);
        x_prev = x_t;

        let xbar = ReducedDualPoint::from_flat(n, avg.as_slice().unwrap())?;
        let (h, _) = relaxed_dual_ha(problem, eta, &xbar)?;
        let value = problem.tau() * mass - h;
        let plan = recover_plan(problem, eta, &xbar)?;
        let g_eta = reg_objective(problem, eta, &plan)?;
        let gap = g_eta - value;
        if !gap.is_finite() {
            return Err(UotError::Divergence {
                iteration: iter,
                reason: "non-finite duality gap".into(),
            });
        }
        gaps.push(gap);
        if config.record_trace {
            trace.push(TraceRow {
                iter,
                f: g_eta - eta * plan.sq_norm(),
                g_eta,
                dual_gap: gap,
                marginal_gap: marginal_gap(&plan, problem.a(), problem.b())?,
            });
        }
        let stop = if config.early_stop && gap <= gap_tol {
            Some(StopReason::GapTol)
        } else if config.target_objective.is_some_and(|target| value <= target) {
            Some(StopReason::TargetObjective)
        } else if config.use_budget && iter >= budget {
            Some(StopReason::IterBudget)
        } else if iter >= config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if let Some(reason) = stop {
            break (value, plan, xbar, gap, g_eta, reason);
        }
    };

    let report = SolveReport {
        solver: "gem-ruot".into(),
        iterations: iter,
        final_objective: g_eta - eta * plan.sq_norm(),
        final_reg_objective: g_eta,
        final_duality_gap: gap,
        duality_gap_trace: gaps,
        trace,
        marginal_gap: marginal_gap(&plan, problem.a(), problem.b())?,
        wall_time: start.elapsed().as_secs_f64(),
        stop_reason,
        iteration_budget: Some(budget),
        tau: problem.tau(),
        eta,
        epsilon: config.epsilon,
        inexact_inner_solves: 0,
    };
    Ok(RuotOutput {
        value,
        plan,
        dual,
        report,
    })
}

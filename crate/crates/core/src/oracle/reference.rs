use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::dual::{recover_plan, relaxed_dual_value, ReducedDualPoint};
use crate::error::{Result, UotError};
use crate::newton::{HingeObjective, NewtonOptions, Separable};
use crate::problem::{reg_objective, uot_objective, TransportPlan, UotProblem};

/// Target projected-gradient norm of the reference solve.
pub const REFERENCE_TOL: f64 = 1e-11;
/// Newton iterations allowed per continuation stage.
const STAGE_MAX_ITERS: usize = 500;
/// Ratio between consecutive η values of the continuation.
const CONTINUATION_FACTOR: f64 = 10.0;
/// η used for the unregularized estimate, relative to (α+β)².
pub const UNREGULARIZED_ETA_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub eta: f64,
    /// `g_η(X^η)`
    pub reg_value: f64,
    /// `f(X^η)`
    pub objective: f64,
    /// `F_a(u, v)`, the dual value at the returned potentials.
    pub dual_value: f64,
    #[serde(skip)]
    pub plan: Option<TransportPlan>,
    pub dual: ReducedDualPoint,
    /// Final gradient norm of `h_a`.
    pub residual: f64,
    /// Gradient norm attainable in double precision at the solution.
    pub residual_floor: f64,
    pub converged: bool,
    pub newton_iterations: usize,
}

impl ReferenceSolution {
    pub fn plan(&self) -> &TransportPlan {
        self.plan.as_ref().expect("reference plan is always populated")
    }
}

/// High-precision minimizer of the relaxed dual `h_a` by Newton continuation in η,
/// followed by plan recovery `X^η = max{0, u+v−C}/(2η)`.
pub fn uot_reference(problem: &UotProblem, eta: f64) -> Result<ReferenceSolution> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(UotError::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    let n = problem.n();
    let mass = problem.a().total() + problem.b().total();
    let weights: Vec<f64> = problem
        .a()
        .as_slice()
        .iter()
        .chain(problem.b().as_slice())
        .copied()
        .collect();
    let lower = vec![f64::NEG_INFINITY; 2 * n];
    let upper = vec![f64::INFINITY; 2 * n];
    let cost = problem.cost().entries();

    let mut schedule = vec![eta];
    let start_eta = (mass * mass).max(1.0) * 1e-2;
    while *schedule.last().unwrap() * CONTINUATION_FACTOR <= start_eta {
        let next = schedule.last().unwrap() * CONTINUATION_FACTOR;
        schedule.push(next);
    }
    schedule.reverse();

    let mut z = vec![0.0; 2 * n];
    let mut outcome = None;
    let mut total_iters = 0;
    for &stage_eta in &schedule {
        let objective = HingeObjective {
            n,
            separable: Separable::Exponential {
                tau: problem.tau(),
                weights: &weights,
            },
            weight: 1.0 / (2.0 * stage_eta),
            offsets: cost,
            lower: &lower,
            upper: &upper,
        };
        let out = objective.minimize(
            &z,
            NewtonOptions {
                tol: REFERENCE_TOL,
                max_iters: STAGE_MAX_ITERS,
            },
        );
        total_iters += out.iterations;
        z.clone_from(&out.z);
        outcome = Some(out);
    }
    let out = outcome.expect("schedule is nonempty");
    if z.iter().any(|x| !x.is_finite()) {
        return Err(UotError::Divergence {
            iteration: total_iters as u64,
            reason: "reference potentials are not finite".into(),
        });
    }
    if !out.converged {
        log::warn!(
            "uot_reference: residual {} above tolerance {} (floor {})",
            out.residual,
            REFERENCE_TOL,
            out.floor
        );
    }
    let dual = ReducedDualPoint {
        u: Array1::from(z[..n].to_vec()),
        v: Array1::from(z[n..].to_vec()),
    };
    let plan = recover_plan(problem, eta, &dual)?;
    Ok(ReferenceSolution {
        eta,
        reg_value: reg_objective(problem, eta, &plan)?,
        objective: uot_objective(problem, &plan)?,
        dual_value: relaxed_dual_value(problem, eta, &dual)?,
        plan: Some(plan),
        dual,
        residual: out.residual,
        residual_floor: out.floor,
        converged: out.converged,
        newton_iterations: total_iters,
    })
}

/// η used by [`uot_kl_estimate`]: `1e-8·(α+β)²`.
pub fn unregularized_eta(problem: &UotProblem) -> f64 {
    let mass = problem.a().total() + problem.b().total();
    UNREGULARIZED_ETA_SCALE * mass * mass
}

/// Estimate of the unregularized optimum: `f(X^η)` at η = 1e-8·(α+β)².
///
/// `f(X^η)` is at least the optimum and exceeds it by at most `η(α+β)²/4`.
pub fn uot_kl_estimate(problem: &UotProblem) -> Result<ReferenceSolution> {
    uot_reference(problem, unregularized_eta(problem))
}

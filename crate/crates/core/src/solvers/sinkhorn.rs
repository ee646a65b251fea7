use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{SolveReport, StopReason, TraceRow};
use crate::dual::{exp_terms, ReducedDualPoint};
use crate::error::{Result, UotError};
use crate::problem::{kl_unchecked, marginal_gap, TransportPlan, UotProblem};

/// Scalings are folded into the potentials once `|ln p|` or `|ln q|` exceeds this.
const ABSORB_LOG: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic weight.
    pub eta: f64,
    pub epsilon: f64,
    pub max_iters: u64,
    /// Stop when one full sweep lowers the dual objective by less than this;
    /// `None` selects `ε·1e-6`.
    pub dual_tol: Option<f64>,
    /// Stop once the unregularized objective of the current plan is at most this value.
    pub target_objective: Option<f64>,
    pub record_trace: bool,
}

impl SinkhornConfig {
    pub fn new(eta: f64, epsilon: f64) -> Self {
        Self {
            eta,
            epsilon,
            max_iters: 100_000,
            dual_tol: None,
            target_objective: None,
            record_trace: false,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, x) in [("eta", self.eta), ("epsilon", self.epsilon)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(UotError::InvalidParameter(format!("{name} must be positive, got {x}")));
            }
        }
        if self.max_iters == 0 {
            return Err(UotError::InvalidParameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Potentials of the entropic dual under exact alternating minimization.
///
/// The potentials are stored as `u = ū + η ln p`, `v = v̄ + η ln q` with the
/// kernel `K̃_ij = exp((ū_i + v̄_j − C_ij)/η)`, so a sweep costs matrix-vector
/// products only; the scalings are absorbed into `ū, v̄` when they grow.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    eta: f64,
    /// τ/(τ+η)
    fi: f64,
    log_a: Array1<f64>,
    log_b: Array1<f64>,
    cost: Array2<f64>,
    u_bar: Array1<f64>,
    v_bar: Array1<f64>,
    p: Array1<f64>,
    q: Array1<f64>,
    kernel: Array2<f64>,
    kernel_cost: Array2<f64>,
    /// `K̃ q` for the current `q`.
    kq: Array1<f64>,
    /// `K̃ᵀ p` for the current `p`.
    ktp: Array1<f64>,
    absorptions: u64,
}

impl SinkhornState {
    pub fn new(problem: &UotProblem, eta: f64) -> Self {
        let n = problem.n();
        let tau = problem.tau();
        let mut state = Self {
            eta,
            fi: tau / (tau + eta),
            log_a: problem.a().weights().mapv(f64::ln),
            log_b: problem.b().weights().mapv(f64::ln),
            cost: problem.cost().entries().clone(),
            u_bar: Array1::zeros(n),
            v_bar: Array1::zeros(n),
            p: Array1::ones(n),
            q: Array1::ones(n),
            kernel: Array2::zeros((n, n)),
            kernel_cost: Array2::zeros((n, n)),
            kq: Array1::zeros(n),
            ktp: Array1::zeros(n),
            absorptions: 0,
        };
        state.rebuild_kernel();
        state
    }

    pub fn u(&self) -> Array1<f64> {
        &self.u_bar + &self.p.mapv(|p| self.eta * p.ln())
    }

    pub fn v(&self) -> Array1<f64> {
        &self.v_bar + &self.q.mapv(|q| self.eta * q.ln())
    }

    pub fn reduced(&self) -> ReducedDualPoint {
        ReducedDualPoint {
            u: self.u(),
            v: self.v(),
        }
    }

    /// Number of times the scalings were folded into the kernel.
    pub fn absorptions(&self) -> u64 {
        self.absorptions
    }

    fn rebuild_kernel(&mut self) {
        let eta = self.eta;
        for ((i, j), k) in self.kernel.indexed_iter_mut() {
            *k = ((self.u_bar[i] + self.v_bar[j] - self.cost[[i, j]]) / eta).exp();
        }
        self.kernel_cost = &self.kernel * &self.cost;
        self.kq = self.kernel.dot(&self.q);
        self.ktp = self.kernel.t().dot(&self.p);
    }

    fn absorb(&mut self) {
        self.u_bar = self.u();
        self.v_bar = self.v();
        self.p.fill(1.0);
        self.q.fill(1.0);
        self.absorptions += 1;
        self.rebuild_kernel();
    }

    fn needs_absorb(&self) -> bool {
        self.p
            .iter()
            .chain(self.q.iter())
            .any(|s| !(s.ln().abs() <= ABSORB_LOG))
    }

    /// Log-domain `u` sweep followed by absorption; used when `K̃ q` underflows.
    fn update_u_log(&mut self) {
        let v = self.v();
        let n = v.len();
        let mut u = Array1::zeros(n);
        for i in 0..n {
            let lse = log_sum_exp((0..n).map(|j| (v[j] - self.cost[[i, j]]) / self.eta));
            u[i] = self.eta * self.fi * (self.log_a[i] - lse);
        }
        self.u_bar = u;
        self.v_bar = v;
        self.p.fill(1.0);
        self.q.fill(1.0);
        self.absorptions += 1;
        self.rebuild_kernel();
    }

    fn update_v_log(&mut self) {
        let u = self.u();
        let n = u.len();
        let mut v = Array1::zeros(n);
        for j in 0..n {
            let lse = log_sum_exp((0..n).map(|i| (u[i] - self.cost[[i, j]]) / self.eta));
            v[j] = self.eta * self.fi * (self.log_b[j] - lse);
        }
        self.u_bar = u;
        self.v_bar = v;
        self.p.fill(1.0);
        self.q.fill(1.0);
        self.absorptions += 1;
        self.rebuild_kernel();
    }

    /// `u_i ← (ητ/(η+τ))·(log a_i − log Σ_j e^{(v_j − C_ij)/η})`
    pub fn update_u(&mut self) {
        if self.kq.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            self.update_u_log();
        } else {
            for i in 0..self.p.len() {
                let scaled = self.u_bar[i] / self.eta;
                let u_new = self.fi * (self.log_a[i] + scaled - self.kq[i].ln());
                self.p[i] = (u_new - scaled).exp();
            }
            if self.needs_absorb() {
                self.absorb();
            }
        }
        self.ktp = self.kernel.t().dot(&self.p);
    }

    /// `v_j ← (ητ/(η+τ))·(log b_j − log Σ_i e^{(u_i − C_ij)/η})`
    pub fn update_v(&mut self) {
        if self.ktp.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            self.update_v_log();
        } else {
            for j in 0..self.q.len() {
                let scaled = self.v_bar[j] / self.eta;
                let v_new = self.fi * (self.log_b[j] + scaled - self.ktp[j].ln());
                self.q[j] = (v_new - scaled).exp();
            }
            if self.needs_absorb() {
                self.absorb();
            }
        }
        self.kq = self.kernel.dot(&self.q);
    }

    /// `X_ij = exp((u_i + v_j − C_ij)/η)`
    pub fn plan(&self) -> Array2<f64> {
        let mut x = self.kernel.clone();
        for ((i, j), e) in x.indexed_iter_mut() {
            *e *= self.p[i] * self.q[j];
        }
        x
    }

    fn row_sums(&self) -> Array1<f64> {
        &self.p * &self.kq
    }

    fn col_sums(&self) -> Array1<f64> {
        &self.q * &self.ktp
    }

    fn transport_cost(&self) -> f64 {
        self.p.dot(&self.kernel_cost.dot(&self.q))
    }
}

struct Measures {
    f: f64,
    /// Entropic objective `f − ηH(X)`.
    reg: f64,
    dual: f64,
    gap: f64,
}

fn measure(problem: &UotProblem, state: &SinkhornState) -> Measures {
    let eta = state.eta;
    let rows = state.row_sums();
    let cols = state.col_sums();
    let cost = state.transport_cost();
    let penalty = problem.tau()
        * (kl_unchecked(rows.iter().copied(), problem.a().weights().iter().copied())
            + kl_unchecked(cols.iter().copied(), problem.b().weights().iter().copied()));
    let f = cost + penalty;
    let (u, v) = (state.u(), state.v());
    let mass = rows.sum();
    // Σ X log X = (⟨u, X1⟩ + ⟨v, Xᵀ1⟩ − ⟨C, X⟩)/η
    let reg = f + u.dot(&rows) + v.dot(&cols) - cost - eta * mass;
    let dual = eta * mass + exp_terms(problem, &u, &v);
    let total = problem.a().total() + problem.b().total();
    Measures {
        f,
        reg,
        dual,
        gap: reg - (problem.tau() * total - dual),
    }
}

/// Alternating exact minimization of the entropic dual.
///
/// Each iteration performs one `u` sweep and one `v` sweep. The reported gap
/// is the entropic primal objective minus the entropic dual value.
pub fn sinkhorn_uot(
    problem: &UotProblem,
    config: &SinkhornConfig,
) -> Result<(TransportPlan, SolveReport)> {
    config.validate()?;
    let start = Instant::now();
    let eta = config.eta;
    let tol = config.dual_tol.unwrap_or(config.epsilon * 1e-6);
    let mut state = SinkhornState::new(problem, eta);
    state.update_u_log();
    let mut prev_dual = f64::INFINITY;
    let mut gaps = Vec::new();
    let mut trace = Vec::new();
    let mut iter = 0u64;
    let (m, stop_reason) = loop {
        iter += 1;
        state.update_u();
        state.update_v();
        let m = measure(problem, &state);
        if !(m.f.is_finite() && m.dual.is_finite() && m.gap.is_finite()) {
            return Err(UotError::Divergence {
                iteration: iter,
                reason: "non-finite potentials or plan".into(),
            });
        }
        gaps.push(m.gap);
        if config.record_trace {
            trace.push(TraceRow {
                iter,
                f: m.f,
                g_eta: m.reg,
                dual_gap: m.gap,
                marginal_gap: marginal_gap(
                    &TransportPlan::from_raw(state.plan()),
                    problem.a(),
                    problem.b(),
                )?,
            });
        }
        let decrease = prev_dual - m.dual;
        prev_dual = m.dual;
        if config.target_objective.is_some_and(|t| m.f <= t) {
            break (m, StopReason::TargetObjective);
        }
        if config.target_objective.is_none() && decrease < tol {
            break (m, StopReason::DualStall);
        }
        if iter >= config.max_iters {
            break (m, StopReason::MaxIters);
        }
    };
    log::debug!("sinkhorn: {iter} iterations, {} absorptions", state.absorptions());
    let plan = TransportPlan::from_raw(state.plan());
    let report = SolveReport {
        solver: "sinkhorn".into(),
        iterations: iter,
        final_objective: m.f,
        final_reg_objective: m.reg,
        final_duality_gap: m.gap,
        duality_gap_trace: gaps,
        trace,
        marginal_gap: marginal_gap(&plan, problem.a(), problem.b())?,
        wall_time: start.elapsed().as_secs_f64(),
        stop_reason,
        iteration_budget: None,
        tau: problem.tau(),
        eta,
        epsilon: config.epsilon,
        inexact_inner_solves: 0,
    };
    Ok((plan, report))
}

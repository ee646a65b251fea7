//! Exact balanced OT by the transportation simplex method.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::problem::{CostMatrix, Measure, TransportPlan};
use crate::rounding::{check_balanced, FeasiblePlan};

/// Pivots with the most-negative rule before switching to Bland's rule.
const DANTZIG_PIVOTS_PER_CELL: usize = 10;
/// Total pivot cap, per cell of the cost matrix.
const PIVOT_CAP_PER_CELL: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpCertificate {
    /// `Σ a_i u_i + Σ b_j v_j`
    pub dual_objective: f64,
    /// Smallest reduced cost `C_ij − u_i − v_j` over all cells.
    pub min_reduced_cost: f64,
    /// Largest `|C_ij − u_i − v_j|` over basic cells.
    pub basic_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// `min ⟨C, X⟩` over the transportation polytope.
    pub value: f64,
    pub plan: FeasiblePlan,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pivots: usize,
    pub certificate: LpCertificate,
}

struct Tableau<'a> {
    n: usize,
    cost: &'a Array2<f64>,
    x: Array2<f64>,
    basic: Array2<bool>,
    cells: Vec<(usize, usize)>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Tableau<'a> {
    fn northwest(cost: &'a Array2<f64>, a: &[f64], b: &[f64]) -> Self {
        let n = a.len();
        let mut x = Array2::zeros((n, n));
        let mut basic = Array2::from_elem((n, n), false);
        let mut cells = Vec::with_capacity(2 * n - 1);
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = supply[i].min(demand[j]).max(0.0);
            x[[i, j]] = q;
            basic[[i, j]] = true;
            cells.push((i, j));
            supply[i] -= q;
            demand[j] -= q;
            if i == n - 1 && j == n - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == n - 1 || supply[i] <= demand[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            n,
            cost,
            x,
            basic,
            cells,
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Adjacency of the basis tree; nodes `0..n` are rows, `n..2n` columns.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let n = self.n;
        let mut adj = vec![Vec::new(); 2 * n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((n + j, k));
            adj[n + j].push((i, k));
        }
        adj
    }

    /// Solves `u_i + v_j = C_ij` on the basis with `u_0 = 0`.
    fn potentials(&mut self) {
        let n = self.n;
        let adj = self.adjacency();
        let mut seen = vec![false; 2 * n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &(next, k) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (i, j) = self.cells[k];
                if next >= n {
                    self.v[j] = self.cost[[i, j]] - self.u[i];
                } else {
                    self.u[i] = self.cost[[i, j]] - self.v[j];
                }
                queue.push_back(next);
            }
        }
    }

    fn reduced(&self, i: usize, j: usize) -> f64 {
        self.cost[[i, j]] - self.u[i] - self.v[j]
    }

    fn entering(&self, bland: bool, tol: f64) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for i in 0..self.n {
            for j in 0..self.n {
                if self.basic[[i, j]] {
                    continue;
                }
                let d = self.reduced(i, j);
                if d >= -tol {
                    continue;
                }
                if bland {
                    return Some((i, j));
                }
                if best.is_none_or(|(_, b)| d < b) {
                    best = Some(((i, j), d));
                }
            }
        }
        best.map(|(c, _)| c)
    }

    /// Basis cells on the tree path from column `j` to row `i`, in order.
    fn cycle(&self, i: usize, j: usize) -> Vec<usize> {
        let n = self.n;
        let adj = self.adjacency();
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; 2 * n];
        let mut seen = vec![false; 2 * n];
        let start = n + j;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = i;
        while node != start {
            let (prev, k) = parent[node].expect("basis is a spanning tree");
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }

    fn pivot(&mut self, i: usize, j: usize) {
        let path = self.cycle(i, j);
        // Cells at even positions of the path lose mass.
        let leaving = path
            .iter()
            .step_by(2)
            .copied()
            .min_by(|&p, &q| {
                let (cp, cq) = (self.cells[p], self.cells[q]);
                self.x[[cp.0, cp.1]]
                    .total_cmp(&self.x[[cq.0, cq.1]])
                    .then(cp.cmp(&cq))
            })
            .expect("cycle has a decreasing cell");
        let (li, lj) = self.cells[leaving];
        let theta = self.x[[li, lj]];
        for (pos, &k) in path.iter().enumerate() {
            let (ci, cj) = self.cells[k];
            if pos % 2 == 0 {
                self.x[[ci, cj]] = (self.x[[ci, cj]] - theta).max(0.0);
            } else {
                self.x[[ci, cj]] += theta;
            }
        }
        self.x[[li, lj]] = 0.0;
        self.x[[i, j]] = theta;
        self.basic[[li, lj]] = false;
        self.basic[[i, j]] = true;
        self.cells[leaving] = (i, j);
    }
}

/// Solves `min ⟨C, X⟩` subject to `X1 = a`, `Xᵀ1 = b`, `X ≥ 0`.
///
/// Starts from the northwest-corner basis and pivots with the most-negative
/// reduced cost, switching to Bland's rule after `10n²` pivots. Optimality is
/// certified through complementary slackness before returning.
pub fn exact_ot_lp(cost: &CostMatrix, a: &Measure, b: &Measure) -> Result<LpSolution> {
    let n = cost.n();
    for m in [a, b] {
        if m.len() != n {
            return Err(UotError::DimensionMismatch {
                context: "exact_ot_lp",
                expected: n,
                got: m.len(),
            });
        }
    }
    check_balanced(a, b)?;
    let c = cost.entries();
    let scale = cost.max_abs().max(1.0);
    let tol = 1e-12 * scale;
    let mut tab = Tableau::northwest(c, a.as_slice(), b.as_slice());
    let switch = DANTZIG_PIVOTS_PER_CELL * n * n;
    let limit = PIVOT_CAP_PER_CELL * n * n + 1000;
    let mut pivots = 0;
    loop {
        tab.potentials();
        let Some((i, j)) = tab.entering(pivots >= switch, tol) else {
            break;
        };
        if pivots >= limit {
            return Err(UotError::PivotLimit { limit });
        }
        tab.pivot(i, j);
        pivots += 1;
    }

    let value: f64 = c.iter().zip(tab.x.iter()).map(|(c, x)| c * x).sum();
    let dual_objective: f64 = a.as_slice().iter().zip(&tab.u).map(|(a, u)| a * u).sum::<f64>()
        + b.as_slice().iter().zip(&tab.v).map(|(b, v)| b * v).sum::<f64>();
    let mut min_reduced_cost = f64::INFINITY;
    let mut basic_residual: f64 = 0.0;
    for ((i, j), &is_basic) in tab.basic.indexed_iter() {
        let d = tab.reduced(i, j);
        min_reduced_cost = min_reduced_cost.min(d);
        if is_basic {
            basic_residual = basic_residual.max(d.abs());
        }
    }
    let mass = a.total();
    let slack_tol = 1e-9 * scale * mass.max(1.0);
    if min_reduced_cost < -tol || (value - dual_objective).abs() > slack_tol {
        return Err(UotError::Degenerate(format!(
            "transportation simplex failed its optimality certificate: \
             min reduced cost {min_reduced_cost:e}, primal {value}, dual {dual_objective}"
        )));
    }
    Ok(LpSolution {
        value,
        plan: FeasiblePlan::from_plan(TransportPlan::from_raw(tab.x)),
        u: tab.u,
        v: tab.v,
        pivots,
        certificate: LpCertificate {
            dual_objective,
            min_reduced_cost,
            basic_residual,
        },
    })
}

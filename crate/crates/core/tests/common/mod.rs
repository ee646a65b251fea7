#![allow(dead_code)]

use ndarray::Array2;
use uotkit::problem::UotProblem;
use uotkit::synthetic::{generate_synthetic, ExperimentConfig};

pub const TAUS: [f64; 3] = [1.0, 10.0, 55.0];

/// Unbalanced instance `s` of the shared suite: n ∈ {2,…,10}, τ ∈ {1, 10, 55},
/// α = 1, β = 1.5.
pub fn suite_instance(s: u64) -> UotProblem {
    generate_synthetic(&ExperimentConfig {
        seed: 100 + s,
        n: 2 + (s as usize % 9),
        alpha: 1.0,
        beta: 1.5,
        tau: TAUS[s as usize % 3],
        ..ExperimentConfig::default()
    })
    .unwrap()
}

/// Instance on the probability simplex.
pub fn simplex_instance(seed: u64, n: usize, tau: f64) -> UotProblem {
    generate_synthetic(&ExperimentConfig::simplex(seed, n, tau)).unwrap()
}

/// Minimum of `⟨C, X⟩` over all vertices of the transportation polytope,
/// enumerated as spanning-tree supports of `2n − 1` cells.
pub fn vertex_enumeration(c: &Array2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = 2 * n - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells.len()) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let support: Vec<(usize, usize)> =
            (0..cells.len()).filter(|&b| mask >> b & 1 == 1).map(|b| cells[b]).collect();
        // Peel leaves: a row or column with a single unfixed support cell
        // determines that cell.
        let mut x = vec![None; support.len()];
        let mut rem_r = a.to_vec();
        let mut rem_c = b.to_vec();
        loop {
            let mut progressed = false;
            for line in 0..2 * n {
                let free: Vec<usize> = (0..support.len())
                    .filter(|&s| {
                        x[s].is_none()
                            && if line < n { support[s].0 == line } else { support[s].1 == line - n }
                    })
                    .collect();
                if free.len() == 1 {
                    let s = free[0];
                    let val = if line < n { rem_r[line] } else { rem_c[line - n] };
                    x[s] = Some(val);
                    rem_r[support[s].0] -= val;
                    rem_c[support[s].1] -= val;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        if x.iter().any(Option::is_none) {
            continue;
        }
        let feasible = x.iter().all(|v| v.unwrap() >= -1e-12)
            && rem_r.iter().chain(&rem_c).all(|r| r.abs() < 1e-12);
        if feasible {
            let cost: f64 = support.iter().zip(&x).map(|(&(i, j), v)| c[[i, j]] * v.unwrap()).sum();
            best = best.min(cost);
        }
    }
    best
}

mod common;

use ndarray::Array2;

use common::{simplex_instance, suite_instance};
use uotkit::color::{
    color_transfer, quantize_image, quantized_image, ColorTransferConfig, RgbImage,
};
use uotkit::io::{read_plan, read_problem, write_plan, write_problem};
use uotkit::oracle::{theorem2_check, theorem4_check, uot_kl_estimate, uot_reference};
use uotkit::problem::{marginal_gap, CostMatrix, Measure, UotProblem};
use uotkit::rounding::gem_ot;
use uotkit::solvers::{gem_uot, sinkhorn_uot, GemConfig, SinkhornConfig};

#[test]
fn gem_gap_trace_settles_in_second_half() {
    // The gap of the averaged iterate can rise during the early transient
    // (observed up to iteration ~120 on this suite), so only the second half
    // of each run is checked.
    for s in 0..20 {
        let p = suite_instance(s);
        let (_, r) = gem_uot(&p, &GemConfig::new(1e-3)).unwrap();
        let half = r.duality_gap_trace.len() / 2;
        for (k, w) in r.duality_gap_trace.windows(2).enumerate().skip(half) {
            assert!(w[1] <= w[0] + 1e-9, "instance {s}, iteration {}: {} -> {}", k + 2, w[0], w[1]);
        }
    }
}

#[test]
fn gem_full_budget_reaches_epsilon() {
    for s in 0..6 {
        let p = suite_instance(s);
        let eps = 1e-2;
        let mut config = GemConfig::new(eps);
        config.early_stop = false;
        let (x, r) = gem_uot(&p, &config).unwrap();
        assert_eq!(Some(r.iterations), r.iteration_budget);
        let reference = uot_kl_estimate(&p).unwrap().objective;
        let f = uotkit::problem::uot_objective(&p, &x).unwrap();
        assert!(f - reference <= eps, "instance {s}: {f} vs {reference}");
    }
}

#[test]
fn solvers_are_deterministic() {
    let p = suite_instance(4);
    let (x1, mut r1) = gem_uot(&p, &GemConfig::new(1e-2)).unwrap();
    let (x2, mut r2) = gem_uot(&p, &GemConfig::new(1e-2)).unwrap();
    r1.wall_time = 0.0;
    r2.wall_time = 0.0;
    assert_eq!(x1, x2);
    assert_eq!(r1, r2);
    let config = SinkhornConfig::new(1e-2, 1e-2);
    assert_eq!(sinkhorn_uot(&p, &config).unwrap().0, sinkhorn_uot(&p, &config).unwrap().0);
}

#[test]
fn gem_plan_matches_reference_plan() {
    let p = suite_instance(3);
    let eta = 0.05;
    let mut config = GemConfig::new(1e-6);
    config.eta = Some(eta);
    config.gap_tol = Some(1e-11);
    let (x, _) = gem_uot(&p, &config).unwrap();
    let r = uot_reference(&p, eta).unwrap();
    let worst = (x.entries() - r.plan().entries()).iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn reference_is_permutation_invariant() {
    let p = suite_instance(7);
    let n = p.n();
    let rows: Vec<usize> = (0..n).rev().collect();
    let cols: Vec<usize> = (0..n).map(|j| (j + 2) % n).collect();
    let c = p.cost().entries();
    let permuted = UotProblem::new(
        CostMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| c[[rows[i], cols[j]]])).unwrap(),
        Measure::new(rows.iter().map(|&i| p.a().as_slice()[i]).collect::<Vec<_>>()).unwrap(),
        Measure::new(cols.iter().map(|&j| p.b().as_slice()[j]).collect::<Vec<_>>()).unwrap(),
        p.tau(),
    )
    .unwrap();
    for eta in [1e-2, 1e-6] {
        let v1 = uot_reference(&p, eta).unwrap().reg_value;
        let v2 = uot_reference(&permuted, eta).unwrap().reg_value;
        assert!((v1 - v2).abs() <= 1e-8, "{v1} vs {v2}");
    }
}

#[test]
fn marginal_gap_shrinks_with_tau() {
    let p = simplex_instance(31, 6, 1.0);
    let grid = [10.0, 20.0, 40.0, 80.0, 160.0, 1e8];
    let rows = theorem2_check(&p, &grid).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].empirical_gap <= w[0].empirical_gap + 1e-9);
    }
    assert!(rows.last().unwrap().empirical_gap <= 1e-6);
    assert!(rows.iter().all(|r| r.satisfied));
}

#[test]
fn distance_gap_shrinks_with_tau() {
    let p = simplex_instance(32, 5, 1.0);
    let rows = theorem4_check(&p, &[10.0, 20.0, 40.0, 80.0, 160.0]).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].bound.empirical_gap <= w[0].bound.empirical_gap + 1e-9);
    }
    assert!(rows.iter().all(|r| r.bound.satisfied && r.lower_satisfied));
}

#[test]
fn zero_diagonal_cost_retrieval() {
    let n = 5;
    let p = simplex_instance(33, n, 1.0);
    let c = CostMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            p.cost().entries()[[i, j]]
        }
    }))
    .unwrap();
    let eps = 0.05;
    let (y, report) = gem_ot(&c, p.a(), p.a(), eps).unwrap();
    assert!(report.objective <= eps);
    assert!(marginal_gap(y.as_plan(), p.a(), p.a()).unwrap() <= 1e-9);
}

fn gradient_image() -> RgbImage {
    let (w, h) = (24, 20);
    let pixels = (0..w * h)
        .map(|k| {
            let (x, y) = (k % w, k / w);
            [(x * 10) as u8, (y * 12) as u8, ((x * y) % 256) as u8]
        })
        .collect();
    RgbImage::new(w, h, pixels).unwrap()
}

#[test]
fn identity_color_transfer_keeps_quantized_image() {
    let img = gradient_image();
    let config = ColorTransferConfig {
        n: 12,
        tau: Some(1000.0),
        ..ColorTransferConfig::default()
    };
    let out = color_transfer(&img, &img, &config).unwrap();
    let q = quantize_image(&img, 12, config.seed).unwrap();
    let expected = quantized_image(&img, &q);
    for (a, b) in out.image.pixels.iter().zip(&expected.pixels) {
        for ch in 0..3 {
            assert!((a[ch] as i32 - b[ch] as i32).abs() <= 1, "{a:?} vs {b:?}");
        }
    }
    let c = uotkit::color::color_cost_matrix(
        &out.histograms.source_centroids,
        &out.histograms.target_centroids,
    )
    .unwrap();
    assert!((0..12).all(|k| c.entries()[[k, k]] == 0.0));
}

#[test]
fn quantization_properties() {
    let img = gradient_image();
    let q = quantize_image(&img, 20, 5).unwrap();
    for w in q.objective_trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12));
    }
    let h = q.histogram().unwrap();
    assert!((h.total() - 1.0).abs() <= 1e-12);
    assert_eq!(q, quantize_image(&img, 20, 5).unwrap());
    assert!(q
        .centroids
        .iter()
        .all(|c| c.iter().all(|&x| (0.0..=255.0).contains(&x))));
}

#[test]
fn problem_and_plan_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = suite_instance(5);
    let path = dir.path().join("p.json");
    write_problem(&path, &p).unwrap();
    assert_eq!(read_problem(&path).unwrap(), p);

    let (x, _) = gem_uot(&p, &GemConfig::new(1e-2)).unwrap();
    let plan_path = dir.path().join("x.csv");
    write_plan(&plan_path, x.entries()).unwrap();
    let back = read_plan(&plan_path).unwrap();
    for (a, b) in back.entries().iter().zip(x.entries()) {
        assert!((a - b).abs() <= 1e-15 * b.abs());
    }
}

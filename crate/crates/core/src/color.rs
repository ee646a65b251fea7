//! Palette-level color transfer: k-means quantization of two images, UOT
//! between the two color histograms, and barycentric recoloring.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::io::atomic_write;
use crate::problem::{sparsity_ratio, CostMatrix, Measure, TransportPlan, UotProblem};
use crate::solvers::{gem_uot, sinkhorn_uot, GemConfig, SinkhornConfig, SolveReport};

pub const DEFAULT_PALETTE: usize = 64;
pub const SPARSITY_THRESHOLD: f64 = 1e-10;
const LLOYD_MAX_ITERS: usize = 100;
const LLOYD_MOVE_TOL: f64 = 1e-3;
/// `3·255²`, the squared distance between black and white.
const COST_SCALE: f64 = 3.0 * 255.0 * 255.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(UotError::DimensionMismatch {
                context: "image pixels",
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(UotError::Parse("truncated PPM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn ppm_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = ppm_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| UotError::Parse(format!("bad PPM {what}")))
}

/// Parses a binary PPM (P6). Maxvals below 255 are rescaled to 0..=255.
pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    if ppm_token(bytes, &mut pos)? != b"P6" {
        return Err(UotError::Parse("not a binary PPM (P6) file".into()));
    }
    let width = ppm_number(bytes, &mut pos, "width")?;
    let height = ppm_number(bytes, &mut pos, "height")?;
    let maxval = ppm_number(bytes, &mut pos, "maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(UotError::Parse(format!("unsupported PPM maxval {maxval}")));
    }
    pos += 1;
    let len = width * height * 3;
    let data = bytes
        .get(pos..pos + len)
        .ok_or_else(|| UotError::Parse("truncated PPM pixel data".into()))?;
    let scale = |v: u8| -> u8 {
        if maxval == 255 {
            v
        } else {
            ((v.min(maxval as u8) as f64) * 255.0 / maxval as f64).round() as u8
        }
    };
    let pixels = data
        .chunks_exact(3)
        .map(|p| [scale(p[0]), scale(p[1]), scale(p[2])])
        .collect();
    RgbImage::new(width, height, pixels)
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len() * 3);
    for p in &image.pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    parse_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    atomic_write(path, &encode_ppm(image))
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a PPM, or a PNG when built with the `png` feature.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    if is_png(path) {
        return read_png(path);
    }
    read_ppm(path)
}

/// Writes a PPM, or a PNG when the path ends in `.png` and the `png` feature is on.
pub fn write_image(path: &Path, image: &RgbImage) -> Result<()> {
    if is_png(path) {
        return write_png(path, image);
    }
    write_ppm(path, image)
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| UotError::Parse(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    RgbImage::new(w as usize, h as usize, pixels)
}

#[cfg(feature = "png")]
fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let raw: Vec<u8> = image.pixels.iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, raw)
        .ok_or_else(|| UotError::InvalidParameter("image buffer size mismatch".into()))?;
    let mut bytes = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| UotError::Parse(format!("cannot encode PNG: {e}")))?;
    atomic_write(path, &bytes.into_inner())
}

#[cfg(not(feature = "png"))]
fn read_png(path: &Path) -> Result<RgbImage> {
    Err(UotError::InvalidParameter(format!(
        "{}: PNG support requires the `png` feature",
        path.display()
    )))
}

#[cfg(not(feature = "png"))]
fn write_png(path: &Path, _image: &RgbImage) -> Result<()> {
    read_png(path).map(|_| ())
}

fn sq_dist(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    (0..3).map(|k| (x[k] - y[k]).powi(2)).sum()
}

fn nearest(x: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantization {
    pub centroids: Vec<[f64; 3]>,
    /// Centroid index of every pixel.
    pub assignments: Vec<usize>,
    /// Pixel count per centroid; every entry is positive.
    pub counts: Vec<usize>,
    pub iterations: usize,
    /// Sum of squared pixel-to-centroid distances at each assignment step.
    pub objective_trace: Vec<f64>,
}

impl Quantization {
    /// Histogram `count_k / (l·h)`.
    pub fn histogram(&self) -> Result<Measure> {
        let total: usize = self.counts.iter().sum();
        Measure::new(
            self.counts
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect::<Vec<_>>(),
        )
    }
}

/// k-means on RGB values with seeded farthest-point initialization.
///
/// Lloyd iterations stop when no centroid moves by `1e-3` or more, or after
/// 100 iterations. A centroid that loses all its pixels is moved to the
/// color farthest from its current centroid.
pub fn quantize_image(image: &RgbImage, n: usize, seed: u64) -> Result<Quantization> {
    if n == 0 {
        return Err(UotError::InvalidParameter("palette size must be at least 1".into()));
    }
    let mut distinct: Vec<[u8; 3]> = image.pixels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if n > distinct.len() {
        return Err(UotError::InvalidParameter(format!(
            "palette size {n} exceeds the {} distinct colors of the image",
            distinct.len()
        )));
    }
    let colors: Vec<[f64; 3]> = distinct
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let mut weights = vec![0usize; colors.len()];
    for p in &image.pixels {
        weights[distinct.binary_search(p).expect("pixel is in its own palette")] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![colors[rng.random_range(0..colors.len())]];
    let mut dist: Vec<f64> = colors.iter().map(|c| sq_dist(c, &centroids[0])).collect();
    while centroids.len() < n {
        let far = argmax(&dist);
        let c = colors[far];
        centroids.push(c);
        for (d, x) in dist.iter_mut().zip(&colors) {
            *d = d.min(sq_dist(x, &c));
        }
    }

    let mut label = vec![0usize; colors.len()];
    let mut objective_trace = Vec::new();
    let mut iterations = 0;
    let counts = loop {
        iterations += 1;
        let mut counts = vec![0usize; n];
        let mut objective = 0.0;
        let mut own = vec![0.0; colors.len()];
        for (idx, x) in colors.iter().enumerate() {
            let (k, d) = nearest(x, &centroids);
            label[idx] = k;
            counts[k] += weights[idx];
            own[idx] = d;
            objective += weights[idx] as f64 * d;
        }
        objective_trace.push(objective);
        if counts.contains(&0) && iterations < LLOYD_MAX_ITERS {
            for k in (0..n).filter(|&k| counts[k] == 0) {
                let far = argmax(&own);
                centroids[k] = colors[far];
                own[far] = 0.0;
            }
            continue;
        }
        let mut sums = vec![[0.0; 3]; n];
        for (idx, x) in colors.iter().enumerate() {
            let w = weights[idx] as f64;
            for ch in 0..3 {
                sums[label[idx]][ch] += w * x[ch];
            }
        }
        let mut moved: f64 = 0.0;
        for k in 0..n {
            if counts[k] == 0 {
                continue;
            }
            let c = sums[k].map(|s| s / counts[k] as f64);
            moved = moved.max(sq_dist(&c, &centroids[k]).sqrt());
            centroids[k] = c;
        }
        if moved < LLOYD_MOVE_TOL || iterations >= LLOYD_MAX_ITERS {
            break counts;
        }
    };
    if counts.contains(&0) {
        return Err(UotError::Degenerate(
            "k-means left an empty cluster after the iteration cap".into(),
        ));
    }
    let assignments = image
        .pixels
        .iter()
        .map(|p| label[distinct.binary_search(p).expect("pixel is in its own palette")])
        .collect();
    Ok(Quantization {
        centroids,
        assignments,
        counts,
        iterations,
        objective_trace,
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Image whose pixels are replaced by their (rounded) centroid colors.
pub fn quantized_image(image: &RgbImage, q: &Quantization) -> RgbImage {
    let palette: Vec<[u8; 3]> = q.centroids.iter().map(to_rgb).collect();
    RgbImage {
        width: image.width,
        height: image.height,
        pixels: q.assignments.iter().map(|&k| palette[k]).collect(),
    }
}

fn to_rgb(c: &[f64; 3]) -> [u8; 3] {
    c.map(|x| x.round().clamp(0.0, 255.0) as u8)
}

/// `C_kl = ‖s_k − t_l‖² / (3·255²)`.
pub fn color_cost_matrix(source: &[[f64; 3]], target: &[[f64; 3]]) -> Result<CostMatrix> {
    if source.len() != target.len() {
        return Err(UotError::DimensionMismatch {
            context: "color_cost_matrix",
            expected: source.len(),
            got: target.len(),
        });
    }
    let n = source.len();
    CostMatrix::new(Array2::from_shape_fn((n, n), |(k, l)| {
        sq_dist(&source[k], &target[l]) / COST_SCALE
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogramPair {
    pub source_centroids: Vec<[f64; 3]>,
    pub target_centroids: Vec<[f64; 3]>,
    pub a: Measure,
    pub b: Measure,
    pub source_assignments: Vec<usize>,
    pub target_assignments: Vec<usize>,
}

pub fn histogram_pair(
    source: &RgbImage,
    target: &RgbImage,
    n: usize,
    seed: u64,
) -> Result<ColorHistogramPair> {
    let qs = quantize_image(source, n, seed)?;
    let qt = quantize_image(target, n, seed)?;
    Ok(ColorHistogramPair {
        a: qs.histogram()?,
        b: qt.histogram()?,
        source_centroids: qs.centroids,
        target_centroids: qt.centroids,
        source_assignments: qs.assignments,
        target_assignments: qt.assignments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorSolver {
    GemUot,
    Sinkhorn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorTransferConfig {
    pub n: usize,
    pub seed: u64,
    pub solver: ColorSolver,
    /// `None` selects `10‖C‖∞`.
    pub tau: Option<f64>,
    pub epsilon: f64,
    /// ℓ2 or entropic weight; `None` selects the solver's default.
    pub eta: Option<f64>,
    pub max_iters: u64,
}

impl Default for ColorTransferConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_PALETTE,
            seed: 0,
            solver: ColorSolver::GemUot,
            tau: None,
            epsilon: 1e-2,
            eta: None,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorTransferReport {
    pub version: String,
    pub solver: ColorSolver,
    pub n: usize,
    pub seed: u64,
    pub tau: f64,
    pub eta: f64,
    pub sparsity_threshold: f64,
    /// Fraction of plan entries at most `sparsity_threshold`.
    pub sparsity: f64,
    /// Fraction of exactly zero plan entries.
    pub sparsity_zero: f64,
    pub solve: SolveReport,
}

#[derive(Debug, Clone)]
pub struct ColorTransferOutput {
    pub image: RgbImage,
    pub histograms: ColorHistogramPair,
    pub plan: TransportPlan,
    pub report: ColorTransferReport,
}

/// Maps centroid `k` to `Σ_l X_kl t_l / Σ_l X_kl`; empty rows keep `s_k`.
pub fn barycentric_palette(
    plan: &TransportPlan,
    source: &[[f64; 3]],
    target: &[[f64; 3]],
) -> Vec<[f64; 3]> {
    plan.entries()
        .outer_iter()
        .zip(source)
        .map(|(row, s)| {
            let mass: f64 = row.sum();
            if mass <= 0.0 {
                return *s;
            }
            let mut c = [0.0; 3];
            for (x, t) in row.iter().zip(target) {
                for ch in 0..3 {
                    c[ch] += x * t[ch];
                }
            }
            c.map(|v| v / mass)
        })
        .collect()
}

pub fn color_transfer(
    source: &RgbImage,
    target: &RgbImage,
    config: &ColorTransferConfig,
) -> Result<ColorTransferOutput> {
    let hist = histogram_pair(source, target, config.n, config.seed)?;
    let cost = color_cost_matrix(&hist.source_centroids, &hist.target_centroids)?;
    let tau = match config.tau {
        Some(t) => t,
        // A single shared color gives C = 0; any positive τ is then valid.
        None if cost.max_abs() == 0.0 => 10.0,
        None => 10.0 * cost.max_abs(),
    };
    let problem = UotProblem::new(cost, hist.a.clone(), hist.b.clone(), tau)?;
    let (plan, solve) = match config.solver {
        ColorSolver::GemUot => {
            let mut gem = GemConfig::new(config.epsilon);
            gem.eta = config.eta;
            gem.max_iters = config.max_iters;
            gem_uot(&problem, &gem)?
        }
        ColorSolver::Sinkhorn => {
            let mass = problem.a().total() + problem.b().total();
            let eta = config.eta.unwrap_or(2.0 * config.epsilon / mass);
            let mut sk = SinkhornConfig::new(eta, config.epsilon);
            sk.max_iters = config.max_iters;
            sinkhorn_uot(&problem, &sk)?
        }
    };
    let palette = barycentric_palette(&plan, &hist.source_centroids, &hist.target_centroids);
    let palette: Vec<[u8; 3]> = palette.iter().map(to_rgb).collect();
    let image = RgbImage {
        width: source.width,
        height: source.height,
        pixels: hist.source_assignments.iter().map(|&k| palette[k]).collect(),
    };
    let report = ColorTransferReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        solver: config.solver,
        n: config.n,
        seed: config.seed,
        tau,
        eta: solve.eta,
        sparsity_threshold: SPARSITY_THRESHOLD,
        sparsity: sparsity_ratio(&plan, SPARSITY_THRESHOLD),
        sparsity_zero: sparsity_ratio(&plan, 0.0),
        solve,
    };
    Ok(ColorTransferOutput {
        image,
        histograms: hist,
        plan,
        report,
    })
}

//! Sub-pixel laser stripe centers from Hessian ridge analysis.
//!
//! The image is convolved with separable Gaussian derivative kernels
//! (reflective borders). A pixel is a ridge candidate when the Hessian
//! eigenvalue of largest magnitude is negative and at least `threshold` in
//! magnitude; the center is the second-order Taylor extremum along the
//! matching eigenvector. Candidates whose step leaves the pixel are dropped.

use nalgebra::{Matrix2, Vector2};

use crate::exec::Exec;
use crate::image::GrayImage;

/// Largest accepted Taylor step length, pixels.
pub const MAX_STEP: f64 = 0.6;
/// Largest accepted step component per axis, pixels.
pub const MAX_AXIS_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RidgePoint {
    pub pixel: Vector2<f64>,
    /// Unit direction across the ridge.
    pub normal: Vector2<f64>,
    /// Magnitude of the negative second derivative across the ridge.
    pub strength: f64,
}

struct Kernels {
    g0: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl Kernels {
    /// `g1` satisfies `-Σ k g1[k] = 1`; `g2` is zero-mean with
    /// `Σ k²/2 g2[k] = 1`, so both are exact on low-order polynomials.
    fn new(sigma: f64) -> Self {
        let radius = (4.0 * sigma).ceil().max(1.0) as usize;
        let ks: Vec<f64> = (0..=2 * radius).map(|i| i as f64 - radius as f64).collect();
        let s2 = sigma * sigma;
        let gauss: Vec<f64> = ks.iter().map(|k| (-k * k / (2.0 * s2)).exp()).collect();
        let sum: f64 = gauss.iter().sum();
        let g0: Vec<f64> = gauss.iter().map(|g| g / sum).collect();

        let raw1: Vec<f64> = ks.iter().zip(&g0).map(|(k, g)| -k / s2 * g).collect();
        let m1: f64 = ks.iter().zip(&raw1).map(|(k, h)| -k * h).sum();
        let g1 = raw1.iter().map(|h| h / m1).collect();

        let raw2: Vec<f64> = ks.iter().zip(&g0).map(|(k, g)| (k * k / s2 - 1.0) / s2 * g).collect();
        let mean2 = raw2.iter().sum::<f64>() / raw2.len() as f64;
        let raw2: Vec<f64> = raw2.iter().map(|h| h - mean2).collect();
        let m2: f64 = ks.iter().zip(&raw2).map(|(k, h)| k * k / 2.0 * h).sum();
        let g2 = raw2.iter().map(|h| h / m2).collect();
        Kernels { g0, g1, g2 }
    }
}

/// Whole-sample reflection of `i` into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// `out(x) = Σ_k f(x - k) h(k)` along rows.
fn convolve_rows(src: &[f64], w: usize, h: usize, kernel: &[f64], exec: Exec) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    exec.map_range(h, |y| {
        let row = &src[y * w..(y + 1) * w];
        (0..w)
            .map(|x| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| row[reflect(x as isize - (j as isize - r), w)] * kv)
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    })
    .concat()
}

fn convolve_cols(src: &[f64], w: usize, h: usize, kernel: &[f64], exec: Exec) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    exec.map_range(h, |y| {
        (0..w)
            .map(|x| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| src[reflect(y as isize - (j as isize - r), h) * w + x] * kv)
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    })
    .concat()
}

/// Ridge centers of bright stripes, in row-major pixel order.
pub fn extract_centers(img: &GrayImage, sigma: f64, threshold: f64, exec: Exec) -> Vec<RidgePoint> {
    let (w, h) = (img.width(), img.height());
    if img.is_empty() || !(sigma > 0.0) {
        return Vec::new();
    }
    let k = Kernels::new(sigma);
    let f = img.to_f64();
    let sx0 = convolve_rows(&f, w, h, &k.g0, exec);
    let sx1 = convolve_rows(&f, w, h, &k.g1, exec);
    let sx2 = convolve_rows(&f, w, h, &k.g2, exec);
    let rx = convolve_cols(&sx1, w, h, &k.g0, exec);
    let ry = convolve_cols(&sx0, w, h, &k.g1, exec);
    let rxx = convolve_cols(&sx2, w, h, &k.g0, exec);
    let ryy = convolve_cols(&sx0, w, h, &k.g2, exec);
    let rxy = convolve_cols(&sx1, w, h, &k.g1, exec);

    let margin = (2.0 * sigma).ceil() as usize;
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    exec.map_range(h - 2 * margin, |row| {
        let y = row + margin;
        let mut out = Vec::new();
        for x in margin..w - margin {
            let i = y * w + x;
            let hess = Matrix2::new(rxx[i], rxy[i], rxy[i], ryy[i]);
            let eig = hess.symmetric_eigen();
            let j = if eig.eigenvalues[0].abs() >= eig.eigenvalues[1].abs() { 0 } else { 1 };
            let lambda = eig.eigenvalues[j];
            if !(lambda < 0.0 && -lambda >= threshold) {
                continue;
            }
            let n: Vector2<f64> = eig.eigenvectors.column(j).into_owned();
            let t = -(rx[i] * n.x + ry[i] * n.y) / lambda;
            let step = n * t;
            if step.norm() > MAX_STEP || step.x.abs() > MAX_AXIS_STEP || step.y.abs() > MAX_AXIS_STEP {
                continue;
            }
            out.push(RidgePoint {
                pixel: Vector2::new(x as f64, y as f64) + step,
                normal: n,
                strength: -lambda,
            });
        }
        out
    })
    .concat()
}

/// Orders centers along the dominant stripe direction (principal axis).
///
/// The axis is oriented so the last input point does not precede the first,
/// which makes reversed input produce reversed output. Equal projections are
/// ordered by `(v, u)`.
pub fn order_centers(points: &[RidgePoint]) -> Vec<Vector2<f64>> {
    let px: Vec<Vector2<f64>> = points.iter().map(|p| p.pixel).collect();
    if px.len() < 2 {
        return px;
    }
    let mean = px.iter().fold(Vector2::zeros(), |a, p| a + p) / px.len() as f64;
    let mut cov = Matrix2::zeros();
    for p in &px {
        let r = p - mean;
        cov += r * r.transpose();
    }
    let eig = cov.symmetric_eigen();
    let j = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let mut axis: Vector2<f64> = eig.eigenvectors.column(j).into_owned();
    let span = (px[px.len() - 1] - px[0]).dot(&axis);
    if span < 0.0 || (span == 0.0 && axis[axis.iamax()] < 0.0) {
        axis = -axis;
    }
    let mut keyed: Vec<(f64, Vector2<f64>)> = px.iter().map(|p| ((p - mean).dot(&axis), *p)).collect();
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.y.total_cmp(&b.1.y))
            .then(a.1.x.total_cmp(&b.1.x))
    });
    keyed.into_iter().map(|(_, p)| p).collect()
}

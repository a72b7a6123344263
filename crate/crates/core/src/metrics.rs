//! Accuracy measures for calibration and reconstruction.

use std::io::Write;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calib::fit_laser_plane;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Plane, RigidTransform};
use crate::spatial::KdTree;

/// Root of the summed squared differences over all 16 matrix entries.
pub fn matrix_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.matrix() - b.matrix()).iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Correspondence {
    /// Each source point against its nearest target point.
    Nearest,
    /// Source point `i` against target point `i`.
    Matched,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudDistance {
    /// Mean squared distance, mm².
    pub mean_square: f64,
    /// Square root of `mean_square`, mm.
    pub rmse: f64,
}

/// Mean squared distance from `source` points to `target`.
pub fn cloud_distance(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    mode: Correspondence,
    exec: Exec,
) -> Result<CloudDistance> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidParameter("cloud distance needs non-empty clouds".into()));
    }
    let d2: Vec<f64> = match mode {
        Correspondence::Matched => {
            if source.len() != target.len() {
                return Err(Error::InvalidParameter(format!(
                    "matched clouds differ in size: {} vs {}",
                    source.len(),
                    target.len()
                )));
            }
            source
                .iter()
                .zip(target)
                .map(|(s, t)| crate::spatial::squared_distance(s, t))
                .collect()
        }
        Correspondence::Nearest => {
            let tree = KdTree::build(target);
            exec.map_slice(source, |p| tree.nearest(p).expect("non-empty").1)
        }
    };
    let mean_square = d2.iter().sum::<f64>() / d2.len() as f64;
    Ok(CloudDistance {
        mean_square,
        rmse: mean_square.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacOptions {
    pub inlier_tol: f64,
    pub iterations: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            inlier_tol: 0.1,
            iterations: 500,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

fn inliers_of(points: &[Vector3<f64>], plane: &Plane, tol: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| plane.signed_distance(&points[i]).abs() <= tol)
        .collect()
}

/// RANSAC plane with total-least-squares refinement.
///
/// All hypotheses are drawn up front from the seed, so the result does not
/// depend on the execution policy. The hypothesis with the most inliers wins
/// (earliest on ties); its consensus set is refit and re-thresholded until it
/// stops changing. Returns the plane and the sorted inlier indices.
pub fn fit_plane_ransac(points: &[Vector3<f64>], opts: &RansacOptions) -> Result<(Plane, Vec<usize>)> {
    if points.len() < 3 {
        return Err(Error::FitFailure(format!("RANSAC needs 3 or more points, got {}", points.len())));
    }
    if !(opts.inlier_tol > 0.0) {
        return Err(Error::FitFailure(format!(
            "inlier tolerance must be positive, got {}",
            opts.inlier_tol
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples: Vec<Vec<usize>> = (0..opts.iterations.max(1))
        .map(|_| sample(&mut rng, points.len(), 3).into_vec())
        .collect();
    let tol = opts.inlier_tol;
    let counts: Vec<Option<(Plane, usize)>> = opts.exec.map_slice(&samples, |s| {
        let (a, b, c) = (points[s[0]], points[s[1]], points[s[2]]);
        let plane = Plane::from_point_normal(&a, &(b - a).cross(&(c - a))).ok()?;
        let count = points
            .iter()
            .filter(|p| plane.signed_distance(p).abs() <= tol)
            .count();
        Some((plane, count))
    });
    let mut best: Option<(Plane, usize)> = None;
    for c in counts.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| c.1 > b.1) {
            best = Some(c);
        }
    }
    let Some((hyp, count)) = best else {
        return Err(Error::FitFailure("every RANSAC sample was degenerate".into()));
    };
    if count < 3 {
        return Err(Error::FitFailure("no hypothesis reached 3 inliers".into()));
    }
    let mut inliers = inliers_of(points, &hyp, tol);
    let mut plane = hyp;
    for _ in 0..20 {
        let subset: Vec<Vector3<f64>> = inliers.iter().map(|&i| points[i]).collect();
        let Ok((refit, _)) = fit_laser_plane(&subset) else {
            break;
        };
        plane = refit;
        let next = inliers_of(points, &plane, tol);
        if next == inliers || next.len() < 3 {
            break;
        }
        inliers = next;
    }
    Ok((plane, inliers))
}

/// Mean absolute distance of all points to their RANSAC plane, mm.
pub fn flatness_error(points: &[Vector3<f64>], opts: &RansacOptions) -> Result<f64> {
    let (plane, _) = fit_plane_ransac(points, opts)?;
    Ok(points.iter().map(|p| plane.signed_distance(p).abs()).sum::<f64>() / points.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StairOptions {
    pub ransac: RansacOptions,
    /// Plane-1 points averaged against Plane-2.
    pub samples: usize,
    pub nominal: f64,
    /// Largest angle between two treads still accepted as parallel, radians.
    pub max_tread_angle: f64,
}

impl Default for StairOptions {
    fn default() -> Self {
        StairOptions {
            ransac: RansacOptions::default(),
            samples: 500,
            nominal: 30.0,
            max_tread_angle: 10f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StairResult {
    /// Mean distance from sampled Plane-1 points to Plane-2, mm.
    pub distance: f64,
    /// `distance - nominal`, mm.
    pub error: f64,
    pub plane2: Plane,
    pub plane1_points: usize,
    pub plane2_points: usize,
}

/// Step height of a two-tread cloud.
///
/// The largest RANSAC plane is Plane-2 and is refit by least squares. The
/// next extracted plane within `max_tread_angle` of it (a riser is skipped)
/// is Plane-1; `samples` of its points are drawn with the seed and their mean
/// distance to Plane-2 is the step height.
pub fn stair_distance(points: &[Vector3<f64>], opts: &StairOptions) -> Result<StairResult> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut planes: Vec<(Plane, Vec<usize>)> = Vec::new();
    for k in 0..3 {
        if remaining.len() < 3 {
            break;
        }
        let subset: Vec<Vector3<f64>> = remaining.iter().map(|&i| points[i]).collect();
        let ropts = RansacOptions {
            seed: opts.ransac.seed.wrapping_add(k),
            ..opts.ransac
        };
        let Ok((plane, local)) = fit_plane_ransac(&subset, &ropts) else {
            break;
        };
        let global: Vec<usize> = local.iter().map(|&j| remaining[j]).collect();
        let mut used = vec![false; subset.len()];
        for &j in &local {
            used[j] = true;
        }
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(_, &i)| i)
            .collect();
        planes.push((plane, global));
    }
    let Some((_, plane2_idx)) = planes.first() else {
        return Err(Error::FitFailure("stair segmentation found no plane".into()));
    };
    let plane2_pts: Vec<Vector3<f64>> = plane2_idx.iter().map(|&i| points[i]).collect();
    let (plane2, _) = fit_laser_plane(&plane2_pts)?;
    let Some((_, plane1_idx)) = planes
        .iter()
        .skip(1)
        .find(|(p, idx)| idx.len() >= 3 && p.normal_angle(&plane2) <= opts.max_tread_angle)
    else {
        return Err(Error::FitFailure("stair segmentation found fewer than 2 treads".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.ransac.seed);
    let chosen: Vec<usize> = if plane1_idx.len() <= opts.samples {
        plane1_idx.clone()
    } else {
        let mut s: Vec<usize> = sample(&mut rng, plane1_idx.len(), opts.samples)
            .into_iter()
            .map(|j| plane1_idx[j])
            .collect();
        s.sort_unstable();
        s
    };
    let distance = chosen
        .iter()
        .map(|&i| plane2.signed_distance(&points[i]).abs())
        .sum::<f64>()
        / chosen.len() as f64;
    Ok(StairResult {
        distance,
        error: distance - opts.nominal,
        plane2,
        plane1_points: plane1_idx.len(),
        plane2_points: plane2_idx.len(),
    })
}

/// Per-case errors with their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub labels: Vec<String>,
    pub errors: Vec<f64>,
    pub rmse: f64,
    /// Largest absolute error.
    pub max: f64,
}

impl ErrorReport {
    pub fn new(labels: Vec<String>, errors: Vec<f64>) -> Result<Self> {
        if labels.len() != errors.len() {
            return Err(Error::InvalidParameter("one label per error required".into()));
        }
        let rmse = if errors.is_empty() {
            0.0
        } else {
            (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
        };
        let max = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        Ok(ErrorReport {
            labels,
            errors,
            rmse,
            max,
        })
    }

    /// Writes `label,error` rows after `# ` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "label,error")?;
        for (l, e) in self.labels.iter().zip(&self.errors) {
            writeln!(w, "{l},{e}")?;
        }
        Ok(())
    }
}

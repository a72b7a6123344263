use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::RigidTransform;
use crate::spatial::KdTree;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpOptions {
    pub max_iter: usize,
    /// Stop when the trimmed mean-squared error changes by less than this, mm².
    pub tol: f64,
    /// Fraction of closest correspondences kept per iteration, in (0, 1].
    pub trim: f64,
    pub exec: Exec,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions {
            max_iter: 100,
            tol: 1e-9,
            trim: 1.0,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationResult {
    /// Maps source points onto the target.
    pub transform: RigidTransform,
    /// Trimmed nearest-neighbor RMSE at the initial transform, mm.
    pub rmse_before: f64,
    /// Trimmed nearest-neighbor RMSE at `transform`, mm.
    pub rmse_after: f64,
    pub iterations: usize,
    /// Correspondences kept in the final evaluation.
    pub matched: usize,
    pub converged: bool,
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "rigid fit needs 3 or more paired points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    RigidTransform::from_parts(r, cd - r * cs, 1e-9)
}

struct Matches {
    pairs: Vec<(usize, usize)>,
    mse: f64,
}

fn match_trimmed(
    src: &[Vector3<f64>],
    tree: &KdTree,
    t: &RigidTransform,
    keep: usize,
    exec: Exec,
) -> Matches {
    let mut found: Vec<(f64, usize, usize)> = exec.map_range(src.len(), |i| {
        let (j, d2) = tree
            .nearest(&t.transform_point(&src[i]))
            .expect("target is non-empty");
        (d2, i, j)
    });
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    found.truncate(keep);
    let mse = found.iter().map(|f| f.0).sum::<f64>() / keep as f64;
    Matches {
        pairs: found.iter().map(|f| (f.1, f.2)).collect(),
        mse,
    }
}

/// Point-to-point ICP with a k-d tree and optional trimming.
///
/// Each iteration matches every transformed source point to its nearest
/// target point, keeps the `trim` fraction with the smallest distances, and
/// refits the full transform from the original source points. The best
/// transform seen is returned; `converged` is false if `max_iter` ran out.
pub fn icp_register(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    init: RigidTransform,
    opts: &IcpOptions,
) -> Result<RegistrationResult> {
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "registration needs 3 or more points per cloud, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    if !(opts.trim > 0.0 && opts.trim <= 1.0) {
        return Err(Error::InvalidParameter(format!("trim must be in (0, 1], got {}", opts.trim)));
    }
    let keep = ((source.len() as f64 * opts.trim).ceil() as usize).clamp(3, source.len());
    let tree = KdTree::build(target);

    let mut current = init;
    let mut m = match_trimmed(source, &tree, &current, keep, opts.exec);
    let rmse_before = m.mse.sqrt();
    let mut best = (current, m.mse);
    let mut iterations = 0;
    let mut converged = m.mse == 0.0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let (s, d): (Vec<_>, Vec<_>) = m
            .pairs
            .iter()
            .map(|&(i, j)| (source[i], target[j]))
            .unzip();
        let Ok(next) = kabsch(&s, &d) else {
            break;
        };
        let prev = m.mse;
        current = next;
        m = match_trimmed(source, &tree, &current, keep, opts.exec);
        if m.mse < best.1 {
            best = (current, m.mse);
        }
        if (prev - m.mse).abs() < opts.tol {
            converged = true;
        }
    }
    Ok(RegistrationResult {
        transform: best.0,
        rmse_before,
        rmse_after: best.1.sqrt(),
        iterations,
        matched: keep,
        converged,
    })
}

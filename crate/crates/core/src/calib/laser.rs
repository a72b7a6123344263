use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{AxisLine, GalvoVoltages, Plane};

/// A laser plane fitted in `{V0}` at one laser voltage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaserPlaneObservation {
    pub laser_v: GalvoVoltages,
    pub plane: Plane,
    /// RMS orthogonal fit residual, mm.
    pub residual: f64,
}

/// Flips `v` so its largest-magnitude component is positive.
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    if v[v.iamax()] < 0.0 {
        -v
    } else {
        v
    }
}

/// Total-least-squares plane and its RMS orthogonal residual.
///
/// The normal is oriented so its largest component is positive.
pub fn fit_laser_plane(points: &[Vector3<f64>]) -> Result<(Plane, f64)> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "plane fit needs 3 or more points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let r = p - centroid;
        cov += r * r.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lmid, lmax) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    // Collinear or coincident points leave two vanishing directions.
    if !(lmax > 0.0) || lmid <= 1e-18 * lmax {
        return Err(Error::DegenerateFit("points are collinear or coincident".into()));
    }
    let normal = canonical_sign(eig.eigenvectors.column(idx[0]).normalize());
    let plane = Plane::from_point_normal(&centroid, &normal)?;
    let rms = (points
        .iter()
        .map(|p| plane.signed_distance(p).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((plane, rms))
}

/// Rotation axis from laser planes fitted at several mirror angles.
///
/// The direction minimizes `Σ (n · n_i)²` (right singular vector of the
/// stacked normals with the smallest singular value), oriented so its largest
/// component is positive. The point is the minimum-norm least-squares
/// solution of `n_i · P + d_i = 0`, found in the plane orthogonal to the
/// direction.
pub fn calibrate_rotation_axis(planes: &[LaserPlaneObservation]) -> Result<AxisLine> {
    if planes.len() < 3 {
        return Err(Error::Unidentifiable(format!(
            "axis calibration needs 3 or more planes, got {}",
            planes.len()
        )));
    }
    let k = planes.len();
    let mut nmat = DMatrix::<f64>::zeros(k, 3);
    let mut rhs = DVector::<f64>::zeros(k);
    for (i, o) in planes.iter().enumerate() {
        let n = o.plane.normal();
        for c in 0..3 {
            nmat[(i, c)] = n[c];
        }
        rhs[i] = -o.plane.d();
    }
    let svd = nmat.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let s_mid = svd.singular_values[order[1]];
    let s_max = svd.singular_values[order[2]];
    if s_mid <= 1e-12 * s_max {
        return Err(Error::Unidentifiable(
            "plane normals are parallel; rotation axis undefined".into(),
        ));
    }
    let dir = Vector3::new(v_t[(order[0], 0)], v_t[(order[0], 1)], v_t[(order[0], 2)]);
    let dir = canonical_sign(dir.normalize());

    let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = dir.cross(&helper).normalize();
    let e2 = dir.cross(&e1);
    let mut reduced = DMatrix::<f64>::zeros(k, 2);
    for i in 0..k {
        let n = Vector3::new(nmat[(i, 0)], nmat[(i, 1)], nmat[(i, 2)]);
        reduced[(i, 0)] = n.dot(&e1);
        reduced[(i, 1)] = n.dot(&e2);
    }
    let ab = reduced
        .svd(true, true)
        .solve(&rhs, 0.0)
        .map_err(|e| Error::FitFailure(e.to_string()))?;
    AxisLine::new(dir, e1 * ab[0] + e2 * ab[1])
}

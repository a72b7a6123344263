use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{
    reflection_chain_transform, translation_coefficients, GalvoVoltages, MirrorAngles,
    MirrorGeometry, RigidTransform, VoltageAngleModel,
};

/// One board measurement of `V_from_V0` at a camera voltage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibObservation {
    pub cam_v: GalvoVoltages,
    pub measured: RigidTransform,
    /// False when the board was not visible; such observations are ignored.
    pub valid: bool,
}

/// Singular-value ratio below which `(l, d)` is reported unidentifiable.
const RANK_TOLERANCE: f64 = 1e-9;

/// Least-squares mirror offsets from measured virtual-frame transforms.
///
/// With `T` the chain pose of `{V}` in `{G}`, every measurement satisfies
/// `T(θn) · A = T(θ0)`. Its translation column is affine in `l` and `d`:
/// `l [L(θn) - L(θ0)] + d [D(θn) - D(θ0)] = -R(θn) t_A`,
/// where `R(θn)` depends on the angles only.
/// All three rows of every valid observation are stacked and solved in one
/// linear least-squares problem. Returns the geometry and the residual norm.
pub fn calibrate_dynamic_camera(
    observations: &[CalibObservation],
    neutral: MirrorAngles,
    model: &VoltageAngleModel,
) -> Result<(MirrorGeometry, f64)> {
    let valid: Vec<&CalibObservation> = observations.iter().filter(|o| o.valid).collect();
    let mut distinct: Vec<GalvoVoltages> = Vec::new();
    for o in &valid {
        if !distinct.contains(&o.cam_v) {
            distinct.push(o.cam_v);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::Unidentifiable(format!(
            "need observations at 2 or more distinct voltages, got {}",
            distinct.len()
        )));
    }
    let (l0, d0) = translation_coefficients(neutral);
    // Rotation of the chain is independent of the geometry.
    let unit = MirrorGeometry { l: 1.0, d: 1.0 };
    let mut a = DMatrix::<f64>::zeros(3 * valid.len(), 2);
    let mut b = DVector::<f64>::zeros(3 * valid.len());
    for (k, o) in valid.iter().enumerate() {
        let angles = model.angles(o.cam_v)?;
        let (ln, dn) = translation_coefficients(angles);
        let rn = reflection_chain_transform(angles, unit).rotation();
        let cl = ln - l0;
        let cd = dn - d0;
        let t = -(rn * o.measured.translation());
        for r in 0..3 {
            a[(3 * k + r, 0)] = cl[r];
            a[(3 * k + r, 1)] = cd[r];
            b[3 * k + r] = t[r];
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < RANK_TOLERANCE {
        return Err(Error::Unidentifiable(format!(
            "translation system is rank deficient (singular values {smax:e}, {smin:e}); \
             d needs tilt motion and l needs pan motion"
        )));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::FitFailure(e.to_string()))?;
    let residual = (&a * &x - &b).norm();
    let geom = MirrorGeometry::new(x[0], x[1]).map_err(|_| {
        Error::FitFailure(format!("non-physical solution l = {}, d = {}", x[0], x[1]))
    })?;
    Ok((geom, residual))
}

/// Sum of squared differences over all 16 entries between the model
/// transforms at `geom` and the measurements. Zero at the true geometry for
/// noiseless observations.
pub fn camera_objective(
    observations: &[CalibObservation],
    neutral: MirrorAngles,
    model: &VoltageAngleModel,
    geom: MirrorGeometry,
) -> Result<f64> {
    let neutral = reflection_chain_transform(neutral, geom);
    let mut sum = 0.0;
    for o in observations.iter().filter(|o| o.valid) {
        let g = reflection_chain_transform(model.angles(o.cam_v)?, geom).inverse() * neutral;
        sum += (g.matrix() - o.measured.matrix()).norm_squared();
    }
    Ok(sum)
}

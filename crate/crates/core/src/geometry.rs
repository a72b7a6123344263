//! Mirror-chain kinematics and plane algebra.
//!
//! Frames: `{V0}` is the virtual camera at zero galvanometer voltage (both
//! mirrors at the neutral angle), `{V}` the virtual camera after the mirrors
//! move, `{G}` the mirror base frame. A [`RigidTransform`] named `a_from_b`
//! maps coordinates expressed in `b` into `a`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Control range of the galvanometer drivers, in volts.
pub const VOLTAGE_MIN: f64 = -10.0;
pub const VOLTAGE_MAX: f64 = 10.0;

/// Control voltages of one pan-tilt galvanometer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GalvoVoltages {
    pub pan: f64,
    pub tilt: f64,
}

impl GalvoVoltages {
    pub const ZERO: GalvoVoltages = GalvoVoltages { pan: 0.0, tilt: 0.0 };

    pub fn new(pan: f64, tilt: f64) -> Self {
        GalvoVoltages { pan, tilt }
    }

    pub fn validate(&self) -> Result<()> {
        for value in [self.pan, self.tilt] {
            if !(VOLTAGE_MIN..=VOLTAGE_MAX).contains(&value) {
                return Err(Error::VoltageOutOfRange {
                    value,
                    min: VOLTAGE_MIN,
                    max: VOLTAGE_MAX,
                });
            }
        }
        Ok(())
    }
}

/// Mirror angles of one galvanometer, radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MirrorAngles {
    pub pan: f64,
    pub tilt: f64,
}

impl MirrorAngles {
    pub fn new(pan: f64, tilt: f64) -> Self {
        MirrorAngles { pan, tilt }
    }

    pub fn from_degrees(pan: f64, tilt: f64) -> Self {
        MirrorAngles::new(pan.to_radians(), tilt.to_radians())
    }
}

/// Linear voltage-to-angle law: `theta = offset + gain * u` per axis.
///
/// The offset places zero volts at the neutral 45° mirror pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoltageAngleModel {
    pub offset: f64,
    pub gain_pan: f64,
    pub gain_tilt: f64,
}

impl Default for VoltageAngleModel {
    /// 45° neutral pose, 2°/V on both axes (±20° over ±10 V).
    fn default() -> Self {
        VoltageAngleModel {
            offset: std::f64::consts::FRAC_PI_4,
            gain_pan: 2f64.to_radians(),
            gain_tilt: 2f64.to_radians(),
        }
    }
}

impl VoltageAngleModel {
    pub fn new(offset: f64, gain_pan: f64, gain_tilt: f64) -> Result<Self> {
        let model = VoltageAngleModel {
            offset,
            gain_pan,
            gain_tilt,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn from_degrees(offset_deg: f64, gain_pan_deg: f64, gain_tilt_deg: f64) -> Result<Self> {
        VoltageAngleModel::new(
            offset_deg.to_radians(),
            gain_pan_deg.to_radians(),
            gain_tilt_deg.to_radians(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for gain in [self.gain_pan, self.gain_tilt] {
            if !gain.is_finite() || gain == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "voltage-angle gain must be finite and nonzero, got {gain}"
                )));
            }
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidParameter("non-finite angle offset".into()));
        }
        Ok(())
    }

    /// Mirror angles at zero volts.
    pub fn neutral(&self) -> MirrorAngles {
        MirrorAngles::new(self.offset, self.offset)
    }

    pub fn angles(&self, v: GalvoVoltages) -> Result<MirrorAngles> {
        voltages_to_angles(self, v)
    }
}

/// Applies the linear voltage model, rejecting voltages outside ±10 V.
pub fn voltages_to_angles(model: &VoltageAngleModel, v: GalvoVoltages) -> Result<MirrorAngles> {
    v.validate()?;
    Ok(MirrorAngles::new(
        model.offset + model.gain_pan * v.pan,
        model.offset + model.gain_tilt * v.tilt,
    ))
}

/// Distances of the dynamic-camera mirror chain, millimeters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MirrorGeometry {
    /// Camera to pan mirror.
    pub l: f64,
    /// Pan mirror to tilt mirror.
    pub d: f64,
}

impl MirrorGeometry {
    pub fn new(l: f64, d: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite() && d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mirror distances must be positive, got l = {l}, d = {d}"
            )));
        }
        Ok(MirrorGeometry { l, d })
    }
}

/// 4×4 homogeneous rigid transform with an orthonormal, right-handed rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform(Matrix4<f64>);

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::identity()
    }
}

/// Tolerance used when validating user-supplied rotation blocks.
pub const RIGID_TOLERANCE: f64 = 1e-10;

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform(Matrix4::identity())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform::from_parts_unchecked(Matrix3::identity(), t)
    }

    /// Rotation about `axis_angle.normalize()` by `axis_angle.norm()` radians.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, t: Vector3<f64>) -> Self {
        let angle = axis_angle.norm();
        let r = if angle == 0.0 {
            Matrix3::identity()
        } else {
            rodrigues(&(axis_angle / angle), angle)
        };
        RigidTransform::from_parts_unchecked(r, t)
    }

    /// Builds a transform and checks the rotation block against `tol`.
    pub fn from_parts(r: Matrix3<f64>, t: Vector3<f64>, tol: f64) -> Result<Self> {
        let out = RigidTransform::from_parts_unchecked(r, t);
        if !out.is_rigid(tol) {
            return Err(Error::InvalidParameter(
                "rotation block is not orthonormal with det +1".into(),
            ));
        }
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        RigidTransform(m)
    }

    pub fn from_matrix(m: Matrix4<f64>, tol: f64) -> Result<Self> {
        let last = m.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::InvalidParameter(
                "last row of a homogeneous transform must be (0, 0, 0, 1)".into(),
            ));
        }
        let out = RigidTransform(m);
        if !out.is_rigid(tol) {
            return Err(Error::InvalidParameter(
                "rotation block is not orthonormal with det +1".into(),
            ));
        }
        Ok(out)
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix4<f64>) -> Self {
        RigidTransform(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let last = self.0.row(3);
        ortho <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && last[0] == 0.0
            && last[1] == 0.0
            && last[2] == 0.0
            && last[3] == 1.0
    }

    /// Exact rigid inverse `[Rᵀ | −Rᵀt]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        RigidTransform::from_parts_unchecked(rt, -(rt * self.translation()))
    }

    pub fn then(&self, next: &RigidTransform) -> Self {
        *next * *self
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let m = &self.0;
        Vector3::new(
            m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + m[(0, 3)],
            m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + m[(1, 3)],
            m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)],
        )
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    /// The 12 non-trivial entries, row-major (r11 r12 r13 t1 r21 ... t3).
    pub fn entries12(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                out[4 * i + j] = self.0[(i, j)];
            }
        }
        out
    }

    pub fn from_entries12(e: &[f64; 12], tol: f64) -> Result<Self> {
        let mut m = Matrix4::identity();
        for i in 0..3 {
            for j in 0..4 {
                m[(i, j)] = e[4 * i + j];
            }
        }
        RigidTransform::from_matrix(m, tol)
    }

    /// Rotation angle of the rotation block, radians.
    pub fn rotation_angle(&self) -> f64 {
        let cos = ((self.rotation().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        RigidTransform(self.0 * rhs.0)
    }
}

/// Plane `a x + b y + c z + d = 0` with unit normal `(a, b, c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    normal: Vector3<f64>,
    d: f64,
}

impl Plane {
    /// Normalizes the coefficients so the normal has unit length.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let n = Vector3::new(a, b, c);
        let norm = n.norm();
        if !(norm > 0.0 && norm.is_finite() && d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "plane normal must be finite and nonzero, got ({a}, {b}, {c}, {d})"
            )));
        }
        Ok(Plane {
            normal: n / norm,
            d: d / norm,
        })
    }

    pub fn from_point_normal(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self> {
        let n = normal.try_normalize(0.0).ok_or_else(|| {
            Error::InvalidParameter("plane normal must be nonzero".into())
        })?;
        Ok(Plane {
            normal: n,
            d: -n.dot(point),
        })
    }

    /// Plane containing `axis` and the point `through`.
    pub fn from_axis_and_point(axis: &AxisLine, through: &Vector3<f64>) -> Result<Self> {
        let n = axis.direction.cross(&(through - axis.point));
        if n.norm() < 1e-12 {
            return Err(Error::InvalidParameter(
                "point lies on the axis; plane undefined".into(),
            ));
        }
        Plane::from_point_normal(&axis.point, &n)
    }

    pub(crate) fn from_unit_unchecked(normal: Vector3<f64>, d: f64) -> Self {
        Plane { normal, d }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn coefficients(&self) -> Vector4<f64> {
        Vector4::new(self.normal.x, self.normal.y, self.normal.z, self.d)
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.d
    }

    pub fn flipped(&self) -> Plane {
        Plane {
            normal: -self.normal,
            d: -self.d,
        }
    }

    /// Foot of the perpendicular from the origin.
    pub fn closest_point_to_origin(&self) -> Vector3<f64> {
        -self.d * self.normal
    }

    /// Largest coefficient difference after aligning orientations.
    pub fn distance_up_to_sign(&self, other: &Plane) -> f64 {
        let a = (self.coefficients() - other.coefficients()).abs().max();
        let b = (self.coefficients() + other.coefficients()).abs().max();
        a.min(b)
    }

    /// Angle between the two normals ignoring orientation, radians.
    pub fn normal_angle(&self, other: &Plane) -> f64 {
        let c = self.normal.dot(&other.normal).abs().min(1.0);
        let s = self.normal.cross(&other.normal).norm();
        s.atan2(c)
    }
}

/// Line with unit direction through `point`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisLine {
    pub direction: Vector3<f64>,
    pub point: Vector3<f64>,
}

impl AxisLine {
    pub fn new(direction: Vector3<f64>, point: Vector3<f64>) -> Result<Self> {
        let direction = direction.try_normalize(0.0).ok_or_else(|| {
            Error::InvalidParameter("axis direction must be nonzero".into())
        })?;
        if !point.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("axis point must be finite".into()));
        }
        Ok(AxisLine { direction, point })
    }

    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).cross(&self.direction).norm()
    }
}

/// Rodrigues rotation matrix for a unit `axis` and `angle` radians.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = Matrix3::new(
        0.0, -axis.z, axis.y, //
        axis.z, 0.0, -axis.x, //
        -axis.y, axis.x, 0.0,
    );
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// The three factors of the two-reflection chain, applied right to left:
/// axis permutation with the `l` offset, pan reflection, tilt reflection.
pub fn reflection_factors(angles: MirrorAngles, geom: MirrorGeometry) -> [Matrix4<f64>; 3] {
    let (s1, c1) = (2.0 * angles.pan).sin_cos();
    let (s2, c2) = (2.0 * angles.tilt).sin_cos();
    let MirrorGeometry { l, d } = geom;
    let tilt = Matrix4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, c2, s2, d * (1.0 - c2), //
        0.0, s2, -c2, -d * s2, //
        0.0, 0.0, 0.0, 1.0,
    );
    let pan = Matrix4::new(
        -c1, s1, 0.0, 0.0, //
        s1, c1, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    let permute = Matrix4::new(
        0.0, 0.0, 1.0, -l, //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    [tilt, pan, permute]
}

/// Pose of the virtual camera `{V}` in the galvo frame `{G}` (maps `{V}`
/// coordinates to `{G}`), composed from [`reflection_factors`]. The tilt and
/// pan factors are reflections across the mirror planes through `(0, d, 0)`
/// and the origin; the permutation places the camera at `(-l, 0, 0)`.
pub fn reflection_chain_transform(angles: MirrorAngles, geom: MirrorGeometry) -> RigidTransform {
    let [tilt, pan, permute] = reflection_factors(angles, geom);
    RigidTransform::from_matrix_unchecked(tilt * pan * permute)
}

/// Expanded product of the three reflection factors.
///
/// Entry (row 2, col 3) is `sin2θ1·cos2θ2`; the often-quoted expansion with
/// `sin2θ1·sin2θ2` there does not follow from the factors.
pub fn reflection_chain_closed_form(angles: MirrorAngles, geom: MirrorGeometry) -> RigidTransform {
    let (s1, c1) = (2.0 * angles.pan).sin_cos();
    let (s2, c2) = (2.0 * angles.tilt).sin_cos();
    let MirrorGeometry { l, d } = geom;
    RigidTransform::from_matrix_unchecked(Matrix4::new(
        s1, 0.0, -c1, l * c1, //
        c1 * c2, s2, s1 * c2, -l * s1 * c2 + d * (1.0 - c2), //
        c1 * s2, -c2, s1 * s2, -l * s1 * s2 - d * s2, //
        0.0, 0.0, 0.0, 1.0,
    ))
}

/// Translation column of [`reflection_chain_transform`] split into its `l` and
/// `d` coefficients: `t = l * lc + d * dc`.
pub fn translation_coefficients(angles: MirrorAngles) -> (Vector3<f64>, Vector3<f64>) {
    let (s1, c1) = (2.0 * angles.pan).sin_cos();
    let (s2, c2) = (2.0 * angles.tilt).sin_cos();
    (
        Vector3::new(c1, -s1 * c2, -s1 * s2),
        Vector3::new(0.0, 1.0 - c2, -s2),
    )
}

/// `V_from_V0 = G_from_V(angles)⁻¹ · G_from_V(neutral)`.
pub fn virtual_frame_transform(
    angles: MirrorAngles,
    neutral: MirrorAngles,
    geom: MirrorGeometry,
) -> RigidTransform {
    reflection_chain_transform(angles, geom).inverse() * reflection_chain_transform(neutral, geom)
}

/// Rotates a laser plane about `axis` by twice the mirror angle `theta`.
///
/// The offset is recomputed from the axis point, so the result always
/// contains the axis.
pub fn rotate_plane_about_axis(plane0: &Plane, axis: &AxisLine, theta: f64) -> Plane {
    let n = rodrigues(&axis.direction, 2.0 * theta) * plane0.normal();
    let n = n / n.norm();
    Plane::from_unit_unchecked(n, -n.dot(&axis.point))
}

/// Maps plane coefficients through `t` (inverse-transpose), so that `p` on
/// `plane` implies `t·p` on the result.
pub fn transform_plane(t: &RigidTransform, plane: &Plane) -> Plane {
    let n = t.rotation() * plane.normal();
    let norm = n.norm();
    let n = n / norm;
    let d = plane.d() / norm - n.dot(&t.translation());
    Plane::from_unit_unchecked(n, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nominal_geom() -> MirrorGeometry {
        MirrorGeometry::new(83.45, 22.14).unwrap()
    }

    #[test]
    fn voltage_model_examples() {
        let m = VoltageAngleModel::from_degrees(45.0, 2.0, 2.0).unwrap();
        let a = m.angles(GalvoVoltages::ZERO).unwrap();
        assert_abs_diff_eq!(a.pan.to_degrees(), 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.tilt.to_degrees(), 45.0, epsilon = 1e-12);
        let a = m.angles(GalvoVoltages::new(10.0, 0.0)).unwrap();
        assert_abs_diff_eq!(a.pan.to_degrees(), 65.0, epsilon = 1e-12);
        let a = m.angles(GalvoVoltages::new(-5.0, 0.0)).unwrap();
        assert_abs_diff_eq!(a.pan.to_degrees(), 35.0, epsilon = 1e-12);
    }

    #[test]
    fn voltage_out_of_range() {
        let m = VoltageAngleModel::default();
        let err = m.angles(GalvoVoltages::new(10.5, 0.0)).unwrap_err();
        assert!(matches!(err, Error::VoltageOutOfRange { .. }));
        assert!(m.angles(GalvoVoltages::new(0.0, -10.01)).is_err());
        assert!(VoltageAngleModel::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn neutral_chain_is_pure_translation() {
        let geom = MirrorGeometry::new(10.0, 3.0).unwrap();
        let t = reflection_chain_transform(MirrorAngles::from_degrees(45.0, 45.0), geom);
        let expected = Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 3.0, //
            0.0, 0.0, 1.0, -13.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        assert_abs_diff_eq!(*t.matrix(), expected, epsilon = 1e-14);

        let t = reflection_chain_transform(MirrorAngles::from_degrees(45.0, 45.0), nominal_geom());
        assert_abs_diff_eq!(
            t.translation(),
            Vector3::new(0.0, 22.14, -105.59),
            epsilon = 1e-12
        );
    }

    #[test]
    fn closed_form_matches_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = MirrorAngles::from_degrees(rng.random_range(25.0..65.0), rng.random_range(25.0..65.0));
            let g = MirrorGeometry::new(rng.random_range(10.0..200.0), rng.random_range(5.0..100.0)).unwrap();
            let f = reflection_chain_transform(a, g);
            let c = reflection_chain_closed_form(a, g);
            assert!((f.matrix() - c.matrix()).abs().max() < 1e-12);
            assert!(f.is_rigid(1e-12));
            let (lc, dc) = translation_coefficients(a);
            assert_abs_diff_eq!(f.translation(), lc * g.l + dc * g.d, epsilon = 1e-12);
        }
    }

    #[test]
    fn virtual_frame_identity_and_roundtrip() {
        let geom = nominal_geom();
        let n = MirrorAngles::from_degrees(45.0, 45.0);
        let t = virtual_frame_transform(n, n, geom);
        assert!((t.matrix() - Matrix4::identity()).abs().max() < 1e-12);

        let a = MirrorAngles::from_degrees(46.0, 45.0);
        let b = MirrorAngles::from_degrees(41.0, 52.0);
        let ab = virtual_frame_transform(a, b, geom);
        let ba = virtual_frame_transform(b, a, geom);
        assert!(((ab * ba).matrix() - Matrix4::identity()).abs().max() < 1e-10);

        // Independent route: multiply the factor lists explicitly.
        let [t2, t1, t0] = reflection_factors(a, geom);
        let [n2, n1, n0] = reflection_factors(n, geom);
        let expected = (t2 * t1 * t0).try_inverse().unwrap() * n2 * n1 * n0;
        let got = virtual_frame_transform(a, n, geom);
        assert!((got.matrix() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn rodrigues_matches_nalgebra() {
        let axis = Vector3::new(0.3, -0.4, 0.5).normalize();
        let r = rodrigues(&axis, 0.7);
        let expected = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), 0.7);
        assert_abs_diff_eq!(r, *expected.matrix(), epsilon = 1e-14);
    }

    #[test]
    fn plane_rotation_examples() {
        let z0 = Plane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let x_axis = AxisLine::new(Vector3::x(), Vector3::zeros()).unwrap();
        assert_eq!(rotate_plane_about_axis(&z0, &x_axis, 0.0), z0);
        let r = rotate_plane_about_axis(&z0, &x_axis, std::f64::consts::FRAC_PI_4);
        let y0 = Plane::new(0.0, 1.0, 0.0, 0.0).unwrap();
        assert!(r.distance_up_to_sign(&y0) < 1e-12);
    }

    #[test]
    fn rotated_plane_contains_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let point = Vector3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(0.0..800.0));
            let axis = AxisLine::new(dir, point).unwrap();
            let plane0 = Plane::from_axis_and_point(&axis, &Vector3::new(0.0, 0.0, 650.0)).unwrap();
            let theta = rng.random_range(-0.4..0.4);
            let rotated = rotate_plane_about_axis(&plane0, &axis, theta);
            assert_abs_diff_eq!(rotated.normal().norm(), 1.0, epsilon = 1e-12);
            for s in [-300.0, -10.0, 0.0, 42.0, 700.0] {
                let q = axis.point + axis.direction * s;
                assert!(rotated.signed_distance(&q).abs() < 1e-10);
            }
            assert_abs_diff_eq!(rotated.normal_angle(&plane0), 2.0 * theta.abs(), epsilon = 1e-9);
        }
    }

    #[test]
    fn transform_plane_examples() {
        let p = Plane::new(0.3, 0.1, 1.0, -40.0).unwrap();
        assert!(transform_plane(&RigidTransform::identity(), &p).distance_up_to_sign(&p) < 1e-12);
        let z500 = Plane::new(0.0, 0.0, 1.0, -500.0).unwrap();
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 10.0));
        let moved = transform_plane(&t, &z500);
        assert!(moved.distance_up_to_sign(&Plane::new(0.0, 0.0, 1.0, -510.0).unwrap()) < 1e-12);
    }

    #[test]
    fn transform_plane_preserves_incidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = RigidTransform::from_axis_angle(
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                Vector3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)),
            );
            let plane = Plane::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0), rng.random_range(-800.0..800.0)).unwrap();
            let mapped = transform_plane(&t, &plane);
            let foot = plane.closest_point_to_origin();
            let u = plane.normal().cross(&Vector3::new(1.0, 2.0, 3.0)).normalize();
            let v = plane.normal().cross(&u);
            for _ in 0..100 {
                let p = foot + u * rng.random_range(-300.0..300.0) + v * rng.random_range(-300.0..300.0);
                assert!(mapped.signed_distance(&t.transform_point(&p)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rigid_validation() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::from_parts(bad, Vector3::zeros(), 1e-10).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::from_parts(reflect, Vector3::zeros(), 1e-10).is_err());
        let t = RigidTransform::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let e = t.entries12();
        assert_eq!(RigidTransform::from_entries12(&e, 1e-10).unwrap(), t);
        assert!(((t * t.inverse()).matrix() - Matrix4::identity()).abs().max() < 1e-14);
    }
}

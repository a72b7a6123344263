//! Triangulation of stripe pixels against the laser plane and assembly of
//! per-step clouds in the neutral frame `{V0}`.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{transform_plane, GalvoVoltages, Plane, RigidTransform};
use crate::model::{laser_plane_in_v0, CameraIntrinsics, SystemParams};
use crate::sim::StripeSample;

/// Rays whose plane denominator falls below this are treated as parallel.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

/// One captured stripe with the voltages it was taken at.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanStep {
    pub cam_v: GalvoVoltages,
    pub laser_v: GalvoVoltages,
    pub samples: Vec<StripeSample>,
}

impl ScanStep {
    pub fn pixels(&self) -> Vec<Vector2<f64>> {
        self.samples.iter().map(|s| s.pixel).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Name of the frame the points are expressed in.
    pub frame: String,
    /// Scan-step index per point, when known.
    pub steps: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: impl Into<String>) -> Self {
        PointCloud {
            points,
            frame: frame.into(),
            steps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            frame: self.frame.clone(),
            steps: self.steps.clone(),
        }
    }
}

/// Intersects the camera ray through `pixel` with `plane`, both in the camera
/// frame: `Z = -D / (A x̂ + B ŷ + C)`.
pub fn reconstruct_point(
    pixel: &Vector2<f64>,
    plane: &Plane,
    intr: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    let xh = (pixel.x - intr.u0) / intr.fx;
    let yh = (pixel.y - intr.v0) / intr.fy;
    let n = plane.normal();
    let den = n.x * xh + n.y * yh + n.z;
    if den.abs() <= DEGENERATE_DENOMINATOR {
        return Err(Error::DegenerateIntersection { denominator: den });
    }
    let z = -plane.d() / den;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { z });
    }
    Ok(Vector3::new(xh * z, yh * z, z))
}

/// Triangulates pixels seen from `v_from_v0` against a plane given in
/// `{V0}` and returns the points in `{V0}` plus the number skipped.
pub fn reconstruct_pixels(
    pixels: &[Vector2<f64>],
    plane_v0: &Plane,
    v_from_v0: &RigidTransform,
    intr: &CameraIntrinsics,
) -> (Vec<Vector3<f64>>, usize) {
    let plane_v = transform_plane(v_from_v0, plane_v0);
    let v0_from_v = v_from_v0.inverse();
    let mut points = Vec::with_capacity(pixels.len());
    let mut skipped = 0;
    for px in pixels {
        match reconstruct_point(px, &plane_v, intr) {
            Ok(p) => points.push(v0_from_v.transform_point(&p)),
            Err(_) => skipped += 1,
        }
    }
    (points, skipped)
}

/// Reconstructs one step into `{V0}`. Samples that cannot be triangulated are
/// dropped and counted.
pub fn reconstruct_step(step: &ScanStep, params: &SystemParams) -> Result<(PointCloud, usize)> {
    let plane0 = laser_plane_in_v0(params, step.laser_v)?;
    let v_from_v0 = params.cam_transform(step.cam_v)?;
    let (points, skipped) =
        reconstruct_pixels(&step.pixels(), &plane0, &v_from_v0, &params.intrinsics);
    Ok((PointCloud::new(points, "V0"), skipped))
}

/// Concatenates the per-step clouds, each premultiplied by its correction
/// when given. Returns the cloud (with step indices) and the skipped count.
pub fn reconstruct_scan(
    steps: &[ScanStep],
    params: &SystemParams,
    corrections: Option<&[RigidTransform]>,
    exec: Exec,
) -> Result<(PointCloud, usize)> {
    if let Some(c) = corrections {
        if c.len() != steps.len() {
            return Err(Error::Config(format!(
                "{} corrections for {} scan steps",
                c.len(),
                steps.len()
            )));
        }
    }
    let per_step = exec.map_range(steps.len(), |i| {
        let (cloud, skipped) = reconstruct_step(&steps[i], params)?;
        let cloud = match corrections {
            Some(c) => cloud.transformed(&c[i]),
            None => cloud,
        };
        Ok::<_, Error>((cloud, skipped))
    });
    let mut points = Vec::new();
    let mut indices = Vec::new();
    let mut skipped = 0;
    for (i, r) in per_step.into_iter().enumerate() {
        let (cloud, s) = r?;
        indices.extend(std::iter::repeat_n(i, cloud.len()));
        points.extend(cloud.points);
        skipped += s;
    }
    Ok((
        PointCloud {
            points,
            frame: "V0".into(),
            steps: Some(indices),
        },
        skipped,
    ))
}

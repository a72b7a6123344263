//! Pinhole camera and the full rig description.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{
    rotate_plane_about_axis, transform_plane, virtual_frame_transform, AxisLine, GalvoVoltages,
    MirrorAngles, MirrorGeometry, Plane, RigidTransform, VoltageAngleModel,
};

/// Distortion-free pinhole intrinsics. Pixel `(u, v)` addresses the center of
/// column `u`, row `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// 720×540 sensor, 53.8 mm lens.
    fn default() -> Self {
        CameraIntrinsics {
            fx: 7801.38,
            fy: 7798.24,
            u0: 359.51,
            v0: 269.54,
            width: 720,
            height: 540,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if !self.contains(&Vector2::new(self.u0, self.v0)) {
            return Err(Error::InvalidParameter(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Whether a pixel coordinate lies inside the image (pixel centers at
    /// integers, edges at -0.5 and size - 0.5).
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x <= self.width as f64 - 0.5
            && px.y <= self.height as f64 - 0.5
    }
}

/// Pinhole projection of a point in the camera frame.
pub fn project_point(intr: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok(Vector2::new(
        intr.fx * p.x / p.z + intr.u0,
        intr.fy * p.y / p.z + intr.v0,
    ))
}

/// Unit direction of the camera ray through a pixel.
pub fn pixel_ray(intr: &CameraIntrinsics, px: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new((px.x - intr.u0) / intr.fx, (px.y - intr.v0) / intr.fy, 1.0).normalize()
}

/// Every constant of the pixel-to-point mapping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemParams {
    pub intrinsics: CameraIntrinsics,
    pub cam_geom: MirrorGeometry,
    pub cam_model: VoltageAngleModel,
    pub laser_model: VoltageAngleModel,
    /// Laser plane in `{V0}` at zero laser-galvanometer voltage.
    pub base_plane: Plane,
    /// Rotation axis of the laser plane in `{V0}`.
    pub laser_axis: AxisLine,
}

impl Default for SystemParams {
    /// A rig with the laser axis roughly along x, 200 mm below the camera,
    /// and the base plane passing through (0, 0, 650).
    fn default() -> Self {
        let laser_axis = AxisLine::new(
            Vector3::new(0.99, 0.02, -0.0004),
            Vector3::new(0.0, -200.0, 0.0),
        )
        .expect("valid axis");
        let base_plane = Plane::from_axis_and_point(&laser_axis, &Vector3::new(0.0, 0.0, 650.0))
            .expect("valid plane");
        SystemParams {
            intrinsics: CameraIntrinsics::default(),
            cam_geom: MirrorGeometry { l: 83.45, d: 22.14 },
            cam_model: VoltageAngleModel::default(),
            laser_model: VoltageAngleModel::default(),
            base_plane,
            laser_axis,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        MirrorGeometry::new(self.cam_geom.l, self.cam_geom.d)?;
        self.cam_model.validate()?;
        self.laser_model.validate()?;
        if (self.base_plane.normal().norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("base plane normal not unit".into()));
        }
        if (self.laser_axis.direction.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("axis direction not unit".into()));
        }
        Ok(())
    }

    pub fn cam_neutral(&self) -> MirrorAngles {
        self.cam_model.neutral()
    }

    /// `V_from_V0` for explicit mirror angles.
    pub fn cam_transform_at(&self, angles: MirrorAngles) -> RigidTransform {
        virtual_frame_transform(angles, self.cam_neutral(), self.cam_geom)
    }

    /// `V_from_V0` for camera-galvanometer voltages.
    pub fn cam_transform(&self, cam_v: GalvoVoltages) -> Result<RigidTransform> {
        Ok(self.cam_transform_at(self.cam_model.angles(cam_v)?))
    }

    /// Laser plane in `{V0}` for a laser tilt-mirror angle.
    pub fn laser_plane_at(&self, theta_tilt: f64) -> Plane {
        rotate_plane_about_axis(
            &self.base_plane,
            &self.laser_axis,
            theta_tilt - self.laser_model.offset,
        )
    }
}

/// Laser plane in `{V0}`: the base plane rotated about the laser axis by twice
/// the tilt mirror's deflection from neutral.
pub fn laser_plane_in_v0(params: &SystemParams, laser_v: GalvoVoltages) -> Result<Plane> {
    let angles = params.laser_model.angles(laser_v)?;
    Ok(params.laser_plane_at(angles.tilt))
}

/// Laser plane expressed in the moved virtual camera `{V}`.
pub fn laser_plane_in_v(
    params: &SystemParams,
    cam_v: GalvoVoltages,
    laser_v: GalvoVoltages,
) -> Result<Plane> {
    let plane0 = laser_plane_in_v0(params, laser_v)?;
    Ok(transform_plane(&params.cam_transform(cam_v)?, &plane0))
}

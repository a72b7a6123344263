use nalgebra::Vector2;

use super::icp::{icp_register, IcpOptions, RegistrationResult};
use crate::error::{Error, Result};
use crate::geometry::{GalvoVoltages, Plane, RigidTransform};
use crate::model::{laser_plane_in_v0, SystemParams};
use crate::recon::reconstruct_pixels;
use crate::sim::{simulate_stripe_step, NoiseModel, Target};

/// A pre-calibrated laser position used as registration reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub laser_v: GalvoVoltages,
    /// Calibrated plane in `{V0}`; the model plane at `laser_v` when absent.
    pub plane: Option<Plane>,
}

/// Schedule and registration settings for [`joint_error_correction`].
///
/// Steps are numbered from 1. Step `i` uses camera voltages
/// `pan = cam_start.pan + du * ((i - 1) % row_len)` and
/// `tilt = cam_start.tilt + tilt_step * ((i - 1) / row_len)`. Whenever
/// `i % period == 0` the laser moves to anchor `i / period` (if it exists) and
/// the reference cloud is rebuilt there.
#[derive(Clone, Debug, PartialEq)]
pub struct JointCalibConfig {
    pub anchors: Vec<Anchor>,
    pub cam_start: GalvoVoltages,
    pub du: f64,
    pub row_len: usize,
    pub tilt_step: f64,
    pub period: usize,
    pub n_steps: usize,
    pub icp: IcpOptions,
}

impl Default for JointCalibConfig {
    fn default() -> Self {
        JointCalibConfig {
            anchors: vec![Anchor {
                laser_v: GalvoVoltages::ZERO,
                plane: None,
            }],
            cam_start: GalvoVoltages::ZERO,
            du: 0.1,
            row_len: 200,
            tilt_step: 1.0,
            period: 50,
            n_steps: 200,
            icp: IcpOptions {
                trim: 0.9,
                ..IcpOptions::default()
            },
        }
    }
}

impl JointCalibConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.du > 0.0 && self.du.is_finite()) {
            return Err(Error::Config(format!("du must be positive, got {}", self.du)));
        }
        if self.period == 0 || self.row_len == 0 {
            return Err(Error::Config("period and row length must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("joint calibration needs at least one step".into()));
        }
        if self.anchors.is_empty() {
            return Err(Error::Config("joint calibration needs at least one anchor".into()));
        }
        for a in &self.anchors {
            a.laser_v.validate()?;
        }
        for i in 1..=self.n_steps {
            self.camera_voltages(i).validate()?;
        }
        Ok(())
    }

    /// Camera voltages at 1-based step `i`.
    pub fn camera_voltages(&self, i: usize) -> GalvoVoltages {
        let k = i.saturating_sub(1);
        GalvoVoltages::new(
            self.cam_start.pan + self.du * (k % self.row_len) as f64,
            self.cam_start.tilt + self.tilt_step * (k / self.row_len) as f64,
        )
    }
}

/// Provider of stripe pixels for a (camera, laser) voltage pair. `capture`
/// identifies the exposure so sources can derive independent noise.
pub trait StripeSource {
    fn capture(
        &self,
        capture: u64,
        cam_v: GalvoVoltages,
        laser_v: GalvoVoltages,
    ) -> Result<Vec<Vector2<f64>>>;
}

/// Stripe source backed by the simulator and a ground-truth rig.
pub struct SimulatedStripeSource<'a> {
    pub truth: &'a SystemParams,
    pub target: &'a Target,
    pub n_samples: usize,
    pub noise: NoiseModel,
}

impl StripeSource for SimulatedStripeSource<'_> {
    fn capture(
        &self,
        capture: u64,
        cam_v: GalvoVoltages,
        laser_v: GalvoVoltages,
    ) -> Result<Vec<Vector2<f64>>> {
        let samples = simulate_stripe_step(
            self.truth,
            self.target,
            cam_v,
            laser_v,
            self.n_samples,
            &self.noise,
            capture,
        )?;
        Ok(samples.into_iter().map(|s| s.pixel).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointStepRecord {
    /// 1-based step number.
    pub index: usize,
    pub cam_v: GalvoVoltages,
    pub laser_v: GalvoVoltages,
    pub anchor: usize,
    pub points: usize,
    /// Registration against the current reference; absent for step 1.
    pub registration: Option<RegistrationResult>,
    /// Registration failed and the previous correction was carried forward.
    pub failed: bool,
    /// The reference was rebuilt at a new anchor after this step.
    pub reanchored: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointResult {
    /// `V0_from_Vi` corrections, one per step, applied after reconstruction.
    pub corrections: Vec<RigidTransform>,
    pub records: Vec<JointStepRecord>,
}

impl JointResult {
    fn pooled(&self, f: impl Fn(&RegistrationResult) -> f64) -> f64 {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| !r.failed)
            .filter_map(|r| r.registration.as_ref().map(&f))
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt()
    }

    /// RMS over steps of the nearest-neighbor error before registration, mm.
    pub fn rmse_before(&self) -> f64 {
        self.pooled(|r| r.rmse_before)
    }

    /// RMS over steps of the registration residual, mm.
    pub fn rmse_after(&self) -> f64 {
        self.pooled(|r| r.rmse_after)
    }
}

/// Stepwise error correction by registering each stripe cloud to a reference.
///
/// The reference is the cloud of step 1. Each later step is reconstructed
/// with `params`, registered to the reference, and its correction is
/// `M · T_i`, with `M` the correction of the step where the current
/// reference was built. On re-anchor steps the laser moves to the next anchor,
/// a new reference is reconstructed from the same camera pose, and `M`
/// becomes that step's correction. Steps that cannot be registered reuse the
/// previous correction and are flagged.
pub fn joint_error_correction(
    config: &JointCalibConfig,
    params: &SystemParams,
    source: &dyn StripeSource,
) -> Result<JointResult> {
    config.validate()?;
    let planes: Vec<Plane> = config
        .anchors
        .iter()
        .map(|a| match a.plane {
            Some(p) => Ok(p),
            None => laser_plane_in_v0(params, a.laser_v),
        })
        .collect::<Result<_>>()?;
    let n = config.n_steps;
    let intr = &params.intrinsics;
    let observe = |capture: u64, cam_v: GalvoVoltages, anchor: usize| -> Result<_> {
        let pixels = source.capture(capture, cam_v, config.anchors[anchor].laser_v)?;
        let v_from_v0 = params.cam_transform(cam_v)?;
        Ok(reconstruct_pixels(&pixels, &planes[anchor], &v_from_v0, intr).0)
    };

    let mut anchor = 0;
    let cam1 = config.camera_voltages(1);
    let mut reference = observe(1, cam1, anchor)?;
    if reference.len() < 3 {
        return Err(Error::FitFailure(format!(
            "reference stripe has {} points; the target must be visible at step 1",
            reference.len()
        )));
    }
    let mut m = RigidTransform::identity();
    let mut corrections = vec![RigidTransform::identity()];
    let mut records = vec![JointStepRecord {
        index: 1,
        cam_v: cam1,
        laser_v: config.anchors[anchor].laser_v,
        anchor,
        points: reference.len(),
        registration: None,
        failed: false,
        reanchored: false,
    }];

    for i in 2..=n {
        let cam_v = config.camera_voltages(i);
        let points = observe(i as u64, cam_v, anchor)?;
        let registration =
            icp_register(&points, &reference, RigidTransform::identity(), &config.icp).ok();
        let failed = registration.is_none();
        let correction = match &registration {
            Some(r) => m * r.transform,
            None => *corrections.last().expect("step 1 recorded"),
        };
        corrections.push(correction);
        let mut record = JointStepRecord {
            index: i,
            cam_v,
            laser_v: config.anchors[anchor].laser_v,
            anchor,
            points: points.len(),
            registration,
            failed,
            reanchored: false,
        };
        if i % config.period == 0 && i / config.period < config.anchors.len() {
            let next = i / config.period;
            let fresh = observe((n + i) as u64, cam_v, next)?;
            if fresh.len() >= 3 {
                anchor = next;
                reference = fresh;
                m = correction;
                record.reanchored = true;
            }
        }
        records.push(record);
    }
    Ok(JointResult {
        corrections,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_follows_rows() {
        let cfg = JointCalibConfig {
            cam_start: GalvoVoltages::new(-5.0, -2.0),
            ..JointCalibConfig::default()
        };
        assert_eq!(cfg.camera_voltages(1), GalvoVoltages::new(-5.0, -2.0));
        let v = cfg.camera_voltages(200);
        assert!((v.pan - (-5.0 + 19.9)).abs() < 1e-12 && v.tilt == -2.0);
        let v = cfg.camera_voltages(201);
        assert_eq!(v, GalvoVoltages::new(-5.0, -1.0));
        assert_eq!(cfg.du, 0.1);
        assert_eq!(cfg.period, 50);
        assert_eq!(cfg.row_len, 200);
    }

    #[test]
    fn config_validation() {
        let mut cfg = JointCalibConfig::default();
        // Default row of 200 steps at 0.1 V leaves the control range from 0 V.
        assert!(cfg.validate().is_err());
        cfg.cam_start = GalvoVoltages::new(-9.95, 0.0);
        assert!(cfg.validate().is_ok());
        cfg.du = 0.0;
        assert!(cfg.validate().is_err());
        cfg.du = 0.1;
        cfg.period = 0;
        assert!(cfg.validate().is_err());
        cfg.period = 50;
        cfg.anchors.clear();
        assert!(cfg.validate().is_err());
    }
}

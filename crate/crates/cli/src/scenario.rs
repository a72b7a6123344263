//! Scenario files: TOML with angles in degrees and lengths in mm.
//!
//! `[truth]` describes the rig that generates data; `[model]` lists only the
//! keys where the assumed rig differs from it. Every other section has
//! defaults, so a minimal scenario is `seed = 1` plus a `[target]`.

use anyhow::{bail, Context, Result};
use dynscan::geometry::AxisLine;
use dynscan::sim::{tracking_schedule, NoiseModel, RenderOptions, Target, TargetShape};
use dynscan::{
    CameraIntrinsics, GalvoVoltages, MirrorGeometry, Plane, RigidTransform, SystemParams,
    VoltageAngleModel,
};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Rig description, shared by scenario `[truth]`/`[model]` and parameter files.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub l: f64,
    pub d: f64,
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
    pub cam_offset_deg: f64,
    pub cam_gain_pan_deg: f64,
    pub cam_gain_tilt_deg: f64,
    pub laser_offset_deg: f64,
    pub laser_gain_pan_deg: f64,
    pub laser_gain_tilt_deg: f64,
    pub axis_direction: [f64; 3],
    pub axis_point: [f64; 3],
    /// `[A, B, C, D]` of the zero-voltage laser plane; when absent the plane
    /// through the axis and `base_point` is used.
    pub base_plane: Option<[f64; 4]>,
    pub base_point: [f64; 3],
}

impl Default for RigConfig {
    /// The library's default rig, written out in file units.
    fn default() -> Self {
        let intr = CameraIntrinsics::default();
        RigConfig {
            l: 83.45,
            d: 22.14,
            fx: intr.fx,
            fy: intr.fy,
            u0: intr.u0,
            v0: intr.v0,
            width: intr.width,
            height: intr.height,
            cam_offset_deg: 45.0,
            cam_gain_pan_deg: 2.0,
            cam_gain_tilt_deg: 2.0,
            laser_offset_deg: 45.0,
            laser_gain_pan_deg: 2.0,
            laser_gain_tilt_deg: 2.0,
            axis_direction: [0.99, 0.02, -0.0004],
            axis_point: [0.0, -200.0, 0.0],
            base_plane: None,
            base_point: [0.0, 0.0, 650.0],
        }
    }
}

impl RigConfig {
    pub fn params(&self) -> Result<SystemParams> {
        let laser_axis = AxisLine::new(v3(self.axis_direction), v3(self.axis_point))?;
        let base_plane = match self.base_plane {
            Some([a, b, c, d]) => Plane::new(a, b, c, d)?,
            None => Plane::from_axis_and_point(&laser_axis, &v3(self.base_point))?,
        };
        let p = SystemParams {
            intrinsics: CameraIntrinsics {
                fx: self.fx,
                fy: self.fy,
                u0: self.u0,
                v0: self.v0,
                width: self.width,
                height: self.height,
            },
            cam_geom: MirrorGeometry::new(self.l, self.d)?,
            cam_model: VoltageAngleModel::from_degrees(
                self.cam_offset_deg,
                self.cam_gain_pan_deg,
                self.cam_gain_tilt_deg,
            )?,
            laser_model: VoltageAngleModel::from_degrees(
                self.laser_offset_deg,
                self.laser_gain_pan_deg,
                self.laser_gain_tilt_deg,
            )?,
            base_plane,
            laser_axis,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "shape", rename_all = "lowercase")]
pub enum TargetConfig {
    Plane {
        /// `[A, B, C, D]` in the target frame.
        coefficients: [f64; 4],
        #[serde(default)]
        pose: PoseConfig,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        pose: PoseConfig,
    },
    Stair {
        step: f64,
        width: f64,
        length: f64,
        #[serde(default)]
        pose: PoseConfig,
    },
    Board {
        spacing: f64,
        markers: usize,
        #[serde(default)]
        pose: PoseConfig,
    },
}

/// Rotation vector (degrees) and translation (mm) of a local frame in `{V0}`.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    pub rotation_deg: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseConfig {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_axis_angle(v3(self.rotation_deg).map(f64::to_radians), v3(self.translation))
    }
}

impl TargetConfig {
    pub fn target(&self) -> Result<Target> {
        let (shape, pose) = match *self {
            TargetConfig::Plane { coefficients: [a, b, c, d], pose } => {
                (TargetShape::Plane(Plane::new(a, b, c, d)?), pose)
            }
            TargetConfig::Sphere { center, radius, pose } => (
                TargetShape::Sphere {
                    center: v3(center),
                    radius,
                },
                pose,
            ),
            TargetConfig::Stair { step, width, length, pose } => {
                (TargetShape::Stair { step, width, length }, pose)
            }
            TargetConfig::Board { spacing, markers, pose } => {
                (TargetShape::Board { spacing, markers }, pose)
            }
        };
        Ok(Target::new(shape, pose.transform())?)
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum ScheduleConfig {
    /// `steps` aim points evenly spaced from `from` to `to` (target frame);
    /// laser and camera both track each point.
    Sweep {
        from: [f64; 3],
        to: [f64; 3],
        steps: usize,
    },
    /// Explicit `[pan, tilt]` voltage pairs, one per step.
    List {
        cam: Vec<[f64; 2]>,
        laser: Vec<[f64; 2]>,
    },
}

impl ScheduleConfig {
    pub fn voltages(
        &self,
        truth: &SystemParams,
        target: &Target,
    ) -> Result<Vec<(GalvoVoltages, GalvoVoltages)>> {
        let sched = match self {
            ScheduleConfig::Sweep { from, to, steps } => {
                let (a, b) = (v3(*from), v3(*to));
                let points: Vec<_> = (0..*steps)
                    .map(|i| {
                        let s = if *steps > 1 { i as f64 / (*steps - 1) as f64 } else { 0.0 };
                        target.pose.transform_point(&(a + (b - a) * s))
                    })
                    .collect();
                tracking_schedule(truth, &points).context("aiming the sweep schedule")?
            }
            ScheduleConfig::List { cam, laser } => {
                if cam.len() != laser.len() {
                    bail!("schedule lists differ in length: {} cam, {} laser", cam.len(), laser.len());
                }
                cam.iter()
                    .zip(laser)
                    .map(|(c, l)| (GalvoVoltages::new(c[0], c[1]), GalvoVoltages::new(l[0], l[1])))
                    .collect()
            }
        };
        for (i, (c, l)) in sched.iter().enumerate() {
            c.validate().with_context(|| format!("schedule step {i}, camera"))?;
            l.validate().with_context(|| format!("schedule step {i}, laser"))?;
        }
        Ok(sched)
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub pixel_sigma: f64,
    pub angle_jitter_deg: f64,
    pub plane_coeff_sigma: f64,
    pub transform_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            pixel_sigma: 0.0,
            angle_jitter_deg: 0.0,
            plane_coeff_sigma: 0.0,
            transform_sigma: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn is_zero(&self) -> bool {
        self.pixel_sigma == 0.0
            && self.angle_jitter_deg == 0.0
            && self.plane_coeff_sigma == 0.0
            && self.transform_sigma == 0.0
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, text: &str) -> Result<()> {
        let (key, value) = text
            .split_once('=')
            .with_context(|| format!("noise override '{text}' is not key=value"))?;
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("noise override '{text}' has a non-numeric value"))?;
        let slot = match key.trim() {
            "pixel_sigma" => &mut self.pixel_sigma,
            "angle_jitter_deg" => &mut self.angle_jitter_deg,
            "plane_coeff_sigma" => &mut self.plane_coeff_sigma,
            "transform_sigma" => &mut self.transform_sigma,
            other => bail!("unknown noise key '{other}'"),
        };
        *slot = value;
        Ok(())
    }

    pub fn model(&self, seed: u64) -> Result<NoiseModel> {
        let m = NoiseModel {
            pixel_sigma: self.pixel_sigma,
            angle_jitter_sigma: self.angle_jitter_deg.to_radians(),
            plane_coeff_sigma: self.plane_coeff_sigma,
            transform_sigma: self.transform_sigma,
            seed,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Write one PGM stripe image per step.
    pub images: bool,
    pub width_sigma: f64,
    pub peak: f64,
    pub background: f64,
    pub image_sigma: f64,
    /// Longest gap between consecutive samples still drawn as one stripe, px.
    pub max_gap: f64,
    /// Smoothing scale of the ridge detector, pixels.
    pub extract_sigma: f64,
    /// Minimum ridge strength (negated second derivative).
    pub extract_threshold: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let r = RenderOptions::default();
        RenderConfig {
            images: false,
            width_sigma: r.width_sigma,
            peak: r.peak,
            background: r.background,
            image_sigma: r.image_sigma,
            max_gap: r.max_gap,
            extract_sigma: 1.8,
            extract_threshold: 5.0,
        }
    }
}

impl RenderConfig {
    pub fn options(&self, seed: u64) -> RenderOptions {
        RenderOptions {
            width_sigma: self.width_sigma,
            peak: self.peak,
            background: self.background,
            image_sigma: self.image_sigma,
            max_gap: self.max_gap,
            seed,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CameraCalibConfig {
    pub board_spacing: f64,
    pub board_markers: usize,
    pub board_distance: f64,
    /// Voltages used on both axes; observations cover the full grid.
    pub grid: Vec<f64>,
}

impl Default for CameraCalibConfig {
    fn default() -> Self {
        CameraCalibConfig {
            board_spacing: 20.0,
            board_markers: 35,
            board_distance: 300.0,
            grid: vec![-10.0, -6.0, -2.0, 2.0, 6.0, 10.0],
        }
    }
}

impl CameraCalibConfig {
    pub fn voltages(&self) -> Vec<GalvoVoltages> {
        self.grid
            .iter()
            .flat_map(|&p| self.grid.iter().map(move |&t| GalvoVoltages::new(p, t)))
            .collect()
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LaserCalibConfig {
    pub boards: Vec<PoseConfig>,
    pub board_spacing: f64,
    pub board_markers: usize,
    pub tilt_start: f64,
    pub tilt_step: f64,
    pub count: usize,
    pub samples: usize,
    /// Depth at which the camera is aimed at each stripe, mm.
    pub aim_depth: f64,
}

impl Default for LaserCalibConfig {
    fn default() -> Self {
        let pose = |rx: f64, ry: f64, z: f64| PoseConfig {
            rotation_deg: [rx, ry, 0.0],
            translation: [0.0, 0.0, z],
        };
        LaserCalibConfig {
            boards: vec![
                pose(0.0, 0.0, 600.0),
                pose(14.0, 0.0, 650.0),
                pose(-11.0, 8.0, 700.0),
                pose(6.0, -17.0, 630.0),
            ],
            board_spacing: 20.0,
            board_markers: 35,
            tilt_start: -1.5,
            tilt_step: 0.1,
            count: 30,
            samples: 400,
            aim_depth: 650.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    /// Points in `{V0}` the laser is aimed at, one anchor each.
    pub anchors: Vec<[f64; 3]>,
    /// Camera `[pan, tilt]` voltages of step 1. At 0 V the reference cloud
    /// does not depend on the mirror offsets.
    pub cam_start: [f64; 2],
    pub du: f64,
    pub row_len: usize,
    pub tilt_step: f64,
    pub period: usize,
    pub n_steps: usize,
    pub trim: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            anchors: vec![[0.0, -5.0, 642.0], [0.0, -2.0, 642.0], [0.0, 2.0, 642.0], [0.0, 5.0, 642.0]],
            cam_start: [0.0, 0.0],
            du: 0.002,
            row_len: 200,
            tilt_step: 0.0,
            period: 50,
            n_steps: 200,
            trim: 0.9,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub camera: CameraCalibConfig,
    pub laser: LaserCalibConfig,
    pub joint: JointConfig,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    seed: Option<u64>,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    truth: toml::Table,
    #[serde(default)]
    model: toml::Table,
    target: TargetConfig,
    schedule: Option<ScheduleConfig>,
    #[serde(default)]
    noise: NoiseConfig,
    #[serde(default)]
    render: RenderConfig,
    #[serde(default)]
    calibrate: CalibConfig,
}

fn default_samples() -> usize {
    720
}

/// A parsed and validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub samples: usize,
    pub truth: SystemParams,
    pub model: SystemParams,
    pub model_config: RigConfig,
    pub target: Target,
    pub schedule: Vec<(GalvoVoltages, GalvoVoltages)>,
    pub noise: NoiseModel,
    pub render: RenderConfig,
    pub calibrate: CalibConfig,
}

impl Scenario {
    /// Parses `text`, applies the seed and noise overrides, and validates.
    pub fn parse(
        text: &str,
        fallback_name: &str,
        seed: Option<u64>,
        noise_overrides: &[String],
    ) -> Result<Scenario> {
        let raw: RawScenario = toml::from_str(text).context("parsing scenario")?;
        let truth_config: RigConfig =
            raw.truth.clone().try_into().context("parsing [truth]")?;
        let mut merged = raw.truth.clone();
        for (k, v) in raw.model {
            merged.insert(k, v);
        }
        let model_config: RigConfig = merged.try_into().context("parsing [model]")?;
        let truth = truth_config.params().context("invalid [truth] rig")?;
        let model = model_config.params().context("invalid [model] rig")?;

        let mut noise_config = raw.noise;
        for o in noise_overrides {
            noise_config.apply_override(o)?;
        }
        let seed = seed.or(raw.seed);
        let noisy = !noise_config.is_zero() || raw.render.image_sigma > 0.0;
        let seed = match seed {
            Some(s) => s,
            None if noisy => bail!("scenario has noise but no seed; set `seed` or pass --seed"),
            None => 0,
        };
        let noise = noise_config.model(seed)?;
        let target = raw.target.target().context("invalid [target]")?;
        let schedule = match &raw.schedule {
            Some(s) => s.voltages(&truth, &target)?,
            None => Vec::new(),
        };
        if raw.render.images && !(raw.render.extract_sigma > 0.0) {
            bail!("render.extract_sigma must be positive");
        }
        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| fallback_name.to_string()),
            seed,
            samples: raw.samples,
            truth,
            model,
            model_config,
            target,
            schedule,
            noise,
            render: raw.render,
            calibrate: raw.calibrate,
        })
    }

    pub fn load(path: &std::path::Path, seed: Option<u64>, noise_overrides: &[String]) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Scenario::parse(&text, stem, seed, noise_overrides)
            .with_context(|| format!("in scenario {}", path.display()))
    }

    /// Provenance line written at the top of every output file.
    pub fn provenance(&self) -> String {
        format!("dynscan {} scenario={} seed={}", dynscan::VERSION, self.name, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [target]
        shape = "plane"
        coefficients = [0, 0, 1, -650]
    "#;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::parse(MINIMAL, "m", None, &[]).unwrap();
        assert_eq!(s.truth, SystemParams::default());
        assert_eq!(s.model, s.truth);
        assert!(s.schedule.is_empty());
        assert_eq!(s.seed, 0);
    }

    #[test]
    fn model_inherits_truth() {
        let text = format!("{MINIMAL}\n[truth]\nl = 80.0\n[model]\nd = 20.0\n");
        let s = Scenario::parse(&text, "m", None, &[]).unwrap();
        assert_eq!(s.truth.cam_geom, MirrorGeometry { l: 80.0, d: 22.14 });
        assert_eq!(s.model.cam_geom, MirrorGeometry { l: 80.0, d: 20.0 });
    }

    #[test]
    fn noise_needs_seed() {
        let text = format!("{MINIMAL}\n[noise]\npixel_sigma = 0.1\n");
        assert!(Scenario::parse(&text, "m", None, &[]).is_err());
        assert_eq!(Scenario::parse(&text, "m", Some(3), &[]).unwrap().noise.seed, 3);
        assert!(Scenario::parse(MINIMAL, "m", None, &["pixel_sigma=0.2".into()]).is_err());
        let s = Scenario::parse(MINIMAL, "m", Some(1), &["pixel_sigma=0.2".into()]).unwrap();
        assert_eq!(s.noise.pixel_sigma, 0.2);
        assert!(Scenario::parse(MINIMAL, "m", Some(1), &["bogus=1".into()]).is_err());
    }

    #[test]
    fn out_of_range_schedule_rejected() {
        let text = format!("{MINIMAL}\n[schedule]\nkind = \"list\"\ncam = [[0, 0], [12, 0]]\nlaser = [[0, 0], [0, 0]]\n");
        let err = Scenario::parse(&text, "m", None, &[]).unwrap_err();
        assert!(format!("{err:#}").contains("step 1"), "{err:#}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[truth]\nfocal = 5\n");
        assert!(Scenario::parse(&text, "m", None, &[]).is_err());
    }

    #[test]
    fn explicit_base_plane_wins() {
        let text = format!("{MINIMAL}\n[truth]\nbase_plane = [0.0, 0.6, 0.8, -520.0]\n");
        let s = Scenario::parse(&text, "m", None, &[]).unwrap();
        assert!((s.truth.base_plane.coefficients() - nalgebra::Vector4::new(0.0, 0.6, 0.8, -520.0)).abs().max() < 1e-12);
    }
}

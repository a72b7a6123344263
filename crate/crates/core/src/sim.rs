//! Forward simulation: stripe samples, stripe images, and calibration
//! observations generated from a ground-truth [`SystemParams`].
//!
//! All randomness is drawn from a ChaCha stream keyed by `(seed, index)`, where
//! the index is the scan step or observation number. Steps can therefore be
//! generated in any order or in parallel with identical results.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calib::{fit_laser_plane, CalibObservation, LaserPlaneObservation};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{transform_plane, GalvoVoltages, MirrorAngles, Plane, RigidTransform};
use crate::image::GrayImage;
use crate::model::{project_point, CameraIntrinsics, SystemParams};
use crate::recon::{reconstruct_point, ScanStep};

/// Noise applied by the simulator. Sigmas are standard deviations of
/// zero-mean Gaussians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    /// Stripe pixel noise, pixels (per axis).
    pub pixel_sigma: f64,
    /// Mirror angle jitter, radians, applied to θ1, θ2 and θ4.
    pub angle_jitter_sigma: f64,
    /// Perturbation of simulated plane normal components, unitless.
    pub plane_coeff_sigma: f64,
    /// Measured-transform noise: rotation-vector components (radians) and
    /// translation components (mm).
    pub transform_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    /// 0.1 px pixel noise and 0.0008° angle jitter.
    fn default() -> Self {
        NoiseModel {
            pixel_sigma: 0.1,
            angle_jitter_sigma: 0.0008f64.to_radians(),
            plane_coeff_sigma: 0.0,
            transform_sigma: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            pixel_sigma: 0.0,
            angle_jitter_sigma: 0.0,
            plane_coeff_sigma: 0.0,
            transform_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("pixel_sigma", self.pixel_sigma),
            ("angle_jitter_sigma", self.angle_jitter_sigma),
            ("plane_coeff_sigma", self.plane_coeff_sigma),
            ("transform_sigma", self.transform_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {s}")));
            }
        }
        Ok(())
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative")
}

/// Target geometry in its local frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetShape {
    /// Unbounded plane; stripes are clipped to the camera's field of view.
    Plane(Plane),
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Two parallel treads `step` mm apart joined by a riser at x = 0. The
    /// upper tread (z = -step, toward the camera) spans x in [-width, 0], the
    /// lower one (z = 0) spans x in [0, width]; both span y in ±length/2.
    Stair { step: f64, width: f64, length: f64 },
    /// Square marker board in the local z = 0 plane, side
    /// `spacing * (markers + 2)`.
    Board { spacing: f64, markers: usize },
}

/// A target shape posed in `{V0}` (`pose` is `V0_from_local`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub shape: TargetShape,
    pub pose: RigidTransform,
}

impl Target {
    pub fn new(shape: TargetShape, pose: RigidTransform) -> Result<Self> {
        let t = Target { shape, pose };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
            }
        };
        match self.shape {
            TargetShape::Plane(_) => Ok(()),
            TargetShape::Sphere { radius, .. } => positive("sphere radius", radius),
            TargetShape::Stair { step, width, length } => {
                positive("stair step", step)?;
                positive("stair width", width)?;
                positive("stair length", length)
            }
            TargetShape::Board { spacing, markers } => {
                positive("board spacing", spacing)?;
                if markers == 0 {
                    return Err(Error::InvalidParameter("board needs markers".into()));
                }
                Ok(())
            }
        }
    }

    /// Plane of a planar target (board or plane) in `{V0}`.
    pub fn plane(&self) -> Option<Plane> {
        match self.shape {
            TargetShape::Plane(p) => Some(transform_plane(&self.pose, &p)),
            TargetShape::Board { .. } => Some(transform_plane(
                &self.pose,
                &Plane::from_unit_unchecked(Vector3::z(), 0.0),
            )),
            _ => None,
        }
    }

    /// The two tread planes of a stair (upper, lower) in `{V0}`.
    pub fn stair_planes(&self) -> Option<(Plane, Plane)> {
        match self.shape {
            TargetShape::Stair { step, .. } => {
                let upper = Plane::from_unit_unchecked(Vector3::z(), step);
                let lower = Plane::from_unit_unchecked(Vector3::z(), 0.0);
                Some((
                    transform_plane(&self.pose, &upper),
                    transform_plane(&self.pose, &lower),
                ))
            }
            _ => None,
        }
    }

    pub(crate) fn surfaces(&self) -> Vec<Surface> {
        let pose = &self.pose;
        let rect = |center: Vector3<f64>, eu: Vector3<f64>, ev: Vector3<f64>, hu: f64, hv: f64| {
            let eu = pose.transform_vector(&eu);
            let ev = pose.transform_vector(&ev);
            Surface::Rect {
                center: pose.transform_point(&center),
                eu,
                ev,
                half_u: hu,
                half_v: hv,
                normal: eu.cross(&ev),
            }
        };
        match self.shape {
            TargetShape::Plane(p) => vec![Surface::Unbounded(transform_plane(pose, &p))],
            TargetShape::Sphere { center, radius } => vec![Surface::Sphere {
                center: pose.transform_point(&center),
                radius,
            }],
            // Outward normals face the camera side (-z) for treads, +x for the riser.
            TargetShape::Stair { step, width, length } => vec![
                rect(
                    Vector3::new(-width / 2.0, 0.0, -step),
                    Vector3::y(),
                    Vector3::x(),
                    length / 2.0,
                    width / 2.0,
                ),
                rect(
                    Vector3::new(width / 2.0, 0.0, 0.0),
                    Vector3::y(),
                    Vector3::x(),
                    length / 2.0,
                    width / 2.0,
                ),
                rect(
                    Vector3::new(0.0, 0.0, -step / 2.0),
                    Vector3::y(),
                    Vector3::z(),
                    length / 2.0,
                    step / 2.0,
                ),
            ],
            TargetShape::Board { spacing, markers } => {
                let half = spacing * (markers as f64 + 2.0) / 2.0;
                vec![rect(Vector3::zeros(), Vector3::y(), Vector3::x(), half, half)]
            }
        }
    }

    /// Distance from `p` to the closest target surface, mm.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.surfaces()
            .iter()
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Surface {
    Rect {
        center: Vector3<f64>,
        eu: Vector3<f64>,
        ev: Vector3<f64>,
        half_u: f64,
        half_v: f64,
        /// Outward normal, `eu × ev`.
        normal: Vector3<f64>,
    },
    Unbounded(Plane),
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

const RECT_SLACK: f64 = 1e-9;

impl Surface {
    fn distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Surface::Rect {
                center,
                eu,
                ev,
                half_u,
                half_v,
                normal,
            } => {
                let r = p - center;
                let du = (r.dot(&eu).abs() - half_u).max(0.0);
                let dv = (r.dot(&ev).abs() - half_v).max(0.0);
                let dn = r.dot(&normal);
                (du * du + dv * dv + dn * dn).sqrt()
            }
            Surface::Unbounded(plane) => plane.signed_distance(p).abs(),
            Surface::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
        }
    }

    /// Smallest ray parameter `t > 0` with `origin + t * dir` on the surface.
    fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Surface::Rect {
                center,
                eu,
                ev,
                half_u,
                half_v,
                normal,
            } => {
                let den = normal.dot(dir);
                if den.abs() < 1e-15 {
                    return None;
                }
                let t = normal.dot(&(center - origin)) / den;
                if t <= 0.0 {
                    return None;
                }
                let r = origin + dir * t - center;
                (r.dot(&eu).abs() <= half_u + RECT_SLACK && r.dot(&ev).abs() <= half_v + RECT_SLACK)
                    .then_some(t)
            }
            Surface::Unbounded(plane) => {
                let den = plane.normal().dot(dir);
                if den.abs() < 1e-15 {
                    return None;
                }
                let t = -plane.signed_distance(origin) / den;
                (t > 0.0).then_some(t)
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / a;
                let t1 = (-b + sq) / a;
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Whether the surface at `p` faces the viewer at `eye`.
    fn faces(&self, p: &Vector3<f64>, eye: &Vector3<f64>) -> bool {
        match *self {
            Surface::Rect { normal, .. } => (eye - p).dot(&normal) > 0.0,
            Surface::Unbounded(_) => true,
            Surface::Sphere { center, .. } => (eye - p).dot(&(p - center)) > 0.0,
        }
    }
}

/// One piece of the laser/surface intersection curve.
#[derive(Clone, Copy, Debug)]
enum Piece {
    Segment {
        a: Vector3<f64>,
        b: Vector3<f64>,
        surface: usize,
    },
    Circle {
        center: Vector3<f64>,
        radius: f64,
        e1: Vector3<f64>,
        e2: Vector3<f64>,
        surface: usize,
    },
}

impl Piece {
    fn length(&self) -> f64 {
        match self {
            Piece::Segment { a, b, .. } => (b - a).norm(),
            Piece::Circle { radius, .. } => 2.0 * std::f64::consts::PI * radius,
        }
    }

    fn point_at(&self, s: f64) -> Vector3<f64> {
        match *self {
            Piece::Segment { a, b, .. } => {
                let len = (b - a).norm();
                a + (b - a) * (s / len)
            }
            Piece::Circle {
                center,
                radius,
                e1,
                e2,
                ..
            } => {
                let phi = s / radius;
                center + (e1 * phi.cos() + e2 * phi.sin()) * radius
            }
        }
    }

    fn surface(&self) -> usize {
        match *self {
            Piece::Segment { surface, .. } | Piece::Circle { surface, .. } => surface,
        }
    }
}

/// Line of intersection of two unit-normal planes: (point, unit direction).
fn plane_intersection(p1: &Plane, p2: &Plane) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let (n1, n2) = (p1.normal(), p2.normal());
    let u = n1.cross(&n2);
    let s2 = u.norm_squared();
    if s2 < 1e-18 {
        return None;
    }
    let c = n1.dot(&n2);
    let a = (-p1.d() + p2.d() * c) / s2;
    let b = (-p2.d() + p1.d() * c) / s2;
    Some((n1 * a + n2 * b, u / s2.sqrt()))
}

/// Clips `origin + t * dir` to the half-space `n·x + d >= 0`.
fn clip_halfspace(interval: &mut (f64, f64), origin: &Vector3<f64>, dir: &Vector3<f64>, plane: &Plane) {
    let f0 = plane.signed_distance(origin);
    let df = plane.normal().dot(dir);
    if df.abs() < 1e-15 {
        if f0 < 0.0 {
            *interval = (1.0, 0.0);
        }
        return;
    }
    let t = -f0 / df;
    if df > 0.0 {
        interval.0 = interval.0.max(t);
    } else {
        interval.1 = interval.1.min(t);
    }
}

/// The four side planes of the view frustum in `{V0}`, inside is positive.
fn frustum_planes(intr: &CameraIntrinsics, v0_from_v: &RigidTransform) -> [Plane; 5] {
    let left = (-0.5 - intr.u0) / intr.fx;
    let right = (intr.width as f64 - 0.5 - intr.u0) / intr.fx;
    let top = (-0.5 - intr.v0) / intr.fy;
    let bottom = (intr.height as f64 - 0.5 - intr.v0) / intr.fy;
    let mk = |a: f64, b: f64, c: f64, d: f64| {
        let p = Plane::new(a, b, c, d).expect("nonzero frustum normal");
        transform_plane(v0_from_v, &p)
    };
    [
        mk(1.0, 0.0, -left, 0.0),
        mk(-1.0, 0.0, right, 0.0),
        mk(0.0, 1.0, -top, 0.0),
        mk(0.0, -1.0, bottom, 0.0),
        mk(0.0, 0.0, 1.0, -1.0),
    ]
}

fn curve_pieces(
    surfaces: &[Surface],
    laser: &Plane,
    frustum: &[Plane; 5],
) -> Vec<Piece> {
    let mut pieces = Vec::new();
    for (idx, s) in surfaces.iter().enumerate() {
        match *s {
            Surface::Rect {
                center,
                eu,
                ev,
                half_u,
                half_v,
                normal,
            } => {
                let plane = Plane::from_unit_unchecked(normal, -normal.dot(&center));
                let Some((p0, dir)) = plane_intersection(&plane, laser) else {
                    continue;
                };
                let mut iv = (f64::NEG_INFINITY, f64::INFINITY);
                for (axis, half) in [(eu, half_u), (ev, half_v)] {
                    let c = (p0 - center).dot(&axis);
                    let k = dir.dot(&axis);
                    if k.abs() < 1e-15 {
                        if c.abs() > half {
                            iv = (1.0, 0.0);
                        }
                        continue;
                    }
                    let (t1, t2) = ((-half - c) / k, (half - c) / k);
                    iv.0 = iv.0.max(t1.min(t2));
                    iv.1 = iv.1.min(t1.max(t2));
                }
                if iv.1 > iv.0 {
                    pieces.push(Piece::Segment {
                        a: p0 + dir * iv.0,
                        b: p0 + dir * iv.1,
                        surface: idx,
                    });
                }
            }
            Surface::Unbounded(plane) => {
                let Some((p0, dir)) = plane_intersection(&plane, laser) else {
                    continue;
                };
                let mut iv = (f64::NEG_INFINITY, f64::INFINITY);
                for f in frustum {
                    clip_halfspace(&mut iv, &p0, &dir, f);
                }
                if iv.1 > iv.0 && iv.0.is_finite() && iv.1.is_finite() {
                    pieces.push(Piece::Segment {
                        a: p0 + dir * iv.0,
                        b: p0 + dir * iv.1,
                        surface: idx,
                    });
                }
            }
            Surface::Sphere { center, radius } => {
                let h = laser.signed_distance(&center);
                if h.abs() >= radius {
                    continue;
                }
                let n = laser.normal();
                let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
                let e1 = n.cross(&helper).normalize();
                let e2 = n.cross(&e1);
                pieces.push(Piece::Circle {
                    center: center - n * h,
                    radius: (radius * radius - h * h).sqrt(),
                    e1,
                    e2,
                    surface: idx,
                });
            }
        }
    }
    pieces
}

/// One simulated stripe point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StripeSample {
    pub pixel: Vector2<f64>,
    /// Ground-truth surface point in `{V0}`.
    pub truth_point: Option<Vector3<f64>>,
}

/// Simulates one stripe image's samples with the noise stream of step 0.
pub fn simulate_stripe(
    params: &SystemParams,
    target: &Target,
    cam_v: GalvoVoltages,
    laser_v: GalvoVoltages,
    n_samples: usize,
    noise: &NoiseModel,
) -> Result<Vec<StripeSample>> {
    simulate_stripe_step(params, target, cam_v, laser_v, n_samples, noise, 0)
}

/// Simulates the stripe seen at one scan step.
///
/// The laser/target curve is sampled at `n_samples` points of uniform arc
/// length over its full extent: bounded faces and spheres are sampled
/// independently of the camera pose, unbounded planes over the part inside
/// the view. Samples that are back-facing, occluded, or outside the image are
/// dropped. Mirror jitter perturbs the true angles; pixel noise is added
/// after projection.
pub fn simulate_stripe_step(
    params: &SystemParams,
    target: &Target,
    cam_v: GalvoVoltages,
    laser_v: GalvoVoltages,
    n_samples: usize,
    noise: &NoiseModel,
    step: u64,
) -> Result<Vec<StripeSample>> {
    noise.validate()?;
    let cam_nominal = params.cam_model.angles(cam_v)?;
    let laser_nominal = params.laser_model.angles(laser_v)?;
    let mut rng = noise.rng(step);
    let jitter = gaussian(noise.angle_jitter_sigma);
    let cam_true = MirrorAngles::new(
        cam_nominal.pan + jitter.sample(&mut rng),
        cam_nominal.tilt + jitter.sample(&mut rng),
    );
    let theta4 = laser_nominal.tilt + jitter.sample(&mut rng);

    let v_from_v0 = params.cam_transform_at(cam_true);
    let v0_from_v = v_from_v0.inverse();
    let eye = v0_from_v.translation();
    let laser = params.laser_plane_at(theta4);
    let frustum = frustum_planes(&params.intrinsics, &v0_from_v);
    let surfaces = target.surfaces();
    let pieces = curve_pieces(&surfaces, &laser, &frustum);

    let total: f64 = pieces.iter().map(Piece::length).sum();
    let mut out = Vec::new();
    if n_samples == 0 || total <= 0.0 {
        return Ok(out);
    }
    let pixel_noise = gaussian(noise.pixel_sigma);
    let spacing = total / n_samples as f64;
    let mut piece_idx = 0;
    let mut piece_start = 0.0;
    for k in 0..n_samples {
        let s = (k as f64 + 0.5) * spacing;
        while piece_idx + 1 < pieces.len() && s > piece_start + pieces[piece_idx].length() {
            piece_start += pieces[piece_idx].length();
            piece_idx += 1;
        }
        let piece = &pieces[piece_idx];
        let p = piece.point_at((s - piece_start).min(piece.length()));
        // Draw noise for every candidate so the stream does not depend on visibility.
        let du = pixel_noise.sample(&mut rng);
        let dv = pixel_noise.sample(&mut rng);

        if !surfaces[piece.surface()].faces(&p, &eye) {
            continue;
        }
        let pv = v_from_v0.transform_point(&p);
        let Ok(px) = project_point(&params.intrinsics, &pv) else {
            continue;
        };
        if !params.intrinsics.contains(&px) {
            continue;
        }
        let ray = p - eye;
        let occluded = surfaces
            .iter()
            .enumerate()
            .any(|(i, surf)| match surf.ray_hit(&eye, &ray) {
                Some(t) => t < 1.0 - 1e-9 && !(i == piece.surface() && t > 1.0 - 1e-6),
                None => false,
            });
        if occluded {
            continue;
        }
        let noisy = px + Vector2::new(du, dv);
        if !params.intrinsics.contains(&noisy) {
            continue;
        }
        out.push(StripeSample {
            pixel: noisy,
            truth_point: Some(p),
        });
    }
    Ok(out)
}

/// Simulates every step of a scan schedule; step `i` uses noise stream `i`.
pub fn simulate_scan(
    params: &SystemParams,
    target: &Target,
    schedule: &[(GalvoVoltages, GalvoVoltages)],
    n_samples: usize,
    noise: &NoiseModel,
    exec: Exec,
) -> Result<Vec<ScanStep>> {
    for (c, l) in schedule {
        c.validate()?;
        l.validate()?;
    }
    exec.map_range(schedule.len(), |i| {
        let (cam_v, laser_v) = schedule[i];
        simulate_stripe_step(params, target, cam_v, laser_v, n_samples, noise, i as u64).map(
            |samples| ScanStep {
                cam_v,
                laser_v,
                samples,
            },
        )
    })
    .into_iter()
    .collect()
}

/// Rendering settings for [`render_stripe_image`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Gaussian cross-section sigma of the stripe, pixels.
    pub width_sigma: f64,
    /// Peak gray level on the stripe center line.
    pub peak: f64,
    pub background: f64,
    /// Additive Gaussian image noise, gray levels.
    pub image_sigma: f64,
    /// Consecutive samples farther apart than this, pixels, are not joined.
    pub max_gap: f64,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width_sigma: 2.0,
            peak: 200.0,
            background: 0.0,
            image_sigma: 0.0,
            max_gap: 10.0,
            seed: 0,
        }
    }
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Renders a stripe image: Gaussian cross-section of the polyline through the
/// sample pixels (in the given order), quantized to 8 bits. The polyline is
/// broken wherever two consecutive samples are more than `max_gap` apart.
pub fn render_stripe_image(
    width: usize,
    height: usize,
    pixels: &[Vector2<f64>],
    opts: &RenderOptions,
) -> GrayImage {
    let mut field = vec![0.0f64; width * height];
    let reach = (4.0 * opts.width_sigma).ceil();
    let profile = |dist: f64| (-dist * dist / (2.0 * opts.width_sigma * opts.width_sigma)).exp();
    let mut stamp = |a: &Vector2<f64>, b: &Vector2<f64>| {
        let x0 = (a.x.min(b.x) - reach).floor().max(0.0) as usize;
        let x1 = ((a.x.max(b.x) + reach).ceil().max(0.0) as usize).min(width.saturating_sub(1));
        let y0 = (a.y.min(b.y) - reach).floor().max(0.0) as usize;
        let y1 = ((a.y.max(b.y) + reach).ceil().max(0.0) as usize).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = point_segment_distance(&Vector2::new(x as f64, y as f64), a, b);
                let v = profile(d);
                let cell = &mut field[y * width + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    };
    if width > 0 && height > 0 {
        match pixels {
            [] => {}
            [only] => stamp(only, only),
            _ => {
                for w in pixels.windows(2) {
                    if (w[1] - w[0]).norm() <= opts.max_gap {
                        stamp(&w[0], &w[1]);
                    } else {
                        stamp(&w[0], &w[0]);
                        stamp(&w[1], &w[1]);
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = gaussian(opts.image_sigma.max(0.0));
    let out: Vec<u8> = field
        .iter()
        .map(|&f| {
            let mut v = opts.background + f * (opts.peak - opts.background);
            if opts.image_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::from_raw(width, height, out).expect("sized buffer")
}

/// Simulated board measurements of `V_from_V0` over a voltage grid.
///
/// An observation is valid when the optical axis of the moved camera hits the
/// front of the board. Measured transforms carry the mirror jitter of the
/// true pose plus a rigid perturbation of `transform_sigma` (rotation vector
/// in radians, translation in mm). Observation `i` uses noise stream `i`.
pub fn simulate_camera_calib_observations(
    params: &SystemParams,
    board: &Target,
    grid: &[GalvoVoltages],
    noise: &NoiseModel,
) -> Result<Vec<CalibObservation>> {
    noise.validate()?;
    let surfaces = board.surfaces();
    let mut out = Vec::with_capacity(grid.len());
    for (i, &cam_v) in grid.iter().enumerate() {
        let nominal = params.cam_model.angles(cam_v)?;
        let mut rng = noise.rng(i as u64);
        let jitter = gaussian(noise.angle_jitter_sigma);
        let angles = MirrorAngles::new(
            nominal.pan + jitter.sample(&mut rng),
            nominal.tilt + jitter.sample(&mut rng),
        );
        let mut t = params.cam_transform_at(angles);
        let v0_from_v = t.inverse();
        let eye = v0_from_v.translation();
        let axis = v0_from_v.transform_vector(&Vector3::z());
        let valid = surfaces.iter().any(|s| {
            s.ray_hit(&eye, &axis)
                .is_some_and(|tt| s.faces(&(eye + axis * tt), &eye))
        });
        if noise.transform_sigma > 0.0 {
            let g = gaussian(noise.transform_sigma);
            let w = Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng));
            let dt = Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng));
            t = RigidTransform::from_axis_angle(w, dt) * t;
        }
        out.push(CalibObservation {
            cam_v,
            measured: t,
            valid,
        });
    }
    Ok(out)
}

/// Laser planes taken straight from the model at each laser voltage.
///
/// With `plane_coeff_sigma > 0` the normal components are perturbed and the
/// offset is recomputed so the plane keeps its point closest to the origin.
pub fn simulate_laser_planes(
    params: &SystemParams,
    laser_voltages: &[GalvoVoltages],
    noise: &NoiseModel,
) -> Result<Vec<LaserPlaneObservation>> {
    noise.validate()?;
    let mut out = Vec::with_capacity(laser_voltages.len());
    for (i, &laser_v) in laser_voltages.iter().enumerate() {
        let nominal = params.laser_model.angles(laser_v)?;
        let mut rng = noise.rng(i as u64);
        let theta4 = nominal.tilt + gaussian(noise.angle_jitter_sigma).sample(&mut rng);
        let mut plane = params.laser_plane_at(theta4);
        if noise.plane_coeff_sigma > 0.0 {
            let g = gaussian(noise.plane_coeff_sigma);
            let anchor = plane.closest_point_to_origin();
            let n = plane.normal()
                + Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng));
            plane = Plane::from_point_normal(&anchor, &n)?;
        }
        out.push(LaserPlaneObservation {
            laser_v,
            plane,
            residual: 0.0,
        });
    }
    Ok(out)
}

/// Laser-plane observations measured the way a rig would: the stripe on each
/// known board pose is imaged, back-projected onto the board plane, and all
/// points of one laser setting are fitted with a plane.
///
/// `views` pairs the camera voltages used to image each laser setting (so a
/// dynamic camera can follow the stripe) with the laser voltages.
pub fn simulate_laser_plane_observations(
    params: &SystemParams,
    boards: &[Target],
    views: &[(GalvoVoltages, GalvoVoltages)],
    n_samples: usize,
    noise: &NoiseModel,
) -> Result<Vec<LaserPlaneObservation>> {
    let board_planes: Vec<Plane> = boards
        .iter()
        .map(|b| {
            b.plane()
                .ok_or_else(|| Error::InvalidParameter("laser calibration needs planar boards".into()))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(views.len());
    for (vi, &(cam_v, laser_v)) in views.iter().enumerate() {
        let v_from_v0 = params.cam_transform(cam_v)?;
        let v0_from_v = v_from_v0.inverse();
        let mut points = Vec::new();
        for (bi, (board, plane0)) in boards.iter().zip(&board_planes).enumerate() {
            let step = (vi * boards.len() + bi) as u64;
            let samples =
                simulate_stripe_step(params, board, cam_v, laser_v, n_samples, noise, step)?;
            let plane_v = transform_plane(&v_from_v0, plane0);
            for s in samples {
                if let Ok(p) = reconstruct_point(&s.pixel, &plane_v, &params.intrinsics) {
                    points.push(v0_from_v.transform_point(&p));
                }
            }
        }
        let (plane, residual) = fit_laser_plane(&points)?;
        out.push(LaserPlaneObservation {
            laser_v,
            plane,
            residual,
        });
    }
    Ok(out)
}

/// Camera voltages that put `point_v0` on the principal point (Newton
/// iterations on the nominal model).
pub fn aim_camera(params: &SystemParams, point_v0: &Vector3<f64>) -> Result<GalvoVoltages> {
    let intr = &params.intrinsics;
    let residual = |v: GalvoVoltages| -> Result<Vector2<f64>> {
        let t = params.cam_transform(v)?;
        let p = t.transform_point(point_v0);
        let px = project_point(intr, &p)?;
        Ok(Vector2::new((px.x - intr.u0) / intr.fx, (px.y - intr.v0) / intr.fy))
    };
    let mut v = GalvoVoltages::ZERO;
    for _ in 0..50 {
        let r = residual(v)?;
        if r.norm() < 1e-15 {
            break;
        }
        let h = 1e-6;
        let rp = residual(GalvoVoltages::new(v.pan + h, v.tilt))?;
        let rt = residual(GalvoVoltages::new(v.pan, v.tilt + h))?;
        let jac = nalgebra::Matrix2::from_columns(&[(rp - r) / h, (rt - r) / h]);
        let Some(inv) = jac.try_inverse() else {
            return Err(Error::Unidentifiable("camera aim Jacobian singular".into()));
        };
        let step = inv * r;
        v = GalvoVoltages::new(
            (v.pan - step.x).clamp(-10.0, 10.0),
            (v.tilt - step.y).clamp(-10.0, 10.0),
        );
    }
    v.validate()?;
    Ok(v)
}

/// Laser voltages (tilt only) whose plane passes through `point_v0`.
pub fn aim_laser(params: &SystemParams, point_v0: &Vector3<f64>) -> Result<GalvoVoltages> {
    let axis = &params.laser_axis;
    let wanted = Plane::from_axis_and_point(axis, point_v0)?;
    let n0 = params.base_plane.normal();
    let mut n1 = wanted.normal();
    if n1.dot(&n0) < 0.0 {
        n1 = -n1;
    }
    let rotation = n0.cross(&n1).dot(&axis.direction).atan2(n0.dot(&n1));
    let v = GalvoVoltages::new(0.0, rotation / (2.0 * params.laser_model.gain_tilt));
    v.validate()?;
    Ok(v)
}

/// Scan schedule that aims the laser and then the camera at each point in turn.
pub fn tracking_schedule(
    params: &SystemParams,
    points_v0: &[Vector3<f64>],
) -> Result<Vec<(GalvoVoltages, GalvoVoltages)>> {
    points_v0
        .iter()
        .map(|q| Ok((aim_camera(params, q)?, aim_laser(params, q)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::reconstruct_step;
    use approx::assert_abs_diff_eq;

    fn at(z: f64) -> RigidTransform {
        RigidTransform::from_translation(Vector3::new(0.0, 0.0, z))
    }

    fn plane_target(z: f64) -> Target {
        Target::new(TargetShape::Plane(Plane::new(0.0, 0.0, 1.0, -z).unwrap()), RigidTransform::identity()).unwrap()
    }

    fn stair() -> Target {
        Target::new(
            TargetShape::Stair { step: 30.0, width: 40.0, length: 60.0 },
            RigidTransform::from_translation(Vector3::new(4.0, 0.0, 665.0)),
        )
        .unwrap()
    }

    #[test]
    fn plane_target_samples_lie_on_both_planes() {
        let params = SystemParams::default();
        let target = plane_target(650.0);
        let samples = simulate_stripe(&params, &target, GalvoVoltages::ZERO, GalvoVoltages::ZERO, 720, &NoiseModel::noiseless()).unwrap();
        assert_eq!(samples.len(), 720);
        let laser = params.base_plane;
        for s in &samples {
            let p = s.truth_point.unwrap();
            assert!(laser.signed_distance(&p).abs() < 1e-10);
            assert!(target.surface_distance(&p) < 1e-10);
            assert!(params.intrinsics.contains(&s.pixel));
        }
    }

    #[test]
    fn sphere_samples_at_radius() {
        let params = SystemParams::default();
        let target = Target::new(TargetShape::Sphere { center: Vector3::new(0.0, 0.0, 670.0), radius: 20.0 }, RigidTransform::identity()).unwrap();
        let samples = simulate_stripe(&params, &target, GalvoVoltages::ZERO, GalvoVoltages::ZERO, 2000, &NoiseModel::noiseless()).unwrap();
        assert!(samples.len() > 100, "{}", samples.len());
        for s in &samples {
            let p = s.truth_point.unwrap();
            assert_abs_diff_eq!((p - Vector3::new(0.0, 0.0, 670.0)).norm(), 20.0, epsilon = 1e-10);
            assert!(params.base_plane.signed_distance(&p).abs() < 1e-10);
            // Front-facing only: the camera (origin) sees the near cap.
            assert!(p.z < 670.0);
        }
    }

    #[test]
    fn stair_samples_on_two_parallel_planes() {
        let params = SystemParams::default();
        let target = stair();
        let laser_v = aim_laser(&params, &Vector3::new(0.0, 0.0, 650.0)).unwrap();
        let samples = simulate_stripe(&params, &target, GalvoVoltages::ZERO, laser_v, 720, &NoiseModel::noiseless()).unwrap();
        let (upper, lower) = target.stair_planes().unwrap();
        assert_abs_diff_eq!(upper.normal_angle(&lower), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((upper.d() - lower.d()).abs(), 30.0, epsilon = 1e-9);
        let (mut on_upper, mut on_lower) = (0, 0);
        for s in &samples {
            let p = s.truth_point.unwrap();
            if upper.signed_distance(&p).abs() < 1e-9 {
                on_upper += 1;
            } else if lower.signed_distance(&p).abs() < 1e-9 {
                on_lower += 1;
            }
        }
        assert!(on_upper > 100 && on_lower > 100, "{on_upper} {on_lower}");
        assert_eq!(on_upper + on_lower, samples.len());
    }

    #[test]
    fn stripe_is_deterministic() {
        let params = SystemParams::default();
        let noise = NoiseModel::default().with_seed(77);
        let a = simulate_stripe_step(&params, &stair(), GalvoVoltages::new(0.1, 0.0), GalvoVoltages::ZERO, 500, &noise, 3).unwrap();
        let b = simulate_stripe_step(&params, &stair(), GalvoVoltages::new(0.1, 0.0), GalvoVoltages::ZERO, 500, &noise, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_stripe_step(&params, &stair(), GalvoVoltages::new(0.1, 0.0), GalvoVoltages::ZERO, 500, &noise, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_intersection_is_empty() {
        let params = SystemParams::default();
        let far = Target::new(TargetShape::Sphere { center: Vector3::new(0.0, 400.0, 650.0), radius: 5.0 }, RigidTransform::identity()).unwrap();
        let s = simulate_stripe(&params, &far, GalvoVoltages::ZERO, GalvoVoltages::ZERO, 100, &NoiseModel::noiseless()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn scan_parallel_matches_sequential() {
        let params = SystemParams::default();
        let schedule: Vec<_> = (0..12)
            .map(|i| (GalvoVoltages::new(0.0, 0.0), GalvoVoltages::new(0.0, -0.05 + 0.01 * i as f64)))
            .collect();
        let noise = NoiseModel::default().with_seed(5);
        let a = simulate_scan(&params, &stair(), &schedule, 300, &noise, Exec::Sequential).unwrap();
        let b = simulate_scan(&params, &stair(), &schedule, 300, &noise, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| !s.samples.is_empty()));
    }

    #[test]
    fn scan_rejects_bad_voltage() {
        let params = SystemParams::default();
        let schedule = vec![(GalvoVoltages::new(11.0, 0.0), GalvoVoltages::ZERO)];
        assert!(simulate_scan(&params, &stair(), &schedule, 10, &NoiseModel::noiseless(), Exec::Sequential).is_err());
    }

    #[test]
    fn render_examples() {
        let pts: Vec<_> = (0..540).map(|v| Vector2::new(100.3, v as f64)).collect();
        let img = render_stripe_image(720, 540, &pts, &RenderOptions::default());
        for y in [10usize, 270, 500] {
            let row: Vec<f64> = (0..720).map(|x| img.get(x, y) as f64).collect();
            let (imax, _) = row.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
            let (l, c, r) = (row[imax - 1], row[imax], row[imax + 1]);
            let peak = imax as f64 + 0.5 * (l - r) / (l - 2.0 * c + r);
            assert!((peak - 100.3).abs() < 0.05, "{peak}");
        }
        let dark = render_stripe_image(64, 48, &[], &RenderOptions::default());
        assert!(dark.pixels().iter().all(|&p| p == 0));
        let split = render_stripe_image(64, 48, &[Vector2::new(5.0, 20.0), Vector2::new(60.0, 20.0)], &RenderOptions::default());
        assert_eq!(split.get(32, 20), 0);
        assert_eq!(split.get(5, 20), 200);
        let one = render_stripe_image(64, 48, &[Vector2::new(20.0, 20.0)], &RenderOptions::default());
        assert_eq!(one.get(20, 20), 200);
        assert_eq!(*one.pixels().iter().max().unwrap(), 200);
    }

    #[test]
    fn camera_observations_noiseless() {
        let params = SystemParams::default();
        let board = Target::new(TargetShape::Board { spacing: 20.0, markers: 35 }, at(300.0)).unwrap();
        let grid: Vec<_> = [-10.0, -2.0, 0.0, 6.0]
            .iter()
            .flat_map(|&p| [-6.0, 0.0, 2.0].map(move |t| GalvoVoltages::new(p, t)))
            .collect();
        let obs = simulate_camera_calib_observations(&params, &board, &grid, &NoiseModel::noiseless()).unwrap();
        for o in &obs {
            assert_eq!(o.measured, params.cam_transform(o.cam_v).unwrap());
            if o.cam_v == GalvoVoltages::ZERO {
                assert!((o.measured.matrix() - nalgebra::Matrix4::identity()).abs().max() < 1e-12);
                assert!(o.valid);
            }
        }
        let noisy = NoiseModel { transform_sigma: 1e-3, ..NoiseModel::noiseless() }.with_seed(4);
        let a = simulate_camera_calib_observations(&params, &board, &grid, &noisy).unwrap();
        let b = simulate_camera_calib_observations(&params, &board, &grid, &noisy).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|o| o.measured.is_rigid(1e-12)));
        // A board far off to the side is never seen.
        let side = Target::new(
            TargetShape::Board { spacing: 20.0, markers: 5 },
            RigidTransform::from_translation(Vector3::new(2000.0, 0.0, 300.0)),
        )
        .unwrap();
        let obs = simulate_camera_calib_observations(&params, &side, &grid, &NoiseModel::noiseless()).unwrap();
        assert!(obs.iter().all(|o| !o.valid));
    }

    #[test]
    fn aiming_helpers() {
        let params = SystemParams::default();
        let q = Vector3::new(30.0, -20.0, 640.0);
        let cam_v = aim_camera(&params, &q).unwrap();
        let px = project_point(&params.intrinsics, &params.cam_transform(cam_v).unwrap().transform_point(&q)).unwrap();
        assert_abs_diff_eq!(px.x, params.intrinsics.u0, epsilon = 1e-6);
        assert_abs_diff_eq!(px.y, params.intrinsics.v0, epsilon = 1e-6);
        let laser_v = aim_laser(&params, &q).unwrap();
        let plane = crate::model::laser_plane_in_v0(&params, laser_v).unwrap();
        assert!(plane.signed_distance(&q).abs() < 1e-9);
    }

    #[test]
    fn tracking_schedule_centers_each_point() {
        let params = SystemParams::default();
        let qs = [Vector3::new(0.0, -5.0, 650.0), Vector3::new(2.0, 5.0, 660.0)];
        let sched = tracking_schedule(&params, &qs).unwrap();
        for (q, (c, l)) in qs.iter().zip(&sched) {
            assert!(crate::model::laser_plane_in_v0(&params, *l).unwrap().signed_distance(q).abs() < 1e-9);
            let px = project_point(&params.intrinsics, &params.cam_transform(*c).unwrap().transform_point(q)).unwrap();
            assert_abs_diff_eq!(px.x, params.intrinsics.u0, epsilon = 1e-6);
        }
    }

    #[test]
    fn laser_plane_observations_recover_plane() {
        let params = SystemParams::default();
        let boards: Vec<Target> = [(0.0, 0.0, 600.0), (0.25, 0.0, 650.0), (-0.2, 0.15, 700.0), (0.1, -0.3, 630.0), (0.0, 0.3, 680.0)]
            .iter()
            .map(|&(ax, ay, z)| Target::new(TargetShape::Board { spacing: 20.0, markers: 35 }, RigidTransform::from_axis_angle(Vector3::new(ax, ay, 0.0), Vector3::new(0.0, 0.0, z))).unwrap())
            .collect();
        let views = vec![(GalvoVoltages::ZERO, GalvoVoltages::ZERO)];
        let obs = simulate_laser_plane_observations(&params, &boards, &views, 400, &NoiseModel::noiseless()).unwrap();
        assert!(obs[0].plane.distance_up_to_sign(&params.base_plane) < 1e-9);
        assert!(obs[0].residual < 1e-9);
    }

    #[test]
    fn noiseless_reconstruction_hits_target() {
        let params = SystemParams::default();
        let target = plane_target(650.0);
        let samples = simulate_stripe(&params, &target, GalvoVoltages::new(0.3, -0.2), GalvoVoltages::ZERO, 200, &NoiseModel::noiseless()).unwrap();
        assert!(!samples.is_empty());
        let step = ScanStep { cam_v: GalvoVoltages::new(0.3, -0.2), laser_v: GalvoVoltages::ZERO, samples };
        let (cloud, skipped) = reconstruct_step(&step, &params).unwrap();
        assert_eq!(skipped, 0);
        for (p, s) in cloud.points.iter().zip(&step.samples) {
            assert!((p - s.truth_point.unwrap()).norm() < 1e-9);
        }
    }
}

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use dynscan::calib::{
    calibrate_dynamic_camera, calibrate_rotation_axis, joint_error_correction, Anchor, IcpOptions,
    JointCalibConfig, LaserPlaneObservation, SimulatedStripeSource,
};
use dynscan::image::GrayImage;
use dynscan::io::{read_ply, write_ply};
use dynscan::metrics::{
    cloud_distance, flatness_error, matrix_error, stair_distance, Correspondence, ErrorReport,
    RansacOptions, StairOptions,
};
use dynscan::model::laser_plane_in_v0;
use dynscan::recon::reconstruct_scan;
use dynscan::sim::{
    aim_camera, aim_laser, render_stripe_image, simulate_camera_calib_observations,
    simulate_laser_plane_observations, simulate_scan, simulate_stripe_step, StripeSample, Target,
    TargetShape,
};
use dynscan::stripe::{extract_centers, order_centers};
use dynscan::{Exec, GalvoVoltages, Plane, RigidTransform, ScanStep, SystemParams};
use nalgebra::{Vector2, Vector3};

use crate::files::*;
use crate::scenario::{RigConfig, Scenario};
use crate::ScenarioArgs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Camera,
    Laser,
    Axis,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Stair,
    Flatness,
    Matrix,
    Reference,
}

pub struct EvalInputs<'a> {
    pub input: Option<&'a Path>,
    pub reference: Option<&'a Path>,
    pub params: Option<&'a Path>,
    pub nominal: f64,
}

fn load(args: &ScenarioArgs) -> Result<Scenario> {
    Scenario::load(&args.scenario, args.seed, &args.noise_override)
}

fn announce(written: &[std::path::PathBuf]) {
    for p in written {
        println!("wrote {}", p.display());
    }
}

fn image_name(step: usize) -> String {
    format!("step_{step:04}.pgm")
}

fn params_or_model(scn: &Scenario, params: Option<&Path>) -> Result<(RigConfig, SystemParams)> {
    match params {
        Some(p) => {
            let cfg: RigConfig = read_toml(p)?;
            let params = cfg.params().with_context(|| format!("invalid parameters in {}", p.display()))?;
            Ok((cfg, params))
        }
        None => Ok((scn.model_config.clone(), scn.model)),
    }
}

fn schedule_rows(schedule: &[(GalvoVoltages, GalvoVoltages)]) -> Vec<ScheduleRow> {
    schedule
        .iter()
        .enumerate()
        .map(|(i, &(c, l))| ScheduleRow::new(i, c, l))
        .collect()
}

fn stripe_rows<'a>(steps: impl Iterator<Item = &'a [Vector2<f64>]>) -> Vec<StripeRow> {
    steps
        .enumerate()
        .flat_map(|(i, px)| px.iter().map(move |p| StripeRow { step: i, u: p.x, v: p.y }))
        .collect()
}

fn ply_bytes(points: &[Vector3<f64>], comments: &[String]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_ply(&mut buf, points, comments)?;
    Ok(buf)
}

pub fn simulate(args: &ScenarioArgs, out: &Path) -> Result<()> {
    let scn = load(args)?;
    let comments = comment_lines(&scn.provenance());
    let steps = simulate_scan(&scn.truth, &scn.target, &scn.schedule, scn.samples, &scn.noise, Exec::default())?;

    let mut outputs = Outputs::default();
    outputs.add(
        out.join("schedule.csv"),
        csv_bytes(&comments, &schedule_rows(&scn.schedule), &SCHEDULE_HEADER)?,
    );
    let pixels: Vec<Vec<Vector2<f64>>> = steps.iter().map(ScanStep::pixels).collect();
    outputs.add(
        out.join("stripes.csv"),
        csv_bytes(&comments, &stripe_rows(pixels.iter().map(Vec::as_slice)), &STRIPE_HEADER)?,
    );
    let truth: Vec<Vector3<f64>> = steps
        .iter()
        .flat_map(|s| s.samples.iter().filter_map(|p| p.truth_point))
        .collect();
    outputs.add(out.join("truth.ply"), ply_bytes(&truth, &comments)?);
    if scn.render.images {
        let intr = scn.truth.intrinsics;
        for (i, px) in pixels.iter().enumerate() {
            let opts = scn.render.options(scn.seed.wrapping_add(i as u64));
            let img = render_stripe_image(intr.width as usize, intr.height as usize, px, &opts);
            let mut buf = Vec::new();
            img.write_pgm(&mut buf, &comments)?;
            outputs.add(out.join("images").join(image_name(i)), buf);
        }
    }
    let mut report = Report::new();
    report_entry(&mut report, "steps", steps.len() as i64);
    report_entry(&mut report, "samples", truth.len() as i64);
    outputs.add(out.join("simulate.toml"), toml_bytes(&comments, &report)?);
    announce(&outputs.commit()?);
    println!("simulated {} steps, {} stripe samples", steps.len(), truth.len());
    Ok(())
}

pub fn extract(args: &ScenarioArgs, input: &Path, out: &Path) -> Result<()> {
    let scn = load(args)?;
    let comments = comment_lines(&scn.provenance());
    let schedule = read_schedule(&input.join("schedule.csv"))?;
    let mut centers = Vec::new();
    let mut stripes = Vec::new();
    for row in &schedule {
        let path = input.join("images").join(image_name(row.step));
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let img = GrayImage::read_pgm(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        let found = extract_centers(&img, scn.render.extract_sigma, scn.render.extract_threshold, Exec::default());
        let strength: HashMap<(u64, u64), f64> = found
            .iter()
            .map(|p| ((p.pixel.x.to_bits(), p.pixel.y.to_bits()), p.strength))
            .collect();
        for (k, px) in order_centers(&found).into_iter().enumerate() {
            centers.push(CenterRow {
                step: row.step,
                row: k,
                u: px.x,
                v: px.y,
                strength: strength[&(px.x.to_bits(), px.y.to_bits())],
            });
            stripes.push(StripeRow { step: row.step, u: px.x, v: px.y });
        }
    }
    let mut outputs = Outputs::default();
    outputs.add(out.join("schedule.csv"), csv_bytes(&comments, &schedule, &SCHEDULE_HEADER)?);
    outputs.add(out.join("stripes.csv"), csv_bytes(&comments, &stripes, &STRIPE_HEADER)?);
    outputs.add(out.join("centers.csv"), csv_bytes(&comments, &centers, &CENTER_HEADER)?);
    announce(&outputs.commit()?);
    println!("extracted {} centers from {} images", centers.len(), schedule.len());
    Ok(())
}

pub fn calibrate(
    stage: Stage,
    args: &ScenarioArgs,
    params: Option<&Path>,
    input: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let scn = load(args)?;
    let comments = comment_lines(&scn.provenance());
    let (mut rig, model) = params_or_model(&scn, params)?;
    let mut report = Report::new();
    let mut outputs = Outputs::default();
    match stage {
        Stage::Camera => {
            let cfg = &scn.calibrate.camera;
            let board = Target::new(
                TargetShape::Board { spacing: cfg.board_spacing, markers: cfg.board_markers },
                RigidTransform::from_translation(Vector3::new(0.0, 0.0, cfg.board_distance)),
            )?;
            let grid = cfg.voltages();
            let obs = simulate_camera_calib_observations(&scn.truth, &board, &grid, &scn.noise)?;
            let (geom, residual) = calibrate_dynamic_camera(&obs, model.cam_neutral(), &model.cam_model)?;
            rig.l = geom.l;
            rig.d = geom.d;
            report_entry(&mut report, "l", geom.l);
            report_entry(&mut report, "d", geom.d);
            report_entry(&mut report, "residual", residual);
            report_entry(&mut report, "observations", obs.len() as i64);
            report_entry(&mut report, "valid_observations", obs.iter().filter(|o| o.valid).count() as i64);
            report_entry(&mut report, "truth_l", scn.truth.cam_geom.l);
            report_entry(&mut report, "truth_d", scn.truth.cam_geom.d);
        }
        Stage::Laser => {
            let obs = laser_observations(&scn, &model)?;
            let rows: Vec<PlaneRow> = obs.iter().map(plane_row).collect();
            outputs.add(out.join("laser_planes.csv"), csv_bytes(&comments, &rows, &PLANE_HEADER)?);
            let zero = obs
                .iter()
                .min_by(|a, b| a.laser_v.tilt.abs().total_cmp(&b.laser_v.tilt.abs()))
                .filter(|o| o.laser_v.tilt.abs() < 1e-9 && o.laser_v.pan == 0.0);
            match zero {
                Some(o) => {
                    let p = oriented_like(&o.plane, &model.base_plane);
                    rig.base_plane = Some(p.coefficients().into());
                    report_entry(&mut report, "base_plane", coeff_array(&p));
                    report_entry(&mut report, "base_plane_residual", o.residual);
                    let truth = scn.truth.base_plane;
                    report_entry(&mut report, "base_plane_error", p.distance_up_to_sign(&truth));
                }
                None => report_entry(&mut report, "base_plane", "not measured: sweep excludes 0 V"),
            }
            report_entry(&mut report, "planes", obs.len() as i64);
            report_entry(&mut report, "max_residual", obs.iter().map(|o| o.residual).fold(0.0, f64::max));
        }
        Stage::Axis => {
            let Some(input) = input else {
                bail!("axis stage needs --input with a laser_planes.csv from the laser stage");
            };
            let rows: Vec<PlaneRow> = read_csv(input)?;
            let obs = rows
                .iter()
                .map(|r| {
                    Ok(LaserPlaneObservation {
                        laser_v: GalvoVoltages::new(r.laser_pan, r.laser_tilt),
                        plane: Plane::new(r.a, r.b, r.c, r.d)?,
                        residual: r.residual,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let axis = calibrate_rotation_axis(&obs)?;
            let mut dir = axis.direction;
            if dir.dot(&model.laser_axis.direction) < 0.0 {
                dir = -dir;
            }
            rig.axis_direction = dir.into();
            rig.axis_point = axis.point.into();
            if rig.base_plane.is_none() {
                rig.base_plane = Some(model.base_plane.coefficients().into());
            }
            let worst = obs.iter().map(|o| o.plane.signed_distance(&axis.point).abs()).fold(0.0, f64::max);
            let truth = scn.truth.laser_axis.direction;
            let angle = dir.cross(&truth).norm().atan2(dir.dot(&truth).abs());
            report_entry(&mut report, "axis_direction", vec3_array(&dir));
            report_entry(&mut report, "axis_point", vec3_array(&axis.point));
            report_entry(&mut report, "planes", obs.len() as i64);
            report_entry(&mut report, "max_point_plane_distance", worst);
            report_entry(&mut report, "direction_error_rad", angle);
        }
        Stage::Joint => joint(&scn, &model, &comments, &mut report, &mut outputs, out)?,
    }
    if rig.base_plane.is_none() {
        rig.base_plane = Some(model.base_plane.coefficients().into());
    }
    rig.params().context("calibrated parameters are invalid")?;
    let name = format!("{stage:?}").to_lowercase();
    outputs.add(out.join("params.toml"), toml_bytes(&comments, &rig)?);
    outputs.add(out.join(format!("{name}_report.toml")), toml_bytes(&comments, &report)?);
    announce(&outputs.commit()?);
    for (k, v) in &report {
        println!("{k} = {v}");
    }
    Ok(())
}

fn coeff_array(p: &Plane) -> Vec<f64> {
    p.coefficients().iter().copied().collect()
}

fn vec3_array(v: &Vector3<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// `p` with its sign chosen to agree with `like`.
fn oriented_like(p: &Plane, like: &Plane) -> Plane {
    if p.normal().dot(&like.normal()) < 0.0 {
        p.flipped()
    } else {
        *p
    }
}

fn plane_row(o: &LaserPlaneObservation) -> PlaneRow {
    let c = o.plane.coefficients();
    PlaneRow {
        laser_pan: o.laser_v.pan,
        laser_tilt: o.laser_v.tilt,
        a: c[0],
        b: c[1],
        c: c[2],
        d: c[3],
        residual: o.residual,
    }
}

fn laser_observations(scn: &Scenario, model: &SystemParams) -> Result<Vec<LaserPlaneObservation>> {
    let cfg = &scn.calibrate.laser;
    if cfg.count == 0 {
        bail!("calibrate.laser.count must be positive");
    }
    let boards = cfg
        .boards
        .iter()
        .map(|pose| {
            Target::new(
                TargetShape::Board { spacing: cfg.board_spacing, markers: cfg.board_markers },
                pose.transform(),
            )
            .map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut views = Vec::with_capacity(cfg.count);
    for k in 0..cfg.count {
        let laser_v = GalvoVoltages::new(0.0, cfg.tilt_start + cfg.tilt_step * k as f64);
        laser_v.validate().with_context(|| format!("laser calibration setting {k}"))?;
        // Aim the camera where the nominal plane crosses the optical axis depth.
        let plane = laser_plane_in_v0(model, laser_v)?;
        let n = plane.normal();
        if n.y.abs() < 1e-9 {
            bail!("laser plane {k} is parallel to the aiming line");
        }
        let aim = Vector3::new(0.0, -(n.z * cfg.aim_depth + plane.d()) / n.y, cfg.aim_depth);
        views.push((aim_camera(model, &aim)?, laser_v));
    }
    Ok(simulate_laser_plane_observations(&scn.truth, &boards, &views, cfg.samples, &scn.noise)?)
}

fn joint(
    scn: &Scenario,
    model: &SystemParams,
    comments: &[String],
    report: &mut Report,
    outputs: &mut Outputs,
    out: &Path,
) -> Result<()> {
    let cfg = &scn.calibrate.joint;
    let anchors = cfg
        .anchors
        .iter()
        .map(|a| {
            Ok(Anchor {
                laser_v: aim_laser(model, &Vector3::new(a[0], a[1], a[2]))?,
                plane: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let config = JointCalibConfig {
        anchors,
        cam_start: GalvoVoltages::new(cfg.cam_start[0], cfg.cam_start[1]),
        du: cfg.du,
        row_len: cfg.row_len,
        tilt_step: cfg.tilt_step,
        period: cfg.period,
        n_steps: cfg.n_steps,
        icp: IcpOptions { trim: cfg.trim, ..IcpOptions::default() },
    };
    let source = SimulatedStripeSource {
        truth: &scn.truth,
        target: &scn.target,
        n_samples: scn.samples,
        noise: scn.noise,
    };
    let result = joint_error_correction(&config, model, &source)?;

    // Re-issue each step's capture to store the scan that was corrected.
    let mut schedule = Vec::new();
    let mut stripes: Vec<Vec<Vector2<f64>>> = Vec::new();
    let mut truth = Vec::new();
    for r in &result.records {
        let samples: Vec<StripeSample> = simulate_stripe_step(
            &scn.truth,
            &scn.target,
            r.cam_v,
            r.laser_v,
            scn.samples,
            &scn.noise,
            r.index as u64,
        )?;
        schedule.push((r.cam_v, r.laser_v));
        truth.extend(samples.iter().filter_map(|s| s.truth_point));
        stripes.push(samples.iter().map(|s| s.pixel).collect());
    }
    let rows: Vec<CorrectionRow> = result
        .corrections
        .iter()
        .enumerate()
        .map(|(i, t)| CorrectionRow::new(i, t))
        .collect();
    outputs.add(out.join("corrections.csv"), csv_bytes(comments, &rows, &CORRECTION_HEADER)?);
    outputs.add(out.join("schedule.csv"), csv_bytes(comments, &schedule_rows(&schedule), &SCHEDULE_HEADER)?);
    outputs.add(
        out.join("stripes.csv"),
        csv_bytes(comments, &stripe_rows(stripes.iter().map(Vec::as_slice)), &STRIPE_HEADER)?,
    );
    outputs.add(out.join("truth.ply"), ply_bytes(&truth, comments)?);
    report_entry(report, "steps", result.records.len() as i64);
    report_entry(report, "rmse_before", result.rmse_before());
    report_entry(report, "rmse_after", result.rmse_after());
    report_entry(report, "failed_steps", result.records.iter().filter(|r| r.failed).count() as i64);
    report_entry(report, "reanchored_steps", result.records.iter().filter(|r| r.reanchored).count() as i64);
    Ok(())
}

pub fn reconstruct(
    args: &ScenarioArgs,
    params: Option<&Path>,
    input: &Path,
    corrections: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let scn = load(args)?;
    let comments = comment_lines(&scn.provenance());
    let (_, model) = params_or_model(&scn, params)?;
    let schedule = read_schedule(&input.join("schedule.csv"))?;
    let stripes = read_stripes(&input.join("stripes.csv"), schedule.len())?;
    let steps: Vec<ScanStep> = schedule
        .iter()
        .zip(stripes)
        .map(|(row, px)| {
            let (cam_v, laser_v) = row.voltages();
            ScanStep {
                cam_v,
                laser_v,
                samples: px.into_iter().map(|pixel| StripeSample { pixel, truth_point: None }).collect(),
            }
        })
        .collect();
    let corrections = corrections
        .map(|p| read_corrections(p, steps.len()))
        .transpose()?;
    let (cloud, skipped) = reconstruct_scan(&steps, &model, corrections.as_deref(), Exec::default())?;
    let mut outputs = Outputs::default();
    outputs.add(out.to_path_buf(), ply_bytes(&cloud.points, &comments)?);
    announce(&outputs.commit()?);
    println!("reconstructed {} points from {} steps ({skipped} skipped)", cloud.len(), steps.len());
    Ok(())
}

fn read_cloud(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_ply(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn evaluate(protocol: Protocol, args: &ScenarioArgs, inputs: EvalInputs, out: &Path) -> Result<()> {
    let scn = load(args)?;
    let mut comments = comment_lines(&scn.provenance());
    let need_input = || inputs.input.context("this protocol needs --input with a PLY cloud");
    let ransac = RansacOptions { seed: scn.seed, ..RansacOptions::default() };
    let report = match protocol {
        Protocol::Stair => {
            let points = read_cloud(need_input()?)?;
            let r = stair_distance(&points, &StairOptions { ransac, nominal: inputs.nominal, ..StairOptions::default() })?;
            comments.push(format!("stair distance {} mm, nominal {} mm", r.distance, inputs.nominal));
            ErrorReport::new(vec!["stair".into()], vec![r.error])?
        }
        Protocol::Flatness => {
            let points = read_cloud(need_input()?)?;
            let e = flatness_error(&points, &ransac)?;
            ErrorReport::new(vec!["flatness".into()], vec![e])?
        }
        Protocol::Reference => {
            let points = read_cloud(need_input()?)?;
            let reference = read_cloud(inputs.reference.context("reference protocol needs --reference")?)?;
            let d = cloud_distance(&points, &reference, Correspondence::Nearest, Exec::default())?;
            ErrorReport::new(vec!["reference".into()], vec![d.rmse])?
        }
        Protocol::Matrix => {
            let (_, model) = params_or_model(&scn, inputs.params)?;
            let cfg = &scn.calibrate.camera;
            let board = Target::new(
                TargetShape::Board { spacing: cfg.board_spacing, markers: cfg.board_markers },
                RigidTransform::from_translation(Vector3::new(0.0, 0.0, cfg.board_distance)),
            )?;
            let obs = simulate_camera_calib_observations(&scn.truth, &board, &cfg.voltages(), &scn.noise)?;
            let mut labels = Vec::new();
            let mut errors = Vec::new();
            for o in obs.iter().filter(|o| o.valid) {
                labels.push(format!("pan={} tilt={}", o.cam_v.pan, o.cam_v.tilt));
                errors.push(matrix_error(&model.cam_transform(o.cam_v)?, &o.measured));
            }
            ErrorReport::new(labels, errors)?
        }
    };
    comments.push(format!("rmse {} max {} cases {}", report.rmse, report.max, report.errors.len()));
    let mut buf = Vec::new();
    report.write_csv(&mut buf, &comments)?;
    let mut outputs = Outputs::default();
    outputs.add(out.to_path_buf(), buf);
    announce(&outputs.commit()?);
    println!("{protocol:?}: rmse {} max {} over {} cases", report.rmse, report.max, report.errors.len());
    Ok(())
}

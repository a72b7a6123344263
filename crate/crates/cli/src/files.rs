//! Artifact formats. Tables are CSV with `# ` provenance lines before the
//! header row; parameter files and reports are TOML.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dynscan::geometry::RigidTransform;
use dynscan::GalvoVoltages;
use nalgebra::Vector2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// Files produced by one command, written only after all of them are built.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (path, bytes) in self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn comment_lines(provenance: &str) -> Vec<String> {
    vec![provenance.to_string()]
}

/// Serializes rows as CSV after `# ` comment lines.
pub fn csv_bytes<T: Serialize>(comments: &[String], rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(buf);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("flushing CSV: {e}"))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: row {}", path.display(), i + 1)))
        .collect()
}

pub fn toml_bytes<T: Serialize>(comments: &[String], value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}")?;
    }
    buf.extend(toml::to_string(value)?.into_bytes());
    Ok(buf)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
pub struct ScheduleRow {
    pub step: usize,
    pub cam_pan: f64,
    pub cam_tilt: f64,
    pub laser_pan: f64,
    pub laser_tilt: f64,
}

pub const SCHEDULE_HEADER: [&str; 5] = ["step", "cam_pan", "cam_tilt", "laser_pan", "laser_tilt"];

impl ScheduleRow {
    pub fn new(step: usize, cam: GalvoVoltages, laser: GalvoVoltages) -> Self {
        ScheduleRow {
            step,
            cam_pan: cam.pan,
            cam_tilt: cam.tilt,
            laser_pan: laser.pan,
            laser_tilt: laser.tilt,
        }
    }

    pub fn voltages(&self) -> (GalvoVoltages, GalvoVoltages) {
        (
            GalvoVoltages::new(self.cam_pan, self.cam_tilt),
            GalvoVoltages::new(self.laser_pan, self.laser_tilt),
        )
    }
}

/// Reads a schedule and checks steps are numbered 0, 1, 2, ...
pub fn read_schedule(path: &Path) -> Result<Vec<ScheduleRow>> {
    let rows: Vec<ScheduleRow> = read_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        if r.step != i {
            bail!("{}: expected step {i}, found {}", path.display(), r.step);
        }
        let (c, l) = r.voltages();
        c.validate().with_context(|| format!("{}: step {i}", path.display()))?;
        l.validate().with_context(|| format!("{}: step {i}", path.display()))?;
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
pub struct StripeRow {
    pub step: usize,
    pub u: f64,
    pub v: f64,
}

pub const STRIPE_HEADER: [&str; 3] = ["step", "u", "v"];

/// Groups stripe pixels by step; steps beyond `n_steps` are an error.
pub fn read_stripes(path: &Path, n_steps: usize) -> Result<Vec<Vec<Vector2<f64>>>> {
    let rows: Vec<StripeRow> = read_csv(path)?;
    let mut out = vec![Vec::new(); n_steps];
    for (i, r) in rows.iter().enumerate() {
        if r.step >= n_steps {
            bail!("{}: row {} refers to step {} of a {n_steps}-step schedule", path.display(), i + 1, r.step);
        }
        if !(r.u.is_finite() && r.v.is_finite()) {
            bail!("{}: row {} has a non-finite pixel", path.display(), i + 1);
        }
        out[r.step].push(Vector2::new(r.u, r.v));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
pub struct CenterRow {
    pub step: usize,
    pub row: usize,
    pub u: f64,
    pub v: f64,
    pub strength: f64,
}

pub const CENTER_HEADER: [&str; 5] = ["step", "row", "u", "v", "strength"];

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
pub struct PlaneRow {
    pub laser_pan: f64,
    pub laser_tilt: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub residual: f64,
}

pub const PLANE_HEADER: [&str; 7] = ["laser_pan", "laser_tilt", "a", "b", "c", "d", "residual"];

/// One `V0_from_Vi` correction as the top three rows of its matrix.
#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
pub struct CorrectionRow {
    pub step: usize,
    pub r00: f64,
    pub r01: f64,
    pub r02: f64,
    pub t0: f64,
    pub r10: f64,
    pub r11: f64,
    pub r12: f64,
    pub t1: f64,
    pub r20: f64,
    pub r21: f64,
    pub r22: f64,
    pub t2: f64,
}

pub const CORRECTION_HEADER: [&str; 13] =
    ["step", "r00", "r01", "r02", "t0", "r10", "r11", "r12", "t1", "r20", "r21", "r22", "t2"];

impl CorrectionRow {
    pub fn new(step: usize, t: &RigidTransform) -> Self {
        let e = t.entries12();
        CorrectionRow {
            step,
            r00: e[0],
            r01: e[1],
            r02: e[2],
            t0: e[3],
            r10: e[4],
            r11: e[5],
            r12: e[6],
            t1: e[7],
            r20: e[8],
            r21: e[9],
            r22: e[10],
            t2: e[11],
        }
    }

    pub fn transform(&self) -> Result<RigidTransform> {
        let e = [
            self.r00, self.r01, self.r02, self.t0, self.r10, self.r11, self.r12, self.t1, self.r20,
            self.r21, self.r22, self.t2,
        ];
        Ok(RigidTransform::from_entries12(&e, 1e-6)?)
    }
}

pub fn read_corrections(path: &Path, n_steps: usize) -> Result<Vec<RigidTransform>> {
    let rows: Vec<CorrectionRow> = read_csv(path)?;
    if rows.len() != n_steps {
        bail!("{}: {} corrections for {n_steps} scan steps", path.display(), rows.len());
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.step != i {
                bail!("{}: expected step {i}, found {}", path.display(), r.step);
            }
            r.transform().with_context(|| format!("{}: step {i}", path.display()))
        })
        .collect()
}

/// Structured summary written next to a command's main artifact.
pub type Report = BTreeMap<String, toml::Value>;

pub fn report_entry(report: &mut Report, key: &str, value: impl Into<toml::Value>) {
    report.insert(key.to_string(), value.into());
}

//! ASCII PLY point clouds.
//!
//! Coordinates are written in shortest round-trip decimal form, so a cloud
//! read back equals the cloud written.

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Writes `points` as an ASCII PLY vertex list; each comment becomes a
/// `comment` header line.
pub fn write_ply<W: Write>(mut w: W, points: &[Vector3<f64>], comments: &[String]) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    for c in comments {
        writeln!(w, "comment {c}")?;
    }
    writeln!(w, "element vertex {}", points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Reads an ASCII PLY whose first three vertex properties are x, y, z.
/// Extra vertex properties are ignored; other elements must follow vertices.
pub fn read_ply<R: BufRead>(r: R) -> Result<Vec<Vector3<f64>>> {
    let err = |m: String| Error::Parse {
        format: "PLY",
        message: m,
    };
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(Error::from) };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(err("missing 'ply' magic".into()));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let Some(line) = next()? else {
            return Err(err("header not terminated by end_header".into()));
        };
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(err("only ascii PLY is supported".into()));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next();
                let n = tok.next().and_then(|s| s.parse().ok());
                in_vertex = name == Some("vertex");
                if in_vertex {
                    count = Some(n.ok_or_else(|| err("bad vertex count".into()))?);
                } else if count.is_none() {
                    return Err(err("vertex element must come first".into()));
                }
            }
            Some("property") => {
                if in_vertex {
                    props.push(tok.last().unwrap_or_default().to_string());
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(err(format!("unexpected header keyword '{other}'"))),
        }
    }
    let count = count.ok_or_else(|| err("no vertex element".into()))?;
    if props.len() < 3 || props[0] != "x" || props[1] != "y" || props[2] != "z" {
        return Err(err("vertex properties must start with x, y, z".into()));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let line = next()?.ok_or_else(|| err(format!("expected {count} vertices, got {i}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("vertex {i}: {e}")))?;
        if vals.len() != 3 {
            return Err(err(format!("vertex {i} has fewer than 3 values")));
        }
        points.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(points)
}

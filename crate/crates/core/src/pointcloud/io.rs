//! Plain-text cloud format: one point per line, `x y z [r g b]`, meters and
//! `[0, 1]` color channels; lines starting with `#` are comments.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(colors) = cloud.colors() {
            let c = colors[i];
            let _ = write!(out, " {} {} {}", c.x, c.y, c.z);
        }
        out.push('\n');
    }
    out
}

/// Parses the text format. `origin` only labels error messages.
pub fn parse_cloud(text: &str, origin: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::format(origin, format!("line {}: {msg}", lineno + 1));
        let values = line
            .split_whitespace()
            .map(|tok| {
                let v: f64 = tok.parse().map_err(|_| err(format!("bad number `{tok}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("non-finite value `{tok}`")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != 3 && values.len() != 6 {
            return Err(err(format!("expected 3 or 6 numbers, found {}", values.len())));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err("mixed colored and uncolored lines".into()));
            }
            _ => {}
        }
        points.push(Vec3::new(values[0], values[1], values[2]));
        if values.len() == 6 {
            colors.push(Vec3::new(values[3], values[4], values[5]));
        }
    }
    if points.is_empty() {
        return Err(Error::format(origin, "no points"));
    }
    let colors = (!colors.is_empty()).then_some(colors);
    PointCloud::from_parts(points, colors).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, path)
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_cloud(cloud)).map_err(|e| Error::io(path, e))
}

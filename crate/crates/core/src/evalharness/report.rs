//! CSV summaries and SVG scatter plots of protocol results.

use std::fmt::Write as _;
use std::path::Path;

use super::ErrorStats;
use crate::error::{Error, Result};

const CSV_HEADER: &str = "metric,min,mean,max,std_err,runs,seed,config_hash";
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    SvgScatter,
}

/// One parsed CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std_err: f64,
    pub runs: usize,
    pub seed: u64,
    pub config_hash: String,
}

fn csv_text(stats: &[ErrorStats], seed: u64, config_hash: &str) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in stats {
        for (name, m) in [("rotation_deg", &s.rotation), ("translation_cm", &s.translation)] {
            // `{}` on f64 prints the shortest string that parses back exactly.
            let _ = writeln!(
                out,
                "{}/{},{},{},{},{},{},{},{}",
                s.label,
                name,
                m.min,
                m.mean,
                m.max,
                m.std_err,
                s.runs(),
                seed,
                config_hash
            );
        }
    }
    out
}

fn svg_text(stats: &[ErrorStats], seed: u64, config_hash: &str) -> String {
    let (w, h, margin) = (640.0, 480.0, 60.0);
    let max_rot = stats
        .iter()
        .flat_map(|s| s.samples.iter().map(|e| e.rotation_deg))
        .fold(0.0, f64::max)
        .max(1e-9);
    let max_tr = stats
        .iter()
        .flat_map(|s| s.samples.iter().map(|e| e.translation_cm))
        .fold(0.0, f64::max)
        .max(1e-9);
    let x = |v: f64| margin + v / max_rot * (w - 2.0 * margin);
    let y = |v: f64| h - margin - v / max_tr * (h - 2.0 * margin);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = margin,
        b = h - margin,
        r = w - margin
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">rotation error (deg), max {:.3}</text>"#,
        w / 2.0,
        h - 20.0,
        max_rot
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {:.1})">translation error (cm), max {:.3}</text>"#,
        h / 2.0,
        h / 2.0,
        max_tr
    );
    let _ = writeln!(
        out,
        r#"<text x="{margin}" y="20" font-size="11">seed {seed}, config {config_hash}</text>"#
    );
    for (i, s) in stats.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{} (n={})</text>"#,
            w - margin - 150.0,
            margin + 15.0 * i as f64,
            s.label,
            s.runs()
        );
        for e in &s.samples {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
                x(e.rotation_deg),
                y(e.translation_cm)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `stats` to `path` in the requested format. Output bytes depend
/// only on the arguments.
pub fn emit_report(stats: &[ErrorStats], path: impl AsRef<Path>, format: ReportFormat, seed: u64, config_hash: &str) -> Result<()> {
    if stats.is_empty() {
        return Err(Error::InvalidArgument("no statistics to report".into()));
    }
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => csv_text(stats, seed, config_hash),
        ReportFormat::SvgScatter => svg_text(stats, seed, config_hash),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format(path, "missing or unexpected CSV header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad("expected 8 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
            Ok(ReportRow {
                metric: f[0].to_string(),
                min: num(f[1])?,
                mean: num(f[2])?,
                max: num(f[3])?,
                std_err: num(f[4])?,
                runs: f[5].parse().map_err(|_| bad("bad run count"))?,
                seed: f[6].parse().map_err(|_| bad("bad seed"))?,
                config_hash: f[7].to_string(),
            })
        })
        .collect()
}

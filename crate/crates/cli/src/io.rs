//! File formats: CSV points, JSON flats, TSV slices.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use medianshape::{Flat, PointSet};

/// Points, one per line, comma-separated. Blank lines and lines starting
/// with `#` are skipped.
pub fn parse_points(text: &str) -> Result<PointSet> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: malformed number in {line:?}", i + 1))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!(
                    "line {}: expected {} coordinates, found {}",
                    i + 1,
                    first.len(),
                    row.len()
                );
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            bail!("line {}: non-finite coordinate", i + 1);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("no points found");
    }
    PointSet::from_rows(&rows).map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn parse_flats(text: &str) -> Result<Vec<Flat>> {
    let flats: Vec<Flat> = serde_json::from_str(text).context("flats must be a JSON array of {anchor, basis} records")?;
    for (i, f) in flats.iter().enumerate() {
        f.validate().map_err(|e| anyhow::anyhow!("flat {i}: {e}"))?;
    }
    Ok(flats)
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Writes to `path`, or stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn points_csv(points: &PointSet, header: &str) -> String {
    let mut out = format!("# {header}\n");
    for p in points.iter() {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn values_csv(values: &[f64], header: &str) -> String {
    let mut out = format!("# {header}\n");
    for v in values {
        let _ = writeln!(out, "{v}");
    }
    out
}

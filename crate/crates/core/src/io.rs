//! Run directories, atomic file output, CSV and PPM writers.

use crate::config::RunConfig;
use crate::error::Result;
use crate::experiments::{ArtifactData, SuiteReport};
use crate::limitsets::{CellSet, VisitHistogram};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, to_json_pretty(value).as_bytes())
}

/// First 16 hex digits of SHA-256 over the command name and the resolved
/// config, excluding the output root.
pub fn config_hash(command: &str, config: &RunConfig) -> String {
    let mut value = serde_json::to_value(config).expect("config serializes");
    if let Some(m) = value.as_object_mut() {
        m.remove("out");
    }
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0u8]);
    h.update(value.to_string().as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

/// `<out>/<command>-<hash>`.
pub fn run_dir(command: &str, config: &RunConfig) -> PathBuf {
    config.out.join(format!("{command}-{}", config_hash(command, config)))
}

/// One `i,j,k` row per member cell, in index order.
pub fn cells_csv(set: &CellSet) -> String {
    let grid = set.grid();
    let mut s = String::from("i,j,k\n");
    for c in set.members() {
        let (i, j, k) = grid.coords(c);
        writeln!(s, "{i},{j},{k}").unwrap();
    }
    s
}

/// CSV with the given header; floats in shortest round-trip form.
pub fn table_csv(header: &str, rows: &[Vec<f64>]) -> String {
    let mut s = String::with_capacity(32 * rows.len() + header.len() + 1);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        for (i, v) in r.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Binary greymap: `P5\n<w> <h>\n255\n` then `w·h` row-major bytes.
pub fn ppm_p5(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Projection of a cell set onto the `(x1, y)` plane: column `i`, row from the
/// top at the largest fiber index, grey level proportional to the occupied
/// fraction of the `x2` column.
pub fn cells_heatmap(set: &CellSet) -> Vec<u8> {
    let g = set.grid();
    let mut counts = vec![0usize; g.n_base * g.n_fiber];
    for c in set.members() {
        let (i, _, k) = g.coords(c);
        counts[(g.n_fiber - 1 - k) * g.n_base + i] += 1;
    }
    let pixels: Vec<u8> = counts
        .iter()
        .map(|&n| ((255 * n + g.n_base / 2) / g.n_base) as u8)
        .collect();
    ppm_p5(g.n_base, g.n_fiber, &pixels)
}

/// Visit counts projected onto `(x1, y)`, log-scaled to the maximum.
pub fn histogram_heatmap(hist: &VisitHistogram) -> Vec<u8> {
    let g = hist.grid;
    let mut counts = vec![0u64; g.n_base * g.n_fiber];
    for (c, &n) in hist.counts.iter().enumerate() {
        let (i, _, k) = g.coords(c);
        counts[(g.n_fiber - 1 - k) * g.n_base + i] += n;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let scale = if top > 0 { 255.0 / (1.0 + top as f64).ln() } else { 0.0 };
    let pixels: Vec<u8> = counts
        .iter()
        .map(|&n| ((1.0 + n as f64).ln() * scale).round() as u8)
        .collect();
    ppm_p5(g.n_base, g.n_fiber, &pixels)
}

/// Write every entry's artifacts, record their names, then write `report.json`.
///
/// The report is written last, so a run that fails part-way never leaves one.
pub fn write_report(dir: &Path, report: &mut SuiteReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    for entry in &mut report.entries {
        entry.artifacts.clear();
        for a in &entry.data {
            let stem = format!("{}-{}", entry.name, a.name);
            match &a.data {
                ArtifactData::Cells(set) => {
                    let csv = format!("{stem}.csv");
                    let ppm = format!("{stem}.ppm");
                    write_atomic(&dir.join(&csv), cells_csv(set).as_bytes())?;
                    write_atomic(&dir.join(&ppm), &cells_heatmap(set))?;
                    entry.artifacts.push(csv);
                    entry.artifacts.push(ppm);
                }
                ArtifactData::Table { header, rows } => {
                    let csv = format!("{stem}.csv");
                    write_atomic(&dir.join(&csv), table_csv(header, rows).as_bytes())?;
                    entry.artifacts.push(csv);
                }
            }
        }
    }
    let path = dir.join("report.json");
    write_json(&path, report)?;
    Ok(path)
}

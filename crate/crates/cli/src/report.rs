//! Report serialization: JSON for machine use, CSV for sweep tables.
//!
//! CSV rows use Rust's shortest-round-trip float formatting, so identical
//! inputs produce byte-identical files.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::pipeline::{RunReport, SweepTable};

/// Non-finite dB values (silent bands) are floored to this for JSON.
const DB_FLOOR: f64 = -999.0;

fn sanitize_db(values: &mut [f64]) {
    for v in values.iter_mut() {
        if !v.is_finite() {
            *v = DB_FLOOR;
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing report")?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_run_report(path: &Path, report: &RunReport) -> Result<()> {
    let mut clean = report.clone();
    for m in clean.methods.iter_mut() {
        sanitize_db(&mut m.intelligibility.band_snr_db);
    }
    write_json(path, &clean)
}

/// Sweep CSV: `axis_value,method,asii,nu,active_band_count`.
pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("axis_value,method,asii,nu,active_band_count\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.axis_value, row.method, row.asii, row.nu, row.active_band_count
        ));
    }
    out
}

pub fn write_sweep(dir: &Path, table: &SweepTable) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut clean = table.clone();
    for row in clean.rows.iter_mut() {
        sanitize_db(&mut row.band_snr_db);
    }
    write_json(&dir.join("sweep.json"), &clean)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(table))
        .with_context(|| format!("writing {}", dir.join("sweep.csv").display()))
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Result, TwinError};
use crate::metrics::median;

pub const NMSE_HEADER: [&str; 5] = ["mode", "scenario_label", "snr_db", "median_nmse_db", "slots"];
pub const POWER_HEADER: [&str; 5] = ["source", "snr_db", "total_power_w", "energy_eff", "status"];
pub const ESTIMATION_HEADER: [&str; 4] = ["scenario_label", "median_snr_db", "mean_snr_db", "slots"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub nmse_curves: PathBuf,
    pub power_curves: PathBuf,
    pub estimation_snr: PathBuf,
    pub metrics_files: usize,
    pub sweep_files: usize,
}

fn sorted_csvs(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_file() && name.starts_with(prefix) && name.ends_with(".csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn value(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Reads `metrics*.csv` and `sweep*.csv` from a run directory and writes
/// `nmse_curves.csv`, `power_curves.csv` and `estimation_snr.csv` into
/// `out` (the run directory when absent). NMSE is grouped by mode, scenario
/// and 1 dB SNR bin.
pub fn export_curves(run_dir: &Path, out: Option<&Path>) -> Result<ExportSummary> {
    if !run_dir.is_dir() {
        return Err(TwinError::Config(format!("run directory {} not found", run_dir.display())));
    }
    let out = out.unwrap_or(run_dir);
    std::fs::create_dir_all(out)?;

    let metrics = sorted_csvs(run_dir, "metrics")?;
    let mut nmse: BTreeMap<(String, String, i64), Vec<f64>> = BTreeMap::new();
    let mut estimation: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for path in &metrics {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let (Some(label), Some(snr)) = (column(&headers, "scenario_label"), column(&headers, "snr_db")) else {
            return Err(TwinError::Format(format!("{}: missing scenario_label/snr_db", path.display())));
        };
        let mode = column(&headers, "mode");
        let nmse_col = column(&headers, "nmse_db");
        let est_col = column(&headers, "estimate_snr_db");
        for rec in r.records() {
            let rec = rec?;
            let lab = rec.get(label).unwrap_or("").to_string();
            if let (Some(c), Some(s)) = (nmse_col, value(rec.get(snr).unwrap_or(""))) {
                if let Some(v) = value(rec.get(c).unwrap_or("")) {
                    let m = mode.and_then(|m| rec.get(m)).unwrap_or("").to_string();
                    nmse.entry((m, lab.clone(), s.round() as i64)).or_default().push(v);
                }
            }
            if let Some(v) = est_col.and_then(|c| value(rec.get(c).unwrap_or(""))) {
                estimation.entry(lab).or_default().push(v);
            }
        }
    }

    let nmse_curves = out.join("nmse_curves.csv");
    let mut w = csv::Writer::from_path(&nmse_curves)?;
    w.write_record(NMSE_HEADER)?;
    for ((mode, label, bin), vals) in &nmse {
        let med = median(vals).unwrap_or(f64::NAN);
        w.write_record([mode.clone(), label.clone(), bin.to_string(), med.to_string(), vals.len().to_string()])?;
    }
    w.flush()?;

    let estimation_snr = out.join("estimation_snr.csv");
    let mut w = csv::Writer::from_path(&estimation_snr)?;
    w.write_record(ESTIMATION_HEADER)?;
    for (label, vals) in &estimation {
        let med = median(vals).unwrap_or(f64::NAN);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        w.write_record([label.clone(), med.to_string(), mean.to_string(), vals.len().to_string()])?;
    }
    w.flush()?;

    let sweeps = sorted_csvs(run_dir, "sweep")?;
    let power_curves = out.join("power_curves.csv");
    let mut w = csv::Writer::from_path(&power_curves)?;
    w.write_record(POWER_HEADER)?;
    for path in &sweeps {
        let source = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let cols: Vec<usize> = ["snr_db", "total_power_w", "energy_eff", "status"]
            .iter()
            .map(|n| column(&headers, n))
            .collect::<Option<_>>()
            .ok_or_else(|| TwinError::Format(format!("{}: not a sweep table", path.display())))?;
        for rec in r.records() {
            let rec = rec?;
            let mut row = vec![source.clone()];
            row.extend(cols.iter().map(|&c| rec.get(c).unwrap_or("").to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    Ok(ExportSummary {
        nmse_curves,
        power_curves,
        estimation_snr,
        metrics_files: metrics.len(),
        sweep_files: sweeps.len(),
    })
}

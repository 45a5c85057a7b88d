//! `grudw recalibrate`: fit a linear map on cross-validation calibration bins
//! and apply it to held-out predictions.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use grudw_core::evaluation::{calibration_bins, calibration_error, recalibrate_fit, CalibrationBin, RecalibrationMap};

use crate::error::{CliError, CliResult};
use crate::eval::{EvalFile, PREDICTION_HEADER};
use crate::io::{cell, read_bytes, read_json, sibling, Manifest, Table};

#[derive(Debug, Args)]
pub struct RecalibrateArgs {
    /// Evaluation report (JSON) whose calibration bins define the map, normally `--split validation`.
    #[arg(long)]
    pub cv_report: PathBuf,
    /// Prediction table written by `eval --predictions`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Recalibrated prediction table.
    #[arg(long)]
    pub out: PathBuf,
    /// Before/after calibration table; defaults to `<out>.calibration.tsv`.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    model: usize,
    patient_id: String,
    time: f64,
    grid_time: f64,
    horizon: f64,
    predicted_survival: f64,
    pmst: f64,
    remaining: f64,
    censored: bool,
}

fn horizon_key(h: f64) -> u64 {
    h.to_bits()
}

/// One map per horizon, pooled over every model and time of the report.
fn fit_maps(report: &EvalFile) -> BTreeMap<u64, (f64, RecalibrationMap, Option<String>)> {
    let mut out = BTreeMap::new();
    for (i, &h) in report.horizons_years.iter().enumerate() {
        let bins: Vec<CalibrationBin> = report
            .models
            .iter()
            .flat_map(|m| m.report.times.iter())
            .filter_map(|t| t.calibration.get(i))
            .flatten()
            .cloned()
            .collect();
        let (map, warning) = recalibrate_fit(&bins);
        if let Some(w) = &warning {
            log::warn!("horizon {h}y: {w}");
        }
        out.insert(horizon_key(h), (h, map, warning));
    }
    out
}

pub fn run(args: &RecalibrateArgs) -> CliResult<()> {
    let report_bytes = read_bytes(&args.cv_report)?;
    let report: EvalFile = read_json(&args.cv_report)?;
    let pred_bytes = read_bytes(&args.predictions)?;
    let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(&pred_bytes[..]);
    let rows: Vec<PredictionRow> = reader.deserialize().collect::<Result<_, _>>()?;
    let maps = fit_maps(&report);

    let mut header: Vec<String> = PREDICTION_HEADER.map(String::from).to_vec();
    header.push("recalibrated_survival".into());
    let mut out = Table::new(&header)?;
    // (model, time, horizon) -> (before, after, remaining, censored)
    let mut groups: BTreeMap<(usize, u64, u64), (f64, f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for r in &rows {
        let (_, map, _) = maps
            .get(&horizon_key(r.horizon))
            .ok_or_else(|| CliError::Data(format!("no calibration bins for horizon {}y in the report", r.horizon)))?;
        let after = map.apply(r.predicted_survival);
        out.row(&[
            r.model.to_string(),
            r.patient_id.clone(),
            r.time.to_string(),
            r.grid_time.to_string(),
            r.horizon.to_string(),
            r.predicted_survival.to_string(),
            r.pmst.to_string(),
            r.remaining.to_string(),
            r.censored.to_string(),
            after.to_string(),
        ])?;
        let g = groups
            .entry((r.model, r.time.to_bits(), horizon_key(r.horizon)))
            .or_insert_with(|| (r.time, r.horizon, Vec::new(), Vec::new(), Vec::new(), Vec::new()));
        g.2.push(r.predicted_survival);
        g.3.push(after);
        g.4.push(r.remaining);
        g.5.push(r.censored);
    }

    let mut table = Table::new(
        &["model", "time", "horizon", "n", "error_before", "error_after"].map(String::from),
    )?;
    for ((model, _, _), (time, h, before, after, rem, cens)) in &groups {
        let err = |p: &[f64]| calibration_bins(p, rem, cens, *h).ok().and_then(|b| calibration_error(&b));
        table.row(&[
            model.to_string(),
            time.to_string(),
            h.to_string(),
            before.len().to_string(),
            cell(err(before)),
            cell(err(after)),
        ])?;
    }

    let map_info: Vec<_> = maps
        .values()
        .map(|(h, m, w)| json!({"horizon": h, "slope": m.slope, "intercept": m.intercept, "warning": w}))
        .collect();
    let mut manifest = Manifest::new("recalibrate", json!({}));
    manifest.input(&args.cv_report, &report_bytes);
    manifest.input(&args.predictions, &pred_bytes);
    manifest.output(&args.out, &out.into_bytes()?)?;
    manifest.output(&args.table.clone().unwrap_or_else(|| sibling(&args.out, ".calibration.tsv")), &table.into_bytes()?)?;
    manifest.extra = json!({ "maps": map_info });
    manifest.write(&args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.json")))
}

//! `grudw report`: flatten an evaluation report into plot-ready columnar files.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use grudw_core::cohort::FeatureKind;

use crate::error::CliResult;
use crate::eval::{EvalFile, ModelEval};
use crate::io::{cell, read_bytes, read_json, Manifest, Table};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report (JSON) written by `eval`.
    #[arg(long)]
    pub eval: PathBuf,
    /// Directory receiving the tables and `manifest.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn sources(file: &EvalFile) -> Vec<(String, &ModelEval)> {
    let nn = file.models.iter().enumerate().map(|(i, m)| (format!("model{i}"), m));
    let aft = file.aft.iter().enumerate().map(|(i, m)| (format!("aft{i}"), m));
    nn.chain(aft).collect()
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let bytes = read_bytes(&args.eval)?;
    let file: EvalFile = read_json(&args.eval)?;
    let src = sources(&file);

    let mut cindex = Table::new(&header(&["source", "time", "grid_time", "horizon", "n_at_risk", "c_index"]))?;
    let mut l1 = Table::new(&header(&[
        "source", "time", "grid_time", "n_uncensored", "l1_mean", "l1_median", "l1_sd", "over_mean", "under_mean", "parkes",
    ]))?;
    let mut calib = Table::new(&header(&["source", "time", "horizon", "bin", "n", "mean_predicted", "observed"]))?;
    let mut sae = Table::new(&header(&["source", "time", "bin_low", "bin_high", "count"]))?;
    let mut miss = Table::new(&header(&["source", "time", "grid_time", "category", "n", "log_ratio", "offset_log_ratio"]))?;

    for (name, m) in &src {
        for t in &m.report.times {
            for (h, c) in file.horizons_years.iter().zip(&t.c_index) {
                cindex.row(&[name.clone(), t.time.to_string(), cell(t.grid_time), h.to_string(), t.n_at_risk.to_string(), cell(*c)])?;
            }
            let l = t.l1.as_ref();
            l1.row(&[
                name.clone(),
                t.time.to_string(),
                cell(t.grid_time),
                t.n_uncensored.to_string(),
                cell(l.map(|x| x.absolute.mean)),
                cell(l.map(|x| x.absolute.median)),
                cell(l.map(|x| x.absolute.sd)),
                cell(l.and_then(|x| x.over.as_ref()).map(|s| s.mean)),
                cell(l.and_then(|x| x.under.as_ref()).map(|s| s.mean)),
                cell(t.parkes),
            ])?;
            for (h, bins) in file.horizons_years.iter().zip(&t.calibration) {
                for (b, bin) in bins.iter().enumerate() {
                    calib.row(&[
                        name.clone(),
                        t.time.to_string(),
                        h.to_string(),
                        b.to_string(),
                        bin.n.to_string(),
                        bin.mean_predicted.to_string(),
                        cell(bin.observed),
                    ])?;
                }
            }
            if let Some(hist) = &t.survival_at_event {
                let k = hist.counts.len() as f64;
                for (b, c) in hist.counts.iter().enumerate() {
                    sae.row(&[
                        name.clone(),
                        t.time.to_string(),
                        (b as f64 / k).to_string(),
                        ((b + 1) as f64 / k).to_string(),
                        c.to_string(),
                    ])?;
                }
            }
        }
        for e in &m.missingness {
            let cat = match e.category {
                FeatureKind::Numeric => "numeric",
                FeatureKind::Comorbidity => "comorbidity",
                FeatureKind::Medication => "medication",
            };
            miss.row(&[
                name.clone(),
                e.time.to_string(),
                cell(e.grid_time),
                cat.into(),
                e.correlation.n.to_string(),
                cell(e.correlation.log_ratio),
                cell(e.correlation.offset_log_ratio),
            ])?;
        }
    }
    if let Some(comb) = &file.combined {
        for c in comb {
            for (h, v) in file.horizons_years.iter().zip(&c.c_index) {
                let v = v.as_ref();
                for (label, x) in [("mean", v.map(|x| x.mean)), ("lower", v.map(|x| x.lower)), ("upper", v.map(|x| x.upper))] {
                    cindex.row(&[label.into(), c.time.to_string(), "NA".into(), h.to_string(), "NA".into(), cell(x)])?;
                }
            }
        }
    }

    let mut manifest = Manifest::new("report", json!({}));
    manifest.input(&args.eval, &bytes);
    for (name, t) in [
        ("c_index.tsv", cindex),
        ("l1.tsv", l1),
        ("calibration.tsv", calib),
        ("survival_at_event.tsv", sae),
        ("missingness.tsv", miss),
    ] {
        manifest.output(&args.out_dir.join(name), &t.into_bytes()?)?;
    }
    manifest.write(&args.out_dir.join("manifest.json"))
}

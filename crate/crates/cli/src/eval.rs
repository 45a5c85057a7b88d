//! `grudw eval`: metric tables for one or more checkpoints on a cohort split.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use grudw_core::baselines::{aft_fit, AftConfig};
use grudw_core::cohort::{missing_proportion, Cohort, FeatureKind};
use grudw_core::evaluation::{
    default_times, evaluate, mean_ci, missingness_error_correlation, snap_to_grid, snapshot, time_report, ErrorCorrelation,
    EvalReport, MeanCi, ReportConfig, Snapshot,
};
use grudw_core::series::DAYS_PER_YEAR;
use grudw_core::trainer::predict;
use grudw_core::{ParamTrajectory, Series, Variant};

use crate::checkpoint::{Checkpoint, Split};
use crate::error::{CliError, CliResult};
use crate::io::{cell, read_bytes, read_cohort, sibling, to_json_bytes, Manifest, Table};

pub const EVAL_FORMAT: &str = "grudw-eval";
pub const EVAL_VERSION: u32 = 1;
/// Prediction times (days) of the missingness/error analysis.
const MISSINGNESS_TIMES: [f64; 3] = [0.0, DAYS_PER_YEAR, 2.0 * DAYS_PER_YEAR];

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file; repeat for several fold models.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Machine-readable report (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Text table; defaults to `<out>.tsv`.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Per-patient snapshot predictions (TSV), the input of `recalibrate`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Evaluation days relative to the index date; defaults to integer years -3..4 plus every post-index grid day.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub times: Option<Vec<f64>>,
    /// Prediction horizons in years.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub horizons: Vec<f64>,
    #[arg(long, value_enum, default_value = "held-out")]
    pub split: Split,
    /// Also fit and score the Weibull AFT baseline at integer-year times.
    #[arg(long)]
    pub aft: bool,
    /// Lookback window (days) of the missingness/error analysis.
    #[arg(long, default_value_t = ReportConfig::default().lookback_days)]
    pub lookback_days: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingnessEntry {
    pub time: f64,
    pub grid_time: Option<f64>,
    pub category: FeatureKind,
    pub correlation: ErrorCorrelation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEval {
    pub checkpoint: String,
    pub fold: usize,
    pub variant: Variant,
    pub report: EvalReport,
    #[serde(default)]
    pub missingness: Vec<MissingnessEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinedTime {
    pub time: f64,
    pub c_index: Vec<Option<MeanCi>>,
    pub l1_mean: Option<MeanCi>,
    pub parkes: Option<MeanCi>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalFile {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub horizons_years: Vec<f64>,
    pub models: Vec<ModelEval>,
    /// Mean and 95% interval across models; present with two or more checkpoints.
    pub combined: Option<Vec<CombinedTime>>,
    pub aft: Vec<ModelEval>,
}

fn is_integer_year(day: f64) -> bool {
    let y = day / DAYS_PER_YEAR;
    (y - y.round()).abs() < 1e-9
}

fn missingness(
    ckpt: &Checkpoint,
    trajs: &[ParamTrajectory<f64>],
    series: &[Series],
    grid: &[f64],
    lookback: f64,
) -> Vec<MissingnessEntry> {
    let kinds = ckpt.preprocessor.kept_kinds();
    let mut cats: Vec<FeatureKind> = kinds.clone();
    cats.dedup();
    cats.sort_by_key(|k| *k as u8);
    cats.dedup();
    let mut out = Vec::new();
    for &t in &MISSINGNESS_TIMES {
        let g = snap_to_grid(grid, t);
        for &cat in &cats {
            let features: Vec<usize> = kinds.iter().enumerate().filter(|(_, k)| **k == cat).map(|(i, _)| i).collect();
            let (mut target, mut pmst, mut miss) = (Vec::new(), Vec::new(), Vec::new());
            if let Some(g) = g {
                for (tr, s) in trajs.iter().zip(series) {
                    if let Some(snap) = snapshot(tr, s, g).filter(|sn| !sn.censored) {
                        target.push(snap.remaining);
                        pmst.push(snap.params.median());
                        miss.push(missing_proportion(s, &features, g, lookback));
                    }
                }
            }
            out.push(MissingnessEntry {
                time: t,
                grid_time: g,
                category: cat,
                correlation: missingness_error_correlation(&target, &pmst, &miss),
            });
        }
    }
    out
}

fn combine(models: &[ModelEval], n_horizons: usize) -> Vec<CombinedTime> {
    let n_times = models[0].report.times.len();
    (0..n_times)
        .map(|i| {
            let col = |f: &dyn Fn(&ModelEval) -> Option<f64>| mean_ci(&models.iter().filter_map(f).collect::<Vec<_>>());
            CombinedTime {
                time: models[0].report.times[i].time,
                c_index: (0..n_horizons).map(|h| col(&|m| m.report.times[i].c_index[h])).collect(),
                l1_mean: col(&|m| m.report.times[i].l1.as_ref().map(|l| l.absolute.mean)),
                parkes: col(&|m| m.report.times[i].parkes),
            }
        })
        .collect()
}

fn table(file: &EvalFile) -> CliResult<Vec<u8>> {
    let multi = file.combined.is_some();
    let mut metrics: Vec<String> = file.horizons_years.iter().map(|h| format!("c_index_{h}y")).collect();
    metrics.push("l1_mean".into());
    metrics.push("parkes".into());
    let mut header: Vec<String> = ["time", "grid_time", "n_at_risk", "n_uncensored"].map(String::from).to_vec();
    if multi {
        for m in &metrics {
            header.extend([format!("{m}_mean"), format!("{m}_lower"), format!("{m}_upper")]);
        }
    } else {
        header.extend(metrics.iter().cloned());
        header.extend(["l1_median", "l1_sd"].map(String::from));
    }
    let mut t = Table::new(&header)?;
    let first = &file.models[0].report;
    for (i, tr) in first.times.iter().enumerate() {
        let mut row = vec![tr.time.to_string(), cell(tr.grid_time), tr.n_at_risk.to_string(), tr.n_uncensored.to_string()];
        if let Some(comb) = &file.combined {
            let c = &comb[i];
            for v in c.c_index.iter().chain([&c.l1_mean, &c.parkes]) {
                row.extend([cell(v.map(|x| x.mean)), cell(v.map(|x| x.lower)), cell(v.map(|x| x.upper))]);
            }
        } else {
            row.extend(tr.c_index.iter().map(|v| cell(*v)));
            row.push(cell(tr.l1.as_ref().map(|l| l.absolute.mean)));
            row.push(cell(tr.parkes));
            row.push(cell(tr.l1.as_ref().map(|l| l.absolute.median)));
            row.push(cell(tr.l1.as_ref().map(|l| l.absolute.sd)));
        }
        t.row(&row)?;
    }
    t.into_bytes()
}

fn prediction_rows(
    t: &mut Table,
    model: usize,
    trajs: &[ParamTrajectory<f64>],
    series: &[Series],
    grid: &[f64],
    times: &[f64],
    horizons: &[f64],
) -> CliResult<()> {
    for &time in times {
        let Some(g) = snap_to_grid(grid, time) else { continue };
        for (tr, s) in trajs.iter().zip(series) {
            let Some(snap): Option<Snapshot> = snapshot(tr, s, g) else { continue };
            for &h in horizons {
                t.row(&[
                    model.to_string(),
                    s.patient_id.clone(),
                    time.to_string(),
                    g.to_string(),
                    h.to_string(),
                    snap.params.survival(h).to_string(),
                    snap.params.median().to_string(),
                    snap.remaining.to_string(),
                    snap.censored.to_string(),
                ])?;
            }
        }
    }
    Ok(())
}

pub const PREDICTION_HEADER: [&str; 9] =
    ["model", "patient_id", "time", "grid_time", "horizon", "predicted_survival", "pmst", "remaining", "censored"];

fn aft_eval(
    ckpt: &Checkpoint,
    path: &str,
    cohort: &Cohort,
    eval_series: &[Series],
    times: &[f64],
    horizons: &[f64],
) -> CliResult<ModelEval> {
    let train_ids = ckpt.ids(Split::Train, cohort)?;
    let train_series = ckpt.series(cohort, &train_ids)?;
    let means = ckpt.preprocessor.means::<f64>();
    let mut reports = Vec::new();
    for &t in times.iter().filter(|&&t| is_integer_year(t)) {
        let Some(g) = snap_to_grid(&cohort.grid, t) else {
            reports.push(time_report(t, None, &[], horizons));
            continue;
        };
        let snaps = match aft_fit(&train_series, &means, g, &AftConfig::default()) {
            Ok(model) => eval_series
                .iter()
                .filter_map(|s| model.predict(s, &means).transpose())
                .collect::<Result<Vec<_>, _>>()?,
            Err(e) => {
                log::warn!("AFT fit at day {g} failed: {e}");
                Vec::new()
            }
        };
        reports.push(time_report(t, Some(g), &snaps, horizons));
    }
    Ok(ModelEval {
        checkpoint: path.to_string(),
        fold: ckpt.split.fold,
        variant: ckpt.train_config.variant,
        report: EvalReport { horizons_years: horizons.to_vec(), times: reports },
        missingness: Vec::new(),
    })
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    if args.horizons.is_empty() || args.horizons.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(CliError::Usage("horizons must be positive".into()));
    }
    if args.times.as_ref().is_some_and(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(CliError::Usage("times must be finite".into()));
    }
    let cohort_bytes = read_bytes(&args.cohort)?;
    let ckpt_bytes: Vec<Vec<u8>> = args.checkpoints.iter().map(|p| read_bytes(p)).collect::<CliResult<_>>()?;
    let ckpts: Vec<Checkpoint> = args.checkpoints.iter().map(|p| Checkpoint::load(p)).collect::<CliResult<_>>()?;
    let cohort = read_cohort(&args.cohort)?;
    let times = args.times.clone().unwrap_or_else(|| default_times(&cohort.grid));

    let mut models = Vec::new();
    let mut aft = Vec::new();
    let mut preds = args.predictions.as_ref().map(|_| Table::new(&PREDICTION_HEADER.map(String::from))).transpose()?;
    for (k, (ckpt, path)) in ckpts.iter().zip(&args.checkpoints).enumerate() {
        ckpt.check_compatible(&cohort)?;
        let ids = ckpt.ids(args.split, &cohort)?;
        let series = ckpt.series(&cohort, &ids)?;
        let inputs = ckpt.model_inputs(&cohort, &ids)?;
        let params = ckpt.params()?;
        let trajs = predict(&params, &inputs)?;
        let report = evaluate(&trajs, &inputs, &cohort.grid, &times, &args.horizons)?;
        if let Some(t) = preds.as_mut() {
            prediction_rows(t, k, &trajs, &inputs, &cohort.grid, &times, &args.horizons)?;
        }
        let path_str = path.display().to_string();
        models.push(ModelEval {
            checkpoint: path_str.clone(),
            fold: ckpt.split.fold,
            variant: ckpt.train_config.variant,
            report,
            missingness: missingness(ckpt, &trajs, &series, &cohort.grid, args.lookback_days),
        });
        if args.aft {
            aft.push(aft_eval(ckpt, &path_str, &cohort, &series, &times, &args.horizons)?);
        }
    }
    let combined = (models.len() >= 2).then(|| combine(&models, args.horizons.len()));
    let split = serde_json::to_value(args.split)?.as_str().unwrap_or_default().to_string();
    let file = EvalFile {
        format: EVAL_FORMAT.into(),
        version: EVAL_VERSION,
        split,
        horizons_years: args.horizons.clone(),
        models,
        combined,
        aft,
    };

    let mut manifest = Manifest::new(
        "eval",
        json!({
            "times": times,
            "horizons": args.horizons,
            "split": file.split,
            "aft": args.aft,
            "lookback_days": args.lookback_days,
        }),
    );
    manifest.input(&args.cohort, &cohort_bytes);
    for (p, b) in args.checkpoints.iter().zip(&ckpt_bytes) {
        manifest.input(p, b);
    }
    manifest.output(&args.out, &to_json_bytes(&file)?)?;
    manifest.output(&args.table.clone().unwrap_or_else(|| sibling(&args.out, ".tsv")), &table(&file)?)?;
    if let (Some(path), Some(t)) = (&args.predictions, preds) {
        manifest.output(path, &t.into_bytes()?)?;
    }
    manifest.write(&args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.json")))
}

//! `grudw export-trajectory`: per-step Weibull parameters and derived curves for selected patients.

use std::path::PathBuf;

use clap::Args;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use grudw_core::evaluation::trajectory_export;
use grudw_core::trainer::predict;

use crate::checkpoint::{select, Checkpoint, Split};
use crate::error::{CliError, CliResult};
use crate::io::{read_bytes, read_cohort, sibling, Manifest, Table};

pub const DEFAULT_RANDOM_PATIENTS: usize = 50;

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Output table (TSV).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated patient ids; an empty value selects nobody.
    /// Without it, random uncensored held-out patients are drawn.
    #[arg(long)]
    pub ids: Option<String>,
    #[arg(long, default_value_t = DEFAULT_RANDOM_PATIENTS)]
    pub n_random: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Survival horizons (years) exported per step.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub horizons: Vec<f64>,
    /// Day whose one-year cumulative hazard is subtracted in `cumhaz_1y_adj`.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub reference_day: f64,
}

pub fn run(args: &ExportArgs) -> CliResult<()> {
    if args.horizons.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(CliError::Usage("horizons must be positive".into()));
    }
    let ckpt_bytes = read_bytes(&args.checkpoint)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cohort_bytes = read_bytes(&args.cohort)?;
    let cohort = read_cohort(&args.cohort)?;
    ckpt.check_compatible(&cohort)?;

    let ids: Vec<String> = match &args.ids {
        Some(list) => list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        None => {
            let held = ckpt.ids(Split::HeldOut, &cohort)?;
            let pool: Vec<String> =
                select(&cohort, &held)?.into_iter().filter(|p| !p.censored).map(|p| p.id.clone()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let mut chosen: Vec<String> = pool.choose_multiple(&mut rng, args.n_random.min(pool.len())).cloned().collect();
            chosen.sort();
            chosen
        }
    };
    let inputs = ckpt.model_inputs(&cohort, &ids)?;
    let params = ckpt.params()?;
    let trajs = predict(&params, &inputs)?;

    let mut header: Vec<String> = ["patient_id", "day", "kappa", "lambda", "pmst", "q25"].map(String::from).to_vec();
    header.extend(args.horizons.iter().map(|h| format!("survival_{h}y")));
    header.extend(["hazard_1y", "cumhaz_1y", "cumhaz_1y_adj"].map(String::from));
    let mut table = Table::new(&header)?;
    for (tr, s) in trajs.iter().zip(&inputs) {
        if s.is_empty() {
            continue;
        }
        for r in trajectory_export(tr, s, &args.horizons, args.reference_day)? {
            let mut row = vec![
                s.patient_id.clone(),
                r.day.to_string(),
                r.kappa.to_string(),
                r.lambda.to_string(),
                r.pmst.to_string(),
                r.q25.to_string(),
            ];
            row.extend(r.survival.iter().map(|v| v.to_string()));
            row.extend([r.hazard_1y, r.cumhaz_1y, r.cumhaz_1y_adj].map(|v| v.to_string()));
            table.row(&row)?;
        }
    }

    let mut manifest = Manifest::new(
        "export-trajectory",
        json!({"horizons": args.horizons, "reference_day": args.reference_day, "n_random": args.n_random}),
    );
    manifest.input(&args.checkpoint, &ckpt_bytes);
    manifest.input(&args.cohort, &cohort_bytes);
    manifest.output(&args.out, &table.into_bytes()?)?;
    manifest.extra = json!({"seed": args.seed, "patients": ids});
    manifest.write(&args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.json")))
}

//! `grudw synth`: generate a synthetic cohort and its truth sidecar.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use grudw_core::cohort::{generate, CohortSpec};

use crate::config::{overlay, read_config_value};
use crate::error::{CliError, CliResult};
use crate::io::{sibling, Manifest};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Cohort spec (TOML, or JSON with a .json extension); its keys override flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output cohort file (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Truth sidecar; defaults to `<out>.truth.jsonl`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Manifest; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub n_patients: Option<usize>,
    #[arg(long)]
    pub n_numeric: Option<usize>,
    #[arg(long)]
    pub n_binary: Option<usize>,
    #[arg(long)]
    pub censoring_rate: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub mar_strength: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &SynthArgs) -> CliResult<()> {
    let mut base = CohortSpec::default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { base.$f = v; })* };
    }
    set!(n_patients, n_numeric, n_binary, censoring_rate, kappa, mar_strength, seed);
    let file = args.spec.as_deref().map(read_config_value).transpose()?;
    let spec: CohortSpec = overlay(&base, file.as_ref().map(|f| &f.0))?;
    if spec.n_patients == 0 {
        return Err(CliError::Usage("n_patients must be positive".into()));
    }
    spec.validate()?;

    let generated = generate(&spec)?;
    for w in &generated.warnings {
        log::warn!("{w}");
    }
    let mut cohort_bytes = Vec::new();
    generated.cohort.write_jsonl(&mut cohort_bytes)?;
    let mut truth_bytes = Vec::new();
    generated.write_truth_jsonl(&mut truth_bytes)?;

    let truth_path = args.truth.clone().unwrap_or_else(|| sibling(&args.out, ".truth.jsonl"));
    let mut manifest = Manifest::new("synth", serde_json::to_value(&spec)?);
    if let (Some(path), Some((_, bytes))) = (&args.spec, &file) {
        manifest.input(path, bytes);
    }
    manifest.output(&args.out, &cohort_bytes)?;
    manifest.output(&truth_path, &truth_bytes)?;
    manifest.extra = json!({
        "seed": spec.seed,
        "grid_steps": generated.cohort.grid.len(),
        "achieved_censoring_rate": generated.truth_header.achieved_censoring_rate,
        "warnings": generated.warnings,
    });
    manifest.write(&args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.json")))
}

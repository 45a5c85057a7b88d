//! `grudw train`: fit one fold model and write its checkpoint and epoch log.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde_json::json;

use grudw_core::cohort::Preprocessor;
use grudw_core::trainer::{gru_lvcf_variant, make_folds, train, DEFAULT_HELD_OUT_FRACTION, N_FOLDS};
use grudw_core::{TrainConfig, Variant};

use crate::checkpoint::{select, Checkpoint, SplitInfo};
use crate::config::{overlay, read_config_value};
use crate::error::{CliError, CliResult};
use crate::io::{read_bytes, read_cohort, sibling, to_json_bytes, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    GruD,
    Lvcf,
    Constant,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::GruD => Variant::GruD,
            VariantArg::Lvcf => Variant::GruLvcf,
            VariantArg::Constant => Variant::Constant,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log (JSON Lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Training config (TOML or JSON); its keys override flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Validation fold, 0..5.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value_t = DEFAULT_HELD_OUT_FRACTION)]
    pub held_out_fraction: f64,
    /// Seed of the held-out/fold assignment.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub clip_value: Option<f64>,
    #[arg(long)]
    pub overfit_gap: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub amsgrad: Option<bool>,
    #[arg(long)]
    pub hidden_decay: Option<bool>,
    #[arg(long)]
    pub lvcf_mask: Option<bool>,
}

fn resolve(args: &TrainArgs, timing: bool, file: Option<&serde_json::Value>) -> CliResult<TrainConfig> {
    // the variant picks the defaults the other fields are laid over
    let file_variant = file
        .and_then(|v| v.get("variant"))
        .map(|v| serde_json::from_value::<Variant>(v.clone()).map_err(|e| CliError::Usage(format!("config: {e}"))))
        .transpose()?;
    let variant = file_variant.or(args.variant.map(Variant::from)).unwrap_or_default();
    let mut cfg = match variant {
        Variant::GruLvcf => gru_lvcf_variant(&TrainConfig::default()),
        v => TrainConfig { variant: v, ..TrainConfig::default() },
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { cfg.$f = v; })* };
    }
    set!(hidden_units, learning_rate, epochs, batch_size, dropout, clip_norm, overfit_gap, patience, seed, amsgrad, hidden_decay, lvcf_mask);
    if args.clip_value.is_some() {
        cfg.clip_value = args.clip_value;
    }
    cfg.timing |= timing;
    let cfg = overlay(&cfg, file)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &TrainArgs, timing: bool) -> CliResult<()> {
    let file = args.config.as_deref().map(read_config_value).transpose()?;
    let cfg = resolve(args, timing, file.as_ref().map(|f| &f.0))?;
    if args.fold >= N_FOLDS {
        return Err(CliError::Usage(format!("fold must lie in 0..{N_FOLDS}")));
    }
    let cohort_bytes = read_bytes(&args.cohort)?;
    let cohort = read_cohort(&args.cohort)?;
    let started = Instant::now();

    let flags: Vec<(String, bool)> = cohort.patients.iter().map(|p| (p.id.clone(), p.censored)).collect();
    let plan = make_folds(&flags, args.held_out_fraction, args.split_seed)?;
    let (train_ids, val_ids) = plan.split(args.fold)?;
    let pre = Preprocessor::fit(&cohort.features, &select(&cohort, &train_ids)?)?;
    let ids: Vec<String> = train_ids.iter().chain(&val_ids).cloned().collect();
    let data = select(&cohort, &ids)?.into_iter().map(|p| pre.series(p)).collect::<Result<Vec<_>, _>>()?;
    let outcome = train(&data, pre.means(), &plan, args.fold, &cfg)?;
    if timing {
        log::info!("training took {:.2}s", started.elapsed().as_secs_f64());
    }

    let split = SplitInfo { held_out_fraction: args.held_out_fraction, split_seed: args.split_seed, fold: args.fold, plan };
    let ckpt = Checkpoint::new(cfg.clone(), split, pre, &outcome.params, &outcome.log);
    let mut log_bytes = Vec::new();
    for r in &outcome.log.records {
        serde_json::to_writer(&mut log_bytes, r)?;
        log_bytes.push(b'\n');
    }
    let mut manifest = Manifest::new("train", serde_json::to_value(&cfg)?);
    manifest.input(&args.cohort, &cohort_bytes);
    if let (Some(path), Some((_, bytes))) = (&args.config, &file) {
        manifest.input(path, bytes);
    }
    manifest.output(&args.out, &to_json_bytes(&ckpt)?)?;
    manifest.output(&args.log.clone().unwrap_or_else(|| sibling(&args.out, ".log.jsonl")), &log_bytes)?;
    manifest.extra = json!({
        "seed": cfg.seed,
        "split_seed": args.split_seed,
        "fold": args.fold,
        "held_out_fraction": args.held_out_fraction,
        "parameters": outcome.params.parameter_count(),
        "epochs_run": outcome.log.records.len(),
        "returned_epoch": outcome.log.returned_epoch,
        "stopped_early": outcome.log.stopped_early,
        "diverged": outcome.log.diverged,
    });
    manifest.write(&args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.json")))?;
    if let Some(why) = &outcome.log.diverged {
        return Err(CliError::Numeric(format!("training diverged ({why}); last finite parameters saved")));
    }
    Ok(())
}

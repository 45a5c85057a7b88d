//! Trained-model files: weights, preprocessing statistics and the split they were trained on.

use std::collections::HashMap;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use grudw_core::cohort::{Cohort, Preprocessor, RawPatient};
use grudw_core::model::ModelRecord;
use grudw_core::trainer::{FoldPlan, TrainConfig, TrainLog};
use grudw_core::{Model, Series};

use crate::error::{CliError, CliResult};
use crate::io::read_json;

pub const CHECKPOINT_FORMAT: &str = "grudw-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitInfo {
    pub held_out_fraction: f64,
    pub split_seed: u64,
    pub fold: usize,
    pub plan: FoldPlan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub train_config: TrainConfig,
    pub split: SplitInfo,
    pub preprocessor: Preprocessor,
    pub model: ModelRecord,
    pub returned_epoch: usize,
    pub stopped_early: bool,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    HeldOut,
    /// The checkpoint's own validation fold.
    Validation,
    /// Every patient the checkpoint was trained on.
    Train,
    All,
}

impl Checkpoint {
    pub fn new(cfg: TrainConfig, split: SplitInfo, preprocessor: Preprocessor, model: &Model, log: &TrainLog) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            train_config: cfg,
            split,
            preprocessor,
            model: model.to_record(),
            returned_epoch: log.returned_epoch,
            stopped_early: log.stopped_early,
            diverged: log.diverged.clone(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let c: Self = read_json(path)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(CliError::Data(format!("{}: not a version {CHECKPOINT_VERSION} checkpoint", path.display())));
        }
        Ok(c)
    }

    pub fn params(&self) -> CliResult<Model> {
        Ok(Model::from_record(&self.model)?)
    }

    pub fn ids(&self, split: Split, cohort: &Cohort) -> CliResult<Vec<String>> {
        let plan = &self.split.plan;
        Ok(match split {
            Split::HeldOut => plan.held_out.clone(),
            Split::Validation => plan.split(self.split.fold)?.1,
            Split::Train => plan.split(self.split.fold)?.0,
            Split::All => cohort.patients.iter().map(|p| p.id.clone()).collect(),
        })
    }

    /// Errors unless the cohort carries exactly the features the checkpoint was fitted on.
    pub fn check_compatible(&self, cohort: &Cohort) -> CliResult<()> {
        let ours: Vec<&str> = self.preprocessor.features.iter().map(|f| f.name.as_str()).collect();
        let theirs: Vec<&str> = cohort.features.iter().map(|f| f.name.as_str()).collect();
        if ours != theirs {
            return Err(CliError::Data(format!(
                "cohort features do not match the checkpoint ({} vs {} features)",
                theirs.len(),
                ours.len()
            )));
        }
        Ok(())
    }

    /// Model-ready series (before the variant's input pipeline) for `ids`, in order.
    pub fn series(&self, cohort: &Cohort, ids: &[String]) -> CliResult<Vec<Series>> {
        let raw = select(cohort, ids)?;
        raw.into_iter().map(|p| Ok(self.preprocessor.series(p)?)).collect()
    }

    /// Series after the variant's input pipeline, ready for the network.
    pub fn model_inputs(&self, cohort: &Cohort, ids: &[String]) -> CliResult<Vec<Series>> {
        let means = self.preprocessor.means::<f64>();
        self.series(cohort, ids)?
            .iter()
            .map(|s| Ok(self.train_config.variant.prepare(s, &means)?))
            .collect()
    }
}

/// Patients with the given ids, in the order given.
pub fn select<'a>(cohort: &'a Cohort, ids: &[String]) -> CliResult<Vec<&'a RawPatient>> {
    let index: HashMap<&str, &RawPatient> = cohort.patients.iter().map(|p| (p.id.as_str(), p)).collect();
    ids.iter()
        .map(|id| index.get(id.as_str()).copied().ok_or_else(|| CliError::Data(format!("unknown patient id {id}"))))
        .collect()
}

//! Training loop: shuffled mini-batches, flat-mean loss, global-norm
//! clipping, Adam/AMSGrad, and early stopping on the relative gap between
//! validation and training loss. Also the censor-stratified fold plan.
//!
//! Results are bit-identical for a fixed seed regardless of thread count:
//! patients are processed in fixed-size chunks whose partial gradients are
//! summed in patient order.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::CellConfig;
use crate::cohort::lvcf;
use crate::error::{Error, Result};
use crate::loss::patient_loss;
use crate::model::{Dropout, ModelParams, ParamTrajectory};
use crate::optim::{adam_step, clip_gradients, clip_values, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::series::PatientSeries;

pub const N_FOLDS: usize = 5;
/// Held-out share used when none is given (1879 of 6879 patients).
pub const DEFAULT_HELD_OUT_FRACTION: f64 = 1879.0 / 6879.0;
/// Patients per unit of parallel work; fixed so the reduction order never depends on threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Decaying imputation with mask and delta inputs.
    #[default]
    GruD,
    /// Inputs pre-filled by unlimited LVCF, decay disabled.
    GruLvcf,
    /// Head only; the recurrent cell is bypassed.
    Constant,
}

impl Variant {
    /// Applies the variant's input pipeline to a model-ready series.
    pub fn prepare<T: Scalar>(self, series: &PatientSeries<T>, means: &[T]) -> Result<PatientSeries<T>> {
        match self {
            Variant::GruLvcf => lvcf(series, None, means),
            _ => Ok(series.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    /// Element-wise clipping applied before norm clipping, when set.
    pub clip_value: Option<f64>,
    pub overfit_gap: f64,
    /// Consecutive epochs the gap must exceed `overfit_gap` before stopping.
    pub patience: usize,
    pub seed: u64,
    pub amsgrad: bool,
    pub variant: Variant,
    pub hidden_decay: bool,
    /// Keep the mask pathway in the LVCF variant.
    pub lvcf_mask: bool,
    /// Record wall-clock time per epoch (makes logs non-reproducible).
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_units: 40,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 500,
            dropout: 0.0,
            clip_norm: 3.0,
            clip_value: None,
            overfit_gap: 0.04,
            patience: 2,
            seed: 0,
            amsgrad: true,
            variant: Variant::GruD,
            hidden_decay: true,
            lvcf_mask: false,
            timing: false,
        }
    }
}

/// Configuration of the LVCF ablation: twice the hidden width, decay off.
pub fn gru_lvcf_variant(base: &TrainConfig) -> TrainConfig {
    TrainConfig { hidden_units: 80, variant: Variant::GruLvcf, ..base.clone() }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden_units == 0 || self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("hidden_units, epochs, batch_size and patience must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning_rate and clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.overfit_gap) {
            return bad("overfit_gap must lie in [0, 1)");
        }
        if self.clip_value.is_some_and(|v| !(v > 0.0)) {
            return bad("clip_value must be positive");
        }
        Ok(())
    }

    pub fn cell_config(&self) -> CellConfig {
        match self.variant {
            Variant::GruD | Variant::Constant => {
                CellConfig { input_decay: true, hidden_decay: self.hidden_decay, mask_inputs: true }
            }
            Variant::GruLvcf => CellConfig { input_decay: false, hidden_decay: false, mask_inputs: self.lvcf_mask },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, amsgrad: self.amsgrad, ..AdamConfig::default() }
    }

    /// Freshly initialised parameters for this configuration.
    pub fn init_params<T: Scalar>(&self, means: Vec<T>) -> ModelParams<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut p = ModelParams::init(means, self.hidden_units, self.cell_config(), &mut rng);
        p.bypass_cell = self.variant == Variant::Constant;
        p
    }
}

/// Held-out ids plus five training folds, all sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub held_out: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    /// (training ids, validation ids) for `fold`.
    pub fn split(&self, fold: usize) -> Result<(Vec<String>, Vec<String>)> {
        if fold >= self.folds.len() {
            return Err(Error::Config(format!("fold {fold} out of range 0..{}", self.folds.len())));
        }
        let mut train: Vec<String> =
            self.folds.iter().enumerate().filter(|(k, _)| *k != fold).flat_map(|(_, f)| f.iter().cloned()).collect();
        train.sort();
        Ok((train, self.folds[fold].clone()))
    }
}

/// Random held-out split, then uncensored and censored patients dealt
/// round-robin into five folds so uncensored counts differ by at most one.
pub fn make_folds(patients: &[(String, bool)], held_out_fraction: f64, seed: u64) -> Result<FoldPlan> {
    if patients.is_empty() {
        return Err(Error::Empty("cohort is empty".into()));
    }
    if !(0.0..1.0).contains(&held_out_fraction) {
        return Err(Error::Config("held_out_fraction must lie in [0, 1)".into()));
    }
    let mut sorted: Vec<&(String, bool)> = patients.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Data("duplicate patient id".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n_held = (held_out_fraction * sorted.len() as f64).round() as usize;
    let (held, rest) = sorted.split_at(n_held);
    if rest.len() < N_FOLDS {
        return Err(Error::Data(format!("{} patients left for {N_FOLDS} folds", rest.len())));
    }
    let mut folds = vec![Vec::new(); N_FOLDS];
    let dealt = rest.iter().filter(|p| !p.1).chain(rest.iter().filter(|p| p.1));
    for (k, p) in dealt.enumerate() {
        folds[k % N_FOLDS].push(p.0.clone());
    }
    for f in &mut folds {
        f.sort();
    }
    let mut held_out: Vec<String> = held.iter().map(|p| p.0.clone()).collect();
    held_out.sort();
    Ok(FoldPlan { held_out, folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// `(val - train) / |train|`.
    pub gap: Option<f64>,
    /// Mean pre-clip gradient norm over the epoch's batches.
    pub grad_norm: f64,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initialisation).
    pub returned_epoch: usize,
    pub stopped_early: bool,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: TrainLog,
}

/// Flat mean loss over every step of every series (no dropout).
pub fn dataset_loss<T: Scalar>(params: &ModelParams<T>, series: &[&PatientSeries<T>]) -> Result<f64> {
    let parts = series
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sum = 0.0;
            let mut steps = 0usize;
            for s in chunk {
                if s.is_empty() {
                    continue;
                }
                let (traj, _) = params.forward(s)?;
                let l = patient_loss(&traj, s)?;
                sum += l.sum.as_f64();
                steps += l.steps;
            }
            Ok((sum, steps))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sum, steps) = parts.iter().fold((0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1));
    if steps == 0 {
        return Err(Error::Empty("no timesteps to score".into()));
    }
    let mean = sum / steps as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric("non-finite dataset loss".into()));
    }
    Ok(mean)
}

/// Trajectories for every series, in order.
pub fn predict<T: Scalar>(params: &ModelParams<T>, series: &[PatientSeries<T>]) -> Result<Vec<ParamTrajectory<T>>> {
    series
        .par_iter()
        .map(|s| if s.is_empty() { Ok(ParamTrajectory(Vec::new())) } else { params.forward(s).map(|r| r.0) })
        .collect()
}

fn batch_gradient<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[usize],
    data: &[PatientSeries<T>],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(ModelParams<T>, f64)> {
    let steps: usize = batch.iter().map(|&i| data[i].len()).sum();
    if steps == 0 {
        return Ok((params.zeros_like(), 0.0));
    }
    let inv = T::lit(1.0 / steps as f64);
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = params.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                let s = &data[i];
                if s.is_empty() {
                    continue;
                }
                let (traj, tape) = if cfg.dropout > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(((epoch as u64 + 1) << 32) | i as u64);
                    params.forward_with(s, Some(Dropout { rate: cfg.dropout, rng: &mut rng }))?
                } else {
                    params.forward(s)?
                };
                let l = patient_loss(&traj, s)?;
                loss += l.sum.as_f64();
                let up: Vec<_> = l.grads.into_iter().map(|g| g.scale(inv)).collect();
                params.accumulate_gradient(&tape, &up, &mut grad)?;
            }
            Ok((grad, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut grad, mut loss) = iter.next().expect("non-empty batch");
    for (g, l) in iter {
        grad.add_scaled(&g, T::one());
        loss += l;
    }
    Ok((grad, loss / steps as f64))
}

/// Trains on every fold except `fold` and validates on `fold`.
///
/// `data` holds model-ready series (before the variant's input pipeline);
/// ids not present in `data` are an error. Divergence stops training and
/// returns the last finite parameters with `log.diverged` set.
pub fn train<T: Scalar>(
    data: &[PatientSeries<T>],
    means: Vec<T>,
    plan: &FoldPlan,
    fold: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (train_ids, val_ids) = plan.split(fold)?;
    let index: HashMap<&str, usize> = data.iter().enumerate().map(|(i, s)| (s.patient_id.as_str(), i)).collect();
    let pick = |ids: &[String]| -> Result<Vec<PatientSeries<T>>> {
        ids.iter()
            .map(|id| {
                let i = *index.get(id.as_str()).ok_or_else(|| Error::Data(format!("patient {id} not in data")))?;
                cfg.variant.prepare(&data[i], &means)
            })
            .collect()
    };
    let train_set = pick(&train_ids)?;
    let val_set = pick(&val_ids)?;
    fit(&train_set, &val_set, means, cfg)
}

/// Training loop over explicit training and validation sets (already prepared for the variant).
pub fn fit<T: Scalar>(
    train_set: &[PatientSeries<T>],
    val_set: &[PatientSeries<T>],
    means: Vec<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("training split has no timesteps".into()));
    }
    let n_features = train_set.iter().find(|s| !s.is_empty()).map_or(0, |s| s.n_features());
    if means.len() != n_features {
        return Err(Error::dim(format!("{} means for {n_features} features", means.len())));
    }
    let train_refs: Vec<&PatientSeries<T>> = train_set.iter().collect();
    let val_refs: Vec<&PatientSeries<T>> = val_set.iter().filter(|s| !s.is_empty()).collect();

    let mut params = cfg.init_params(means);
    let mut adam = AdamState::new(params.tensors().iter().map(|(_, t)| t.len()));
    let adam_cfg = cfg.adam();
    let mut last_good = params.clone();
    let mut returned_epoch = 0;
    let mut streak = 0;
    let mut log = TrainLog { records: Vec::new(), returned_epoch: 0, stopped_early: false, diverged: None };
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = cfg.timing.then(Instant::now);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);

        let mut norms = Vec::new();
        let mut failure = None;
        let before_epoch = params.clone();
        for batch in order.chunks(cfg.batch_size) {
            let (mut grad, _) = match batch_gradient(&params, batch, train_set, cfg, epoch) {
                Ok(r) => r,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            };
            if let Some(v) = cfg.clip_value {
                clip_values(grad.tensors_mut(), T::lit(v));
            }
            let norm = clip_gradients(grad.tensors_mut(), T::lit(cfg.clip_norm));
            norms.push(norm.as_f64());
            let grads: Vec<&[T]> = grad.tensors().into_iter().map(|(_, t)| t).collect();
            if let Err(e) = adam_step(params.tensors_mut(), &grads, &mut adam, &adam_cfg) {
                failure = Some(e);
                break;
            }
            if !params.is_finite() {
                failure = Some(Error::Numeric("parameters became non-finite".into()));
                break;
            }
        }
        let losses = match failure {
            Some(e) => Err(e),
            None => dataset_loss(&params, &train_refs).and_then(|tr| {
                let val = if val_refs.is_empty() { None } else { Some(dataset_loss(&params, &val_refs)?) };
                Ok((tr, val))
            }),
        };
        let (train_loss, val_loss) = match losses {
            Ok(v) => v,
            Err(e @ (Error::Numeric(_) | Error::Domain(_) | Error::InvalidParameter(_))) => {
                log::warn!("training diverged in epoch {epoch}: {e}");
                log.diverged = Some(format!("epoch {epoch}: {e}"));
                params = before_epoch;
                break;
            }
            Err(e) => return Err(e),
        };
        let gap = val_loss.map(|v| (v - train_loss) / train_loss.abs().max(f64::MIN_POSITIVE));
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            gap,
            grad_norm: if norms.is_empty() { 0.0 } else { norms.iter().sum::<f64>() / norms.len() as f64 },
            wall_time: started.map(|s| s.elapsed().as_secs_f64()),
        });
        match gap {
            Some(g) if g > cfg.overfit_gap => {
                streak += 1;
                if streak >= cfg.patience {
                    log.stopped_early = true;
                    break;
                }
            }
            _ => {
                streak = 0;
                last_good = params.clone();
                returned_epoch = epoch;
            }
        }
    }
    let params = if log.stopped_early {
        log.returned_epoch = returned_epoch;
        last_good
    } else {
        log.returned_epoch = log.records.last().map_or(0, |r| r.epoch);
        params
    };
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::OutcomeLabel;
    use rand::Rng;

    fn ids(n: usize, n_unc: usize) -> Vec<(String, bool)> {
        (0..n).map(|i| (format!("p{i:03}"), i >= n_unc)).collect()
    }

    #[test]
    fn folds_stratify_uncensored() {
        let plan = make_folds(&ids(10, 5), 0.0, 1).unwrap();
        assert!(plan.held_out.is_empty());
        for f in &plan.folds {
            let unc = f.iter().filter(|id| id.as_str() < "p005").count();
            assert_eq!(unc, 1);
            assert_eq!(f.len(), 2);
        }
        assert_eq!(plan, make_folds(&ids(10, 5), 0.0, 1).unwrap());
        assert!(make_folds(&ids(4, 2), 0.0, 1).is_err());
        assert!(make_folds(&[], 0.0, 1).is_err());
    }

    #[test]
    fn folds_at_cohort_scale() {
        // counting oracle: 6879 patients, 1879 held out
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(String, bool)> = (0..6879).map(|i| (format!("id{i:05}"), rng.random_bool(0.49))).collect();
        let plan = make_folds(&pts, DEFAULT_HELD_OUT_FRACTION, 7).unwrap();
        assert_eq!(plan.held_out.len(), 1879);
        let censored: HashMap<&str, bool> = pts.iter().map(|(i, c)| (i.as_str(), *c)).collect();
        let rest_unc = plan.folds.iter().flatten().filter(|id| !censored[id.as_str()]).count();
        let counts: Vec<usize> =
            plan.folds.iter().map(|f| f.iter().filter(|id| !censored[id.as_str()]).count()).collect();
        let share = rest_unc as f64 / 5.0;
        for c in &counts {
            assert!((*c as f64 - share).abs() <= 1.0);
        }
        let mut all: Vec<&String> = plan.folds.iter().flatten().chain(&plan.held_out).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 6879);
        // insertion order does not matter
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(make_folds(&rev, DEFAULT_HELD_OUT_FRACTION, 7).unwrap(), plan);
    }

    /// Severity is visible in the single feature and drives the event time.
    fn separable(n: usize, seed: u64) -> Vec<PatientSeries<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let sev: f64 = rng.random_range(-1.0..1.0);
                let t = 365.25 * (1.5 * (-sev).exp()) * rng.random_range(0.8..1.2);
                let grid: Vec<f64> = (0..12).map(|k| -330.0 + 30.0 * k as f64).filter(|&g| g < t).collect();
                let values: Vec<Vec<f64>> = grid.iter().map(|_| vec![sev + 0.1 * rng.random::<f64>()]).collect();
                let mask: Vec<Vec<bool>> = grid.iter().map(|_| vec![rng.random_bool(0.7)]).collect();
                PatientSeries::from_dense(format!("s{i:03}"), grid, &values, &mask, OutcomeLabel::new(t, i % 4 == 0).unwrap())
                    .unwrap()
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { hidden_units: 6, learning_rate: 0.01, epochs: 12, batch_size: 10, seed: 5, ..TrainConfig::default() }
    }

    #[test]
    fn train_loss_decreases_and_is_deterministic() {
        let data = separable(50, 1);
        let ids: Vec<(String, bool)> = data.iter().map(|s| (s.patient_id.clone(), s.outcome.censored)).collect();
        let plan = make_folds(&ids, 0.0, 3).unwrap();
        let cfg = TrainConfig { overfit_gap: 0.99, ..small_cfg() };
        let a = train(&data, vec![0.0], &plan, 0, &cfg).unwrap();
        let losses: Vec<f64> = a.log.records.iter().map(|r| r.train_loss).collect();
        let run = losses.windows(2).fold((0usize, 0usize), |(cur, best), w| {
            let cur = if w[1] < w[0] { cur + 1 } else { 0 };
            (cur, best.max(cur))
        });
        assert!(run.1 >= 5, "{losses:?}");
        let b = train(&data, vec![0.0], &plan, 0, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert!(a.log.records.iter().all(|r| r.wall_time.is_none()));

        // same patients, different insertion order
        let mut shuffled = data.clone();
        shuffled.reverse();
        let c = train(&shuffled, vec![0.0], &plan, 0, &cfg).unwrap();
        assert_eq!(a.params, c.params);
    }

    #[test]
    fn dropout_training_is_deterministic() {
        let data = separable(30, 2);
        let ids: Vec<(String, bool)> = data.iter().map(|s| (s.patient_id.clone(), s.outcome.censored)).collect();
        let plan = make_folds(&ids, 0.0, 3).unwrap();
        let cfg = TrainConfig { dropout: 0.3, epochs: 3, overfit_gap: 0.99, ..small_cfg() };
        let a = train(&data, vec![0.0], &plan, 1, &cfg).unwrap();
        let b = train(&data, vec![0.0], &plan, 1, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_gap_stops_at_first_overfit_epoch() {
        let data = separable(40, 3);
        let ids: Vec<(String, bool)> = data.iter().map(|s| (s.patient_id.clone(), s.outcome.censored)).collect();
        let plan = make_folds(&ids, 0.0, 4).unwrap();
        let mut stopped = 0;
        for fold in 0..N_FOLDS {
            let cfg = TrainConfig { overfit_gap: 0.0, patience: 1, epochs: 15, ..small_cfg() };
            let out = train(&data, vec![0.0], &plan, fold, &cfg).unwrap();
            let first = out.log.records.iter().position(|r| r.val_loss.unwrap() > r.train_loss);
            match first {
                Some(k) => {
                    stopped += 1;
                    assert!(out.log.stopped_early);
                    assert_eq!(out.log.records.len(), k + 1);
                    assert_eq!(out.log.returned_epoch, k);
                }
                None => assert_eq!(out.log.records.len(), 15),
            }
        }
        assert!(stopped > 0);
    }

    #[test]
    fn early_stop_returns_params_from_before_the_gap() {
        let data = separable(40, 4);
        let ids: Vec<(String, bool)> = data.iter().map(|s| (s.patient_id.clone(), s.outcome.censored)).collect();
        let plan = make_folds(&ids, 0.0, 5).unwrap();
        let cfg = TrainConfig { overfit_gap: 0.0, patience: 2, epochs: 20, ..small_cfg() };
        let mut stopped = 0;
        for fold in 0..N_FOLDS {
            let out = train(&data, vec![0.0], &plan, fold, &cfg).unwrap();
            if !out.log.stopped_early {
                continue;
            }
            stopped += 1;
            let recs = &out.log.records;
            let n = recs.len();
            assert!(recs[n - 1].gap.unwrap() > 0.0 && recs[n - 2].gap.unwrap() > 0.0);
            assert_eq!(out.log.returned_epoch, n - 2);
            // rerun for exactly the returned number of epochs reproduces the returned params
            if out.log.returned_epoch > 0 {
                let short = TrainConfig { epochs: out.log.returned_epoch, overfit_gap: 0.99, ..cfg.clone() };
                let again = train(&data, vec![0.0], &plan, fold, &short).unwrap();
                assert_eq!(again.params, out.params);
            }
        }
        assert!(stopped > 0);
    }

    #[test]
    fn divergence_keeps_last_finite_parameters() {
        let data = separable(30, 6);
        let ids: Vec<(String, bool)> = data.iter().map(|s| (s.patient_id.clone(), s.outcome.censored)).collect();
        let plan = make_folds(&ids, 0.0, 5).unwrap();
        // a non-finite imputation mean poisons the first forward pass
        let out = train(&data, vec![f64::NAN], &plan, 0, &small_cfg()).unwrap();
        assert!(out.log.diverged.is_some());
        assert!(out.log.records.is_empty());
        assert_eq!(out.log.returned_epoch, 0);
        let init = TrainConfig { ..small_cfg() }.init_params(vec![f64::NAN]);
        assert_eq!(out.params.head_w, init.head_w);
    }

    #[test]
    fn rejects_bad_config_and_missing_ids() {
        let data = separable(10, 7);
        let ids: Vec<(String, bool)> = data.iter().map(|s| (s.patient_id.clone(), s.outcome.censored)).collect();
        let plan = make_folds(&ids, 0.0, 5).unwrap();
        assert!(train(&data, vec![0.0], &plan, 5, &small_cfg()).is_err());
        assert!(train(&data, vec![0.0], &plan, 0, &TrainConfig { dropout: 1.0, ..small_cfg() }).is_err());
        assert!(train(&data[..5], vec![0.0], &plan, 0, &small_cfg()).is_err());
    }

    #[test]
    fn lvcf_variant_matches_gru_d_on_fully_observed_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid: Vec<f64> = (0..10).map(|k| 30.0 * k as f64).collect();
        let values: Vec<Vec<f64>> = grid.iter().map(|_| vec![rng.random_range(-1.0..1.0), rng.random()]).collect();
        let s = PatientSeries::<f64>::from_dense("f", grid, &values, &vec![vec![true, true]; 10], OutcomeLabel::new(400.0, false).unwrap())
            .unwrap();
        let base = TrainConfig { hidden_units: 5, ..TrainConfig::default() };
        let mut d = base.init_params(vec![0.0, 0.5]);
        d.cell.hidden_decay_w.iter_mut().for_each(|w| *w = 0.0);
        d.cell.hidden_decay_b.iter_mut().for_each(|w| *w = 0.0);
        let lv_cfg = TrainConfig { variant: Variant::GruLvcf, lvcf_mask: true, ..base };
        let mut l = lv_cfg.init_params(vec![0.0, 0.5]);
        // share every parameter the ablation has
        l.cell.update = d.cell.update.clone();
        l.cell.reset = d.cell.reset.clone();
        l.cell.candidate = d.cell.candidate.clone();
        l.head_w = d.head_w.clone();
        l.head_b = d.head_b.clone();
        let prepared = Variant::GruLvcf.prepare(&s, &[0.0, 0.5]).unwrap();
        assert_eq!(d.forward(&s).unwrap().0, l.forward(&prepared).unwrap().0);
    }

    #[test]
    fn lvcf_parameter_count_is_comparable() {
        let f = 536;
        let d = TrainConfig::default().init_params::<f64>(vec![0.0; f]);
        let l = gru_lvcf_variant(&TrainConfig::default()).init_params::<f64>(vec![0.0; f]);
        let (a, b) = (d.parameter_count() as f64, l.parameter_count() as f64);
        assert!((b - a).abs() / a < 0.10, "{a} vs {b}");
    }
}

//! Train-split statistics, z-scoring, imputation means and LVCF.

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureSpec, RawPatient};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::series::{compute_deltas, PatientSeries, TimestepObservation};

pub const SD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub kind: FeatureKind,
    /// Raw-scale mean and SD of observed training values (numeric only).
    pub mean: f64,
    pub sd: f64,
    /// Model-scale value substituted when nothing has been observed yet.
    pub impute: f64,
    /// False when the feature was never observed in the training split.
    pub kept: bool,
}

/// Feature statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub features: Vec<FeatureStats>,
}

impl Preprocessor {
    pub fn fit(features: &[FeatureSpec], train: &[&RawPatient]) -> Result<Self> {
        let cells: usize = train.iter().map(|p| p.grid.len()).sum();
        if cells == 0 {
            return Err(Error::Empty("training split has no timesteps".into()));
        }
        let mut out = Vec::with_capacity(features.len());
        for (d, f) in features.iter().enumerate() {
            let observed: Vec<f64> = train.iter().flat_map(|p| p.values.iter().filter_map(move |r| r[d])).collect();
            let kept = !observed.is_empty();
            if !kept {
                log::warn!("feature {} never observed in the training split; excluded", f.name);
            }
            let stats = if f.kind.is_binary() {
                FeatureStats {
                    name: f.name.clone(),
                    kind: f.kind,
                    mean: 0.0,
                    sd: 1.0,
                    impute: observed.iter().sum::<f64>() / cells as f64,
                    kept,
                }
            } else {
                let n = observed.len().max(1) as f64;
                let mean = observed.iter().sum::<f64>() / n;
                let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                FeatureStats { name: f.name.clone(), kind: f.kind, mean, sd: var.sqrt().max(SD_FLOOR), impute: 0.0, kept }
            };
            out.push(stats);
        }
        Ok(Self { features: out })
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.features.iter().enumerate().filter(|(_, f)| f.kept).map(|(i, _)| i).collect()
    }

    pub fn n_kept(&self) -> usize {
        self.features.iter().filter(|f| f.kept).count()
    }

    /// Kinds of the kept features, in model-input order.
    pub fn kept_kinds(&self) -> Vec<FeatureKind> {
        self.features.iter().filter(|f| f.kept).map(|f| f.kind).collect()
    }

    #[inline]
    pub fn transform(&self, d: usize, raw: f64) -> f64 {
        let f = &self.features[d];
        (raw - f.mean) / f.sd
    }

    #[inline]
    pub fn inverse(&self, d: usize, z: f64) -> f64 {
        let f = &self.features[d];
        z * f.sd + f.mean
    }

    /// Imputation means of the kept features.
    pub fn means<T: Scalar>(&self) -> Vec<T> {
        self.features.iter().filter(|f| f.kept).map(|f| T::lit(f.impute)).collect()
    }

    /// Model-ready series for one raw patient.
    pub fn series<T: Scalar>(&self, p: &RawPatient) -> Result<PatientSeries<T>> {
        let kept = self.kept_indices();
        let values: Vec<Vec<f64>> =
            p.values.iter().map(|r| kept.iter().map(|&d| r[d].map_or(0.0, |v| self.transform(d, v))).collect()).collect();
        let mask: Vec<Vec<bool>> = p.values.iter().map(|r| kept.iter().map(|&d| r[d].is_some()).collect()).collect();
        PatientSeries::from_dense(p.id.clone(), p.grid.clone(), &values, &mask, p.outcome()?)
    }
}

/// Fits statistics on `train` and converts both splits.
pub fn zscore_fit_apply<T: Scalar>(
    features: &[FeatureSpec],
    train: &[&RawPatient],
    others: &[&RawPatient],
) -> Result<(Preprocessor, Vec<PatientSeries<T>>, Vec<PatientSeries<T>>)> {
    let pre = Preprocessor::fit(features, train)?;
    let a = train.iter().map(|p| pre.series(p)).collect::<Result<Vec<_>>>()?;
    let b = others.iter().map(|p| pre.series(p)).collect::<Result<Vec<_>>>()?;
    Ok((pre, a, b))
}

/// Last value carried forward for at most `max_carry_days` (unlimited when `None`).
///
/// Filled entries get mask 1; entries with nothing to carry get the mean and keep mask 0.
pub fn lvcf<T: Scalar>(series: &PatientSeries<T>, max_carry_days: Option<f64>, means: &[T]) -> Result<PatientSeries<T>> {
    let f = series.n_features();
    if !series.is_empty() && means.len() != f {
        return Err(Error::dim(format!("{} means for {f} features", means.len())));
    }
    let limit = max_carry_days.unwrap_or(f64::INFINITY);
    let mut last: Vec<Option<(T, f64)>> = vec![None; f];
    let mut values = Vec::with_capacity(series.len());
    let mut mask = Vec::with_capacity(series.len());
    for (obs, &day) in series.observations.iter().zip(&series.grid_times) {
        let mut row_v = Vec::with_capacity(f);
        let mut row_m = Vec::with_capacity(f);
        for d in 0..f {
            if obs.observed(d) {
                last[d] = Some((obs.x[d], day));
                row_v.push(obs.x[d]);
                row_m.push(true);
            } else if let Some((v, _)) = last[d].filter(|&(_, at)| day - at <= limit) {
                row_v.push(v);
                row_m.push(true);
            } else {
                row_v.push(means[d]);
                row_m.push(false);
            }
        }
        values.push(row_v);
        mask.push(row_m);
    }
    let deltas = compute_deltas(&series.grid_times, &mask)?;
    let observations = values
        .into_iter()
        .zip(mask)
        .zip(deltas)
        .map(|((v, m), dl)| {
            TimestepObservation::new(
                v,
                m.iter().map(|&o| if o { T::one() } else { T::zero() }).collect(),
                dl.into_iter().map(T::lit).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatientSeries {
        patient_id: series.patient_id.clone(),
        grid_times: series.grid_times.clone(),
        observations,
        outcome: series.outcome,
    })
}

/// Share of `features` still unobserved (never seen so far) over grid steps in `(t - window, t]`.
pub fn missing_proportion<T: Scalar>(series: &PatientSeries<T>, features: &[usize], t: f64, window_days: f64) -> Option<f64> {
    if features.is_empty() {
        return None;
    }
    let mut seen = vec![false; features.len()];
    let mut missing = 0usize;
    let mut total = 0usize;
    for (obs, &day) in series.observations.iter().zip(&series.grid_times) {
        if day > t {
            break;
        }
        for (s, &d) in seen.iter_mut().zip(features) {
            *s |= obs.observed(d);
        }
        if day > t - window_days {
            missing += seen.iter().filter(|s| !**s).count();
            total += features.len();
        }
    }
    (total > 0).then(|| missing as f64 / total as f64)
}

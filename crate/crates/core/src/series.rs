//! Model-ready patient sequences: per-timestep `(value, mask, delta)` triples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Days per year used for every day/year conversion.
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Event or censoring time of a patient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLabel {
    /// Days relative to the index date; always positive.
    pub terminal_time: f64,
    pub censored: bool,
}

impl OutcomeLabel {
    pub fn new(terminal_time: f64, censored: bool) -> Result<Self> {
        if !(terminal_time.is_finite() && terminal_time > 0.0) {
            return Err(Error::Data(format!("terminal time must be positive, got {terminal_time}")));
        }
        Ok(Self { terminal_time, censored })
    }

    #[inline]
    pub fn terminal_years(&self) -> f64 {
        self.terminal_time / DAYS_PER_YEAR
    }

    /// Remaining years from `day` to the terminal time.
    #[inline]
    pub fn remaining_years(&self, day: f64) -> f64 {
        (self.terminal_time - day) / DAYS_PER_YEAR
    }

    #[inline]
    pub fn at_risk(&self, day: f64) -> bool {
        self.terminal_time > day
    }
}

/// One grid step of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepObservation<T> {
    /// Feature values; entries with `mask == 0` are ignored.
    pub x: Vec<T>,
    /// 1 where the feature was observed at this step, else 0.
    pub mask: Vec<T>,
    /// Days since the feature was last observed.
    pub delta: Vec<T>,
}

impl<T: Scalar> TimestepObservation<T> {
    pub fn new(x: Vec<T>, mask: Vec<T>, delta: Vec<T>) -> Result<Self> {
        if x.len() != mask.len() || x.len() != delta.len() {
            return Err(Error::dim(format!(
                "x/mask/delta lengths {}/{}/{}",
                x.len(),
                mask.len(),
                delta.len()
            )));
        }
        if mask.iter().any(|&m| m != T::zero() && m != T::one()) {
            return Err(Error::Data("mask entries must be 0 or 1".into()));
        }
        if delta.iter().any(|&d| !(d >= T::zero())) {
            return Err(Error::Data("delta entries must be non-negative".into()));
        }
        Ok(Self { x, mask, delta })
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn observed(&self, d: usize) -> bool {
        self.mask[d] == T::one()
    }
}

/// A patient's full grid up to (not including) the terminal time.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientSeries<T> {
    pub patient_id: String,
    /// Grid dates in days relative to the index date.
    pub grid_times: Vec<f64>,
    pub observations: Vec<TimestepObservation<T>>,
    pub outcome: OutcomeLabel,
}

impl<T: Scalar> PatientSeries<T> {
    /// Builds a series from dense `[step][feature]` values and masks, deriving deltas.
    pub fn from_dense(
        patient_id: impl Into<String>,
        grid_times: Vec<f64>,
        values: &[Vec<f64>],
        mask: &[Vec<bool>],
        outcome: OutcomeLabel,
    ) -> Result<Self> {
        if values.len() != grid_times.len() || mask.len() != grid_times.len() {
            return Err(Error::dim("values/mask rows must match grid length"));
        }
        let deltas = compute_deltas(&grid_times, mask)?;
        let observations = values
            .iter()
            .zip(mask)
            .zip(deltas)
            .map(|((v, m), d)| {
                TimestepObservation::new(
                    v.iter().zip(m).map(|(&x, &o)| if o { T::lit(x) } else { T::zero() }).collect(),
                    m.iter().map(|&o| if o { T::one() } else { T::zero() }).collect(),
                    d.into_iter().map(T::lit).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let series = Self { patient_id: patient_id.into(), grid_times, observations, outcome };
        series.validate()?;
        Ok(series)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.observations.first().map_or(0, |o| o.n_features())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_times.len() != self.observations.len() {
            return Err(Error::dim("grid and observation lengths differ"));
        }
        if self.grid_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!("{}: grid not strictly increasing", self.patient_id)));
        }
        if let Some(&last) = self.grid_times.last() {
            if !(self.outcome.terminal_time > last) {
                return Err(Error::Data(format!(
                    "{}: terminal time {} not after last step {}",
                    self.patient_id, self.outcome.terminal_time, last
                )));
            }
        }
        let f = self.n_features();
        if self.observations.iter().any(|o| o.n_features() != f) {
            return Err(Error::dim("feature count varies across steps"));
        }
        Ok(())
    }

    /// First `k` steps, same outcome.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            patient_id: self.patient_id.clone(),
            grid_times: self.grid_times[..k].to_vec(),
            observations: self.observations[..k].to_vec(),
            outcome: self.outcome,
        }
    }

    /// Index of the last grid step at or before `day`, if it lies inside this series.
    pub fn step_at(&self, day: f64) -> Option<usize> {
        let idx = self.grid_times.partition_point(|&g| g <= day);
        (idx > 0).then(|| idx - 1)
    }
}

/// Days since last observation for every step and feature.
///
/// The first step has delta 0; afterwards delta grows by the grid gap and
/// resets to the gap after any step where the feature was observed.
pub fn compute_deltas(grid_times: &[f64], mask: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = mask.first() else {
        return Ok(Vec::new());
    };
    let f = first.len();
    let mut out = Vec::with_capacity(mask.len());
    out.push(vec![0.0; f]);
    for t in 1..mask.len() {
        if mask[t].len() != f {
            return Err(Error::dim("ragged mask"));
        }
        let gap = grid_times[t] - grid_times[t - 1];
        let row = (0..f)
            .map(|d| if mask[t - 1][d] { gap } else { gap + out[t - 1][d] })
            .collect();
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_follow_observation_pattern() {
        let grid = [0.0, 15.0, 30.0, 60.0];
        let mask = vec![vec![true, false], vec![false, false], vec![true, false], vec![false, true]];
        let d = compute_deltas(&grid, &mask).unwrap();
        assert_eq!(d, vec![vec![0.0, 0.0], vec![15.0, 15.0], vec![30.0, 30.0], vec![30.0, 60.0]]);
    }

    #[test]
    fn series_validation() {
        let out = OutcomeLabel::new(100.0, false).unwrap();
        let s = PatientSeries::<f64>::from_dense(
            "a",
            vec![0.0, 30.0],
            &[vec![1.0], vec![2.0]],
            &[vec![true], vec![false]],
            out,
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.observations[1].x[0], 0.0);
        assert_eq!(s.step_at(29.0), Some(0));
        assert_eq!(s.step_at(-1.0), None);
        assert_eq!(s.step_at(500.0), Some(1));

        let late = OutcomeLabel::new(20.0, true).unwrap();
        assert!(PatientSeries::<f64>::from_dense("b", vec![0.0, 30.0], &[vec![1.0], vec![2.0]], &[vec![true], vec![true]], late).is_err());
        assert!(OutcomeLabel::new(0.0, true).is_err());
        assert!(TimestepObservation::new(vec![1.0], vec![0.5], vec![0.0]).is_err());
        assert!(TimestepObservation::new(vec![1.0], vec![1.0], vec![-1.0]).is_err());
    }
}

//! Cohorts: sampling grid, raw patient records and their line-delimited file
//! format, the synthetic generator, and model-input preprocessing.
//!
//! A cohort file is JSON Lines. The first line is a [`CohortHeader`]; every
//! following line is one [`RawPatient`]:
//!
//! | field           | type                         | meaning                                        |
//! |-----------------|------------------------------|------------------------------------------------|
//! | `id`            | string                       | unique patient id                              |
//! | `terminal_time` | number                       | event/censoring day relative to the index date |
//! | `censored`      | bool                         | true when `terminal_time` is a censoring time  |
//! | `grid`          | number array                 | grid days strictly before `terminal_time`      |
//! | `values`        | array of (number\|null) rows | one row per grid step, one entry per feature   |
//!
//! `null` marks a missing value. Binary features carry `1` inside an effect
//! window and `null` elsewhere.

mod generate;
mod preprocess;

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate, CohortSpec, GeneratedCohort, PatientTruth, TruthHeader};
pub use preprocess::{lvcf, missing_proportion, zscore_fit_apply, FeatureStats, Preprocessor, SD_FLOOR};

pub const COHORT_FORMAT: &str = "grudw-cohort";
pub const COHORT_VERSION: u32 = 1;

/// Non-uniform sampling scheme around the index date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingGrid {
    pub dense_step_days: f64,
    pub sparse_step_days: f64,
    /// Dense stepping applies while `|t| < dense_window_days`.
    pub dense_window_days: f64,
    pub start_day: f64,
    pub end_day: f64,
}

impl Default for SamplingGrid {
    fn default() -> Self {
        Self {
            dense_step_days: 15.0,
            sparse_step_days: 30.0,
            dense_window_days: 182.625,
            start_day: -1095.0,
            end_day: 1826.0,
        }
    }
}

/// Grid days from `start_day` to at most `end_day`.
pub fn build_grid(spec: &SamplingGrid) -> Result<Vec<f64>> {
    let finite = [spec.dense_step_days, spec.sparse_step_days, spec.dense_window_days, spec.start_day, spec.end_day]
        .iter()
        .all(|v| v.is_finite());
    if !finite || !(spec.dense_step_days > 0.0) || !(spec.sparse_step_days > 0.0) {
        return Err(Error::Config("grid steps must be positive and finite".into()));
    }
    if spec.dense_window_days < 0.0 || spec.end_day < spec.start_day {
        return Err(Error::Config("grid window inconsistent".into()));
    }
    let mut out = Vec::new();
    let mut t = spec.start_day;
    while t <= spec.end_day {
        out.push(t);
        t += if t.abs() < spec.dense_window_days { spec.dense_step_days } else { spec.sparse_step_days };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Continuous measurement, z-scored.
    Numeric,
    /// Binary with a 100-day effect window.
    Comorbidity,
    /// Binary with a 30-day effect window.
    Medication,
}

impl FeatureKind {
    pub fn is_binary(self) -> bool {
        !matches!(self, FeatureKind::Numeric)
    }

    pub fn effect_window_days(self) -> Option<f64> {
        match self {
            FeatureKind::Numeric => None,
            FeatureKind::Comorbidity => Some(100.0),
            FeatureKind::Medication => Some(30.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortHeader {
    pub format: String,
    pub version: u32,
    pub n_patients: usize,
    pub features: Vec<FeatureSpec>,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPatient {
    pub id: String,
    pub terminal_time: f64,
    pub censored: bool,
    pub grid: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl RawPatient {
    pub fn outcome(&self) -> Result<crate::series::OutcomeLabel> {
        crate::series::OutcomeLabel::new(self.terminal_time, self.censored)
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Data(format!("patient {}: {msg}", self.id)));
        if self.values.len() != self.grid.len() {
            return bad(format!("{} value rows for {} grid steps", self.values.len(), self.grid.len()));
        }
        if let Some(row) = self.values.iter().find(|r| r.len() != n_features) {
            return bad(format!("row has {} features, expected {n_features}", row.len()));
        }
        if self.values.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("grid not strictly increasing".into());
        }
        if !(self.terminal_time.is_finite() && self.terminal_time > 0.0) {
            return bad(format!("terminal time {} must be positive", self.terminal_time));
        }
        if self.grid.last().is_some_and(|&g| !(self.terminal_time > g)) {
            return bad("terminal time not after the last grid step".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub features: Vec<FeatureSpec>,
    pub grid: Vec<f64>,
    pub patients: Vec<RawPatient>,
}

impl Cohort {
    pub fn header(&self) -> CohortHeader {
        CohortHeader {
            format: COHORT_FORMAT.into(),
            version: COHORT_VERSION,
            n_patients: self.patients.len(),
            features: self.features.clone(),
            grid: self.grid.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.patients {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Data(format!("duplicate patient id {}", p.id)));
            }
            p.validate(self.features.len())?;
        }
        Ok(())
    }

    /// Patients sorted by id, the canonical order used everywhere downstream.
    pub fn sorted(mut self) -> Self {
        self.patients.sort_by(|a, b| a.id.cmp(&b.id));
        self
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header())?;
        w.write_all(b"\n")?;
        for p in &self.patients {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let (_, first) = lines.next().ok_or_else(|| Error::Data("empty cohort file".into()))?;
        let header: CohortHeader =
            serde_json::from_str(&first?).map_err(|e| Error::Data(format!("cohort header: {e}")))?;
        if header.format != COHORT_FORMAT {
            return Err(Error::Data(format!("not a cohort file (format {:?})", header.format)));
        }
        if header.version != COHORT_VERSION {
            return Err(Error::Data(format!("unsupported cohort version {}", header.version)));
        }
        let mut patients = Vec::with_capacity(header.n_patients);
        for (i, line) in lines {
            let p: RawPatient =
                serde_json::from_str(&line?).map_err(|e| Error::Data(format!("cohort line {}: {e}", i + 1)))?;
            patients.push(p);
        }
        if patients.len() != header.n_patients {
            return Err(Error::Data(format!(
                "header declares {} patients, file has {}",
                header.n_patients,
                patients.len()
            )));
        }
        let cohort = Self { features: header.features, grid: header.grid, patients };
        cohort.validate()?;
        Ok(cohort)
    }

    pub fn feature_indices(&self, kind: FeatureKind) -> Vec<usize> {
        self.features.iter().enumerate().filter(|(_, f)| f.kind == kind).map(|(i, _)| i).collect()
    }
}

//! Synthetic cohort with a known Weibull ground truth.
//!
//! Each patient has a latent severity `s`. At the index date `s ~ N(0, 1)`
//! and the event time is `T ~ Weibull(kappa, exp(a0 - a s))` (years). Before
//! the index date the latent drifts upward toward `s`; after it, `s(t)`
//! rises as `rho * -ln(1 - t/T)` on top of a small random walk, so later
//! observations carry more information about the remaining time.
//!
//! Numeric features are noisy linear views of `s(t)`. Binary features are
//! record events that switch the feature on for an effect window. The chance
//! of observing a feature at a step is `(1 - missing_rate)^g` with
//! `g = phase * exp(e - mar * s(t))`, so sicker patients are measured more
//! often; `e` is an optional per-patient engagement effect unrelated to the
//! outcome. Both dependences are full before the index date and can fade
//! during follow-up. Censoring is an independent uniform draw whose upper
//! bound is tuned by bisection, plus administrative censoring.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_grid, Cohort, FeatureKind, FeatureSpec, RawPatient, SamplingGrid};
use crate::error::{Error, Result};
use crate::series::DAYS_PER_YEAR;

pub const TRUTH_FORMAT: &str = "grudw-truth";

const PRE_INDEX_DRIFT: f64 = 0.3;
const WALK_SD: f64 = 0.3;
const POST_WALK_SD: f64 = 0.15;
const MEASUREMENT_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub n_numeric: usize,
    /// First half comorbidity-like, second half medication-like.
    pub n_binary: usize,
    /// Per feature (numeric first). For binary features this is the per-step
    /// probability of no new record. Empty means the built-in profile.
    pub missing_rates: Vec<f64>,
    pub censoring_rate: f64,
    /// `[a0, a, rho]`: intercept and severity slope of `ln lambda`, and the
    /// strength of the pre-event latent rise.
    pub link: Vec<f64>,
    pub kappa: f64,
    /// Severity dependence of missingness; 0 makes missingness independent of health.
    pub mar_strength: f64,
    /// Exponent multiplier on the observation chance before the index date;
    /// above 1 thins out pre-index records.
    pub pre_index_phase: f64,
    /// Same multiplier during follow-up; below 1 means denser follow-up visits.
    pub post_index_phase: f64,
    /// Per-year exponential fade of `mar_strength` and engagement after the index date; 0 keeps them constant.
    pub mar_fade_rate: f64,
    /// SD of a per-patient engagement effect on record frequency, independent of the outcome.
    pub engagement_sd: f64,
    pub admin_censor_days: f64,
    pub grid: SamplingGrid,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            n_numeric: 12,
            n_binary: 8,
            missing_rates: Vec::new(),
            censoring_rate: 0.49,
            link: vec![1.33, 1.0, 1.0],
            kappa: 1.5,
            mar_strength: 1.0,
            pre_index_phase: 2.0,
            post_index_phase: 1.0,
            mar_fade_rate: 1.0,
            engagement_sd: 0.0,
            admin_censor_days: 1826.0,
            grid: SamplingGrid::default(),
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn n_features(&self) -> usize {
        self.n_numeric + self.n_binary
    }

    pub fn features(&self) -> Vec<FeatureSpec> {
        let n_comorb = self.n_binary.div_ceil(2);
        let mut out: Vec<FeatureSpec> = (0..self.n_numeric)
            .map(|d| FeatureSpec { name: format!("lab_{d:02}"), kind: FeatureKind::Numeric })
            .collect();
        out.extend((0..self.n_binary).map(|b| {
            if b < n_comorb {
                FeatureSpec { name: format!("comorb_{b:02}"), kind: FeatureKind::Comorbidity }
            } else {
                FeatureSpec { name: format!("med_{:02}", b - n_comorb), kind: FeatureKind::Medication }
            }
        }));
        out
    }

    /// Missing rates actually used, one per feature.
    pub fn resolved_missing_rates(&self) -> Vec<f64> {
        if !self.missing_rates.is_empty() {
            return self.missing_rates.clone();
        }
        let n_comorb = self.n_binary.div_ceil(2);
        let mut out: Vec<f64> = (0..self.n_numeric)
            .map(|d| if self.n_numeric == 1 { 0.3 } else { 0.3 + 0.65 * d as f64 / (self.n_numeric - 1) as f64 })
            .collect();
        out.extend((0..self.n_binary).map(|b| if b < n_comorb { 0.85 } else { 0.8 }));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.n_features() == 0 {
            return bad("cohort needs at least one feature");
        }
        let rates = self.resolved_missing_rates();
        if rates.len() != self.n_features() {
            return bad("missing_rates must have one entry per feature");
        }
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || !(0.0..=1.0).contains(&self.censoring_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if self.link.len() != 3 || self.link.iter().any(|v| !v.is_finite()) {
            return bad("link must be [a0, a, rho]");
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be positive");
        }
        if !(self.admin_censor_days > 0.0) || !self.mar_strength.is_finite() {
            return bad("admin_censor_days must be positive and mar_strength finite");
        }
        let phases = [self.pre_index_phase, self.post_index_phase];
        if phases.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad("observation phases must be positive");
        }
        if !(self.mar_fade_rate.is_finite() && self.mar_fade_rate >= 0.0)
            || !(self.engagement_sd.is_finite() && self.engagement_sd >= 0.0)
        {
            return bad("mar_fade_rate and engagement_sd must be non-negative");
        }
        build_grid(&self.grid).map(|_| ())
    }
}

/// Ground truth for one patient, kept out of the cohort file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub id: String,
    /// Index-date severity.
    pub severity: f64,
    pub kappa: f64,
    /// Index-date Weibull scale in years.
    pub lambda: f64,
    pub event_time: f64,
    pub censor_time: f64,
    /// Latent severity at each emitted grid step.
    pub latent: Vec<f64>,
}

impl PatientTruth {
    /// Survival from the index date to `day`.
    pub fn index_survival(&self, day: f64) -> f64 {
        (-(day.max(0.0) / DAYS_PER_YEAR / self.lambda).powf(self.kappa)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthHeader {
    pub format: String,
    pub version: u32,
    pub kappa: f64,
    pub link: Vec<f64>,
    /// Upper bound of the uniform censoring draw, `None` when only administrative censoring applies.
    pub censor_max_days: Option<f64>,
    pub target_censoring_rate: f64,
    pub achieved_censoring_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCohort {
    pub cohort: Cohort,
    pub truth_header: TruthHeader,
    pub truth: Vec<PatientTruth>,
    pub warnings: Vec<String>,
}

impl GeneratedCohort {
    pub fn write_truth_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.truth_header)?;
        w.write_all(b"\n")?;
        for t in &self.truth {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_truth_jsonl<R: BufRead>(r: R) -> Result<(TruthHeader, Vec<PatientTruth>)> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Data("empty truth file".into()))??;
        let header: TruthHeader = serde_json::from_str(&first)?;
        if header.format != TRUTH_FORMAT {
            return Err(Error::Data("not a truth sidecar".into()));
        }
        let mut out = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok((header, out))
    }
}

struct Draft {
    severity: f64,
    lambda: f64,
    event_years: f64,
    censor_u: f64,
    latent: Vec<f64>,
    values: Vec<Vec<Option<f64>>>,
}

fn loading(d: usize) -> f64 {
    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
    sign * (0.6 + 0.1 * ((d * 7) % 5) as f64)
}

fn draft_patient(spec: &CohortSpec, grid: &[f64], rates: &[f64], kinds: &[FeatureKind], index: usize) -> Result<Draft> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let censor_u = 1.0 - rng.random::<f64>();
    let severity: f64 = rng.sample(StandardNormal);
    let engagement = spec.engagement_sd * rng.sample::<f64, _>(StandardNormal);
    let (a0, a, rho) = (spec.link[0], spec.link[1], spec.link[2]);
    let lambda = (a0 - a * severity).exp();
    let event_years = Weibull::new(lambda, spec.kappa)
        .map_err(|e| Error::Config(format!("event-time distribution: {e}")))?
        .sample(&mut rng)
        .max(1e-9);
    let event_days = event_years * DAYS_PER_YEAR;

    let n_steps = grid.partition_point(|&g| g < event_days);
    let k0 = grid.partition_point(|&g| g <= 0.0).saturating_sub(1);
    let mut latent = vec![0.0; n_steps];
    if k0 < n_steps {
        latent[k0] = severity;
    }
    let mut walk = vec![0.0; grid.len()];
    for k in (0..k0).rev() {
        let dy = (grid[k + 1] - grid[k]) / DAYS_PER_YEAR;
        let z: f64 = rng.sample(StandardNormal);
        walk[k] = walk[k + 1] - PRE_INDEX_DRIFT * dy + WALK_SD * dy.sqrt() * z;
    }
    for k in k0 + 1..grid.len() {
        let dy = (grid[k] - grid[k - 1]) / DAYS_PER_YEAR;
        let z: f64 = rng.sample(StandardNormal);
        walk[k] = walk[k - 1] + POST_WALK_SD * dy.sqrt() * z;
    }
    for k in 0..n_steps {
        latent[k] = if grid[k] <= 0.0 {
            severity + walk[k]
        } else {
            let frac = (grid[k] / DAYS_PER_YEAR / event_years).min(1.0 - 1e-12);
            severity + rho * -(1.0 - frac).ln() + walk[k]
        };
    }

    let n_features = rates.len();
    let mut values = vec![vec![None; n_features]; n_steps];
    for k in 0..n_steps {
        let (phase, fade) = if grid[k] <= 0.0 {
            (spec.pre_index_phase, 1.0)
        } else {
            (spec.post_index_phase, (-spec.mar_fade_rate * grid[k] / DAYS_PER_YEAR).exp())
        };
        let g = phase * (fade * (engagement - spec.mar_strength * latent[k])).exp();
        for d in 0..n_features {
            let u: f64 = rng.random();
            let noise: f64 = rng.sample(StandardNormal);
            let p_obs = (1.0 - rates[d]).powf(g);
            if u >= p_obs {
                continue;
            }
            match kinds[d].effect_window_days() {
                None => {
                    let x = loading(d) * latent[k] + MEASUREMENT_SD * noise;
                    values[k][d] = Some(10.0 * (d + 1) as f64 + 2.0 * x);
                }
                Some(window) => {
                    for j in k..n_steps {
                        if grid[j] - grid[k] >= window {
                            break;
                        }
                        values[j][d] = Some(1.0);
                    }
                }
            }
        }
    }
    Ok(Draft { severity, lambda, event_years, censor_u, latent, values })
}

fn censored_fraction(drafts: &[Draft], cmax_days: f64, admin: f64) -> f64 {
    let n = drafts
        .iter()
        .filter(|d| (d.censor_u * cmax_days).min(admin) < d.event_years * DAYS_PER_YEAR)
        .count();
    n as f64 / drafts.len() as f64
}

/// Draws a synthetic cohort; deterministic for a fixed spec.
pub fn generate(spec: &CohortSpec) -> Result<GeneratedCohort> {
    spec.validate()?;
    let grid = build_grid(&spec.grid)?;
    let rates = spec.resolved_missing_rates();
    let features = spec.features();
    let kinds: Vec<FeatureKind> = features.iter().map(|f| f.kind).collect();
    let drafts = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| draft_patient(spec, &grid, &rates, &kinds, i))
        .collect::<Result<Vec<_>>>()?;

    let admin = spec.admin_censor_days;
    let mut warnings = Vec::new();
    let floor = censored_fraction(&drafts, f64::INFINITY, admin);
    let cmax = if floor >= spec.censoring_rate {
        None
    } else {
        let (mut lo, mut hi) = (1e-3f64.ln(), 1e7f64.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if censored_fraction(&drafts, mid.exp(), admin) > spec.censoring_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (a, b) = (lo.exp(), hi.exp());
        let fa = censored_fraction(&drafts, a, admin);
        let fb = censored_fraction(&drafts, b, admin);
        Some(if (fa - spec.censoring_rate).abs() < (fb - spec.censoring_rate).abs() { a } else { b })
    };
    let cmax_days = cmax.unwrap_or(f64::INFINITY);
    let achieved = censored_fraction(&drafts, cmax_days, admin);
    if (achieved - spec.censoring_rate).abs() > 0.02 {
        let msg = format!("censoring rate {:.3} unreachable; achieved {achieved:.3}", spec.censoring_rate);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let width = spec.n_patients.saturating_sub(1).to_string().len().max(5);
    let mut patients = Vec::with_capacity(drafts.len());
    let mut truth = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let event_days = d.event_years * DAYS_PER_YEAR;
        let censor_days = (d.censor_u * cmax_days).min(admin);
        let censored = censor_days < event_days;
        let terminal = if censored { censor_days } else { event_days };
        let n = grid.partition_point(|&g| g < terminal);
        let id = format!("P{i:0width$}");
        let mut values = d.values;
        values.truncate(n);
        let mut latent = d.latent;
        latent.truncate(n);
        patients.push(RawPatient { id: id.clone(), terminal_time: terminal, censored, grid: grid[..n].to_vec(), values });
        truth.push(PatientTruth {
            id,
            severity: d.severity,
            kappa: spec.kappa,
            lambda: d.lambda,
            event_time: event_days,
            censor_time: censor_days,
            latent,
        });
    }
    let truth_header = TruthHeader {
        format: TRUTH_FORMAT.into(),
        version: super::COHORT_VERSION,
        kappa: spec.kappa,
        link: spec.link.clone(),
        censor_max_days: cmax,
        target_censoring_rate: spec.censoring_rate,
        achieved_censoring_rate: achieved,
    };
    let cohort = Cohort { features, grid, patients };
    cohort.validate()?;
    Ok(GeneratedCohort { cohort, truth_header, truth, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::c_index;

    fn small(n: usize, seed: u64) -> CohortSpec {
        CohortSpec { n_patients: n, seed, ..CohortSpec::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(50, 3)).unwrap();
        let b = generate(&small(50, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(50, 4)).unwrap();
        assert_ne!(a.cohort.patients, c.cohort.patients);
    }

    #[test]
    fn rejects_bad_observation_settings() {
        for bad in [
            CohortSpec { pre_index_phase: 0.0, ..small(10, 1) },
            CohortSpec { post_index_phase: f64::NAN, ..small(10, 1) },
            CohortSpec { mar_fade_rate: -1.0, ..small(10, 1) },
            CohortSpec { engagement_sd: -0.5, ..small(10, 1) },
        ] {
            assert!(generate(&bad).is_err());
        }
        assert!(generate(&CohortSpec { engagement_sd: 1.0, mar_fade_rate: 0.0, ..small(10, 1) }).is_ok());
    }

    #[test]
    fn zero_missing_rate_observes_everything() {
        let spec = CohortSpec { missing_rates: vec![0.0; 20], ..small(30, 1) };
        let g = generate(&spec).unwrap();
        for p in &g.cohort.patients {
            assert!(p.values.iter().flatten().all(|v| v.is_some()));
        }
    }

    #[test]
    fn terminal_after_last_step_and_positive() {
        let g = generate(&small(300, 9)).unwrap();
        for (p, t) in g.cohort.patients.iter().zip(&g.truth) {
            assert!(p.terminal_time > 0.0);
            assert!(p.grid.last().is_none_or(|&l| p.terminal_time > l));
            assert_eq!(p.censored, t.censor_time < t.event_time);
            assert_eq!(t.latent.len(), p.grid.len());
        }
    }

    #[test]
    fn hits_censoring_target() {
        let spec = CohortSpec { n_patients: 5000, n_numeric: 2, n_binary: 0, seed: 11, ..CohortSpec::default() };
        let g = generate(&spec).unwrap();
        let frac = g.cohort.patients.iter().filter(|p| p.censored).count() as f64 / 5000.0;
        assert!((0.47..=0.51).contains(&frac), "{frac}");
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn unreachable_censoring_warns() {
        let spec = CohortSpec { censoring_rate: 0.0, n_numeric: 1, n_binary: 0, ..small(500, 2) };
        let g = generate(&spec).unwrap();
        assert_eq!(g.warnings.len(), 1);
    }

    fn index_c_index(g: &GeneratedCohort) -> f64 {
        // risk at the index date from the true scale
        let risks: Vec<f64> = g.truth.iter().map(|t| -t.lambda.ln()).collect();
        let rem: Vec<f64> = g.cohort.patients.iter().map(|p| p.terminal_time).collect();
        let cens: Vec<bool> = g.cohort.patients.iter().map(|p| p.censored).collect();
        c_index(&risks, &rem, &cens).unwrap()
    }

    #[test]
    fn no_signal_truth_does_not_discriminate() {
        let spec = CohortSpec { link: vec![0.0, 0.0, 0.0], n_numeric: 1, n_binary: 0, ..small(2000, 5) };
        let c = index_c_index(&generate(&spec).unwrap());
        assert!((c - 0.5).abs() < 0.03, "{c}");
        let strong = index_c_index(&generate(&CohortSpec { n_numeric: 1, n_binary: 0, ..small(2000, 5) }).unwrap());
        assert!(strong > 0.7, "{strong}");
    }

    #[test]
    fn sicker_patients_are_observed_more() {
        let g = generate(&small(600, 8)).unwrap();
        let mut pairs: Vec<(f64, f64)> = g
            .cohort
            .patients
            .iter()
            .zip(&g.truth)
            .map(|(p, t)| {
                let pre: Vec<&Vec<Option<f64>>> =
                    p.values.iter().zip(&p.grid).filter(|(_, &d)| d <= 0.0).map(|(v, _)| v).collect();
                let obs = pre.iter().map(|r| r[..12].iter().filter(|v| v.is_some()).count()).sum::<usize>();
                (t.severity, obs as f64 / (pre.len() * 12) as f64)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let third = pairs.len() / 3;
        let low: f64 = pairs[..third].iter().map(|p| p.1).sum::<f64>() / third as f64;
        let high: f64 = pairs[pairs.len() - third..].iter().map(|p| p.1).sum::<f64>() / third as f64;
        assert!(high > low + 0.05, "{low} {high}");
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let g = generate(&small(5, 1)).unwrap();
        let mut buf = Vec::new();
        g.write_truth_jsonl(&mut buf).unwrap();
        let (h, t) = GeneratedCohort::read_truth_jsonl(&buf[..]).unwrap();
        assert_eq!(h, g.truth_header);
        assert_eq!(t, g.truth);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&small(0, 1)).is_err());
        assert!(generate(&CohortSpec { missing_rates: vec![0.5], ..small(5, 1) }).is_err());
        assert!(generate(&CohortSpec { censoring_rate: 1.5, ..small(5, 1) }).is_err());
    }
}

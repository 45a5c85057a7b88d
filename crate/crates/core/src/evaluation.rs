//! Metrics evaluated at follow-up time points: horizon C-index, L1 error of
//! the predicted median, Parkes serious-error rate, survival at event,
//! decile calibration with Kaplan-Meier observed survival, linear
//! recalibration, missingness/error correlation and trajectory export.
//!
//! Undefined results are `None` (serialized as `null`), never NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamTrajectory;
use crate::scalar::Scalar;
use crate::series::{OutcomeLabel, PatientSeries, DAYS_PER_YEAR};
use crate::weibull::WeibullParams;

pub const HISTOGRAM_BINS: usize = 20;
pub const CALIBRATION_BINS: usize = 10;
pub const MIN_CORRELATION_N: usize = 30;

/// Harrell's C. Pairs `(i, j)` are comparable when `i` had the event and
/// `remaining[i] < remaining[j]`; tied risks count one half.
///
/// `None` for an empty input; 0.5 when no pair is comparable.
pub fn c_index(risks: &[f64], remaining: &[f64], censored: &[bool]) -> Option<f64> {
    assert!(risks.len() == remaining.len() && risks.len() == censored.len(), "c_index inputs differ in length");
    if risks.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..risks.len()).collect();
    order.sort_by(|&a, &b| remaining[a].total_cmp(&remaining[b]));
    let mut score = 0.0;
    let mut pairs = 0u64;
    for (pos, &i) in order.iter().enumerate() {
        if censored[i] {
            continue;
        }
        let start = pos + order[pos..].partition_point(|&j| remaining[j] <= remaining[i]);
        for &j in &order[start..] {
            pairs += 1;
            if risks[i] > risks[j] {
                score += 1.0;
            } else if risks[i] == risks[j] {
                score += 0.5;
            }
        }
    }
    Some(if pairs == 0 { 0.5 } else { score / pairs as f64 })
}

/// Risk score for horizon `h` years: `ln H(h)`, a strictly increasing
/// transform of `1 - S(h)` that does not saturate.
pub fn horizon_risk<T: Scalar>(p: &WeibullParams<T>, horizon_years: f64) -> f64 {
    p.kappa().as_f64() * (horizon_years.ln() - p.lambda().as_f64().ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Some(Self { n, mean, median, sd })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Report {
    /// Absolute error `|median - remaining|` in years.
    pub absolute: Summary,
    /// Signed residuals `median - remaining` that are positive (overestimation).
    pub over: Option<Summary>,
    /// Signed residuals that are negative (underestimation).
    pub under: Option<Summary>,
}

pub fn l1_loss(predicted_median: &[f64], remaining: &[f64]) -> Option<L1Report> {
    assert_eq!(predicted_median.len(), remaining.len());
    let residuals: Vec<f64> = predicted_median.iter().zip(remaining).map(|(p, r)| p - r).collect();
    let abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let over: Vec<f64> = residuals.iter().copied().filter(|r| *r > 0.0).collect();
    let under: Vec<f64> = residuals.iter().copied().filter(|r| *r < 0.0).collect();
    Some(L1Report { absolute: Summary::of(&abs)?, over: Summary::of(&over), under: Summary::of(&under) })
}

/// Fraction of predictions outside `[0.5 target, 2 target]`.
pub fn parkes_proportion(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    assert_eq!(targets.len(), predictions.len());
    if targets.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    if targets.iter().chain(predictions).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("targets and predictions must be positive".into()));
    }
    let serious = targets.iter().zip(predictions).filter(|&(&t, &p)| t > 2.0 * p || t < 0.5 * p).count();
    Ok(serious as f64 / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalHistogram {
    /// Counts over 20 equal bins of `[0, 1]`; 1.0 falls in the last bin.
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
}

/// Histogram of predicted survival evaluated at each patient's own event time.
pub fn survival_at_event(values: &[f64]) -> Option<SurvivalHistogram> {
    if values.is_empty() {
        return None;
    }
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    Some(SurvivalHistogram { counts, values: values.to_vec() })
}

/// Kaplan-Meier survival at `at`; `None` when follow-up ends before `at` with the curve above zero.
pub fn kaplan_meier(times: &[f64], censored: &[bool], at: f64) -> Option<f64> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut s = 1.0;
    let mut at_risk = times.len();
    let mut k = 0;
    while k < order.len() && times[order[k]] <= at {
        let t = times[order[k]];
        let mut events = 0;
        let mut leaving = 0;
        while k < order.len() && times[order[k]] == t {
            events += usize::from(!censored[order[k]]);
            leaving += 1;
            k += 1;
        }
        s *= 1.0 - events as f64 / at_risk as f64;
        at_risk -= leaving;
    }
    if at_risk > 0 || s == 0.0 {
        Some(s)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub n: usize,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

/// Decile bins of predicted survival at `horizon_years`, ascending.
pub fn calibration_bins(predicted: &[f64], remaining: &[f64], censored: &[bool], horizon_years: f64) -> Result<Vec<CalibrationBin>> {
    let n = predicted.len();
    if n < CALIBRATION_BINS {
        return Err(Error::Empty(format!("calibration needs at least {CALIBRATION_BINS} patients, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predicted[a].total_cmp(&predicted[b]));
    let mut out = Vec::with_capacity(CALIBRATION_BINS);
    for b in 0..CALIBRATION_BINS {
        let idx = &order[b * n / CALIBRATION_BINS..(b + 1) * n / CALIBRATION_BINS];
        let mean_predicted = idx.iter().map(|&i| predicted[i]).sum::<f64>() / idx.len() as f64;
        let t: Vec<f64> = idx.iter().map(|&i| remaining[i]).collect();
        let c: Vec<bool> = idx.iter().map(|&i| censored[i]).collect();
        out.push(CalibrationBin { n: idx.len(), mean_predicted, observed: kaplan_meier(&t, &c, horizon_years) });
    }
    Ok(out)
}

/// Mean `|predicted - observed|` over bins with a defined observation.
pub fn calibration_error(bins: &[CalibrationBin]) -> Option<f64> {
    let d: Vec<f64> = bins.iter().filter_map(|b| b.observed.map(|o| (b.mean_predicted - o).abs())).collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationMap {
    pub slope: f64,
    pub intercept: f64,
}

impl RecalibrationMap {
    pub const IDENTITY: Self = Self { slope: 1.0, intercept: 0.0 };

    pub fn apply(&self, p: f64) -> f64 {
        (self.slope * p + self.intercept).clamp(0.0, 1.0)
    }
}

/// Least-squares line of observed on predicted bin means. Degenerate
/// predicted variance gives the identity map and a warning.
pub fn recalibrate_fit(bins: &[CalibrationBin]) -> (RecalibrationMap, Option<String>) {
    let pts: Vec<(f64, f64)> = bins.iter().filter_map(|b| b.observed.map(|o| (b.mean_predicted, o))).collect();
    let n = pts.len() as f64;
    if pts.len() >= 2 {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 1e-14 {
            let slope = sxy / sxx;
            return (RecalibrationMap { slope, intercept: my - slope * mx }, None);
        }
    }
    let msg = "recalibration: fewer than two distinct bin values, using identity".to_string();
    log::warn!("{msg}");
    (RecalibrationMap::IDENTITY, Some(msg))
}

/// Pearson correlation; `None` below 30 pairs or with zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < MIN_CORRELATION_N {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCorrelation {
    pub n: usize,
    /// Against `|ln(target / pmst)|`.
    pub log_ratio: Option<f64>,
    /// Against `|ln((target + 0.1) / (pmst + 0.1))|`.
    pub offset_log_ratio: Option<f64>,
}

/// Correlation of prediction error with a missing-data proportion. Pairs with no proportion are skipped.
pub fn missingness_error_correlation(targets: &[f64], pmst: &[f64], missing: &[Option<f64>]) -> ErrorCorrelation {
    assert!(targets.len() == pmst.len() && targets.len() == missing.len());
    let mut m = Vec::new();
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for ((&t, &p), mp) in targets.iter().zip(pmst).zip(missing) {
        if let Some(v) = mp {
            m.push(*v);
            e1.push((t / p).ln().abs());
            e2.push(((t + 0.1) / (p + 0.1)).ln().abs());
        }
    }
    ErrorCorrelation { n: m.len(), log_ratio: pearson(&m, &e1), offset_log_ratio: pearson(&m, &e2) }
}

/// Normal-approximation 95% interval across models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    let k = values.len();
    if k < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt();
    let half = 1.96 * sd / (k as f64).sqrt();
    Some(MeanCi { mean, lower: mean - half, upper: mean + half })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub day: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub pmst: f64,
    /// Time (years) at which survival falls to 0.25.
    pub q25: f64,
    /// Survival at each export horizon.
    pub survival: Vec<f64>,
    pub hazard_1y: f64,
    pub cumhaz_1y: f64,
    /// `cumhaz_1y` minus its value at the reference step.
    pub cumhaz_1y_adj: f64,
}

/// One record per grid step; the reference step is the last step at or before `reference_day`.
pub fn trajectory_export<T: Scalar>(
    traj: &ParamTrajectory<T>,
    series: &PatientSeries<T>,
    horizons_years: &[f64],
    reference_day: f64,
) -> Result<Vec<TrajectoryRecord>> {
    if traj.len() != series.len() {
        return Err(Error::dim("trajectory and series lengths differ"));
    }
    let r = series
        .step_at(reference_day)
        .ok_or_else(|| Error::Domain(format!("reference day {reference_day} precedes series {}", series.patient_id)))?;
    let one = T::one();
    let base = traj.0[r].cumulative_hazard(one).as_f64();
    traj.iter()
        .zip(&series.grid_times)
        .map(|(p, &day)| {
            let cum = p.cumulative_hazard(one).as_f64();
            Ok(TrajectoryRecord {
                day,
                kappa: p.kappa().as_f64(),
                lambda: p.lambda().as_f64(),
                pmst: p.median().as_f64(),
                q25: p.quantile_time(T::lit(0.25))?.as_f64(),
                survival: horizons_years.iter().map(|&h| p.survival(T::lit(h)).as_f64()).collect(),
                hazard_1y: p.hazard(one).as_f64(),
                cumhaz_1y: cum,
                cumhaz_1y_adj: cum - base,
            })
        })
        .collect()
}

/// Prediction of one patient at one evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub params: WeibullParams<f64>,
    /// Years from the evaluation time to the terminal time.
    pub remaining: f64,
    pub censored: bool,
}

/// Evaluation day snapped to the last grid day at or before `day`.
pub fn snap_to_grid(grid: &[f64], day: f64) -> Option<f64> {
    let i = grid.partition_point(|&g| g <= day);
    (i > 0).then(|| grid[i - 1])
}

/// Prediction at grid day `t` for a patient still at risk there.
pub fn snapshot<T: Scalar>(traj: &ParamTrajectory<T>, series: &PatientSeries<T>, t: f64) -> Option<Snapshot> {
    snapshot_outcome(traj, &series.grid_times, &series.outcome, t)
}

fn snapshot_outcome<T: Scalar>(traj: &ParamTrajectory<T>, grid: &[f64], outcome: &OutcomeLabel, t: f64) -> Option<Snapshot> {
    if !outcome.at_risk(t) {
        return None;
    }
    let k = grid.partition_point(|&g| g <= t).checked_sub(1)?;
    let p = traj.0.get(k)?;
    let params = WeibullParams::new(p.kappa().as_f64(), p.lambda().as_f64()).ok()?;
    Some(Snapshot { params, remaining: outcome.remaining_years(t), censored: outcome.censored })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub lookback_days: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { lookback_days: 90.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeReport {
    /// Requested day.
    pub time: f64,
    /// Grid day actually evaluated; `None` when the request precedes the grid.
    pub grid_time: Option<f64>,
    pub n_at_risk: usize,
    pub n_uncensored: usize,
    /// One entry per horizon.
    pub c_index: Vec<Option<f64>>,
    pub l1: Option<L1Report>,
    pub parkes: Option<f64>,
    pub survival_at_event: Option<SurvivalHistogram>,
    /// Decile bins per horizon; empty when fewer than 10 patients are at risk.
    pub calibration: Vec<Vec<CalibrationBin>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizons_years: Vec<f64>,
    pub times: Vec<TimeReport>,
}

/// Default report times: integer years -3..=4 followed by every post-index grid day.
pub fn default_times(grid: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = (-3..=4).map(|y| y as f64 * DAYS_PER_YEAR).collect();
    t.extend(grid.iter().copied().filter(|&g| g > 0.0));
    t
}

/// Metrics of one time point from snapshots of the at-risk population.
pub fn time_report(time: f64, grid_time: Option<f64>, snaps: &[Snapshot], horizons: &[f64]) -> TimeReport {
    let rem: Vec<f64> = snaps.iter().map(|s| s.remaining).collect();
    let cens: Vec<bool> = snaps.iter().map(|s| s.censored).collect();
    let c_index = horizons
        .iter()
        .map(|&h| {
            let risks: Vec<f64> = snaps.iter().map(|s| horizon_risk(&s.params, h)).collect();
            c_index(&risks, &rem, &cens)
        })
        .collect();
    let unc: Vec<&Snapshot> = snaps.iter().filter(|s| !s.censored).collect();
    let med: Vec<f64> = unc.iter().map(|s| s.params.median()).collect();
    let target: Vec<f64> = unc.iter().map(|s| s.remaining).collect();
    let sae: Vec<f64> = unc.iter().map(|s| s.params.survival(s.remaining)).collect();
    let calibration = if snaps.len() >= CALIBRATION_BINS {
        horizons
            .iter()
            .map(|&h| {
                let pred: Vec<f64> = snaps.iter().map(|s| s.params.survival(h)).collect();
                calibration_bins(&pred, &rem, &cens, h).unwrap_or_default()
            })
            .collect()
    } else {
        Vec::new()
    };
    TimeReport {
        time,
        grid_time,
        n_at_risk: snaps.len(),
        n_uncensored: unc.len(),
        c_index,
        l1: l1_loss(&med, &target),
        parkes: parkes_proportion(&target, &med).ok(),
        survival_at_event: survival_at_event(&sae),
        calibration,
    }
}

/// Full report for one model over `times` (days).
pub fn evaluate<T: Scalar>(
    trajectories: &[ParamTrajectory<T>],
    series: &[PatientSeries<T>],
    grid: &[f64],
    times: &[f64],
    horizons: &[f64],
) -> Result<EvalReport> {
    if trajectories.len() != series.len() {
        return Err(Error::dim("one trajectory per series required"));
    }
    let reports = times
        .iter()
        .map(|&t| {
            let Some(g) = snap_to_grid(grid, t) else {
                return time_report(t, None, &[], horizons);
            };
            let snaps: Vec<Snapshot> = trajectories.iter().zip(series).filter_map(|(tr, s)| snapshot(tr, s, g)).collect();
            time_report(t, Some(g), &snaps, horizons)
        })
        .collect();
    Ok(EvalReport { horizons_years: horizons.to_vec(), times: reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn c_index_fixtures() {
        let rem = [1.0, 2.0, 3.0];
        let unc = [false; 3];
        assert_eq!(c_index(&[3.0, 2.0, 1.0], &rem, &unc), Some(1.0));
        assert_eq!(c_index(&[1.0, 2.0, 3.0], &rem, &unc), Some(0.0));
        assert_eq!(c_index(&[0.7; 3], &rem, &unc), Some(0.5));
        assert_eq!(c_index(&[1.0, 2.0], &[1.0, 2.0], &[true, true]), Some(0.5));
        assert_eq!(c_index(&[], &[], &[]), None);
        // tied times are not comparable
        assert_eq!(c_index(&[1.0, 2.0], &[1.0, 1.0], &[false, false]), Some(0.5));
    }

    #[test]
    fn c_index_random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut total = 0.0;
        for _ in 0..100 {
            let rem: Vec<f64> = (0..200).map(|_| rng.random_range(0.1..5.0)).collect();
            let cens: Vec<bool> = (0..200).map(|_| rng.random_bool(0.4)).collect();
            let risk: Vec<f64> = (0..200).map(|_| rng.random()).collect();
            let c = c_index(&risk, &rem, &cens).unwrap();
            assert!((c - 0.5).abs() < 0.1);
            total += c;
        }
        assert!((total / 100.0 - 0.5).abs() < 0.05);
    }

    /// Direct transcription of the pair definition.
    fn naive_c(r: &[f64], t: &[f64], c: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..r.len() {
            for j in 0..r.len() {
                if !c[i] && t[i] < t[j] {
                    den += 1.0;
                    num += if r[i] > r[j] { 1.0 } else if r[i] == r[j] { 0.5 } else { 0.0 };
                }
            }
        }
        if den == 0.0 { 0.5 } else { num / den }
    }

    proptest! {
        #[test]
        fn c_index_matches_pair_definition_and_monotone_invariance(
            data in prop::collection::vec((0u8..6, 1u8..8, any::<bool>()), 1..40)
        ) {
            let r: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let t: Vec<f64> = data.iter().map(|d| d.1 as f64).collect();
            let c: Vec<bool> = data.iter().map(|d| d.2).collect();
            let got = c_index(&r, &t, &c).unwrap();
            prop_assert!((got - naive_c(&r, &t, &c)).abs() < 1e-12);
            let transformed: Vec<f64> = r.iter().map(|v| (v * 0.5).exp() - 3.0).collect();
            prop_assert_eq!(c_index(&transformed, &t, &c).unwrap(), got);
        }

        #[test]
        fn calibration_bins_are_balanced(n in 10usize..300, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let c: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let bins = calibration_bins(&p, &t, &c, 1.0).unwrap();
            let sizes: Vec<usize> = bins.iter().map(|b| b.n).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(bins.windows(2).all(|w| w[0].mean_predicted <= w[1].mean_predicted));
            for b in &bins {
                if let Some(o) = b.observed { prop_assert!((0.0..=1.0).contains(&o)); }
            }
        }
    }

    #[test]
    fn shared_kappa_ranking_is_horizon_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let snaps: Vec<Snapshot> = (0..300)
            .map(|_| Snapshot {
                params: WeibullParams::new(1.3, rng.random_range(0.2..20.0)).unwrap(),
                remaining: rng.random_range(0.05..6.0),
                censored: rng.random_bool(0.5),
            })
            .collect();
        let rep = time_report(0.0, Some(0.0), &snaps, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(rep.c_index.iter().all(|c| *c == rep.c_index[0]));
    }

    #[test]
    fn l1_and_parkes_fixtures() {
        let r = l1_loss(&[2.0, 3.0], &[1.0, 5.0]).unwrap();
        assert_eq!(r.absolute.mean, 1.5);
        assert_eq!(r.over.unwrap().mean, 1.0);
        assert_eq!(r.under.unwrap().mean, -2.0);
        let z = l1_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((z.absolute.mean, z.absolute.median, z.absolute.sd), (0.0, 0.0, 0.0));
        assert!(z.over.is_none() && z.under.is_none());
        assert!(l1_loss(&[], &[]).is_none());

        assert_eq!(parkes_proportion(&[3.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(parkes_proportion(&[1.0], &[1.5]).unwrap(), 0.0);
        assert_eq!(parkes_proportion(&[3.0, 1.0], &[1.0, 1.5]).unwrap(), 0.5);
        // window edges are inclusive
        assert_eq!(parkes_proportion(&[2.0, 2.0], &[1.0, 4.0]).unwrap(), 0.0);
        assert!(parkes_proportion(&[0.0], &[1.0]).is_err());
        assert!(parkes_proportion(&[], &[]).is_err());
    }

    #[test]
    fn survival_at_event_fixtures() {
        let p = WeibullParams::new(1.7f64, 2.0).unwrap();
        let at_median = p.survival(p.median());
        assert!((at_median - 0.5).abs() < 1e-12);
        let h = survival_at_event(&[at_median, 0.0, 1.0, 0.999]).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[19], 2);
        let big = WeibullParams::new(50.0, 10.0).unwrap();
        assert!(big.survival(1.0) > 0.999_999);
        assert!(survival_at_event(&[]).is_none());
    }

    #[test]
    fn survival_at_event_is_uniform_under_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut v: Vec<f64> = (0..2000)
            .map(|_| {
                let p = WeibullParams::new(rng.random_range(0.5..3.0), rng.random_range(0.5..5.0)).unwrap();
                let t = p.quantile_time(1.0 - rng.random::<f64>()).unwrap_or(1e-9);
                p.survival(t)
            })
            .collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "{ks}");
    }

    #[test]
    fn kaplan_meier_cases() {
        assert_eq!(kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[false; 4], 2.5), Some(0.5));
        // censored at 1.5 leaves 2 at risk for the event at 2
        let s = kaplan_meier(&[1.0, 1.5, 2.0, 3.0], &[false, true, false, false], 2.5).unwrap();
        assert!((s - 0.75 * 0.5).abs() < 1e-15);
        assert_eq!(kaplan_meier(&[0.5, 0.8], &[true, true], 1.0), None);
        assert_eq!(kaplan_meier(&[0.5, 0.8], &[false, false], 1.0), Some(0.0));
    }

    fn exp_draw(rng: &mut ChaCha8Rng, s_h: f64, h: f64) -> f64 {
        // exponential time with survival s_h at h
        let rate = -s_h.ln() / h;
        -(1.0 - rng.random::<f64>()).ln() / rate
    }

    #[test]
    fn calibration_under_truth_and_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 5000;
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let t: Vec<f64> = truth.iter().map(|&s| exp_draw(&mut rng, s, 1.0)).collect();
        let c = vec![false; n];
        let bins = calibration_bins(&truth, &t, &c, 1.0).unwrap();
        // per-bin sampling error at n = 500 is ~0.022, so a 0.05 bound is a ~2.3 sigma event per bin;
        // check each bin at 3 binomial standard errors and the bin average at 0.05
        for b in &bins {
            let o = b.observed.unwrap();
            let se = (o * (1.0 - o) / b.n as f64).sqrt();
            assert!((b.mean_predicted - o).abs() < 3.0 * se, "{bins:?}");
        }
        assert!(calibration_error(&bins).unwrap() < 0.05);
        let squashed: Vec<f64> = truth.iter().map(|s| s * s).collect();
        let bins = calibration_bins(&squashed, &t, &c, 1.0).unwrap();
        for b in &bins[..5] {
            assert!(b.mean_predicted < b.observed.unwrap());
        }

        let same = calibration_bins(&[0.4; 20], &[2.0; 20], &[false; 20], 1.0).unwrap();
        assert!(same.iter().all(|b| b.mean_predicted == 0.4 && b.observed == Some(1.0)));
        assert!(calibration_bins(&[0.5; 9], &[1.0; 9], &[false; 9], 1.0).is_err());
    }

    #[test]
    fn recalibration_fixtures() {
        let bins = |f: &dyn Fn(f64) -> f64| {
            (1..=10)
                .map(|i| {
                    let p = i as f64 / 20.0;
                    CalibrationBin { n: 5, mean_predicted: p, observed: Some(f(p)) }
                })
                .collect::<Vec<_>>()
        };
        let (m, w) = recalibrate_fit(&bins(&|p| p));
        assert!(w.is_none());
        assert!((m.slope - 1.0).abs() < 1e-10 && m.intercept.abs() < 1e-10);
        let (m, _) = recalibrate_fit(&bins(&|p| 2.0 * p - 0.1));
        assert!((m.slope - 2.0).abs() < 1e-12 && (m.intercept + 0.1).abs() < 1e-12);
        assert_eq!(m.apply(0.9), 1.0);
        assert_eq!(m.apply(0.0), 0.0);
        let flat = vec![CalibrationBin { n: 3, mean_predicted: 0.3, observed: Some(0.5) }; 10];
        let (m, w) = recalibrate_fit(&flat);
        assert_eq!(m, RecalibrationMap::IDENTITY);
        assert!(w.is_some());
    }

    #[test]
    fn correlation_guards() {
        assert_eq!(pearson(&[1.0, 2.0], &[2.0, 4.0]), None);
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 40]), None);
        let r = missingness_error_correlation(&[1.0, 2.0], &[1.0, 1.0], &[Some(0.1), Some(0.2)]);
        assert_eq!(r.n, 2);
        assert!(r.log_ratio.is_none());
    }

    #[test]
    fn mean_ci_requires_two_models() {
        assert!(mean_ci(&[0.7]).is_none());
        let ci = mean_ci(&[0.6, 0.7, 0.8]).unwrap();
        assert!((ci.mean - 0.7).abs() < 1e-12);
        assert!((ci.upper - ci.mean - 1.96 * 0.1 / 3f64.sqrt()).abs() < 1e-12);
    }

    fn constant_series(n: usize) -> (ParamTrajectory<f64>, PatientSeries<f64>) {
        let grid: Vec<f64> = (0..n).map(|i| -1095.0 + 30.0 * i as f64).collect();
        let s = PatientSeries::from_dense(
            "z",
            grid,
            &vec![vec![0.0]; n],
            &vec![vec![true]; n],
            OutcomeLabel::new(2000.0, false).unwrap(),
        )
        .unwrap();
        (ParamTrajectory(vec![WeibullParams::new(1.0, 2.0).unwrap(); n]), s)
    }

    #[test]
    fn trajectory_export_fixtures() {
        let (tr, s) = constant_series(40);
        let recs = trajectory_export(&tr, &s, &[1.0, 2.0, 3.0, 4.0, 5.0], -1095.0).unwrap();
        assert_eq!(recs.len(), 40);
        assert!(recs.iter().all(|r| r.cumhaz_1y_adj == 0.0 && r.cumhaz_1y == 0.5));
        assert!((recs[0].survival[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert!(trajectory_export(&tr, &s, &[1.0], -2000.0).is_err());
    }

    #[test]
    fn evaluate_marks_times_before_grid() {
        let (tr, s) = constant_series(40);
        let rep = evaluate(&[tr], &[s.clone()], &s.grid_times, &[-5000.0, 0.0], &[1.0]).unwrap();
        assert_eq!(rep.times[0].grid_time, None);
        assert_eq!(rep.times[0].c_index, vec![None]);
        assert_eq!(rep.times[1].n_at_risk, 1);
        assert_eq!(rep.times[1].grid_time, Some(-15.0));
        assert_eq!(snap_to_grid(&[0.0, 30.0], 29.0), Some(0.0));
    }
}

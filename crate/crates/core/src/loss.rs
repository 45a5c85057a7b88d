//! Censoring-aware per-timestep loss.
//!
//! Uncensored steps pay `-ln f(r) + (ln(1+r) - ln(1+median))^2`, censored
//! steps pay `-ln(1 - F(r))`, where `r` is the remaining time in years. Each
//! term is scaled by a patient weight and the batch loss is the flat mean
//! over every (patient, timestep) pair.

use crate::error::{Error, Result};
use crate::model::ParamTrajectory;
use crate::scalar::Scalar;
use crate::series::{OutcomeLabel, PatientSeries};
use crate::weibull::{ParamGrad, WeibullParams};

/// Censored patients are weighted by censoring time over this many years.
pub const CENSOR_WEIGHT_YEARS: f64 = 5.0;

/// 1 for an observed event, `t_c / 5` (years) for a censored patient.
pub fn patient_weight(outcome: &OutcomeLabel) -> f64 {
    if outcome.censored {
        outcome.terminal_years() / CENSOR_WEIGHT_YEARS
    } else {
        1.0
    }
}

/// Components of one timestep's loss plus its gradient w.r.t. `(kappa, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub neglog: T,
    pub msle: T,
    pub censored_tail: T,
    pub weight: T,
    pub total: T,
    pub grad: ParamGrad<T>,
}

impl<T: Scalar> LossBreakdown<T> {
    /// Multiplies `weight`, `total` and `grad` by `w`.
    pub fn weighted(self, w: T) -> Self {
        Self { weight: self.weight * w, total: self.total * w, grad: self.grad.scale(w), ..self }
    }
}

/// Unweighted loss at one step; `remaining` is in years and must be positive.
pub fn timestep_loss<T: Scalar>(p: &WeibullParams<T>, remaining: T, censored: bool) -> Result<LossBreakdown<T>> {
    if !(remaining > T::zero()) || !remaining.is_finite() {
        return Err(Error::Domain(format!("remaining time must be positive, got {remaining}")));
    }
    let zero = T::zero();
    if censored {
        let (tail, g) = p.censored_tail_grad(remaining);
        return Ok(LossBreakdown { neglog: zero, msle: zero, censored_tail: tail, weight: T::one(), total: tail, grad: g });
    }
    let (lp, g_lp) = p.log_pdf_grad(remaining);
    let (m, g_m) = p.median_grad();
    let diff = remaining.ln_1p() - m.ln_1p();
    let msle = diff * diff;
    let dmsle_dm = -T::lit(2.0) * diff / (T::one() + m);
    let grad = g_lp.scale(-T::one()) + g_m.scale(dmsle_dm);
    Ok(LossBreakdown { neglog: -lp, msle, censored_tail: zero, weight: T::one(), total: msle - lp, grad })
}

/// Weighted loss sum and per-step gradients for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientLoss<T> {
    pub sum: T,
    pub steps: usize,
    /// Gradient of `sum` w.r.t. each step's parameters.
    pub grads: Vec<ParamGrad<T>>,
}

/// Weighted per-step losses of one patient, summed.
pub fn patient_loss<T: Scalar>(traj: &ParamTrajectory<T>, series: &PatientSeries<T>) -> Result<PatientLoss<T>> {
    if traj.len() != series.len() {
        return Err(Error::dim(format!(
            "trajectory has {} steps, series {} has {}",
            traj.len(),
            series.patient_id,
            series.len()
        )));
    }
    let w = T::lit(patient_weight(&series.outcome));
    let mut sum = T::zero();
    let mut grads = Vec::with_capacity(traj.len());
    for (p, &day) in traj.iter().zip(&series.grid_times) {
        let r = T::lit(series.outcome.remaining_years(day));
        let b = timestep_loss(p, r, series.outcome.censored)?.weighted(w);
        sum = sum + b.total;
        grads.push(b.grad);
    }
    if !sum.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss for {}", series.patient_id)));
    }
    Ok(PatientLoss { sum, steps: traj.len(), grads })
}

/// Flat mean over every step of every patient, with gradients of the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss<T> {
    pub mean: T,
    pub steps: usize,
    pub grads: Vec<Vec<ParamGrad<T>>>,
}

pub fn batch_loss<T: Scalar>(items: &[(&ParamTrajectory<T>, &PatientSeries<T>)]) -> Result<BatchLoss<T>> {
    let per = items.iter().map(|(t, s)| patient_loss(t, s)).collect::<Result<Vec<_>>>()?;
    let steps: usize = per.iter().map(|p| p.steps).sum();
    if steps == 0 {
        return Err(Error::Empty("batch has no timesteps".into()));
    }
    let n = T::lit(steps as f64);
    let mean = per.iter().fold(T::zero(), |acc, p| acc + p.sum) / n;
    let grads = per
        .into_iter()
        .map(|p| p.grads.into_iter().map(|g| g.scale(T::one() / n)).collect())
        .collect();
    Ok(BatchLoss { mean, steps, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wb(k: f64, l: f64) -> WeibullParams<f64> {
        WeibullParams::new(k, l).unwrap()
    }

    #[test]
    fn weights() {
        assert_eq!(patient_weight(&OutcomeLabel::new(400.0, false).unwrap()), 1.0);
        let c = OutcomeLabel::new(2.5 * 365.25, true).unwrap();
        assert!((patient_weight(&c) - 0.5).abs() < 1e-15);
        let tiny = OutcomeLabel::new(1e-9, true).unwrap();
        assert!(patient_weight(&tiny) < 1e-11);
    }

    #[test]
    fn worked_examples() {
        let c = timestep_loss(&wb(1.0, 1.0), 2.0, true).unwrap();
        assert!((c.censored_tail - 2.0).abs() < 1e-15);
        assert_eq!(c.total, c.censored_tail);

        let m1 = timestep_loss(&wb(1.0, 1.0 / 2f64.ln()), 1.0, false).unwrap();
        assert!(m1.msle < 1e-30);

        // independent scalar evaluation of density and median
        let (k, l, r): (f64, f64, f64) = (2.0, 1.0, 1.0);
        let pdf = k / l * (r / l).powf(k - 1.0) * (-(r / l).powf(k)).exp();
        let median = l * 2f64.ln().powf(1.0 / k);
        let want_msle = ((1.0 + r).ln() - (1.0 + median).ln()).powi(2);
        let u = timestep_loss(&wb(k, l), r, false).unwrap();
        assert!((u.neglog - (1.0 - 2f64.ln())).abs() < 1e-12);
        assert!((u.neglog + pdf.ln()).abs() < 1e-12);
        assert!((u.msle - want_msle).abs() < 1e-12);
        assert!((u.total - u.neglog - u.msle).abs() < 1e-15);

        assert!(timestep_loss(&wb(1.0, 1.0), 0.0, false).is_err());
        assert!(timestep_loss(&wb(1.0, 1.0), -1.0, true).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let k = 10f64.powf(rng.random_range(-0.7..0.7));
            let l = 10f64.powf(rng.random_range(-0.7..0.7));
            let r = 10f64.powf(rng.random_range(-1.5..0.8));
            let censored = rng.random_bool(0.5);
            let g = timestep_loss(&wb(k, l), r, censored).unwrap().grad;
            let f = |k: f64, l: f64| timestep_loss(&wb(k, l), r, censored).unwrap().total;
            let hk = 1e-6 * k;
            let hl = 1e-6 * l;
            let fk = (f(k + hk, l) - f(k - hk, l)) / (2.0 * hk);
            let fl = (f(k, l + hl) - f(k, l - hl)) / (2.0 * hl);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(rel(g.d_kappa, fk) < 1e-5, "dk {} vs {fk} at {k} {l} {r} {censored}", g.d_kappa);
            assert!(rel(g.d_lambda, fl) < 1e-5, "dl {} vs {fl} at {k} {l} {r} {censored}", g.d_lambda);
        }
    }

    #[test]
    fn grid_minimum_puts_median_near_remaining_time() {
        for &r in &[0.5, 1.0, 3.0] {
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..200 {
                let k = 0.2 + 49.8 * i as f64 / 199.0;
                for j in 0..200 {
                    let l = r * (0.25 + 1.75 * j as f64 / 199.0);
                    let v = timestep_loss(&wb(k, l), r, false).unwrap().total;
                    if v < best.0 {
                        best = (v, k, l);
                    }
                }
            }
            let med = wb(best.1, best.2).median();
            assert!((med - r).abs() / r < 0.02, "r={r} median={med}");
        }
    }

    #[test]
    fn all_censored_fit_collapses_kappa() {
        // head-only fit through the same softplus link the model uses
        let sp = |a: f64| crate::scalar::softplus(a) + crate::model::PARAM_EPS;
        let sg = crate::scalar::sigmoid::<f64>;
        // censoring horizons well beyond the initial scale
        let remaining = [3.0, 5.0, 8.0];
        let (mut a0, mut a1) = (0.5f64, 0.0f64);
        let mut kappas = Vec::new();
        for _ in 0..20_000 {
            let p = wb(sp(a0), sp(a1));
            let mut gk = 0.0;
            let mut gl = 0.0;
            for &r in &remaining {
                let g = timestep_loss(&p, r, true).unwrap().grad;
                gk += g.d_kappa;
                gl += g.d_lambda;
            }
            a0 -= 0.05 * gk * sg(a0);
            a1 -= 0.05 * gl * sg(a1);
            kappas.push(p.kappa());
        }
        assert!(kappas.windows(2).all(|w| w[1] <= w[0]));
        assert!(*kappas.last().unwrap() < 0.005);
    }

    #[test]
    fn censored_tail_decreases_with_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = wb(10f64.powf(rng.random_range(-2.0..2.0)), 10f64.powf(rng.random_range(-2.0..2.0)));
            let c = 10f64.powf(rng.random_range(-2.0..1.0));
            let g = timestep_loss(&p, c, true).unwrap().grad;
            assert!(g.d_lambda < 0.0 || p.cumulative_hazard(c) == 0.0);
        }
    }

    fn series(id: &str, grid: Vec<f64>, terminal: f64, censored: bool) -> PatientSeries<f64> {
        let n = grid.len();
        PatientSeries::from_dense(id, grid, &vec![vec![0.0]; n], &vec![vec![true]; n], OutcomeLabel::new(terminal, censored).unwrap())
            .unwrap()
    }

    #[test]
    fn batch_mean_is_flat_over_timesteps() {
        let a = series("a", vec![0.0, 30.0], 365.25, false);
        let b = series("b", vec![-30.0, 0.0, 30.0], 730.5, true);
        let c = series("c", vec![0.0], 100.0, false);
        let ta = ParamTrajectory(vec![wb(1.2, 1.0), wb(1.5, 0.8)]);
        let tb = ParamTrajectory(vec![wb(0.9, 2.0), wb(1.0, 2.0), wb(1.1, 2.5)]);
        let tc = ParamTrajectory(vec![wb(2.0, 0.5)]);

        // hand summation straight from the definitions
        let neglog = |k: f64, l: f64, r: f64| -((k / l) * (r / l).powf(k - 1.0) * (-(r / l).powf(k)).exp()).ln();
        let msle = |k: f64, l: f64, r: f64| ((1.0 + r).ln() - (1.0 + l * 2f64.ln().powf(1.0 / k)).ln()).powi(2);
        let unc = |k, l, r| neglog(k, l, r) + msle(k, l, r);
        let y = 365.25;
        let mut total = unc(1.2, 1.0, 365.25 / y) + unc(1.5, 0.8, 335.25 / y);
        let wb_ = 730.5 / y / 5.0;
        total += wb_ * (760.5 / y / 2.0f64).powf(0.9);
        total += wb_ * (730.5 / y / 2.0);
        total += wb_ * (700.5 / y / 2.5f64).powf(1.1);
        total += unc(2.0, 0.5, 100.0 / y);
        let want = total / 6.0;

        let got = batch_loss(&[(&ta, &a), (&tb, &b), (&tc, &c)]).unwrap();
        assert_eq!(got.steps, 6);
        assert!((got.mean - want).abs() < 1e-12, "{} vs {want}", got.mean);

        let single = batch_loss(&[(&tc, &c)]).unwrap();
        assert!((single.mean - timestep_loss(&tc.0[0], 100.0 / y, false).unwrap().total).abs() < 1e-15);

        let dup = batch_loss(&[(&ta, &a), (&ta, &a)]).unwrap();
        let one = batch_loss(&[(&ta, &a)]).unwrap();
        assert!((dup.mean - one.mean).abs() < 1e-15);

        assert!(batch_loss::<f64>(&[]).is_err());
        assert!(batch_loss(&[(&tc, &a)]).is_err());
    }
}

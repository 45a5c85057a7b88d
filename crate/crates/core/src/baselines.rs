//! Static Weibull accelerated-failure-time baseline fitted per snapshot time:
//! `ln λ = β·x`, common shape `κ = exp(θ)`, maximum likelihood by damped
//! Newton iterations with step halving.
//!
//! Snapshot covariates are the patient's inputs at the evaluation grid step
//! after carrying values forward for at most a year; anything older falls
//! back to the imputation mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::lvcf;
use crate::error::{Error, Result};
use crate::evaluation::Snapshot;
use crate::scalar::Scalar;
use crate::series::PatientSeries;
use crate::weibull::WeibullParams;

pub use crate::trainer::gru_lvcf_variant;

/// Longest carry-forward used for snapshot covariates.
pub const SNAPSHOT_CARRY_DAYS: f64 = 365.0;
/// Residual share below which a column counts as collinear with earlier ones.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AftConfig {
    pub max_iter: usize,
    /// Convergence threshold on the gradient norm of the mean NLL.
    pub tol: f64,
    /// Covariates missing (after carry-forward) in more than this share of snapshots are excluded.
    pub max_missing_fraction: f64,
}

impl Default for AftConfig {
    fn default() -> Self {
        Self { max_iter: 5000, tol: 1e-6, max_missing_fraction: 0.995 }
    }
}

/// Fitted regression on an explicit design (intercept excluded from `x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Columns of `x` that entered the model.
    pub columns: Vec<usize>,
    /// Intercept first, then one coefficient per retained column.
    pub beta: Vec<f64>,
    pub log_kappa: f64,
    /// Standard errors of `beta` then `log_kappa`; `None` when the information matrix is singular.
    pub se: Option<Vec<f64>>,
    pub mean_nll: f64,
    /// Mean NLL after every accepted step, starting from the initial point.
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl RegressionFit {
    pub fn params(&self, x: &[f64]) -> Result<WeibullParams<f64>> {
        if self.columns.iter().any(|&c| x.get(c).is_none_or(|v| !v.is_finite())) {
            return Err(Error::Data("covariates missing or non-finite".into()));
        }
        let ln_lambda = self.beta[0] + self.columns.iter().zip(&self.beta[1..]).map(|(&c, b)| b * x[c]).sum::<f64>();
        WeibullParams::new(self.log_kappa.exp(), ln_lambda.exp())
    }
}

/// Mean NLL, gradient and Hessian over `θ = (β, ln κ)`; `rows` include the intercept.
fn objective(rows: &[Vec<f64>], tau: &[f64], censored: &[bool], theta: &[f64], hessian: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = theta.len() - 1;
    let ln_k = theta[p];
    let k = ln_k.exp();
    let n = rows.len() as f64;
    let mut f = 0.0;
    let mut g = DVector::zeros(p + 1);
    let mut h = DMatrix::zeros(if hessian { p + 1 } else { 0 }, if hessian { p + 1 } else { 0 });
    for ((x, &t), &c) in rows.iter().zip(tau).zip(censored) {
        let u: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        let w = t.ln() - u;
        let kw = k * w;
        let big_h = kw.exp();
        let (du, dth, duu, duth, dthth) = if c {
            (-k * big_h, kw * big_h, k * k * big_h, -k * big_h * (1.0 + kw), kw * big_h * (1.0 + kw))
        } else {
            f += -ln_k + t.ln() - kw;
            (
                k * (1.0 - big_h),
                -1.0 + kw * (big_h - 1.0),
                k * k * big_h,
                k * (1.0 - big_h - kw * big_h),
                kw * (big_h - 1.0 + kw * big_h),
            )
        };
        f += big_h;
        for i in 0..p {
            g[i] += du * x[i];
        }
        g[p] += dth;
        if hessian {
            for i in 0..p {
                for j in 0..=i {
                    h[(i, j)] += duu * x[i] * x[j];
                }
                h[(p, i)] += duth * x[i];
            }
            h[(p, p)] += dthth;
        }
    }
    if hessian {
        for i in 0..=p {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        h /= n;
    }
    (f / n, g / n, h)
}

/// Greedy Gram-Schmidt over centred columns; drops constant and linearly dependent ones.
fn independent_columns(x: &[Vec<f64>]) -> Vec<usize> {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..d {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let mut v: Vec<f64> = x.iter().map(|r| r[j] - mean).collect();
        let norm0: f64 = v.iter().map(|a| a * a).sum();
        let raw: f64 = x.iter().map(|r| r[j] * r[j]).sum::<f64>().max(f64::MIN_POSITIVE);
        if norm0 <= COLLINEAR_TOL * raw {
            continue;
        }
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= proj * c);
        }
        let norm: f64 = v.iter().map(|a| a * a).sum();
        if norm <= COLLINEAR_TOL * norm0 {
            continue;
        }
        let s = norm.sqrt();
        basis.push(v.into_iter().map(|a| a / s).collect());
        keep.push(j);
    }
    keep
}

/// Maximum-likelihood Weibull regression of `tau` (years, positive) on `x`.
pub fn fit_weibull_regression(x: &[Vec<f64>], tau: &[f64], censored: &[bool], cfg: &AftConfig) -> Result<RegressionFit> {
    if x.len() != tau.len() || x.len() != censored.len() {
        return Err(Error::dim("design, times and flags differ in length"));
    }
    if x.is_empty() {
        return Err(Error::Empty("no patients to fit".into()));
    }
    if censored.iter().all(|&c| c) {
        return Err(Error::Data("every patient is censored; the likelihood has no maximum".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::dim("ragged design matrix"));
    }
    if x.len() < d + 2 {
        return Err(Error::Data(format!("{} patients for {d} covariates", x.len())));
    }
    if tau.iter().any(|t| !(t.is_finite() && *t > 0.0)) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite covariate or non-positive time".into()));
    }
    let columns = independent_columns(x);
    if columns.len() < d {
        log::info!("dropped {} constant or collinear covariates", d - columns.len());
    }
    let rows: Vec<Vec<f64>> =
        x.iter().map(|r| std::iter::once(1.0).chain(columns.iter().map(|&c| r[c])).collect()).collect();
    let p = columns.len() + 1;

    let mut theta = vec![0.0; p + 1];
    theta[0] = tau.iter().map(|t| t.ln()).sum::<f64>() / tau.len() as f64;
    let (mut f, mut g, mut h) = objective(&rows, tau, censored, &theta, true);
    let mut nll_trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let mut damping = 0.0;
    while iterations < cfg.max_iter {
        if g.norm() < cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut a = h.clone();
        for i in 0..=p {
            a[(i, i)] += damping;
        }
        let Some(chol) = a.cholesky() else {
            damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
            if damping > 1e12 {
                break;
            }
            continue;
        };
        let dir = -chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            let (ft, _, _) = objective(&rows, tau, censored, &trial, false);
            if ft.is_finite() && ft <= f {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // no descent along the damped direction: lean towards gradient descent
            damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
            if damping > 1e12 {
                break;
            }
            continue;
        };
        theta = next;
        (f, g, h) = objective(&rows, tau, censored, &theta, true);
        nll_trace.push(f);
        damping *= 0.1;
        if damping < 1e-12 {
            damping = 0.0;
        }
    }
    if !converged {
        log::warn!("Weibull regression stopped after {iterations} iterations, gradient norm {:.3e}", g.norm());
    }
    let n = rows.len() as f64;
    let se = (h * n)
        .try_inverse()
        .map(|cov| (0..=p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect::<Vec<f64>>())
        .filter(|s| s.iter().all(|v| v.is_finite()));
    Ok(RegressionFit {
        columns,
        log_kappa: theta[p],
        beta: theta[..p].to_vec(),
        se,
        mean_nll: f,
        nll_trace,
        iterations,
        converged,
    })
}

/// Baseline fitted at one evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AftModel {
    /// Grid day the snapshot is taken at.
    pub grid_time: f64,
    pub n_train: usize,
    pub fit: RegressionFit,
}

/// Covariates at grid day `t` for a patient at risk there, with the
/// per-feature flag "observed or carried within a year".
pub fn snapshot_covariates<T: Scalar>(series: &PatientSeries<T>, t: f64, means: &[T]) -> Result<Option<(Vec<f64>, Vec<bool>)>> {
    if !series.outcome.at_risk(t) {
        return Ok(None);
    }
    let Some(k) = series.grid_times.partition_point(|&g| g <= t).checked_sub(1) else {
        return Ok(None);
    };
    let filled = lvcf(series, Some(SNAPSHOT_CARRY_DAYS), means)?;
    let obs = &filled.observations[k];
    Ok(Some((obs.x.iter().map(|v| v.as_f64()).collect(), (0..obs.n_features()).map(|d| obs.observed(d)).collect())))
}

/// Fits the baseline on the patients of `train` at risk at grid day `t`.
pub fn aft_fit<T: Scalar>(train: &[PatientSeries<T>], means: &[T], t: f64, cfg: &AftConfig) -> Result<AftModel> {
    let mut x = Vec::new();
    let mut seen = vec![0usize; means.len()];
    let mut tau = Vec::new();
    let mut cens = Vec::new();
    for s in train {
        if let Some((row, obs)) = snapshot_covariates(s, t, means)? {
            seen.iter_mut().zip(&obs).for_each(|(n, &o)| *n += o as usize);
            x.push(row);
            tau.push(s.outcome.remaining_years(t));
            cens.push(s.outcome.censored);
        }
    }
    let n = x.len().max(1) as f64;
    let excluded: Vec<usize> =
        (0..means.len()).filter(|&d| 1.0 - seen[d] as f64 / n > cfg.max_missing_fraction).collect();
    if !excluded.is_empty() {
        log::info!("{} covariates exceed the missingness threshold at day {t}", excluded.len());
        // constant columns are removed by the collinearity pre-drop
        for row in &mut x {
            excluded.iter().for_each(|&d| row[d] = 0.0);
        }
    }
    let fit = fit_weibull_regression(&x, &tau, &cens, cfg)?;
    Ok(AftModel { grid_time: t, n_train: x.len(), fit })
}

/// Weibull parameters for one covariate vector.
pub fn aft_predict(model: &AftModel, features: &[f64]) -> Result<WeibullParams<f64>> {
    model.fit.params(features)
}

impl AftModel {
    /// Snapshot prediction for a patient at risk at this model's grid day.
    pub fn predict<T: Scalar>(&self, series: &PatientSeries<T>, means: &[T]) -> Result<Option<Snapshot>> {
        let Some((row, _)) = snapshot_covariates(series, self.grid_time, means)? else {
            return Ok(None);
        };
        Ok(Some(Snapshot {
            params: aft_predict(self, &row)?,
            remaining: series.outcome.remaining_years(self.grid_time),
            censored: series.outcome.censored,
        }))
    }
}

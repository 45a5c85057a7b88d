//! Closed-form two-parameter Weibull kernel.
//!
//! Shape `kappa` is dimensionless, scale `lambda` and all times are in years.
//! Powers `(tau / lambda)^kappa` are evaluated as `exp(kappa * (ln tau - ln lambda))`
//! so every quantity stays finite for `kappa, lambda` in `[1e-6, 1e6]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to event times before taking logarithms (years).
pub const TAU_EPS: f64 = 1e-6;

/// Partial derivatives of a scalar with respect to `(kappa, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamGrad<T> {
    pub d_kappa: T,
    pub d_lambda: T,
}

impl<T: Scalar> ParamGrad<T> {
    pub fn zero() -> Self {
        Self { d_kappa: T::zero(), d_lambda: T::zero() }
    }

    pub fn scale(self, s: T) -> Self {
        Self { d_kappa: self.d_kappa * s, d_lambda: self.d_lambda * s }
    }
}

impl<T: Scalar> std::ops::Add for ParamGrad<T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self { d_kappa: self.d_kappa + rhs.d_kappa, d_lambda: self.d_lambda + rhs.d_lambda }
    }
}

/// Shape/scale pair of a Weibull distribution over remaining time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams<T> {
    kappa: T,
    lambda: T,
}

impl<T: Scalar> WeibullParams<T> {
    /// Validates and builds the pair; both entries must be finite and positive.
    pub fn new(kappa: T, lambda: T) -> Result<Self> {
        if !(kappa.is_finite() && kappa > T::zero()) {
            return Err(Error::InvalidParameter(format!("kappa must be finite and > 0, got {kappa}")));
        }
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
        Ok(Self { kappa, lambda })
    }

    #[inline]
    pub fn kappa(&self) -> T {
        self.kappa
    }

    #[inline]
    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// `ln tau - ln lambda` with `tau` floored at [`TAU_EPS`].
    #[inline]
    fn log_ratio(&self, tau: T) -> T {
        debug_assert!(!(tau < T::zero()), "negative time {tau}");
        tau.max(T::lit(TAU_EPS)).ln() - self.lambda.ln()
    }

    /// `(tau / lambda)^kappa`, exactly zero at `tau == 0`.
    #[inline]
    pub fn cumulative_hazard(&self, tau: T) -> T {
        debug_assert!(!(tau < T::zero()), "negative time {tau}");
        if tau <= T::zero() {
            return T::zero();
        }
        (self.kappa * (tau.ln() - self.lambda.ln())).exp()
    }

    /// `S(tau) = exp(-(tau / lambda)^kappa)`.
    #[inline]
    pub fn survival(&self, tau: T) -> T {
        (-self.cumulative_hazard(tau)).exp()
    }

    /// Log density `ln f(tau)`; `tau` is floored at [`TAU_EPS`].
    pub fn log_pdf(&self, tau: T) -> T {
        let z = self.log_ratio(tau);
        let u = (self.kappa * z).exp();
        self.kappa.ln() - self.lambda.ln() + (self.kappa - T::one()) * z - u
    }

    /// Instantaneous hazard `(kappa / lambda) (tau / lambda)^(kappa - 1)`.
    pub fn hazard(&self, tau: T) -> T {
        let z = self.log_ratio(tau);
        (self.kappa.ln() - self.lambda.ln() + (self.kappa - T::one()) * z).exp()
    }

    /// Time at which the survival curve crosses `s`.
    pub fn quantile_time(&self, s: T) -> Result<T> {
        if !(s > T::zero() && s < T::one()) {
            return Err(Error::Domain(format!("survival level must lie in (0, 1), got {s}")));
        }
        Ok(self.quantile_unchecked(s))
    }

    #[inline]
    fn quantile_unchecked(&self, s: T) -> T {
        self.lambda * ((-s.ln()).ln() / self.kappa).exp()
    }

    /// Predicted median survival time.
    #[inline]
    pub fn median(&self) -> T {
        self.quantile_unchecked(T::lit(0.5))
    }

    /// `-ln(F(inf) - F(c))`, the penalty for a subject censored `c` years from now.
    #[inline]
    pub fn censored_neg_log_tail(&self, c: T) -> T {
        self.cumulative_hazard(c)
    }

    /// `-ln(F(upper) - F(c))` for a finite upper bound on the event time.
    pub fn censored_neg_log_tail_bounded(&self, c: T, upper: T) -> Result<T> {
        if !(upper > c) {
            return Err(Error::Domain(format!("upper bound {upper} must exceed censoring time {c}")));
        }
        let uc = self.cumulative_hazard(c);
        let uy = self.cumulative_hazard(upper);
        // S(c) - S(y) = S(c) * (1 - exp(uc - uy))
        Ok(uc - (-(uc - uy).exp_m1()).ln())
    }

    /// Value and gradient of [`log_pdf`](Self::log_pdf).
    pub fn log_pdf_grad(&self, tau: T) -> (T, ParamGrad<T>) {
        let (k, l) = (self.kappa, self.lambda);
        let z = self.log_ratio(tau);
        let u = (k * z).exp();
        let value = k.ln() - l.ln() + (k - T::one()) * z - u;
        let grad = ParamGrad { d_kappa: k.recip() + z - u * z, d_lambda: k * (u - T::one()) / l };
        (value, grad)
    }

    /// Value and gradient of [`censored_neg_log_tail`](Self::censored_neg_log_tail).
    pub fn censored_tail_grad(&self, c: T) -> (T, ParamGrad<T>) {
        if c <= T::zero() {
            return (T::zero(), ParamGrad::zero());
        }
        let z = c.ln() - self.lambda.ln();
        let u = (self.kappa * z).exp();
        (u, ParamGrad { d_kappa: u * z, d_lambda: -self.kappa * u / self.lambda })
    }

    /// Value and gradient of [`censored_neg_log_tail_bounded`](Self::censored_neg_log_tail_bounded).
    pub fn censored_tail_bounded_grad(&self, c: T, upper: T) -> Result<(T, ParamGrad<T>)> {
        let value = self.censored_neg_log_tail_bounded(c, upper)?;
        let (uc, gc) = self.censored_tail_grad(c);
        let (uy, gy) = self.censored_tail_grad(upper);
        // d/dθ [uc - ln(1 - e^{uc-uy})] = duc + e^{uc-uy}(duc - duy) / (1 - e^{uc-uy})
        let r = (uc - uy).exp();
        let w = r / (-(uc - uy).exp_m1());
        let grad = ParamGrad {
            d_kappa: gc.d_kappa + w * (gc.d_kappa - gy.d_kappa),
            d_lambda: gc.d_lambda + w * (gc.d_lambda - gy.d_lambda),
        };
        Ok((value, grad))
    }

    /// Value and gradient of [`median`](Self::median).
    pub fn median_grad(&self) -> (T, ParamGrad<T>) {
        let m = self.median();
        let lnln2 = T::lit(std::f64::consts::LN_2.ln());
        let grad = ParamGrad {
            d_kappa: -m * lnln2 / (self.kappa * self.kappa),
            d_lambda: m / self.lambda,
        };
        (m, grad)
    }
}

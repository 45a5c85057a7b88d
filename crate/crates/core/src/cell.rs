//! One step of the GRU-D recurrent cell.
//!
//! Missing inputs are imputed by decaying the last observed value toward the
//! empirical training mean; the previous hidden state is decayed by the mean
//! time since last observation before entering the gates:
//!
//! ```text
//! gamma_x = exp(-max(0, w_x * delta + b_x))                 (per feature)
//! x_hat   = m * x + (1 - m) * (gamma_x * x_last + (1 - gamma_x) * x_mean)
//! gamma_h = exp(-max(0, w_h * mean(delta) + b_h))            (per hidden unit)
//! h_hat   = gamma_h * h
//! z       = sigmoid(Wz x_hat + Uz h_hat + Vz m + bz)
//! r       = sigmoid(Wr x_hat + Ur h_hat + Vr m + br)
//! h_tilde = tanh(W x_hat + U (r * h_hat) + V m + b)
//! h'      = (1 - z) * h_hat + z * h_tilde
//! ```
//!
//! Deltas are given in days and divided by [`DELTA_SCALE_DAYS`] before decay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{sigmoid, Scalar};
use crate::series::TimestepObservation;

pub const DELTA_SCALE_DAYS: f64 = 30.0;

/// Initial value of every decay weight.
pub const DECAY_WEIGHT_INIT: f64 = 0.1;

/// Which optional pathways of the cell are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub input_decay: bool,
    pub hidden_decay: bool,
    pub mask_inputs: bool,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self { input_decay: true, hidden_decay: true, mask_inputs: true }
    }
}

/// Weights of one gate: input, recurrent and mask matrices plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T> {
    pub w_x: Matrix<T>,
    pub w_h: Matrix<T>,
    /// `H x F`, or `H x 0` when the mask pathway is off.
    pub w_m: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> GateParams<T> {
    fn zeros(f: usize, h: usize, with_mask: bool) -> Self {
        Self {
            w_x: Matrix::zeros(h, f),
            w_h: Matrix::zeros(h, h),
            w_m: Matrix::zeros(h, if with_mask { f } else { 0 }),
            bias: vec![T::zero(); h],
        }
    }

    fn init<R: Rng>(f: usize, h: usize, with_mask: bool, rng: &mut R) -> Self {
        let bound = (1.0 / h as f64).sqrt();
        let mut draw = |_, _| T::lit(rng.random_range(-bound..bound));
        Self {
            w_x: Matrix::from_fn(h, f, &mut draw),
            w_h: Matrix::from_fn(h, h, &mut draw),
            w_m: Matrix::from_fn(h, if with_mask { f } else { 0 }, &mut draw),
            bias: vec![T::zero(); h],
        }
    }

    /// `bias + W_x x + W_h h + W_m m`
    fn preactivation(&self, x: &[T], h: &[T], m: &[T]) -> Vec<T> {
        let mut a = self.bias.clone();
        self.w_x.mul_vec_acc(x, &mut a);
        self.w_h.mul_vec_acc(h, &mut a);
        if self.w_m.cols() > 0 {
            self.w_m.mul_vec_acc(m, &mut a);
        }
        a
    }

    /// Accumulates parameter gradients for preactivation gradient `da`.
    fn accumulate(&self, grad: &mut Self, da: &[T], x: &[T], h: &[T], m: &[T]) {
        grad.w_x.add_outer(da, x);
        grad.w_h.add_outer(da, h);
        if self.w_m.cols() > 0 {
            grad.w_m.add_outer(da, m);
        }
        for (g, &d) in grad.bias.iter_mut().zip(da) {
            *g = *g + d;
        }
    }
}

/// All trainable cell weights plus the frozen empirical means.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<T> {
    pub config: CellConfig,
    /// Per-feature decay weights (length F, empty when input decay is off).
    pub input_decay_w: Vec<T>,
    pub input_decay_b: Vec<T>,
    /// Per-hidden-unit decay weights (length H, empty when hidden decay is off).
    pub hidden_decay_w: Vec<T>,
    pub hidden_decay_b: Vec<T>,
    pub update: GateParams<T>,
    pub reset: GateParams<T>,
    pub candidate: GateParams<T>,
    /// Empirical feature means from the training split; not trainable.
    pub means: Vec<T>,
}

/// Hidden state of the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T>(pub Vec<T>);

impl<T: Scalar> HiddenState<T> {
    pub fn zeros(h: usize) -> Self {
        Self(vec![T::zero(); h])
    }
}

/// Intermediates of one forward step, enough to rebuild exact gradients.
#[derive(Debug, Clone)]
pub struct CellCache<T> {
    pub x_hat: Vec<T>,
    mask: Vec<T>,
    /// Scaled deltas.
    delta: Vec<T>,
    gamma_x: Vec<T>,
    /// `(1 - m) * (x_last - x_mean)`, the sensitivity of `x_hat` to `gamma_x`.
    stale_gap: Vec<T>,
    delta_bar: T,
    gamma_h: Vec<T>,
    h_prev: Vec<T>,
    h_hat: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    rh: Vec<T>,
    h_tilde: Vec<T>,
}

/// `exp(-max(0, w * delta + b))` elementwise.
pub fn decay_gamma<T: Scalar>(w: &[T], b: &[T], delta: &[T]) -> Result<Vec<T>> {
    if w.len() != b.len() || w.len() != delta.len() {
        return Err(Error::dim(format!(
            "decay weights {} / bias {} / delta {}",
            w.len(),
            b.len(),
            delta.len()
        )));
    }
    Ok(w.iter()
        .zip(b)
        .zip(delta)
        .map(|((&w, &b), &d)| (-(w * d + b).max(T::zero())).exp())
        .collect())
}

/// Decay-to-mean imputation of one step's inputs.
pub fn impute_input<T: Scalar>(
    obs: &TimestepObservation<T>,
    last_observed: &[T],
    means: &[T],
    gamma_x: &[T],
) -> Result<Vec<T>> {
    let f = obs.n_features();
    if last_observed.len() != f || means.len() != f || gamma_x.len() != f {
        return Err(Error::dim(format!(
            "impute: features {f}, last {}, means {}, gamma {}",
            last_observed.len(),
            means.len(),
            gamma_x.len()
        )));
    }
    Ok((0..f)
        .map(|d| {
            let m = obs.mask[d];
            let g = gamma_x[d];
            m * obs.x[d] + (T::one() - m) * (g * last_observed[d] + (T::one() - g) * means[d])
        })
        .collect())
}

impl<T: Scalar> CellParams<T> {
    pub fn zeros(n_features: usize, n_hidden: usize, config: CellConfig) -> Self {
        let (f, h) = (n_features, n_hidden);
        let fi = if config.input_decay { f } else { 0 };
        let hh = if config.hidden_decay { h } else { 0 };
        Self {
            config,
            input_decay_w: vec![T::zero(); fi],
            input_decay_b: vec![T::zero(); fi],
            hidden_decay_w: vec![T::zero(); hh],
            hidden_decay_b: vec![T::zero(); hh],
            update: GateParams::zeros(f, h, config.mask_inputs),
            reset: GateParams::zeros(f, h, config.mask_inputs),
            candidate: GateParams::zeros(f, h, config.mask_inputs),
            means: vec![T::zero(); f],
        }
    }

    /// Gate weights uniform in `±sqrt(1/H)`, decay weights 0.1, biases 0.
    pub fn init<R: Rng>(means: Vec<T>, n_hidden: usize, config: CellConfig, rng: &mut R) -> Self {
        let (f, h) = (means.len(), n_hidden);
        let fi = if config.input_decay { f } else { 0 };
        let hh = if config.hidden_decay { h } else { 0 };
        Self {
            config,
            input_decay_w: vec![T::lit(DECAY_WEIGHT_INIT); fi],
            input_decay_b: vec![T::zero(); fi],
            hidden_decay_w: vec![T::lit(DECAY_WEIGHT_INIT); hh],
            hidden_decay_b: vec![T::zero(); hh],
            update: GateParams::init(f, h, config.mask_inputs, rng),
            reset: GateParams::init(f, h, config.mask_inputs, rng),
            candidate: GateParams::init(f, h, config.mask_inputs, rng),
            means,
        }
    }

    /// Zero tensors of the same shape, keeping config and means.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.n_features(), self.n_hidden(), self.config);
        z.means = self.means.clone();
        z
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    #[inline]
    pub fn n_hidden(&self) -> usize {
        self.update.bias.len()
    }

    /// Trainable tensors in canonical order, with stable names.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("input_decay_w", &self.input_decay_w[..]),
            ("input_decay_b", &self.input_decay_b[..]),
            ("hidden_decay_w", &self.hidden_decay_w[..]),
            ("hidden_decay_b", &self.hidden_decay_b[..]),
            ("update_w_x", self.update.w_x.as_slice()),
            ("update_w_h", self.update.w_h.as_slice()),
            ("update_w_m", self.update.w_m.as_slice()),
            ("update_bias", &self.update.bias[..]),
            ("reset_w_x", self.reset.w_x.as_slice()),
            ("reset_w_h", self.reset.w_h.as_slice()),
            ("reset_w_m", self.reset.w_m.as_slice()),
            ("reset_bias", &self.reset.bias[..]),
            ("candidate_w_x", self.candidate.w_x.as_slice()),
            ("candidate_w_h", self.candidate.w_h.as_slice()),
            ("candidate_w_m", self.candidate.w_m.as_slice()),
            ("candidate_bias", &self.candidate.bias[..]),
        ]
    }

    /// Mutable view of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.input_decay_w[..],
            &mut self.input_decay_b[..],
            &mut self.hidden_decay_w[..],
            &mut self.hidden_decay_b[..],
            self.update.w_x.as_mut_slice(),
            self.update.w_h.as_mut_slice(),
            self.update.w_m.as_mut_slice(),
            &mut self.update.bias[..],
            self.reset.w_x.as_mut_slice(),
            self.reset.w_h.as_mut_slice(),
            self.reset.w_m.as_mut_slice(),
            &mut self.reset.bias[..],
            self.candidate.w_x.as_mut_slice(),
            self.candidate.w_h.as_mut_slice(),
            self.candidate.w_m.as_mut_slice(),
            &mut self.candidate.bias[..],
        ]
    }

    /// Shape `(rows, cols)` of each tensor, same order as [`tensors`](Self::tensors).
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let gate = |g: &GateParams<T>| {
            [
                (g.w_x.rows(), g.w_x.cols()),
                (g.w_h.rows(), g.w_h.cols()),
                (g.w_m.rows(), g.w_m.cols()),
                (g.bias.len(), 1),
            ]
        };
        let mut s = vec![
            (self.input_decay_w.len(), 1),
            (self.input_decay_b.len(), 1),
            (self.hidden_decay_w.len(), 1),
            (self.hidden_decay_b.len(), 1),
        ];
        s.extend(gate(&self.update));
        s.extend(gate(&self.reset));
        s.extend(gate(&self.candidate));
        s
    }

    /// Rebuilds gate matrices from flat tensors given in [`tensors`](Self::tensors) order.
    pub(crate) fn from_tensors(
        config: CellConfig,
        means: Vec<T>,
        n_hidden: usize,
        tensors: Vec<Vec<T>>,
    ) -> Result<Self> {
        let mut out = Self::zeros(means.len(), n_hidden, config);
        out.means = means;
        let expected = out.shapes();
        if tensors.len() != expected.len() {
            return Err(Error::dim(format!("expected {} cell tensors, got {}", expected.len(), tensors.len())));
        }
        for ((dst, src), (r, c)) in out.tensors_mut().into_iter().zip(tensors).zip(expected) {
            if src.len() != r * c {
                return Err(Error::dim(format!("tensor of {} values, expected {r}x{c}", src.len())));
            }
            dst.copy_from_slice(&src);
        }
        Ok(out)
    }

    /// Advances the cell by one step.
    ///
    /// Returns the new hidden state, the updated last-observed values and the
    /// cached intermediates for [`backward`](Self::backward).
    pub fn step(
        &self,
        obs: &TimestepObservation<T>,
        state: &HiddenState<T>,
        last_observed: &[T],
    ) -> Result<(HiddenState<T>, Vec<T>, CellCache<T>)> {
        let (f, h) = (self.n_features(), self.n_hidden());
        if obs.n_features() != f || state.0.len() != h || last_observed.len() != f {
            return Err(Error::dim(format!(
                "cell expects {f} features / {h} hidden, got {} / {} (last {})",
                obs.n_features(),
                state.0.len(),
                last_observed.len()
            )));
        }
        let scale = T::lit(DELTA_SCALE_DAYS).recip();
        let delta: Vec<T> = obs.delta.iter().map(|&d| d * scale).collect();

        let gamma_x = if self.config.input_decay {
            decay_gamma(&self.input_decay_w, &self.input_decay_b, &delta)?
        } else {
            vec![T::one(); f]
        };
        let x_hat = impute_input(obs, last_observed, &self.means, &gamma_x)?;
        let stale_gap = (0..f)
            .map(|d| (T::one() - obs.mask[d]) * (last_observed[d] - self.means[d]))
            .collect();

        let delta_bar = if f == 0 { T::zero() } else { delta.iter().copied().sum::<T>() / T::lit(f as f64) };
        let (gamma_h, h_hat) = if self.config.hidden_decay {
            let g = decay_gamma(&self.hidden_decay_w, &self.hidden_decay_b, &vec![delta_bar; h])?;
            let hh = g.iter().zip(&state.0).map(|(&g, &v)| g * v).collect();
            (g, hh)
        } else {
            (Vec::new(), state.0.clone())
        };

        let m = &obs.mask;
        let z: Vec<T> = self.update.preactivation(&x_hat, &h_hat, m).into_iter().map(sigmoid).collect();
        let r: Vec<T> = self.reset.preactivation(&x_hat, &h_hat, m).into_iter().map(sigmoid).collect();
        let rh: Vec<T> = r.iter().zip(&h_hat).map(|(&a, &b)| a * b).collect();
        let h_tilde: Vec<T> =
            self.candidate.preactivation(&x_hat, &rh, m).into_iter().map(|a| a.tanh()).collect();

        let h_new: Vec<T> = (0..h).map(|j| (T::one() - z[j]) * h_hat[j] + z[j] * h_tilde[j]).collect();
        if h_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite hidden activation".into()));
        }

        let last = (0..f).map(|d| if obs.observed(d) { obs.x[d] } else { last_observed[d] }).collect();
        let cache = CellCache {
            x_hat,
            mask: obs.mask.clone(),
            delta,
            gamma_x,
            stale_gap,
            delta_bar,
            gamma_h,
            h_prev: state.0.clone(),
            h_hat,
            z,
            r,
            rh,
            h_tilde,
        };
        Ok((HiddenState(h_new), last, cache))
    }

    /// Back-propagates `dh_new` through one step, accumulating parameter
    /// gradients into `grad` and returning the gradient w.r.t. the previous state.
    pub fn backward(&self, cache: &CellCache<T>, dh_new: &[T], grad: &mut Self) -> Vec<T> {
        let (f, h) = (self.n_features(), self.n_hidden());
        let one = T::one();
        let c = cache;

        let mut dh_hat: Vec<T> = (0..h).map(|j| dh_new[j] * (one - c.z[j])).collect();
        let da_z: Vec<T> = (0..h)
            .map(|j| dh_new[j] * (c.h_tilde[j] - c.h_hat[j]) * c.z[j] * (one - c.z[j]))
            .collect();
        let da_c: Vec<T> =
            (0..h).map(|j| dh_new[j] * c.z[j] * (one - c.h_tilde[j] * c.h_tilde[j])).collect();

        // candidate: W x_hat + U (r * h_hat) + V m + b
        self.candidate.accumulate(&mut grad.candidate, &da_c, &c.x_hat, &c.rh, &c.mask);
        let mut d_rh = vec![T::zero(); h];
        self.candidate.w_h.tr_mul_vec_acc(&da_c, &mut d_rh);
        let da_r: Vec<T> = (0..h).map(|j| d_rh[j] * c.h_hat[j] * c.r[j] * (one - c.r[j])).collect();
        for j in 0..h {
            dh_hat[j] = dh_hat[j] + d_rh[j] * c.r[j];
        }

        self.update.accumulate(&mut grad.update, &da_z, &c.x_hat, &c.h_hat, &c.mask);
        self.reset.accumulate(&mut grad.reset, &da_r, &c.x_hat, &c.h_hat, &c.mask);
        self.update.w_h.tr_mul_vec_acc(&da_z, &mut dh_hat);
        self.reset.w_h.tr_mul_vec_acc(&da_r, &mut dh_hat);

        // hidden decay
        let dh_prev = if self.config.hidden_decay {
            for j in 0..h {
                let q = self.hidden_decay_w[j] * c.delta_bar + self.hidden_decay_b[j];
                if q > T::zero() {
                    let dq = -dh_hat[j] * c.h_prev[j] * c.gamma_h[j];
                    grad.hidden_decay_w[j] = grad.hidden_decay_w[j] + dq * c.delta_bar;
                    grad.hidden_decay_b[j] = grad.hidden_decay_b[j] + dq;
                }
            }
            (0..h).map(|j| dh_hat[j] * c.gamma_h[j]).collect()
        } else {
            dh_hat
        };

        // input decay
        if self.config.input_decay && c.stale_gap.iter().any(|&g| g != T::zero()) {
            let mut dx_hat = vec![T::zero(); f];
            self.candidate.w_x.tr_mul_vec_acc(&da_c, &mut dx_hat);
            self.update.w_x.tr_mul_vec_acc(&da_z, &mut dx_hat);
            self.reset.w_x.tr_mul_vec_acc(&da_r, &mut dx_hat);
            for d in 0..f {
                let p = self.input_decay_w[d] * c.delta[d] + self.input_decay_b[d];
                if p > T::zero() && c.stale_gap[d] != T::zero() {
                    let dp = -dx_hat[d] * c.stale_gap[d] * c.gamma_x[d];
                    grad.input_decay_w[d] = grad.input_decay_w[d] + dp * c.delta[d];
                    grad.input_decay_b[d] = grad.input_decay_b[d] + dp;
                }
            }
        }
        dh_prev
    }
}

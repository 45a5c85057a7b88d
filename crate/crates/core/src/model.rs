//! Sequence model: the GRU-D cell unrolled over a patient grid with a
//! SoftPlus head emitting per-step Weibull parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{CellCache, CellConfig, CellParams, HiddenState};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::series::PatientSeries;
use crate::weibull::{ParamGrad, WeibullParams};

/// Floor added to both SoftPlus outputs.
pub const PARAM_EPS: f64 = 1e-4;

/// Version tag written into serialized parameter records.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Per-step Weibull parameters aligned with a series' grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTrajectory<T>(pub Vec<WeibullParams<T>>);

impl<T> ParamTrajectory<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, WeibullParams<T>> {
        self.0.iter()
    }
}

/// Trainable weights of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub cell: CellParams<T>,
    /// Row 0 feeds kappa, row 1 feeds lambda.
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
    /// Feed a zero hidden state to the head at every step (constant-parameter baseline).
    pub bypass_cell: bool,
}

/// Forward-pass record needed by [`ModelParams::gradient`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    caches: Vec<CellCache<T>>,
    /// Hidden states as seen by the head (after dropout).
    head_inputs: Vec<Vec<T>>,
    head_pre: Vec<[T; 2]>,
    dropout: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn len(&self) -> usize {
        self.head_pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.head_pre.is_empty()
    }
}

/// Hidden-state dropout between the cell and the head.
pub struct Dropout<'a, R> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng>(means: Vec<T>, n_hidden: usize, config: CellConfig, rng: &mut R) -> Self {
        let cell = CellParams::init(means, n_hidden, config, rng);
        let bound = (1.0 / n_hidden as f64).sqrt();
        let head_w = Matrix::from_fn(2, n_hidden, |_, _| T::lit(rng.random_range(-bound..bound)));
        Self { cell, head_w, head_b: vec![T::zero(); 2], bypass_cell: false }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cell: self.cell.zeros_like(),
            head_w: Matrix::zeros(2, self.n_hidden()),
            head_b: vec![T::zero(); 2],
            bypass_cell: self.bypass_cell,
        }
    }

    pub fn n_features(&self) -> usize {
        self.cell.n_features()
    }

    pub fn n_hidden(&self) -> usize {
        self.cell.n_hidden()
    }

    /// Trainable tensors in canonical order, with names.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        let mut t = self.cell.tensors();
        t.push(("head_w", self.head_w.as_slice()));
        t.push(("head_b", &self.head_b[..]));
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.cell.tensors_mut();
        t.push(self.head_w.as_mut_slice());
        t.push(&mut self.head_b[..]);
        t
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = self.cell.shapes();
        s.push((2, self.n_hidden()));
        s.push((2, 1));
        s
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s * scale;
            }
        }
    }

    /// Global L2 norm over all tensors.
    pub fn l2_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    #[inline]
    fn head(&self, h: &[T]) -> ([T; 2], WeibullParams<T>) {
        let eps = T::lit(PARAM_EPS);
        let mut a = [self.head_b[0], self.head_b[1]];
        for (k, row) in a.iter_mut().enumerate() {
            *row = *row + crate::linalg::dot(self.head_w.row(k), h);
        }
        let kappa = softplus(a[0]) + eps;
        let lambda = softplus(a[1]) + eps;
        // softplus + eps is always positive and finite for finite a
        (a, WeibullParams::new(kappa, lambda).expect("softplus head output is positive"))
    }

    /// Unrolls the model over `series`; see [`forward_with`](Self::forward_with).
    pub fn forward(&self, series: &PatientSeries<T>) -> Result<(ParamTrajectory<T>, Tape<T>)> {
        self.forward_with::<rand_chacha::ChaCha8Rng>(series, None)
    }

    /// Unrolls the model, optionally applying inverted hidden-state dropout on the head path.
    ///
    /// An empty series yields [`Error::Empty`]: the patient contributes nothing.
    pub fn forward_with<R: Rng>(
        &self,
        series: &PatientSeries<T>,
        mut dropout: Option<Dropout<'_, R>>,
    ) -> Result<(ParamTrajectory<T>, Tape<T>)> {
        if series.is_empty() {
            return Err(Error::Empty(format!("series {} has no timesteps", series.patient_id)));
        }
        let n = series.len();
        let h_dim = self.n_hidden();
        let mut state = HiddenState::zeros(h_dim);
        let mut last = self.cell.means.clone();
        let mut tape = Tape {
            caches: Vec::with_capacity(n),
            head_inputs: Vec::with_capacity(n),
            head_pre: Vec::with_capacity(n),
            dropout: Vec::new(),
        };
        let mut traj = Vec::with_capacity(n);

        for obs in &series.observations {
            let h_out = if self.bypass_cell {
                vec![T::zero(); h_dim]
            } else {
                let (next, next_last, cache) = self.cell.step(obs, &state, &last)?;
                tape.caches.push(cache);
                state = next;
                last = next_last;
                state.0.clone()
            };
            let head_in = match dropout.as_mut() {
                Some(d) if d.rate > 0.0 => {
                    let keep = T::lit(1.0 / (1.0 - d.rate));
                    let mask: Vec<T> = (0..h_dim)
                        .map(|_| if d.rng.random::<f64>() < d.rate { T::zero() } else { keep })
                        .collect();
                    let dropped = h_out.iter().zip(&mask).map(|(&h, &m)| h * m).collect();
                    tape.dropout.push(mask);
                    dropped
                }
                _ => h_out,
            };
            let (pre, params) = self.head(&head_in);
            if !(params.kappa().is_finite() && params.lambda().is_finite()) {
                return Err(Error::Numeric("non-finite Weibull parameters".into()));
            }
            tape.head_inputs.push(head_in);
            tape.head_pre.push(pre);
            traj.push(params);
        }
        Ok((ParamTrajectory(traj), tape))
    }

    /// Reverse-mode gradient of `sum_t upstream_t . (kappa_t, lambda_t)`.
    pub fn gradient(&self, tape: &Tape<T>, upstream: &[ParamGrad<T>]) -> Result<Self> {
        let mut grad = self.zeros_like();
        self.accumulate_gradient(tape, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Same as [`gradient`](Self::gradient) but adds into an existing buffer.
    pub fn accumulate_gradient(&self, tape: &Tape<T>, upstream: &[ParamGrad<T>], grad: &mut Self) -> Result<()> {
        if upstream.len() != tape.len() {
            return Err(Error::dim(format!(
                "upstream gradient has {} steps, tape has {}",
                upstream.len(),
                tape.len()
            )));
        }
        let h_dim = self.n_hidden();
        let mut dh_next = vec![T::zero(); h_dim];
        for t in (0..tape.len()).rev() {
            let pre = tape.head_pre[t];
            let da = [upstream[t].d_kappa * sigmoid(pre[0]), upstream[t].d_lambda * sigmoid(pre[1])];
            grad.head_w.add_outer(&da, &tape.head_inputs[t]);
            grad.head_b[0] = grad.head_b[0] + da[0];
            grad.head_b[1] = grad.head_b[1] + da[1];
            if self.bypass_cell {
                continue;
            }
            let mut dh = vec![T::zero(); h_dim];
            self.head_w.tr_mul_vec_acc(&da, &mut dh);
            if let Some(mask) = tape.dropout.get(t) {
                for (v, &m) in dh.iter_mut().zip(mask) {
                    *v = *v * m;
                }
            }
            for (v, &n) in dh.iter_mut().zip(&dh_next) {
                *v = *v + n;
            }
            dh_next = self.cell.backward(&tape.caches[t], &dh, &mut grad.cell);
        }
        Ok(())
    }

    /// Converts to a versioned, shape-explicit record.
    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            format: "grudw-model".into(),
            version: MODEL_FORMAT_VERSION,
            n_features: self.n_features(),
            hidden_units: self.n_hidden(),
            cell_config: self.cell.config,
            bypass_cell: self.bypass_cell,
            means: self.cell.means.iter().map(|v| v.as_f64()).collect(),
            tensors: self
                .tensors()
                .into_iter()
                .zip(self.shapes())
                .map(|((name, values), shape)| TensorRecord {
                    name: name.to_string(),
                    shape: [shape.0, shape.1],
                    values: values.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_record(record: &ModelRecord) -> Result<Self> {
        if record.version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported model format version {}", record.version)));
        }
        if record.means.len() != record.n_features {
            return Err(Error::dim("means length differs from n_features"));
        }
        let h = record.hidden_units;
        let means = record.means.iter().map(|&v| T::lit(v)).collect();
        let template = Self {
            cell: CellParams::zeros(record.n_features, h, record.cell_config),
            head_w: Matrix::zeros(2, h),
            head_b: vec![T::zero(); 2],
            bypass_cell: record.bypass_cell,
        };
        let names: Vec<&str> = template.tensors().iter().map(|(n, _)| *n).collect();
        if record.tensors.len() != names.len() {
            return Err(Error::dim(format!("expected {} tensors, got {}", names.len(), record.tensors.len())));
        }
        let mut values = Vec::with_capacity(names.len());
        for ((name, shape), rec) in names.iter().zip(template.shapes()).zip(&record.tensors) {
            if rec.name != *name || rec.shape != [shape.0, shape.1] || rec.values.len() != shape.0 * shape.1 {
                return Err(Error::dim(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    rec.name, rec.shape, name, shape
                )));
            }
            values.push(rec.values.iter().map(|&v| T::lit(v)).collect::<Vec<T>>());
        }
        let head_b = values.pop().unwrap_or_default();
        let head_w = Matrix::from_vec(2, h, values.pop().unwrap_or_default())
            .ok_or_else(|| Error::dim("head weights"))?;
        let cell = CellParams::from_tensors(record.cell_config, means, h, values)?;
        let out = Self { cell, head_w, head_b, bypass_cell: record.bypass_cell };
        if !out.is_finite() {
            return Err(Error::Data("model record contains non-finite values".into()));
        }
        Ok(out)
    }
}

/// Serialized form of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Serialized form of [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub format: String,
    pub version: u32,
    pub n_features: usize,
    pub hidden_units: usize,
    pub cell_config: CellConfig,
    pub bypass_cell: bool,
    pub means: Vec<f64>,
    pub tensors: Vec<TensorRecord>,
}

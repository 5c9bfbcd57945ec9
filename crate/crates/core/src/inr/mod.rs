//! Continuous coordinate-based surrogates (implicit neural representations).
//!
//! A model maps a raw coordinate vector to a target vector through
//!
//! 1. a per-dimension affine map of the input onto `[-1, 1]`,
//! 2. a fixed encoding (positional, random Fourier, Gaussian RBF, or none),
//! 3. an MLP with `hidden_layers` hidden layers of `hidden_width` units
//!    (sine activations for SIREN, tanh otherwise) and a linear output,
//! 4. an inverse z-score map back to target units.
//!
//! Parameter gradients come from a layer-wise reverse sweep. Input
//! derivatives of order one and two are propagated exactly with second-order
//! forward jets ([`Jet2`]) through the same forward definition.

mod jet;
mod network;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jet::{Jet2, Scalar};
use network::{Activation, Layout, Masks};

use crate::features::CapacityTrajectory;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Error, PartialEq)]
pub enum InrError {
    #[error("invalid INR config: {0}")]
    Config(String),
    #[error("expected {expected} coordinates, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("expected {expected} targets, got {got}")]
    OutputDim { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("derivative order {0} is not supported (1 or 2)")]
    UnsupportedOrder(usize),
    #[error("input index {0} out of range")]
    InputIndex(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("Monte-Carlo dropout needs at least one pass")]
    NoPasses,
    #[error("model JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    MlpPosenc,
    Siren,
    Fourier,
    Rbf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::MlpPosenc, Variant::Siren, Variant::Fourier, Variant::Rbf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MlpPosenc => "mlp_posenc",
            Variant::Siren => "siren",
            Variant::Fourier => "fourier",
            Variant::Rbf => "rbf",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = InrError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| InrError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InrConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// SIREN frequency factor.
    pub omega0: f64,
    /// Number of octaves of the positional encoding (0 leaves only the raw input).
    pub posenc_frequencies: usize,
    pub fourier_features: usize,
    /// Standard deviation σ_f of the frozen angular frequencies `B`; features are `sin(Bx)`, `cos(Bx)`.
    pub fourier_scale: f64,
    /// Centres per input dimension.
    pub rbf_centers: usize,
    pub dropout_p: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for InrConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Siren,
            input_dim: 1,
            output_dim: 1,
            hidden_layers: 3,
            hidden_width: 64,
            omega0: 30.0,
            posenc_frequencies: 6,
            fourier_features: 64,
            fourier_scale: 10.0,
            rbf_centers: 64,
            dropout_p: 0.1,
            epochs: 50,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl InrConfig {
    /// Capacity-versus-cycle model (50 epochs).
    pub fn capacity(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// Voltage-versus-capacity model (30 epochs).
    pub fn voltage(variant: Variant) -> Self {
        Self {
            variant,
            epochs: 30,
            ..Self::default()
        }
    }

    /// Early-life RUL regressor over `input_dim` features (80 epochs).
    pub fn rul_regressor(variant: Variant, input_dim: usize) -> Self {
        Self {
            variant,
            input_dim,
            epochs: 80,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InrError> {
        let fail = |m: &str| Err(InrError::Config(m.to_string()));
        if self.input_dim < 1 || self.output_dim < 1 {
            return fail("input_dim and output_dim must be >= 1");
        }
        if self.hidden_layers < 1 || self.hidden_width < 1 {
            return fail("need at least one hidden layer of width >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail("dropout_p must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0");
        }
        match self.variant {
            Variant::Siren if !(self.omega0 > 0.0) => fail("omega0 must be > 0"),
            Variant::Fourier if self.fourier_features < 1 || !(self.fourier_scale > 0.0) => {
                fail("fourier_features >= 1 and fourier_scale > 0 required")
            }
            Variant::Rbf if self.rbf_centers < 2 => fail("rbf_centers must be >= 2"),
            _ => Ok(()),
        }
    }

    /// Width of the encoded input fed to the first layer.
    pub fn encoded_dim(&self) -> usize {
        let d = self.input_dim;
        match self.variant {
            Variant::MlpPosenc => d + 2 * self.posenc_frequencies * d,
            Variant::Siren => d,
            Variant::Fourier => 2 * self.fourier_features,
            Variant::Rbf => d * self.rbf_centers,
        }
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.encoded_dim()];
        sizes.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        sizes.push(self.output_dim);
        sizes
    }

    /// Trainable parameter count (weights and biases).
    pub fn parameter_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn activation(&self) -> Activation {
        match self.variant {
            Variant::Siren => Activation::Sine { omega0: self.omega0 },
            _ => Activation::Tanh,
        }
    }
}

/// Per-dimension affine map `normalised = (raw - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineNorm {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Maps the observed range of each column onto `[-1, 1]`.
    pub fn min_max(rows: &[&[f64]], dim: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            for j in 0..dim {
                lo[j] = lo[j].min(r[j]);
                hi[j] = hi[j].max(r[j]);
            }
        }
        let offset = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let scale = lo.iter().zip(&hi).map(|(a, b)| nonzero(0.5 * (b - a))).collect();
        Self { offset, scale }
    }

    /// Mean / population standard deviation of each column.
    pub fn z_score(rows: &[&[f64]], dim: usize) -> Self {
        let n = rows.len() as f64;
        let offset: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..dim)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - offset[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    // constant column: a tiny scale pins predictions to the mean
                    1e-6 * offset[j].abs().max(1.0)
                }
            })
            .collect();
        Self { offset, scale }
    }

    pub fn forward(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| (x - o) / s)
            .collect()
    }

    pub fn inverse(&self, norm: &[f64]) -> Vec<f64> {
        norm.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| o + s * x)
            .collect()
    }
}

fn nonzero(s: f64) -> f64 {
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TrainingSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean squared error on the training set after each epoch, in target units.
    pub train_loss: Vec<f64>,
    /// Same on the validation set (empty when no validation data).
    pub val_loss: Vec<f64>,
    pub final_epoch: usize,
    /// Epoch whose parameters were kept (differs from `final_epoch` under early stopping).
    pub best_epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainOptions {
    /// Stop after this many epochs without validation improvement and restore
    /// the best parameters.
    pub patience: Option<usize>,
}

/// A continuous surrogate with its parameters and normalisation maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InrModel {
    pub config: InrConfig,
    /// Trainable weights and biases, layer by layer.
    pub theta: Vec<f64>,
    /// Frozen encoding table: Fourier frequency matrix or RBF centres followed by the width.
    pub encoding: Vec<f64>,
    pub input_norm: AffineNorm,
    pub output_norm: AffineNorm,
}

const INIT_STREAM: u64 = 0;
const DROPOUT_SALT: u64 = 0xD509;

pub fn init_model(cfg: &InrConfig) -> Result<InrModel, InrError> {
    InrModel::new(cfg.clone())
}

impl InrModel {
    pub fn new(config: InrConfig) -> Result<Self, InrError> {
        config.validate()?;
        let mut rng = stream(config.seed, INIT_STREAM);
        let encoding = match config.variant {
            Variant::Fourier => {
                let normal = Normal::new(0.0, config.fourier_scale).expect("positive scale");
                (0..config.fourier_features * config.input_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect()
            }
            Variant::Rbf => {
                let m = config.rbf_centers;
                let spacing = 2.0 / (m - 1) as f64;
                let mut table: Vec<f64> = (0..m).map(|j| -1.0 + j as f64 * spacing).collect();
                table.push(2.0 * spacing);
                table
            }
            _ => Vec::new(),
        };
        let layout = Layout::new(config.layer_sizes());
        let mut theta = vec![0.0; layout.n_params()];
        for l in 0..layout.n_layers() {
            let (fan_in, fan_out) = (layout.fan_in(l) as f64, layout.fan_out(l) as f64);
            let (w_bound, b_bound) = match config.variant {
                Variant::Siren if l == 0 => (1.0 / fan_in, 1.0 / fan_in.sqrt()),
                Variant::Siren => ((6.0 / fan_in).sqrt() / config.omega0, 1.0 / fan_in.sqrt()),
                _ => ((6.0 / (fan_in + fan_out)).sqrt(), 0.0),
            };
            for w in &mut theta[layout.weights(l)] {
                *w = rng.gen_range(-w_bound..=w_bound);
            }
            if b_bound > 0.0 {
                for b in &mut theta[layout.biases(l)] {
                    *b = rng.gen_range(-b_bound..=b_bound);
                }
            }
        }
        Ok(Self {
            input_norm: AffineNorm::identity(config.input_dim),
            output_norm: AffineNorm::identity(config.output_dim),
            config,
            theta,
            encoding,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.config.layer_sizes())
    }

    /// Applies the fixed encoding to normalised coordinates.
    fn encode<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let cfg = &self.config;
        match cfg.variant {
            Variant::Siren => x.to_vec(),
            Variant::MlpPosenc => {
                let mut out = x.to_vec();
                for xi in x {
                    for j in 0..cfg.posenc_frequencies {
                        let arg = xi.scale(2f64.powi(j as i32) * std::f64::consts::PI);
                        out.push(arg.sin());
                        out.push(arg.cos());
                    }
                }
                out
            }
            // angular frequencies (no 2π): σ_f is the inverse length scale on [-1, 1]
            Variant::Fourier => {
                let d = cfg.input_dim;
                let m = cfg.fourier_features;
                let args: Vec<T> = (0..m)
                    .map(|k| {
                        let row = &self.encoding[k * d..(k + 1) * d];
                        let mut z = T::constant(0.0);
                        for (b, xi) in row.iter().zip(x) {
                            z = z + xi.scale(*b);
                        }
                        z
                    })
                    .collect();
                args.iter().map(|a| a.sin()).chain(args.iter().map(|a| a.cos())).collect()
            }
            Variant::Rbf => {
                let m = cfg.rbf_centers;
                let width = self.encoding[m];
                let mut out = Vec::with_capacity(x.len() * m);
                for xi in x {
                    for c in &self.encoding[..m] {
                        let u = (*xi - T::constant(*c)).scale(1.0 / width);
                        out.push((-(u * u)).exp());
                    }
                }
                out
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), InrError> {
        if x.len() != self.config.input_dim {
            return Err(InrError::InputDim {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(InrError::NonFiniteInput);
        }
        Ok(())
    }

    fn forward_masked(&self, x: &[f64], masks: Option<&Masks>) -> Vec<f64> {
        let xn = self.input_norm.forward(x);
        let enc = self.encode(&xn);
        let out = network::forward(&self.layout(), &self.theta, self.config.activation(), &enc, masks);
        self.output_norm.inverse(&out)
    }

    /// Deterministic prediction (dropout inactive) in target units.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, InrError> {
        self.check_input(x)?;
        Ok(self.forward_masked(x, None))
    }

    /// Scalar-output shorthand for [`InrModel::forward`].
    pub fn predict(&self, x: &[f64]) -> Result<f64, InrError> {
        Ok(self.forward(x)?[0])
    }

    /// Value, first and second derivative of every output with respect to raw
    /// input coordinate `wrt`.
    pub fn jets(&self, x: &[f64], wrt: usize) -> Result<Vec<Jet2>, InrError> {
        self.check_input(x)?;
        if wrt >= self.config.input_dim {
            return Err(InrError::InputIndex(wrt));
        }
        let xn = self.input_norm.forward(x);
        let seeded: Vec<Jet2> = xn
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i == wrt {
                    Jet2::variable(v, 1.0 / self.input_norm.scale[i])
                } else {
                    Jet2::constant(v)
                }
            })
            .collect();
        let enc = self.encode(&seeded);
        let out = network::forward(&self.layout(), &self.theta, self.config.activation(), &enc, None);
        Ok(out
            .iter()
            .zip(self.output_norm.offset.iter().zip(&self.output_norm.scale))
            .map(|(j, (o, s))| Jet2 {
                v: o + s * j.v,
                d1: s * j.d1,
                d2: s * j.d2,
            })
            .collect())
    }

    /// Exact `order`-th derivative (1 or 2) of each output with respect to
    /// raw input coordinate `wrt`.
    pub fn derivative(&self, x: &[f64], order: usize, wrt: usize) -> Result<Vec<f64>, InrError> {
        if !(1..=2).contains(&order) {
            return Err(InrError::UnsupportedOrder(order));
        }
        let jets = self.jets(x, wrt)?;
        Ok(jets.iter().map(|j| if order == 1 { j.d1 } else { j.d2 }).collect())
    }

    fn sample_masks<R: Rng>(&self, rng: &mut R) -> Masks {
        let p = self.config.dropout_p;
        let keep = 1.0 / (1.0 - p);
        (0..self.config.hidden_layers)
            .map(|_| {
                (0..self.config.hidden_width)
                    .map(|_| if p > 0.0 && rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect()
            })
            .collect()
    }

    /// Monte-Carlo dropout: `passes` stochastic forward passes, each with its
    /// own dropout mask, summarised as per-output mean and population variance.
    pub fn mc_dropout_predict(&self, x: &[f64], passes: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>), InrError> {
        let mut out = self.mc_dropout_batch(&[x.to_vec()], passes, seed)?;
        Ok(out.pop().unwrap())
    }

    /// MC dropout over several inputs; pass `m` uses one mask for every input,
    /// i.e. one sampled sub-network per pass.
    pub fn mc_dropout_batch(&self, xs: &[Vec<f64>], passes: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>, InrError> {
        if passes == 0 {
            return Err(InrError::NoPasses);
        }
        for x in xs {
            self.check_input(x)?;
        }
        let c = self.config.output_dim;
        // Welford accumulators: identical passes give exactly zero variance.
        let mut mean = vec![vec![0.0; c]; xs.len()];
        let mut m2 = vec![vec![0.0; c]; xs.len()];
        for pass in 0..passes {
            let masks = self.sample_masks(&mut stream(seed, pass as u64));
            for (i, x) in xs.iter().enumerate() {
                let y = self.forward_masked(x, Some(&masks));
                let k = (pass + 1) as f64;
                for j in 0..c {
                    let delta = y[j] - mean[i][j];
                    mean[i][j] += delta / k;
                    m2[i][j] += delta * (y[j] - mean[i][j]);
                }
            }
        }
        Ok(mean
            .into_iter()
            .zip(m2)
            .map(|(mu, s)| (mu, s.into_iter().map(|v| v / passes as f64).collect()))
            .collect())
    }

    fn check_samples(&self, samples: &[TrainingSample]) -> Result<(), InrError> {
        for s in samples {
            self.check_input(&s.x)?;
            if s.y.len() != self.config.output_dim {
                return Err(InrError::OutputDim {
                    expected: self.config.output_dim,
                    got: s.y.len(),
                });
            }
            if s.y.iter().any(|v| !v.is_finite()) {
                return Err(InrError::NonFiniteInput);
            }
        }
        Ok(())
    }

    /// Mean squared error (normalised units) and its parameter gradient.
    /// `masks` holds one dropout mask set per sample.
    fn loss_and_grad(&self, encoded: &[Vec<f64>], targets: &[Vec<f64>], masks: Option<&[Masks]>) -> (f64, Vec<f64>) {
        let layout = self.layout();
        let act = self.config.activation();
        let mut grad = vec![0.0; self.theta.len()];
        let denom = (encoded.len() * self.config.output_dim) as f64;
        let mut loss = 0.0;
        for (i, (e, y)) in encoded.iter().zip(targets).enumerate() {
            let cache = network::forward_cached(&layout, &self.theta, act, e, masks.map(|m| m[i].as_slice()));
            let d_out: Vec<f64> = cache
                .output
                .iter()
                .zip(y)
                .map(|(p, t)| {
                    loss += (p - t) * (p - t);
                    2.0 * (p - t) / denom
                })
                .collect();
            network::backward(&layout, &self.theta, &cache, &d_out, &mut grad);
        }
        (loss / denom, grad)
    }

    /// Mean squared error in target units with dropout inactive.
    fn mse_target_units(&self, encoded: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        if encoded.is_empty() {
            return 0.0;
        }
        let layout = self.layout();
        let act = self.config.activation();
        let mut acc = 0.0;
        for (e, y) in encoded.iter().zip(targets) {
            let out = network::forward::<f64>(&layout, &self.theta, act, e, None);
            for ((p, t), s) in out.iter().zip(y).zip(&self.output_norm.scale) {
                acc += ((p - t) * s).powi(2);
            }
        }
        acc / (encoded.len() * self.config.output_dim) as f64
    }

    fn prepare(&self, samples: &[TrainingSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let enc = samples.iter().map(|s| self.encode(&self.input_norm.forward(&s.x))).collect();
        let tgt = samples.iter().map(|s| self.output_norm.forward(&s.y)).collect();
        (enc, tgt)
    }

    /// Full-batch Adam on the mean squared error for `config.epochs` epochs.
    pub fn train(&mut self, train: &[TrainingSample], val: &[TrainingSample]) -> Result<TrainingReport, InrError> {
        self.train_with(train, val, &TrainOptions::default())
    }

    pub fn train_with(
        &mut self,
        train: &[TrainingSample],
        val: &[TrainingSample],
        opts: &TrainOptions,
    ) -> Result<TrainingReport, InrError> {
        if train.is_empty() {
            return Err(InrError::EmptyTrainingSet);
        }
        self.check_samples(train)?;
        self.check_samples(val)?;
        let xs: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
        let ys: Vec<&[f64]> = train.iter().map(|s| s.y.as_slice()).collect();
        self.input_norm = AffineNorm::min_max(&xs, self.config.input_dim);
        self.output_norm = AffineNorm::z_score(&ys, self.config.output_dim);
        let (train_enc, train_tgt) = self.prepare(train);
        let (val_enc, val_tgt) = self.prepare(val);

        let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
        let lr = self.config.learning_rate;
        let mut m = vec![0.0; self.theta.len()];
        let mut v = vec![0.0; self.theta.len()];
        let dropout_seed = derive_seed(self.config.seed, DROPOUT_SALT);

        let mut report = TrainingReport {
            train_loss: Vec::with_capacity(self.config.epochs),
            val_loss: Vec::new(),
            final_epoch: 0,
            best_epoch: 0,
            seed: self.config.seed,
        };
        // (validation loss, epoch, parameters) of the best epoch so far
        let mut best: Option<(f64, usize, Vec<f64>)> = None;

        for epoch in 0..self.config.epochs {
            let masks: Option<Vec<Masks>> = (self.config.dropout_p > 0.0).then(|| {
                let mut rng = stream(dropout_seed, epoch as u64);
                (0..train_enc.len()).map(|_| self.sample_masks(&mut rng)).collect()
            });
            let (loss, grad) = self.loss_and_grad(&train_enc, &train_tgt, masks.as_deref());
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(InrError::NonFiniteLoss { epoch });
            }
            let t = (epoch + 1) as i32;
            let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            for i in 0..self.theta.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                self.theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }

            let train_mse = self.mse_target_units(&train_enc, &train_tgt);
            if !train_mse.is_finite() {
                return Err(InrError::NonFiniteLoss { epoch });
            }
            report.train_loss.push(train_mse);
            report.final_epoch = epoch;
            report.best_epoch = epoch;
            if val_enc.is_empty() {
                continue;
            }
            let val_mse = self.mse_target_units(&val_enc, &val_tgt);
            report.val_loss.push(val_mse);
            if let Some(patience) = opts.patience {
                match &best {
                    Some((b, _, _)) if val_mse >= *b => {}
                    _ => best = Some((val_mse, epoch, self.theta.clone())),
                }
                let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
                if epoch - best_epoch >= patience {
                    break;
                }
            }
        }
        if let Some((_, epoch, theta)) = best {
            self.theta = theta;
            report.best_epoch = epoch;
        }
        Ok(report)
    }

    /// Mean squared error of the deterministic prediction on `samples`, in target units.
    pub fn evaluate_mse(&self, samples: &[TrainingSample]) -> Result<f64, InrError> {
        self.check_samples(samples)?;
        let (enc, tgt) = self.prepare(samples);
        Ok(self.mse_target_units(&enc, &tgt))
    }

    /// Loss (normalised units, dropout off) and its gradient with respect to
    /// `theta`, for gradient checking.
    pub fn loss_gradient(&self, samples: &[TrainingSample]) -> Result<(f64, Vec<f64>), InrError> {
        self.check_samples(samples)?;
        let (enc, tgt) = self.prepare(samples);
        Ok(self.loss_and_grad(&enc, &tgt, None))
    }

    /// Loss only, for finite-difference oracles.
    pub fn loss(&self, samples: &[TrainingSample]) -> Result<f64, InrError> {
        Ok(self.loss_gradient(samples)?.0)
    }

    pub fn to_json(&self) -> Result<String, InrError> {
        serde_json::to_string_pretty(self).map_err(|e| InrError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, InrError> {
        let model: Self = serde_json::from_str(text).map_err(|e| InrError::Json(e.to_string()))?;
        model.config.validate()?;
        if model.theta.len() != model.config.parameter_count() {
            return Err(InrError::Config(format!(
                "parameter vector has {} entries, architecture needs {}",
                model.theta.len(),
                model.config.parameter_count()
            )));
        }
        Ok(model)
    }
}

/// Splits `n` ordered points into train/validation index sets by position:
/// every `round(1/val_fraction)`-th point (offset to the middle of each
/// stride) is held out, so the first and last points always train.
pub fn interleaved_split(n: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    if val_fraction <= 0.0 || n < 3 {
        return ((0..n).collect(), Vec::new());
    }
    let stride = ((1.0 / val_fraction).round() as usize).max(2);
    let phase = stride / 2;
    (0..n).partition(|&i| !(i % stride == phase && i != 0 && i + 1 != n))
}

/// Fits a capacity-versus-cycle model to a trajectory using an interleaved
/// 80/20 split of the observed cycles.
pub fn fit_trajectory(traj: &CapacityTrajectory, cfg: &InrConfig) -> Result<(InrModel, TrainingReport), InrError> {
    fit_trajectory_with_split(traj, cfg, 0.2)
}

pub fn fit_trajectory_with_split(
    traj: &CapacityTrajectory,
    cfg: &InrConfig,
    val_fraction: f64,
) -> Result<(InrModel, TrainingReport), InrError> {
    let cfg = InrConfig {
        input_dim: 1,
        output_dim: 1,
        ..cfg.clone()
    };
    let samples: Vec<TrainingSample> = traj
        .points
        .iter()
        .map(|&(k, soh)| TrainingSample::new(vec![k as f64], vec![soh]))
        .collect();
    let (tr, va) = interleaved_split(samples.len(), val_fraction);
    let train: Vec<_> = tr.iter().map(|&i| samples[i].clone()).collect();
    let val: Vec<_> = va.iter().map(|&i| samples[i].clone()).collect();
    let mut model = InrModel::new(cfg)?;
    let report = model.train(&train, &val)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(variant: Variant) -> InrConfig {
        InrConfig {
            variant,
            hidden_width: 16,
            hidden_layers: 2,
            fourier_features: 8,
            fourier_scale: 1.0,
            rbf_centers: 8,
            posenc_frequencies: 2,
            dropout_p: 0.0,
            seed: 7,
            ..InrConfig::default()
        }
    }

    #[test]
    fn same_seed_same_theta() {
        for v in Variant::ALL {
            let a = InrModel::new(InrConfig::capacity(v)).unwrap();
            let b = InrModel::new(InrConfig::capacity(v)).unwrap();
            assert_eq!(a.theta, b.theta);
            assert_eq!(a.encoding, b.encoding);
            assert_eq!(a.theta.len(), a.config.parameter_count());
        }
    }

    #[test]
    fn posenc_feature_count() {
        let c = InrConfig {
            variant: Variant::MlpPosenc,
            ..InrConfig::default()
        };
        // 2·L·d sin/cos features plus the raw coordinate
        assert_eq!(c.encoded_dim() - c.input_dim, 12);
        assert_eq!(c.encoded_dim(), 13);
        let m = InrModel::new(c).unwrap();
        assert_eq!(m.encode(&[0.25]).len(), 13);
    }

    #[test]
    fn siren_init_bounds() {
        let m = InrModel::new(InrConfig::capacity(Variant::Siren)).unwrap();
        let layout = m.layout();
        let bound = (6.0f64 / 64.0).sqrt() / 30.0;
        for l in 1..layout.n_layers() {
            assert!(m.theta[layout.weights(l)].iter().all(|w| w.abs() <= bound));
        }
        assert!(m.theta[layout.weights(0)].iter().all(|w| w.abs() <= 1.0));
    }

    #[test]
    fn fresh_model_output_finite() {
        for v in Variant::ALL {
            let m = InrModel::new(InrConfig::capacity(v)).unwrap();
            for x in [-3.0, 0.0, 0.5, 1e3] {
                assert!(m.predict(&[x]).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = InrConfig {
            dropout_p: 1.0,
            ..InrConfig::default()
        };
        assert!(InrModel::new(bad).is_err());
        let bad = InrConfig {
            learning_rate: 0.0,
            ..InrConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!("siren".parse::<Variant>().is_ok());
        assert!("spline".parse::<Variant>().is_err());
    }

    #[test]
    fn input_errors() {
        let m = InrModel::new(cfg(Variant::Siren)).unwrap();
        assert_eq!(m.forward(&[f64::NAN]), Err(InrError::NonFiniteInput));
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(InrError::InputDim { .. })));
        assert_eq!(m.derivative(&[0.0], 3, 0), Err(InrError::UnsupportedOrder(3)));
        assert_eq!(m.derivative(&[0.0], 1, 1), Err(InrError::InputIndex(1)));
        assert_eq!(m.mc_dropout_predict(&[0.0], 0, 1), Err(InrError::NoPasses));
    }

    #[test]
    fn single_sample_interpolated() {
        let mut m = InrModel::new(InrConfig {
            epochs: 300,
            learning_rate: 1e-2,
            ..cfg(Variant::MlpPosenc)
        })
        .unwrap();
        let report = m.train(&[TrainingSample::new(vec![3.0], vec![0.7])], &[]).unwrap();
        assert!(*report.train_loss.last().unwrap() < 1e-8);
    }

    #[test]
    fn constant_target_fit() {
        let data: Vec<_> = (0..20).map(|k| TrainingSample::new(vec![k as f64], vec![0.9])).collect();
        let mut m = InrModel::new(cfg(Variant::Siren)).unwrap();
        m.train(&data, &[]).unwrap();
        // z-score of a constant target is identically zero; the output map returns 0.9
        for x in [0.0, 7.5, 19.0] {
            assert!((m.predict(&[x]).unwrap() - 0.9).abs() < 1e-3);
        }
        let d1 = m.derivative(&[5.0], 1, 0).unwrap()[0];
        let d2 = m.derivative(&[5.0], 2, 0).unwrap()[0];
        assert!(d1.abs() < 1e-4 && d2.abs() < 1e-4);
    }

    #[test]
    fn empty_training_set() {
        let mut m = InrModel::new(cfg(Variant::Rbf)).unwrap();
        assert_eq!(m.train(&[], &[]), Err(InrError::EmptyTrainingSet));
    }

    #[test]
    fn divergence_reports_epoch() {
        let data: Vec<_> = (0..10).map(|k| TrainingSample::new(vec![k as f64], vec![(k * k) as f64])).collect();
        let mut m = InrModel::new(InrConfig {
            learning_rate: f64::MAX,
            epochs: 5,
            ..cfg(Variant::MlpPosenc)
        })
        .unwrap();
        assert!(matches!(m.train(&data, &[]), Err(InrError::NonFiniteLoss { .. })));
    }

    #[test]
    fn zero_dropout_mc_is_deterministic() {
        let m = InrModel::new(cfg(Variant::Siren)).unwrap();
        let (mean, var) = m.mc_dropout_predict(&[0.3], 20, 9).unwrap();
        assert_eq!(var, vec![0.0]);
        assert_eq!(mean, m.forward(&[0.3]).unwrap());
    }

    #[test]
    fn single_pass_has_zero_variance() {
        let m = InrModel::new(InrConfig {
            dropout_p: 0.3,
            ..cfg(Variant::MlpPosenc)
        })
        .unwrap();
        let (_, var) = m.mc_dropout_predict(&[0.3], 1, 9).unwrap();
        assert_eq!(var, vec![0.0]);
    }

    #[test]
    fn json_round_trip_preserves_outputs() {
        for v in Variant::ALL {
            let mut m = InrModel::new(cfg(v)).unwrap();
            let data: Vec<_> = (0..12)
                .map(|k| TrainingSample::new(vec![k as f64], vec![1.0 - 0.01 * k as f64]))
                .collect();
            m.train(&data, &[]).unwrap();
            let back = InrModel::from_json(&m.to_json().unwrap()).unwrap();
            for x in [0.0, 3.3, 11.0] {
                let a = m.predict(&[x]).unwrap();
                let b = back.predict(&[x]).unwrap();
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn split_keeps_endpoints_in_training() {
        let (tr, va) = interleaved_split(20, 0.2);
        assert_eq!(va, vec![2, 7, 12, 17]);
        assert_eq!(tr.len(), 16);
        assert!(tr.contains(&0) && tr.contains(&19));
    }
}

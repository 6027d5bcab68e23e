//! From-scratch feed-forward sigmoid networks.
//!
//! Two roles: binary discriminators (sigmoid output, at most two hidden
//! layers) trained by minibatch adaptive-moment descent on the binary
//! cross-entropy, and symmetric autoencoders (identity output) for the
//! dimensionality probe. Training is deterministic given the config seed:
//! weight initialization, minibatch shuffling, and dropout all draw from
//! derived ChaCha streams, and nothing inside one training run is threaded.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Keeps discriminator outputs strictly inside (0, 1) when log-scoring.
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRole {
    Discriminator,
    Autoencoder,
}

/// Layer widths and role; hidden activations are always sigmoid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    /// Input, hidden..., output widths.
    pub layers: Vec<usize>,
    pub role: NetworkRole,
    pub output_activation: Activation,
}

impl NetworkArch {
    /// Discriminator with up to two hidden layers and a single sigmoid
    /// output unit; an empty `hidden` gives plain logistic regression.
    pub fn discriminator(input: usize, hidden: &[usize]) -> Result<Self> {
        if hidden.len() > 2 {
            return Err(Error::Domain(format!(
                "discriminators allow at most two hidden layers, got {}",
                hidden.len()
            )));
        }
        let mut layers = vec![input];
        layers.extend_from_slice(hidden);
        layers.push(1);
        let arch =
            Self { layers, role: NetworkRole::Discriminator, output_activation: Activation::Sigmoid };
        arch.validate()?;
        Ok(arch)
    }

    /// Symmetric autoencoder around a `bottleneck`-node hidden layer.
    pub fn autoencoder(input: usize, bottleneck: usize) -> Result<Self> {
        if bottleneck == 0 {
            return Err(Error::Domain("autoencoder bottleneck must be at least 1".into()));
        }
        if bottleneck > input {
            return Err(Error::Domain(format!(
                "bottleneck {bottleneck} exceeds the input width {input}"
            )));
        }
        let arch = Self {
            layers: vec![input, bottleneck, input],
            role: NetworkRole::Autoencoder,
            output_activation: Activation::Identity,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.iter().any(|&w| w == 0) {
            return Err(Error::Domain("network needs at least two nonzero layer widths".into()));
        }
        match self.role {
            NetworkRole::Discriminator => {
                if *self.layers.last().unwrap() != 1 {
                    return Err(Error::Domain("discriminator output width must be 1".into()));
                }
                if self.output_activation != Activation::Sigmoid {
                    return Err(Error::Domain("discriminator output must be sigmoid".into()));
                }
                if self.layers.len() > 4 {
                    return Err(Error::Domain(
                        "discriminators allow at most two hidden layers".into(),
                    ));
                }
            }
            NetworkRole::Autoencoder => {
                if self.layers.last() != self.layers.first() {
                    return Err(Error::Domain(
                        "autoencoder output width must equal the input width".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0]
    }

    /// Total weight and bias count; the architecture-selection tie-break.
    pub fn n_params(&self) -> usize {
        self.layers.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Short label for tables, e.g. `"14-5-1"`.
    pub fn describe(&self) -> String {
        self.layers.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
    }
}

/// Optimizer and training-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub standardize: bool,
    /// Hidden-layer dropout rate; off by default.
    pub dropout: Option<f64>,
    /// Random restarts for autoencoder training; the best fit is kept.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 120,
            epochs: 2000,
            seed: 0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            standardize: true,
            dropout: None,
            restarts: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size: must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs: must be at least 1".into()));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("train.dropout: must lie in [0, 1), got {p}")));
            }
        }
        if self.restarts == 0 {
            return Err(Error::Config("train.restarts: must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-column affine frozen at training start; zero-variance columns are
/// centered but not scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Array2<f64>) -> Self {
        let n = data.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut scale = Vec::with_capacity(data.ncols());
        for col in data.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            if var > 1e-12 {
                scale.push(var.sqrt());
            } else {
                static ONCE: std::sync::Once = std::sync::Once::new();
                ONCE.call_once(|| {
                    log::warn!("degenerate input column: passed through centered, not scaled");
                });
                scale.push(1.0);
            }
        }
        Self { mean, scale }
    }

    pub fn apply(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = data.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.scale[j]);
        }
        out
    }

    /// Maps network output back to raw units (autoencoder reconstruction).
    pub fn invert(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = data.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.scale[j] + self.mean[j]);
        }
        out
    }
}

/// A trained (or freshly initialized) network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: NetworkArch,
    /// Per-layer weights, `(out, in)` orientation.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    pub standardizer: Option<Standardizer>,
    pub seed: u64,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Network {
    /// Fan-in scaled uniform initialization from a seeded stream.
    pub fn init(arch: &NetworkArch, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in arch.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, 100 + l as u64));
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self { arch: arch.clone(), weights, biases, standardizer: None, seed: seed_value })
    }

    /// Builds a network from explicit weights (tests and exact reload).
    pub fn from_parts(
        arch: NetworkArch,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        standardizer: Option<Standardizer>,
        seed_value: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.layers.len() - 1 || biases.len() != weights.len() {
            return Err(Error::Shape("layer count does not match the architecture".into()));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != arch.layers[l + 1] || w.ncols() != arch.layers[l] || b.len() != w.nrows()
            {
                return Err(Error::Shape(format!("layer {l} weights have the wrong shape")));
            }
        }
        Ok(Self { arch, weights, biases, standardizer, seed: seed_value })
    }

    fn standardized(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.clone(),
        }
    }

    /// Forward pass returning all layer activations (standardized input
    /// first); `masks` carries dropout masks during training.
    fn forward_inner(&self, x_std: &Array2<f64>, masks: Option<&[Array2<f64>]>) -> Vec<Array2<f64>> {
        let n_layers = self.weights.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x_std.clone());
        for l in 0..n_layers {
            let mut z = acts[l].dot(&self.weights[l].t());
            z += &self.biases[l];
            let last = l == n_layers - 1;
            let mut a = if last && self.arch.output_activation == Activation::Identity {
                z
            } else {
                z.mapv_into(sigmoid)
            };
            if !last {
                if let Some(ms) = masks {
                    a *= &ms[l];
                }
            }
            acts.push(a);
        }
        acts
    }

    /// Raw-input batch forward; rows through the frozen standardizer, then
    /// the layers.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.arch.input_width() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.arch.input_width()
            )));
        }
        let xs = self.standardized(x);
        Ok(self.forward_inner(&xs, None).pop().unwrap())
    }

    /// Discriminator probability for one feature row, strictly in (0, 1).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if self.arch.role != NetworkRole::Discriminator {
            return Err(Error::Domain("predict: network is not a discriminator".into()));
        }
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let out = self.forward_batch(&row)?;
        Ok(out[(0, 0)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
    }

    /// Autoencoder reconstruction of one row, mapped back to raw units.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let out = self.reconstruct_batch(&row)?;
        Ok(out.row(0).to_vec())
    }

    /// Reconstructs a whole batch in raw units.
    pub fn reconstruct_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if self.arch.role != NetworkRole::Autoencoder {
            return Err(Error::Domain("reconstruct: network is not an autoencoder".into()));
        }
        let out = self.forward_batch(x)?;
        Ok(match &self.standardizer {
            Some(s) => s.invert(&out),
            None => out,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(text)?;
        net.arch.validate()?;
        Ok(net)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LossKind {
    BinaryCrossEntropy,
    MeanSquaredError,
}

fn loss_value(kind: LossKind, out: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let n = out.nrows() as f64;
    match kind {
        LossKind::BinaryCrossEntropy => {
            let mut acc = 0.0;
            for (p, y) in out.iter().zip(targets.iter()) {
                acc += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            -acc / n
        }
        LossKind::MeanSquaredError => {
            let d = out.ncols() as f64;
            out.iter().zip(targets.iter()).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / (n * d)
        }
    }
}

fn output_delta(kind: LossKind, out: &Array2<f64>, targets: &Array2<f64>) -> Array2<f64> {
    let n = out.nrows() as f64;
    match kind {
        // Sigmoid output folded in: dL/dz = (p - y) / n.
        LossKind::BinaryCrossEntropy => (out - targets) / n,
        LossKind::MeanSquaredError => (out - targets) * (2.0 / (n * out.ncols() as f64)),
    }
}

/// Analytic gradients of the loss on a (standardized) batch.
fn backward(
    net: &Network,
    acts: &[Array2<f64>],
    targets: &Array2<f64>,
    kind: LossKind,
    masks: Option<&[Array2<f64>]>,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let n_layers = net.weights.len();
    let mut gw = Vec::with_capacity(n_layers);
    let mut gb = Vec::with_capacity(n_layers);
    let mut delta = output_delta(kind, &acts[n_layers], targets);
    for l in (0..n_layers).rev() {
        gw.push(delta.t().dot(&acts[l]));
        gb.push(delta.sum_axis(Axis(0)));
        if l > 0 {
            let mut prev = delta.dot(&net.weights[l]);
            // Sigmoid derivative in terms of the activation.
            prev.zip_mut_with(&acts[l], |d, &a| *d *= a * (1.0 - a));
            if let Some(ms) = masks {
                prev *= &ms[l - 1];
            }
            delta = prev;
        }
    }
    gw.reverse();
    gb.reverse();
    (gw, gb)
}

struct Adam {
    mw: Vec<Array2<f64>>,
    vw: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        Self {
            mw: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            vw: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            mb: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            vb: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, gw: &[Array2<f64>], gb: &[Array1<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for l in 0..net.weights.len() {
            self.mw[l].zip_mut_with(&gw[l], |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            self.vw[l].zip_mut_with(&gw[l], |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            ndarray::Zip::from(&mut net.weights[l])
                .and(&self.mw[l])
                .and(&self.vw[l])
                .for_each(|w, &m, &v| {
                    *w -= cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
                });
            self.mb[l].zip_mut_with(&gb[l], |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            self.vb[l].zip_mut_with(&gb[l], |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            ndarray::Zip::from(&mut net.biases[l])
                .and(&self.mb[l])
                .and(&self.vb[l])
                .for_each(|b, &m, &v| {
                    *b -= cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
                });
        }
    }
}

/// Minibatch Adam to completion (no early stopping); `xs` is already
/// standardized, `targets` aligned by row.
fn train_core(
    xs: &Array2<f64>,
    targets: &Array2<f64>,
    arch: &NetworkArch,
    cfg: &TrainConfig,
    kind: LossKind,
    seed_value: u64,
) -> Result<Network> {
    let mut net = Network::init(arch, seed_value)?;
    let mut adam = Adam::new(&net);
    let n = xs.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, 2));
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = xs.select(Axis(0), chunk);
            let tb = targets.select(Axis(0), chunk);
            let masks = cfg.dropout.map(|p| {
                let keep = 1.0 - p;
                (0..net.weights.len() - 1)
                    .map(|l| {
                        Array2::from_shape_fn((xb.nrows(), arch.layers[l + 1]), |_| {
                            if dropout_rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect::<Vec<_>>()
            });
            let acts = net.forward_inner(&xb, masks.as_deref());
            let (gw, gb) = backward(&net, &acts, &tb, kind, masks.as_deref());
            adam.step(&mut net, &gw, &gb, cfg);
        }
    }
    Ok(net)
}

/// The minimax objective value under a trained discriminator:
/// `mean(log D(real)) + mean(log(1 - D(sim)))`, in `(-inf, 0)`; equals
/// `2 log(1/2)` when `D` is identically one half.
pub fn cross_entropy(net: &Network, real: &Array2<f64>, sim: &Array2<f64>) -> Result<f64> {
    if real.nrows() == 0 || sim.nrows() == 0 {
        return Err(Error::Domain("cross_entropy: empty sample".into()));
    }
    let p_real = net.forward_batch(real)?;
    let p_sim = net.forward_batch(sim)?;
    let mean_log_real = p_real
        .iter()
        .map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
        .sum::<f64>()
        / p_real.nrows() as f64;
    let mean_log_one_minus_sim = p_sim
        .iter()
        .map(|p| (1.0 - p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).ln())
        .sum::<f64>()
        / p_sim.nrows() as f64;
    Ok(mean_log_real + mean_log_one_minus_sim)
}

/// Trains a discriminator labelling real rows 1 and simulated rows 0;
/// standardization is fitted on the pooled sample and frozen.
pub fn train_discriminator(
    real: &Array2<f64>,
    sim: &Array2<f64>,
    arch: &NetworkArch,
    cfg: &TrainConfig,
) -> Result<Network> {
    cfg.validate()?;
    if arch.role != NetworkRole::Discriminator {
        return Err(Error::Domain(
            "train_discriminator: architecture is not a discriminator".into(),
        ));
    }
    if real.nrows() == 0 || sim.nrows() == 0 {
        return Err(Error::Domain("train_discriminator: empty sample".into()));
    }
    if real.ncols() != sim.ncols() || real.ncols() != arch.input_width() {
        return Err(Error::Shape(format!(
            "train_discriminator: widths real={}, sim={}, arch={}",
            real.ncols(),
            sim.ncols(),
            arch.input_width()
        )));
    }
    let (n, m) = (real.nrows(), sim.nrows());
    let mut pooled = Array2::zeros((n + m, real.ncols()));
    pooled.slice_mut(ndarray::s![..n, ..]).assign(real);
    pooled.slice_mut(ndarray::s![n.., ..]).assign(sim);
    let mut targets = Array2::zeros((n + m, 1));
    targets.slice_mut(ndarray::s![..n, ..]).fill(1.0);
    let standardizer = cfg.standardize.then(|| Standardizer::fit(&pooled));
    let xs = match &standardizer {
        Some(s) => s.apply(&pooled),
        None => pooled,
    };
    let mut net = train_core(&xs, &targets, arch, cfg, LossKind::BinaryCrossEntropy, cfg.seed)?;
    net.standardizer = standardizer;
    Ok(net)
}

/// Compares backpropagation gradients to central finite differences
/// (step 1e-5) over every weight and bias; returns the worst relative
/// discrepancy. Targets are labels for discriminators and reconstruction
/// targets for autoencoders.
pub fn gradient_check(net: &Network, x: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let kind = match net.arch.role {
        NetworkRole::Discriminator => LossKind::BinaryCrossEntropy,
        NetworkRole::Autoencoder => LossKind::MeanSquaredError,
    };
    if x.ncols() != net.arch.input_width() {
        return Err(Error::Shape("gradient_check: input width mismatch".into()));
    }
    if targets.nrows() != x.nrows() || targets.ncols() != *net.arch.layers.last().unwrap() {
        return Err(Error::Shape("gradient_check: target shape mismatch".into()));
    }
    let xs = net.standardized(x);
    let acts = net.forward_inner(&xs, None);
    let (gw, gb) = backward(net, &acts, targets, kind, None);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut check = |analytic: f64, fd: f64| {
        let denom = analytic.abs().max(fd.abs());
        let err = if denom < 1e-8 { (analytic - fd).abs() } else { (analytic - fd).abs() / denom };
        worst = worst.max(err);
    };
    let layers = net.weights.len();
    for l in 0..layers {
        let (rows, cols) = net.weights[l].dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = probe.weights[l][(i, j)];
                probe.weights[l][(i, j)] = orig + STEP;
                let up = loss_value(kind, probe.forward_inner(&xs, None).last().unwrap(), targets);
                probe.weights[l][(i, j)] = orig - STEP;
                let down =
                    loss_value(kind, probe.forward_inner(&xs, None).last().unwrap(), targets);
                probe.weights[l][(i, j)] = orig;
                check(gw[l][(i, j)], (up - down) / (2.0 * STEP));
            }
        }
        for i in 0..net.biases[l].len() {
            let orig = probe.biases[l][i];
            probe.biases[l][i] = orig + STEP;
            let up = loss_value(kind, probe.forward_inner(&xs, None).last().unwrap(), targets);
            probe.biases[l][i] = orig - STEP;
            let down = loss_value(kind, probe.forward_inner(&xs, None).last().unwrap(), targets);
            probe.biases[l][i] = orig;
            check(gb[l][i], (up - down) / (2.0 * STEP));
        }
    }
    Ok(worst)
}

/// Trains a symmetric autoencoder, keeping the best of `cfg.restarts`
/// seeds; returns the network, the per-element reconstruction MSE in raw
/// units, and the correlation of each input column with its reconstruction.
pub fn train_autoencoder(
    data: &Array2<f64>,
    bottleneck: usize,
    cfg: &TrainConfig,
) -> Result<(Network, f64, Vec<f64>)> {
    cfg.validate()?;
    if data.nrows() == 0 {
        return Err(Error::Domain("train_autoencoder: empty data".into()));
    }
    let arch = NetworkArch::autoencoder(data.ncols(), bottleneck)?;
    let standardizer = cfg.standardize.then(|| Standardizer::fit(data));
    let xs = match &standardizer {
        Some(s) => s.apply(data),
        None => data.clone(),
    };
    let mut best: Option<(Network, f64)> = None;
    for restart in 0..cfg.restarts {
        let seed_r = seed::derive(cfg.seed, 0x4000 + restart as u64);
        let mut net = train_core(&xs, &xs, &arch, cfg, LossKind::MeanSquaredError, seed_r)?;
        net.standardizer = standardizer.clone();
        let recon = net.reconstruct_batch(data)?;
        let mse = (&recon - data).mapv(|d| d * d).mean().unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(_, b)| mse < *b) {
            best = Some((net, mse));
        }
    }
    let (net, mse) = best.expect("at least one restart");
    let recon = net.reconstruct_batch(data)?;
    let correlations = (0..data.ncols())
        .map(|j| column_correlation(&data.column(j).to_vec(), &recon.column(j).to_vec()))
        .collect();
    Ok((net, mse, correlations))
}

/// Pearson correlation; NaN when either side is degenerate.
fn column_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Cross-validated architecture choice: trains each candidate on 80% of
/// the pooled sample, scores threshold-0.5 accuracy on the holdout, and
/// returns the most accurate candidate (ties toward fewer parameters).
pub fn select_architecture(
    real: &Array2<f64>,
    sim: &Array2<f64>,
    candidates: &[NetworkArch],
    cfg: &TrainConfig,
    split: f64,
) -> Result<NetworkArch> {
    if candidates.is_empty() {
        return Err(Error::Domain("select_architecture: no candidates".into()));
    }
    if !(0.0 < split && split < 1.0) {
        return Err(Error::Domain(format!("select_architecture: split {split} outside (0, 1)")));
    }
    let split_rows = |data: &Array2<f64>, tag: u64| -> (Array2<f64>, Array2<f64>) {
        let n = data.nrows();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, 0x5000 + tag));
        idx.shuffle(&mut rng);
        let cut = (((n as f64) * split).round().max(1.0) as usize).min(n - 1);
        (data.select(Axis(0), &idx[..cut]), data.select(Axis(0), &idx[cut..]))
    };
    let (real_tr, real_ho) = split_rows(real, 0);
    let (sim_tr, sim_ho) = split_rows(sim, 1);
    let mut best: Option<(f64, usize, usize)> = None; // accuracy, params, index
    for (i, arch) in candidates.iter().enumerate() {
        let net = train_discriminator(&real_tr, &sim_tr, arch, cfg)?;
        let mut correct = 0usize;
        let total = real_ho.nrows() + sim_ho.nrows();
        for (rows, label) in [(&real_ho, 1.0), (&sim_ho, 0.0)] {
            let p = net.forward_batch(rows)?;
            correct +=
                p.iter().filter(|&&v| if label > 0.5 { v >= 0.5 } else { v < 0.5 }).count();
        }
        let acc = correct as f64 / total as f64;
        let params = arch.n_params();
        let better = match &best {
            None => true,
            Some((bacc, bparams, _)) => {
                acc > *bacc + 1e-12 || ((acc - *bacc).abs() <= 1e-12 && params < *bparams)
            }
        };
        if better {
            best = Some((acc, params, i));
        }
    }
    Ok(candidates[best.unwrap().2].clone())
}

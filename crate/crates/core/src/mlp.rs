//! A small fully connected binary classifier.
//!
//! Hidden layers use a smooth activation; the last layer is a single linear
//! unit whose output, the score `s(x) = beta + z(x)`, goes through a sigmoid.
//! Training minimises mean cross-entropy against whatever targets it is given;
//! for mislabeled data those are the observed labels, so the network
//! estimates the noisy posterior.
//!
//! Decisions are taken in score space: a probability threshold `t` becomes
//! the cutoff `ln(t / (1 - t))` and class 1 is assigned when the score
//! reaches it. Subtracting a shift from the final bias and using threshold
//! 1/2 therefore gives the same decisions as keeping the bias and using the
//! shifted cutoff.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{logit, sigmoid, LogitShift};
use crate::error::{Error, Result};
use crate::seeds::{self, Purpose};
use crate::synth::LabeledSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Logistic => sigmoid(v),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "logistic" => Some(Activation::Logistic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub hidden_activation: Activation,
}

impl Default for Architecture {
    /// Two inputs, two hidden layers of 15 tanh units.
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_sizes: vec![15, 15],
            hidden_activation: Activation::Tanh,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "all layer sizes must be at least 1, got input {} and hidden {:?}",
                self.input_dim, self.hidden_sizes
            )));
        }
        Ok(())
    }

    /// `(in_dim, out_dim)` of every layer including the output unit.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_sizes);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One dense layer; `weights` is row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Result of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub score: f64,
    pub prob: f64,
}

impl MlpParams {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    /// Uniform initialisation in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// with zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = seeds::stream(seed, Purpose::Init);
        for layer in &mut params.layers {
            let a = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-a..=a);
            }
        }
        Ok(params)
    }

    /// Builds parameters from explicit layers, checking shapes and values.
    pub fn from_layers(arch: &Architecture, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::domain(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (k, ((i, o), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.in_dim != *i
                || layer.out_dim != *o
                || layer.weights.len() != i * o
                || layer.biases.len() != *o
            {
                return Err(Error::domain(format!("layer {k} does not have shape {o}x{i}")));
            }
            if !layer.weights.iter().chain(&layer.biases).all(|v| v.is_finite()) {
                return Err(Error::domain(format!("layer {k} has non-finite entries")));
            }
        }
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// The constant term of the final score.
    pub fn output_bias(&self) -> f64 {
        self.layers.last().expect("at least one layer").biases[0]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(&l.weights);
            out.extend(&l.biases);
        }
        out
    }

    /// Inverse of [`MlpParams::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            activations: self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            deltas: self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
        }
    }

    /// Runs the hidden layers and returns the final unit's weighted input
    /// without its bias. Panics if `x` has the wrong length.
    fn pre_bias(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        assert_eq!(x.len(), self.arch.input_dim, "input dimension mismatch");
        let act = self.arch.hidden_activation;
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        for (k, layer) in hidden.iter().enumerate() {
            let (before, after) = scratch.activations.split_at_mut(k);
            let input: &[f64] = if k == 0 { x } else { &before[k - 1] };
            let out = &mut after[0];
            for (o, row) in layer.weights.chunks_exact(layer.in_dim).enumerate() {
                let v = row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + layer.biases[o];
                out[o] = act.apply(v);
            }
        }
        let last = &last[0];
        let input: &[f64] = if hidden.is_empty() {
            x
        } else {
            &scratch.activations[hidden.len() - 1]
        };
        last.weights.iter().zip(input).map(|(w, a)| w * a).sum::<f64>()
    }

    /// Score without input validation. Panics if `x` has the wrong length.
    pub fn score_with(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        self.pre_bias(x, scratch) + self.output_bias()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.score_with(x, &mut self.scratch())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Output> {
        if x.len() != self.arch.input_dim {
            return Err(Error::domain(format!(
                "expected {} inputs, got {}",
                self.arch.input_dim,
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("non-finite input"));
        }
        let score = self.score(x);
        Ok(Output {
            score,
            prob: sigmoid(score),
        })
    }

    /// Accumulates `scale * d loss_i / d theta` for one example into `grads`
    /// and returns the example's loss.
    fn backprop(&self, x: &[f64], target: f64, scale: f64, scratch: &mut Scratch, grads: &mut Gradients) -> f64 {
        let score = self.score_with(x, scratch);
        let loss = softplus(score) - target * score;
        let act = self.arch.hidden_activation;
        let n = self.layers.len();
        scratch.deltas[n - 1][0] = scale * (sigmoid(score) - target);

        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let input: &[f64] = if k == 0 { x } else { &scratch.activations[k - 1] };
            let g = &mut grads.layers[k];
            let delta = &scratch.deltas[k];
            for o in 0..layer.out_dim {
                let d = delta[o];
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if k > 0 {
                let (lower, upper) = scratch.deltas.split_at_mut(k);
                let below = &mut lower[k - 1];
                let delta = &upper[0];
                let acts = &scratch.activations[k - 1];
                for (i, b) in below.iter_mut().enumerate() {
                    let back: f64 = (0..layer.out_dim)
                        .map(|o| layer.weights[o * layer.in_dim + i] * delta[o])
                        .sum();
                    *b = back * act.derivative_from_output(acts[i]);
                }
            }
        }
        loss
    }
}

/// Reusable per-example buffers.
#[derive(Debug, Clone)]
pub struct Scratch {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

#[inline]
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Gradient of the mean loss, shaped like the parameters it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    /// Same ordering as [`MlpParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(&l.weights);
            out.extend(&l.biases);
        }
        out
    }
}

/// Feature rows with binary targets, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

/// Which label of a [`LabeledSample`] to train or score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Clean,
    Observed,
}

impl Examples {
    pub fn new(dim: usize, features: Vec<f64>, targets: Vec<u8>) -> Result<Self> {
        if dim == 0 || features.len() != dim * targets.len() {
            return Err(Error::domain(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                targets.len()
            )));
        }
        if targets.iter().any(|&t| t > 1) {
            return Err(Error::domain("targets must be 0 or 1"));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("non-finite feature value"));
        }
        Ok(Self {
            dim,
            features,
            targets: targets.into_iter().map(f64::from).collect(),
        })
    }

    pub fn from_samples(samples: &[LabeledSample], source: LabelSource) -> Self {
        let features = samples.iter().flat_map(|s| s.x).collect();
        let targets = samples
            .iter()
            .map(|s| match source {
                LabelSource::Clean => f64::from(s.y_clean),
                LabelSource::Observed => f64::from(s.z_observed),
            })
            .collect();
        Self {
            dim: 2,
            features,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    /// Examples at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            dim: self.dim,
            features: indices.iter().flat_map(|&i| self.x(i).iter().copied()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    fn check_against(&self, params: &MlpParams) -> Result<()> {
        if self.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        if self.dim != params.arch.input_dim {
            return Err(Error::domain(format!(
                "examples have {} features, network expects {}",
                self.dim, params.arch.input_dim
            )));
        }
        Ok(())
    }
}

/// Mean cross-entropy `-[t ln p + (1 - t) ln(1 - p)]`, evaluated from the
/// scores as `softplus(s) - t s`.
pub fn loss(params: &MlpParams, batch: &Examples) -> Result<f64> {
    batch.check_against(params)?;
    let mut scratch = params.scratch();
    let total: f64 = (0..batch.len())
        .map(|i| {
            let s = params.score_with(batch.x(i), &mut scratch);
            softplus(s) - batch.target(i) * s
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`loss`] by backpropagation.
pub fn grad(params: &MlpParams, batch: &Examples) -> Result<Gradients> {
    batch.check_against(params)?;
    let mut scratch = params.scratch();
    let mut grads = Gradients::zeros_like(params);
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        params.backprop(batch.x(i), batch.target(i), scale, &mut scratch, &mut grads);
    }
    Ok(grads)
}

/// Stop once the epoch loss has not improved on the best seen by more than
/// `tolerance` for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub tolerance: f64,
    pub patience: usize,
}

/// Step-size schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from the base rate to zero at the last update.
    Linear,
}

/// Mini-batch gradient descent with momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    /// L2 penalty coefficient added to the gradient; 0 disables it.
    pub weight_decay: f64,
    pub init_seed: u64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            lr_schedule: LrSchedule::Constant,
            momentum: 0.9,
            weight_decay: 0.0,
            init_seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(es.tolerance >= 0.0) {
                return bad("early_stop needs patience >= 1 and tolerance >= 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: MlpParams,
    /// Mean mini-batch loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Trains a fresh network on `data` from `cfg.init_seed`.
///
/// Examples are reshuffled every epoch from a stream derived from the same
/// seed, so the result is a pure function of data, architecture and config.
pub fn train(data: &Examples, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut params = MlpParams::init(arch, cfg.init_seed)?;
    data.check_against(&params)?;

    let mut scratch = params.scratch();
    let mut grads = Gradients::zeros_like(&params);
    let mut velocity = Gradients::zeros_like(&params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seeds::stream(cfg.init_seed, Purpose::Shuffle);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;

    let total_updates = cfg.epochs * data.len().div_ceil(cfg.batch_size);
    let mut update = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let lr = match cfg.lr_schedule {
                LrSchedule::Constant => cfg.learning_rate,
                LrSchedule::Linear => {
                    cfg.learning_rate * (1.0 - update as f64 / total_updates as f64)
                }
            };
            update += 1;
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += params.backprop(data.x(i), data.target(i), scale, &mut scratch, &mut grads);
            }
            for ((p, g), v) in params.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
                for ((w, g), v) in p.weights.iter_mut().zip(&g.weights).zip(v.weights.iter_mut()) {
                    *v = cfg.momentum * *v - lr * (g + cfg.weight_decay * *w);
                    *w += *v;
                }
                for ((b, g), v) in p.biases.iter_mut().zip(&g.biases).zip(v.biases.iter_mut()) {
                    *v = cfg.momentum * *v - lr * g;
                    *b += *v;
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: mean,
                learning_rate: cfg.learning_rate,
                batch_size: cfg.batch_size,
            });
        }
        epoch_losses.push(mean);

        if let Some(es) = cfg.early_stop {
            if mean < best - es.tolerance {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    Ok(TrainReport {
        params,
        epoch_losses,
        stopped_early,
    })
}

/// Copy of `params` with `delta` subtracted from the final-layer bias.
pub fn shift_bias(params: &MlpParams, delta: LogitShift) -> MlpParams {
    let mut out = params.clone();
    out.layers.last_mut().expect("at least one layer").biases[0] -= delta.value();
    out
}

/// Class 1 iff the score reaches `cutoff`, with ties going to class 1.
///
/// The comparison is made against the final unit's bias-free input, so a bias
/// shift and an equal cutoff shift give identical decisions.
pub fn classify_score_space(params: &MlpParams, x: &[f64], cutoff: f64, scratch: &mut Scratch) -> u8 {
    let z = params.pre_bias(x, scratch);
    u8::from(z >= cutoff - params.output_bias())
}

/// Class decision at a probability threshold in `(0, 1)`.
pub fn classify(params: &MlpParams, x: &[f64], threshold: f64) -> Result<u8> {
    let cutoff = logit(threshold)?;
    params.forward(x)?;
    Ok(classify_score_space(params, x, cutoff, &mut params.scratch()))
}

/// Decisions for many inputs at one threshold; the cutoff is computed once.
pub fn classify_all(params: &MlpParams, data: &Examples, threshold: f64) -> Result<Vec<u8>> {
    data.check_against(params)?;
    let cutoff = logit(threshold)?;
    let mut scratch = params.scratch();
    Ok((0..data.len())
        .map(|i| classify_score_space(params, data.x(i), cutoff, &mut scratch))
        .collect())
}

/// Confusion counts of decisions against targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl Confusion {
    pub fn from_decisions(decisions: &[u8], data: &Examples) -> Self {
        let mut c = Confusion::default();
        for (i, &d) in decisions.iter().enumerate() {
            match (d, data.target(i) == 1.0) {
                (1, true) => c.true_pos += 1,
                (1, false) => c.false_pos += 1,
                (_, false) => c.true_neg += 1,
                (_, true) => c.false_neg += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_pos + self.true_neg) as f64 / self.total() as f64
    }
}

/// Accuracy of thresholded decisions against the targets of `data`.
pub fn accuracy(params: &MlpParams, data: &Examples, threshold: f64) -> Result<f64> {
    let decisions = classify_all(params, data, threshold)?;
    Ok(Confusion::from_decisions(&decisions, data).accuracy())
}

const MODEL_MAGIC: &str = "noisy-label-mlp 1";

/// Plain-text model: a header naming the architecture, then each layer's
/// weights (row-major) and biases with 17 significant digits, which
/// reproduces every value exactly on load.
pub fn to_text(params: &MlpParams) -> String {
    let mut s = String::new();
    let arch = &params.arch;
    writeln!(s, "{MODEL_MAGIC}").unwrap();
    writeln!(s, "input_dim {}", arch.input_dim).unwrap();
    let hidden: Vec<String> = arch.hidden_sizes.iter().map(usize::to_string).collect();
    writeln!(s, "hidden {}", hidden.join(" ")).unwrap();
    writeln!(s, "activation {}", arch.hidden_activation.name()).unwrap();
    for (k, l) in params.layers.iter().enumerate() {
        writeln!(s, "layer {k} {} {}", l.out_dim, l.in_dim).unwrap();
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        writeln!(s, "weights {}", fmt(&l.weights)).unwrap();
        writeln!(s, "biases {}", fmt(&l.biases)).unwrap();
    }
    s
}

/// Parses the output of [`to_text`]; `origin` only labels diagnostics.
pub fn from_text(text: &str, origin: &Path) -> Result<MlpParams> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
    };
    let keyed = |(n, line): (usize, &str), key: &str| -> Result<(usize, Vec<String>)> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(err(n, format!("expected `{key}` line, found {line:?}")));
        }
        Ok((n, parts.map(str::to_string).collect()))
    };
    let usize_of = |n: usize, v: &str| v.parse::<usize>().map_err(|_| err(n, format!("bad integer {v:?}")));
    let floats_of = |n: usize, vals: &[String]| -> Result<Vec<f64>> {
        vals.iter()
            .map(|v| v.parse::<f64>().map_err(|_| err(n, format!("bad number {v:?}"))))
            .collect()
    };

    let (n, magic) = next("header")?;
    if magic != MODEL_MAGIC {
        return Err(err(n, format!("not a model file (expected {MODEL_MAGIC:?})")));
    }
    let (n, v) = keyed(next("input_dim")?, "input_dim")?;
    if v.len() != 1 {
        return Err(err(n, "input_dim takes one value".into()));
    }
    let input_dim = usize_of(n, &v[0])?;
    let (n, v) = keyed(next("hidden")?, "hidden")?;
    let hidden_sizes = v.iter().map(|h| usize_of(n, h)).collect::<Result<Vec<_>>>()?;
    let (n, v) = keyed(next("activation")?, "activation")?;
    let hidden_activation = v
        .first()
        .and_then(|a| Activation::from_name(a))
        .ok_or_else(|| err(n, format!("unknown activation {v:?}")))?;
    let arch = Architecture {
        input_dim,
        hidden_sizes,
        hidden_activation,
    };
    arch.validate().map_err(|e| err(n, e.to_string()))?;

    let mut layers = Vec::new();
    for (k, (i, o)) in arch.layer_shapes().into_iter().enumerate() {
        let (n, v) = keyed(next("layer")?, "layer")?;
        let expect = [k.to_string(), o.to_string(), i.to_string()];
        if v != expect {
            return Err(err(n, format!("expected `layer {k} {o} {i}`")));
        }
        let (n, v) = keyed(next("weights")?, "weights")?;
        let weights = floats_of(n, &v)?;
        if weights.len() != i * o {
            return Err(err(n, format!("expected {} weights, found {}", i * o, weights.len())));
        }
        let (n, v) = keyed(next("biases")?, "biases")?;
        let biases = floats_of(n, &v)?;
        if biases.len() != o {
            return Err(err(n, format!("expected {o} biases, found {}", biases.len())));
        }
        layers.push(Layer {
            in_dim: i,
            out_dim: o,
            weights,
            biases,
        });
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(err(n, format!("trailing content {extra:?}")));
    }
    MlpParams::from_layers(&arch, layers).map_err(|e| err(0, e.to_string()))
}

pub fn save(params: &MlpParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MlpParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::threshold_from_shift;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, arch: &Architecture, scale: f64) -> MlpParams {
        let mut p = MlpParams::zeros(arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-scale..scale)).collect();
        p.set_flat(&flat).unwrap();
        p
    }

    fn random_batch(seed: u64, n: usize) -> Examples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targets = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
        Examples::new(2, features, targets).unwrap()
    }

    /// Independent re-evaluation of the network, allocating per layer.
    fn naive_score(p: &MlpParams, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let n = p.layers().len();
        for (k, l) in p.layers().iter().enumerate() {
            let mut next = vec![0.0; l.out_dim];
            for o in 0..l.out_dim {
                let mut v = l.biases[o];
                for i in 0..l.in_dim {
                    v += l.weights[o * l.in_dim + i] * a[i];
                }
                next[o] = if k + 1 == n { v } else { p.architecture().hidden_activation.apply(v) };
            }
            a = next;
        }
        a[0]
    }

    #[test]
    fn zero_network_is_neutral() {
        let p = MlpParams::zeros(&Architecture::default()).unwrap();
        let out = p.forward(&[0.3, -2.0]).unwrap();
        assert_eq!(out.score, 0.0);
        assert_eq!(out.prob, 0.5);
        let batch = random_batch(1, 40);
        assert_abs_diff_eq!(loss(&p, &batch).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(loss(&p, &batch).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = MlpParams::zeros(&Architecture::default()).unwrap();
        assert!(p.forward(&[f64::NAN, 0.0]).is_err());
        assert!(p.forward(&[f64::INFINITY, 0.0]).is_err());
        assert!(p.forward(&[0.0]).is_err());
    }

    #[test]
    fn forward_matches_reevaluation() {
        let arch = Architecture::default();
        for seed in 0..50 {
            let p = random_params(seed, &arch, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let out = p.forward(&x).unwrap();
            let s = naive_score(&p, &x);
            assert_abs_diff_eq!(out.score, s, epsilon = 1e-12);
            assert_abs_diff_eq!(out.prob, 1.0 / (1.0 + (-s).exp()), epsilon = 1e-12);
            assert!(out.prob > 0.0 && out.prob < 1.0);
        }
        assert_abs_diff_eq!(sigmoid(3.7) + sigmoid(-3.7), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn loss_matches_naive_summation() {
        let arch = Architecture::default();
        for seed in 0..20 {
            let p = random_params(seed, &arch, 1.0);
            let batch = random_batch(seed + 7, 33);
            let mut total = 0.0;
            for i in 0..batch.len() {
                let prob = 1.0 / (1.0 + (-naive_score(&p, batch.x(i))).exp());
                let t = batch.target(i);
                total += -(t * prob.ln() + (1.0 - t) * (1.0 - prob).ln());
            }
            assert_abs_diff_eq!(loss(&p, &batch).unwrap(), total / batch.len() as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_and_grad_reject_empty_batch() {
        let p = MlpParams::zeros(&Architecture::default()).unwrap();
        let empty = Examples::new(2, vec![], vec![]).unwrap();
        assert!(loss(&p, &empty).is_err());
        assert!(grad(&p, &empty).is_err());
        let wide = Examples::new(3, vec![0.0; 3], vec![1]).unwrap();
        assert!(loss(&p, &wide).is_err());
    }

    /// Network whose score is about +-200 on inputs with x1 = +-1: every
    /// probability equals its target exactly in floating point.
    fn interpolating_network() -> (MlpParams, Examples) {
        let arch = Architecture::default();
        let mut p = MlpParams::zeros(&arch).unwrap();
        p.layers_mut()[0].weights[0] = 5.0;
        p.layers_mut()[1].weights[0] = 5.0;
        p.layers_mut()[2].weights[0] = 200.0;
        let features = vec![1.0, 0.3, -1.0, 2.0, 1.0, -1.5, -1.0, 0.0];
        let batch = Examples::new(2, features, vec![1, 0, 1, 0]).unwrap();
        (p, batch)
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let (p, batch) = interpolating_network();
        assert!(loss(&p, &batch).unwrap() < 1e-80);
        for g in grad(&p, &batch).unwrap().to_flat() {
            assert!(g.abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let p = random_params(3, &Architecture::default(), 1.0);
        let batch = random_batch(4, 17);
        let idx: Vec<usize> = (0..17).chain(0..17).collect();
        let doubled = batch.select(&idx);
        let a = grad(&p, &batch).unwrap().to_flat();
        let b = grad(&p, &doubled).unwrap().to_flat();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (seed, act) in (0..10).flat_map(|s| [(s, Activation::Tanh), (s + 100, Activation::Logistic)]) {
            let arch = Architecture {
                hidden_activation: act,
                ..Architecture::default()
            };
            let p = random_params(seed, &arch, 1.0);
            let batch = random_batch(seed + 31, 16);
            let analytic = grad(&p, &batch).unwrap().to_flat();
            let base = p.to_flat();
            let h = 1e-5;
            let mut probe = p.clone();
            for (j, a) in analytic.iter().enumerate() {
                let mut up = base.clone();
                up[j] += h;
                probe.set_flat(&up).unwrap();
                let lp = loss(&probe, &batch).unwrap();
                up[j] -= 2.0 * h;
                probe.set_flat(&up).unwrap();
                let lm = loss(&probe, &batch).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} coord {j}: analytic {a}, numeric {numeric}");
            }
        }
    }

    fn examples(n: usize, seed: u64, separation: f64) -> Examples {
        let problem = crate::synth::make_random_problem(seed, separation).unwrap();
        let data = crate::synth::sample_dataset(&problem, n, seed).unwrap();
        Examples::from_samples(&data, LabelSource::Observed)
    }

    fn easy_examples(n: usize, seed: u64) -> Examples {
        examples(n, seed, 10.0)
    }

    #[test]
    fn separable_problem_is_learned() {
        let data = easy_examples(2000, 1);
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let report = train(&data, &Architecture::default(), &cfg).unwrap();
        let acc = accuracy(&report.params, &data, 0.5).unwrap();
        assert!(acc > 0.99, "{acc}");
        assert_eq!(report.epoch_losses.len(), 20);
    }

    #[test]
    fn early_epoch_losses_do_not_increase() {
        // Well-separated problems; on overlapping ones the constant-step
        // plateau jitter is a few 1e-3.
        for seed in [2, 3, 4, 5] {
            let data = examples(5000, seed, 10.0);
            let cfg = TrainConfig {
                epochs: 6,
                init_seed: seed,
                ..TrainConfig::default()
            };
            let report = train(&data, &Architecture::default(), &cfg).unwrap();
            for w in report.epoch_losses.windows(2).take(5) {
                assert!(w[1] <= w[0] + 1e-3, "seed {seed}: {:?}", report.epoch_losses);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = easy_examples(500, 2);
        let cfg = TrainConfig {
            epochs: 5,
            init_seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&data, &Architecture::default(), &cfg).unwrap();
        let b = train(&data, &Architecture::default(), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        let c = train(&data, &Architecture::default(), &TrainConfig { init_seed: 10, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn divergence_is_reported() {
        let data = easy_examples(200, 3);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            momentum: 0.99,
            ..TrainConfig::default()
        };
        match train(&data, &Architecture::default(), &cfg) {
            Err(Error::Divergence { .. }) => {}
            // a huge step can also saturate harmlessly; the loss must stay finite then
            Ok(r) => assert!(r.epoch_losses.iter().all(|l| l.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn early_stop_halts_training() {
        let data = easy_examples(300, 4);
        let cfg = TrainConfig {
            epochs: 500,
            early_stop: Some(EarlyStop {
                tolerance: 1e-2,
                patience: 2,
            }),
            ..TrainConfig::default()
        };
        let r = train(&data, &Architecture::default(), &cfg).unwrap();
        assert!(r.stopped_early);
        assert!(r.epoch_losses.len() < 500);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok }.validate().is_err());
        let arch = Architecture {
            hidden_sizes: vec![15, 0],
            ..Architecture::default()
        };
        assert!(MlpParams::zeros(&arch).is_err());
    }

    #[test]
    fn shift_bias_touches_only_output_bias() {
        let p = random_params(5, &Architecture::default(), 1.0);
        assert_eq!(shift_bias(&p, LogitShift(0.0)), p);
        let delta = LogitShift(0.731);
        let q = shift_bias(&p, delta);
        let (a, b) = (p.to_flat(), q.to_flat());
        let last = a.len() - 1;
        assert_eq!(a[..last], b[..last]);
        assert_eq!(b[last], a[last] - 0.731);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            assert_abs_diff_eq!(p.score(&x) - q.score(&x), 0.731, epsilon = 1e-12);
        }
    }

    #[test]
    fn classify_threshold_semantics() {
        let p = random_params(8, &Architecture::default(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let s = p.score(&x);
            assert_eq!(classify(&p, &x, 0.5).unwrap(), u8::from(s >= 0.0));
            let mut prev = 1;
            for thr in [0.01, 0.2, 0.4, 0.5, 0.6, 0.8, 0.99] {
                let d = classify(&p, &x, thr).unwrap();
                assert!(d <= prev, "raising the threshold turned 0 into 1");
                prev = d;
            }
        }
        assert!(classify(&p, &[0.0, 0.0], 0.0).is_err());
        assert!(classify(&p, &[0.0, 0.0], 1.0).is_err());
        // tie goes to class 1
        let zero = MlpParams::zeros(&Architecture::default()).unwrap();
        assert_eq!(classify(&zero, &[1.0, 1.0], 0.5).unwrap(), 1);
    }

    #[test]
    fn exact_shift_duality_in_score_space() {
        let p = random_params(10, &Architecture::default(), 1.0);
        let mut scratch = p.scratch();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let delta = rng.random_range(-3.0..3.0);
            let shifted = shift_bias(&p, LogitShift(delta));
            assert_eq!(
                classify_score_space(&p, &x, delta, &mut scratch),
                classify_score_space(&shifted, &x, 0.0, &mut scratch)
            );
            assert_eq!(
                classify(&p, &x, threshold_from_shift(LogitShift(delta))).unwrap(),
                classify(&shifted, &x, 0.5).unwrap()
            );
        }
    }

    #[test]
    fn model_text_rejects_garbage() {
        let p = random_params(12, &Architecture::default(), 1.0);
        let text = to_text(&p);
        let origin = Path::new("m.txt");
        assert!(matches!(from_text("hello\n", origin), Err(Error::Parse { line: 1, .. })));
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(from_text(&truncated, origin).is_err());
        let corrupted = text.replacen("weights ", "weights x", 1);
        assert!(matches!(from_text(&corrupted, origin), Err(Error::Parse { line: 6, .. })));
    }

    proptest! {
        #[test]
        fn model_text_round_trip_is_bit_exact(seed in 0u64..u64::MAX, scale in 1e-3..1e3f64,
                                              h1 in 1usize..6, h2 in 1usize..6) {
            let arch = Architecture { input_dim: 2, hidden_sizes: vec![h1, h2], hidden_activation: Activation::Tanh };
            let p = random_params(seed, &arch, scale);
            let back = from_text(&to_text(&p), Path::new("mem")).unwrap();
            let bits = |q: &MlpParams| q.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&p));
            prop_assert_eq!(back.architecture(), p.architecture());
        }
    }
}

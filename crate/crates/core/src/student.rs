//! Small parametric scorers, their ranking and distillation losses, analytic
//! gradients, and a minibatch Adam trainer.
//!
//! Parameters live in one flat vector. Layers are stored in order from input
//! to output; each layer stores its weight matrix row-major (one row per
//! output unit) followed by its bias vector. A linear scorer is a network
//! with no hidden layers. Hidden layers use `tanh`, and the output is a single
//! unbounded logit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pile::distinct_label_pairs;
use crate::types::{Dataset, QueryGroup};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp { hidden_sizes: Vec<usize> },
}

impl Architecture {
    /// Layer widths from input to output.
    fn widths(&self, feature_dim: usize) -> Vec<usize> {
        let mut w = vec![feature_dim];
        if let Architecture::Mlp { hidden_sizes } = self {
            w.extend(hidden_sizes);
        }
        w.push(1);
        w
    }

    pub fn num_params(&self, feature_dim: usize) -> usize {
        self.widths(feature_dim)
            .windows(2)
            .map(|p| p[1] * (p[0] + 1))
            .sum()
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    /// `linear`, or `mlp:16,16` for hidden layer widths.
    fn from_str(s: &str) -> Result<Self> {
        if s == "linear" {
            return Ok(Architecture::Linear);
        }
        let widths = s
            .strip_prefix("mlp:")
            .ok_or_else(|| Error::InvalidInput(format!("unknown architecture '{s}'")))?;
        let hidden_sizes = widths
            .split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::InvalidInput(format!(
                    "bad hidden width '{w}' in '{s}'"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Architecture::Mlp { hidden_sizes })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    pub architecture: Architecture,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
}

impl StudentParams {
    pub fn zeros(architecture: Architecture, feature_dim: usize) -> Self {
        let n = architecture.num_params(feature_dim);
        Self {
            architecture,
            feature_dim,
            weights: vec![0.0; n],
        }
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn random(architecture: Architecture, feature_dim: usize, rng: &mut impl Rng) -> Self {
        let mut params = Self::zeros(architecture, feature_dim);
        let widths = params.architecture.widths(feature_dim);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
            for w in &mut params.weights[offset..offset + fan_in * fan_out] {
                let z: f64 = StandardNormal.sample(rng);
                *w = z * scale;
            }
            offset += fan_out * (fan_in + 1);
        }
        params
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.architecture.num_params(self.feature_dim);
        if self.weights.len() != expected {
            return Err(Error::InvalidInput(format!(
                "{:?} over {} features needs {expected} weights, found {}",
                self.architecture,
                self.feature_dim,
                self.weights.len()
            )));
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidInput(format!("weight {i} is not finite")));
        }
        Ok(())
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::InvalidInput(format!(
                "model expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        Ok(())
    }

    /// Runs the network, returning the activations of every layer (input
    /// first, scalar output last).
    fn forward(&self, features: &[f64]) -> Vec<Vec<f64>> {
        let widths = self.architecture.widths(self.feature_dim);
        let last = widths.len() - 2;
        let mut acts = Vec::with_capacity(widths.len());
        acts.push(features.to_vec());
        let mut offset = 0;
        for (layer, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = &self.weights[offset..offset + fan_in * fan_out];
            let b = &self.weights[offset + fan_in * fan_out..offset + fan_out * (fan_in + 1)];
            let input = &acts[layer];
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let z = dot(&w[o * fan_in..(o + 1) * fan_in], input) + b[o];
                    if layer == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
            offset += fan_out * (fan_in + 1);
        }
        acts
    }

    /// Adds `coeff * d score / d theta` into `grad`; returns the score.
    fn accumulate_grad(&self, features: &[f64], coeff: f64, grad: &mut [f64]) -> f64 {
        let widths = self.architecture.widths(self.feature_dim);
        let acts = self.forward(features);
        let score = acts[acts.len() - 1][0];

        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            offsets.push(offset);
            offset += pair[1] * (pair[0] + 1);
        }

        // gradient w.r.t. the pre-activations of the current layer
        let mut delta = vec![coeff];
        for layer in (0..widths.len() - 1).rev() {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let base = offsets[layer];
            let input = &acts[layer];
            for o in 0..fan_out {
                let row = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
                grad[base + fan_in * fan_out + o] += delta[o];
            }
            if layer == 0 {
                break;
            }
            let w = &self.weights[base..base + fan_in * fan_out];
            delta = (0..fan_in)
                .map(|i| {
                    let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                    back * (1.0 - input[i] * input[i])
                })
                .collect();
        }
        score
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relevance logit for one document.
pub fn score(params: &StudentParams, features: &[f64]) -> Result<f64> {
    params.check_dim(features)?;
    let acts = params.forward(features);
    Ok(acts[acts.len() - 1][0])
}

pub fn score_group(params: &StudentParams, group: &QueryGroup) -> Result<Vec<f64>> {
    group
        .docs
        .iter()
        .map(|d| score(params, &d.features))
        .collect()
}

/// Logistic pairwise loss `log(1 + exp(-(s_hi - s_lo)))`.
pub fn pairwise_loss(s_hi: f64, s_lo: f64) -> f64 {
    softplus(s_lo - s_hi)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Squared error between the student's logit and the distillation target.
pub fn kd_loss(student_score: f64, target_logit: f64) -> f64 {
    let d = student_score - target_logit;
    d * d
}

fn check_targets(group: &QueryGroup, targets: Option<&[f64]>) -> Result<()> {
    match targets {
        Some(t) if t.len() != group.len() => Err(Error::Alignment {
            query_id: group.query_id.clone(),
            message: format!("{} targets for {} documents", t.len(), group.len()),
        }),
        _ => Ok(()),
    }
}

/// Per-document derivative of the group objective w.r.t. each score, plus the
/// objective itself.
fn group_objective(
    scores: &[f64],
    group: &QueryGroup,
    targets: Option<&[f64]>,
    alpha: f64,
) -> (f64, Vec<f64>) {
    let mut coeffs = vec![0.0; scores.len()];
    let mut loss = 0.0;
    let pairs = distinct_label_pairs(&group.labels());
    if !pairs.is_empty() {
        let norm = 1.0 / pairs.len() as f64;
        for &(hi, lo) in &pairs {
            loss += pairwise_loss(scores[hi], scores[lo]) * norm;
            let d = -sigmoid(scores[lo] - scores[hi]) * norm;
            coeffs[hi] += d;
            coeffs[lo] -= d;
        }
    }
    if let Some(targets) = targets.filter(|_| alpha != 0.0) {
        let norm = alpha / scores.len() as f64;
        for (i, (&s, &t)) in scores.iter().zip(targets).enumerate() {
            loss += kd_loss(s, t) * norm;
            coeffs[i] += 2.0 * (s - t) * norm;
        }
    }
    (loss, coeffs)
}

/// Mean pairwise loss over the group's label-distinct pairs plus `alpha`
/// times the mean distillation loss over its documents.
pub fn total_loss(
    params: &StudentParams,
    group: &QueryGroup,
    targets: Option<&[f64]>,
    alpha: f64,
) -> Result<f64> {
    check_targets(group, targets)?;
    let scores = score_group(params, group)?;
    Ok(group_objective(&scores, group, targets, alpha).0)
}

/// Analytic gradient of [`total_loss`] w.r.t. the flat parameter vector.
pub fn gradient(
    params: &StudentParams,
    group: &QueryGroup,
    targets: Option<&[f64]>,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_targets(group, targets)?;
    let scores = score_group(params, group)?;
    let (_, coeffs) = group_objective(&scores, group, targets, alpha);
    let mut grad = vec![0.0; params.weights.len()];
    for (doc, &c) in group.docs.iter().zip(&coeffs) {
        if c != 0.0 {
            params.accumulate_grad(&doc.features, c, &mut grad);
        }
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_pairs: usize,
    pub epochs: usize,
    /// Weight of the distillation term.
    pub alpha: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for the given scorer: learning rate 1e-2 for linear models
    /// and 1e-3 for MLPs, Adam betas (0.9, 0.99).
    pub fn for_architecture(architecture: Architecture) -> Self {
        let learning_rate = match architecture {
            Architecture::Linear => 1e-2,
            Architecture::Mlp { .. } => 1e-3,
        };
        Self {
            architecture,
            learning_rate,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            batch_pairs: 64,
            epochs: 10,
            alpha: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| b > 0.0 && b < 1.0;
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !beta_ok(self.adam_beta1) || !beta_ok(self.adam_beta2) {
            return Err(Error::Config(format!(
                "Adam betas ({}, {}) must lie in (0, 1)",
                self.adam_beta1, self.adam_beta2
            )));
        }
        if self.batch_pairs == 0 {
            return Err(Error::Config("batch size must be at least one pair".into()));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "alpha {} must be finite and >= 0",
                self.alpha
            )));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_architecture(Architecture::Linear)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean pairwise loss over every label-distinct pair in the dataset.
    pub pairwise_loss: f64,
    /// Mean distillation loss over every document, when targets are given.
    pub kd_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Entry 0 is measured before the first update.
    pub epochs: Vec<EpochLog>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
}

impl Adam {
    const EPS: f64 = 1e-8;

    fn new(n: usize, config: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
        }
    }

    fn apply(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..weights.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            weights[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Fisher-Yates with `u64` index draws, identical on every platform.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

fn check_alignment(dataset: &Dataset, targets: Option<&[Vec<f64>]>) -> Result<()> {
    let Some(targets) = targets else {
        return Ok(());
    };
    if targets.len() != dataset.groups.len() {
        let query_id = dataset.groups.get(targets.len()).map_or_else(
            || "<extra target group>".to_string(),
            |g| g.query_id.clone(),
        );
        return Err(Error::Alignment {
            query_id,
            message: format!(
                "{} target groups for {} query groups",
                targets.len(),
                dataset.groups.len()
            ),
        });
    }
    for (group, t) in dataset.groups.iter().zip(targets) {
        check_targets(group, Some(t))?;
    }
    Ok(())
}

fn dataset_losses(
    params: &StudentParams,
    dataset: &Dataset,
    targets: Option<&[Vec<f64>]>,
) -> Result<EpochLog> {
    let (mut pair_sum, mut pair_count) = (0.0, 0usize);
    let (mut kd_sum, mut doc_count) = (0.0, 0usize);
    for (gi, group) in dataset.groups.iter().enumerate() {
        let scores = score_group(params, group)?;
        for (hi, lo) in distinct_label_pairs(&group.labels()) {
            pair_sum += pairwise_loss(scores[hi], scores[lo]);
            pair_count += 1;
        }
        if let Some(t) = targets {
            kd_sum += scores
                .iter()
                .zip(&t[gi])
                .map(|(&s, &t)| kd_loss(s, t))
                .sum::<f64>();
            doc_count += scores.len();
        }
    }
    Ok(EpochLog {
        epoch: 0,
        pairwise_loss: if pair_count == 0 {
            0.0
        } else {
            pair_sum / pair_count as f64
        },
        kd_loss: targets.map(|_| {
            if doc_count == 0 {
                0.0
            } else {
                kd_sum / doc_count as f64
            }
        }),
    })
}

/// Trains a scorer with minibatch Adam.
///
/// Each epoch shuffles every label-distinct pair of the dataset and walks it
/// in batches of `batch_pairs`. A batch's loss is the mean over its pairs of
/// the pairwise loss plus `alpha` times the mean distillation loss of the
/// pair's two documents. `targets` holds one target per document, aligned
/// with the dataset's groups.
pub fn train(
    dataset: &Dataset,
    targets: Option<&[Vec<f64>]>,
    config: &TrainConfig,
) -> Result<(StudentParams, TrainingLog)> {
    config.validate()?;
    check_alignment(dataset, targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params =
        StudentParams::random(config.architecture.clone(), dataset.feature_dim, &mut rng);
    let kd_alpha = targets
        .filter(|_| config.alpha != 0.0)
        .map(|t| (t, config.alpha));

    let mut pairs: Vec<(usize, usize, usize)> = dataset
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| {
            distinct_label_pairs(&group.labels())
                .into_iter()
                .map(move |(hi, lo)| (g, hi, lo))
        })
        .collect();

    let mut log = TrainingLog::default();
    log.epochs.push(dataset_losses(&params, dataset, targets)?);

    let mut adam = Adam::new(params.weights.len(), config);
    let mut grad = vec![0.0; params.weights.len()];
    for epoch in 1..=config.epochs {
        shuffle(&mut pairs, &mut rng);
        for batch in pairs.chunks(config.batch_pairs) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let norm = 1.0 / batch.len() as f64;
            for &(g, hi, lo) in batch {
                let docs = &dataset.groups[g].docs;
                let (x_hi, x_lo) = (&docs[hi].features, &docs[lo].features);
                let s_hi = score(&params, x_hi)?;
                let s_lo = score(&params, x_lo)?;
                let d = -sigmoid(s_lo - s_hi) * norm;
                let (mut c_hi, mut c_lo) = (d, -d);
                if let Some((t, alpha)) = kd_alpha {
                    c_hi += alpha * (s_hi - t[g][hi]) * norm;
                    c_lo += alpha * (s_lo - t[g][lo]) * norm;
                }
                params.accumulate_grad(x_hi, c_hi, &mut grad);
                params.accumulate_grad(x_lo, c_lo, &mut grad);
            }
            adam.apply(&mut params.weights, &grad);
        }
        let mut entry = dataset_losses(&params, dataset, targets)?;
        entry.epoch = epoch;
        let finite = entry.pairwise_loss.is_finite() && entry.kd_loss.is_none_or(f64::is_finite);
        if !finite || params.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Training {
                epoch,
                message: format!(
                    "non-finite loss (pairwise {}, distillation {:?})",
                    entry.pairwise_loss, entry.kd_loss
                ),
            });
        }
        log.epochs.push(entry);
    }
    Ok((params, log))
}

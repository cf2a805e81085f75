//! Regularised pseudo-likelihood and its maximisation.
//!
//! The objective is `Σ_t log P(r_t | N(t)) - ½ Σ_k (w_k / σ_k)²` over all
//! training ratings `t`. [`train`] runs per-user stochastic gradient ascent:
//! each step uses the local-conditional terms of one user's ratings plus a
//! share of the regulariser proportional to the batch size, so one epoch
//! applies exactly one full prior pull. [`train_full_batch`] runs L-BFGS
//! on the whole objective and is meant for small instances.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::SelectionConfig;
use crate::dataset::{AttributeCatalog, ItemId, Rating, RatingTable, UserId};
use crate::error::{Error, Result};
use crate::features::{Block, FeatureToggles, IdentityTying, Layout, ParameterVector, Sigma};
use crate::model::ModelContext;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub sigma: Sigma,
    pub epochs: usize,
    /// Seed of the per-epoch user shuffle.
    pub seed: u64,
    /// Abort when an epoch ends with objective below
    /// `previous - divergence_tolerance * |previous|`.
    pub divergence_tolerance: f64,
    /// Learning rate at epoch `e` is `learning_rate / (1 + decay * e)`.
    pub decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            sigma: Sigma::uniform(1.0),
            epochs: 3,
            seed: 0,
            divergence_tolerance: 0.5,
            decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning rate must be a finite non-negative number, got {}", self.learning_rate));
        }
        for (name, s) in [
            ("identity", self.sigma.identity),
            ("content", self.sigma.content),
            ("correlation", self.sigma.correlation),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                problems.push(format!("sigma ({name}) must be positive, got {s}"));
            }
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if !(self.decay >= 0.0) {
            problems.push(format!("decay must be non-negative, got {}", self.decay));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Regularised pseudo-log-likelihood after the epoch.
    pub objective: f64,
    /// Mean L2 norm of the per-user batch gradients.
    pub mean_gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_objective: f64,
    pub epochs: Vec<EpochStats>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn final_objective(&self) -> f64 {
        self.epochs.last().map_or(self.initial_objective, |e| e.objective)
    }
}

/// log P(observed | N) of one node and its sparse gradient.
pub fn node_contribution(
    ctx: &ModelContext,
    params: &ParameterVector,
    user: UserId,
    item: ItemId,
    observed: u8,
) -> (f64, Vec<(usize, f64)>) {
    let layout = params.layout();
    let view = ctx.node_view(params, user, item);
    let logp = view.log_potentials();
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logp.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let probs: Vec<f64> = logp.iter().map(|l| (l - log_z).exp()).collect();
    let log_prob = logp[observed as usize - 1] - log_z;

    let expect = |f: &dyn Fn(u8) -> f64| -> f64 {
        probs.iter().enumerate().map(|(k, p)| p * f(k as u8 + 1)).sum()
    };
    let d_item = view.item_feature(observed) - expect(&|r| view.item_feature(r));
    let d_user = view.user_feature(observed) - expect(&|r| view.user_feature(r));

    let features = ctx.features();
    let mut grad = Vec::new();
    if features.identity {
        if let Some(k) = layout.item_identity(item) {
            grad.push((k, d_item));
        }
        if let Some(k) = layout.user_identity(user) {
            grad.push((k, d_user));
        }
    }
    if features.content {
        for &d in ctx.attrs().user_dims(user) {
            grad.push((layout.content_user(d), d_item));
        }
        for &d in ctx.attrs().item_dims(item) {
            grad.push((layout.content_item(d), d_user));
        }
    }
    for e in &view.edges {
        let observed_f = e.feature(observed, view.scale);
        grad.push((e.param, observed_f - expect(&|r| e.feature(r, view.scale))));
    }
    (log_prob, grad)
}

/// `-½ Σ (w / σ)²`
pub fn regularizer(params: &ParameterVector, sigma: &Sigma) -> f64 {
    let layout = params.layout();
    Block::ALL
        .iter()
        .map(|&b| {
            let s2 = sigma.for_block(b).powi(2);
            -0.5 * params.weights()[layout.range(b)].iter().map(|w| w * w).sum::<f64>() / s2
        })
        .sum()
}

/// Sum of log local conditionals over the training ratings.
pub fn log_pseudo_likelihood(ctx: &ModelContext, params: &ParameterVector) -> f64 {
    par::map_slice(ctx.table().ratings(), |r| {
        node_contribution(ctx, params, r.user, r.item, r.value).0
    })
    .into_iter()
    .sum()
}

/// Regularised log pseudo-likelihood.
pub fn pseudo_log_likelihood(ctx: &ModelContext, params: &ParameterVector, sigma: &Sigma) -> f64 {
    log_pseudo_likelihood(ctx, params) + regularizer(params, sigma)
}

/// Dense gradient over the ratings in `scope`, with the regulariser scaled
/// by `|scope| / |T|`.
pub fn gradient(ctx: &ModelContext, params: &ParameterVector, scope: &[Rating], sigma: &Sigma) -> Vec<f64> {
    let layout = params.layout();
    let mut grad = vec![0.0; layout.len()];
    let parts = par::map_slice(scope, |r| node_contribution(ctx, params, r.user, r.item, r.value).1);
    for part in parts {
        for (k, v) in part {
            grad[k] += v;
        }
    }
    let share = if ctx.table().is_empty() {
        0.0
    } else {
        scope.len() as f64 / ctx.table().len() as f64
    };
    for b in Block::ALL {
        let s2 = sigma.for_block(b).powi(2);
        for k in layout.range(b) {
            grad[k] -= share * params.weights()[k] / s2;
        }
    }
    grad
}

/// Per-user stochastic gradient ascent on the regularised pseudo-likelihood.
///
/// Users are visited in a seeded shuffle each epoch. With one writer and
/// ordered reductions the result is bit-identical for a given seed.
pub fn train(ctx: &ModelContext, params: &mut ParameterVector, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let started = Instant::now();
    let layout = *params.layout();
    let total = ctx.table().len();
    let mut report = TrainReport {
        initial_objective: pseudo_log_likelihood(ctx, params, &config.sigma),
        epochs: Vec::with_capacity(config.epochs),
        wall_time: Duration::ZERO,
    };
    if total == 0 {
        report.wall_time = started.elapsed();
        return Ok(report);
    }

    let mut users: Vec<UserId> = ctx.table().users().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; layout.len()];
    let block_ranges: Vec<(std::ops::Range<usize>, f64)> = Block::ALL
        .iter()
        .map(|&b| (layout.range(b), config.sigma.for_block(b).powi(2)))
        .collect();
    let mut previous = report.initial_objective;

    for epoch in 0..config.epochs {
        let lr = config.learning_rate / (1.0 + config.decay * epoch as f64);
        users.shuffle(&mut rng);
        let mut norm_sum = 0.0;
        for &user in &users {
            let items = ctx.table().user_ratings(user);
            let parts = par::map_slice(items, |&(item, value)| node_contribution(ctx, params, user, item, value).1);
            for part in parts {
                for (k, v) in part {
                    grad[k] += v;
                }
            }
            let share = items.len() as f64 / total as f64;
            let weights = params.weights_mut();
            let mut norm2 = 0.0;
            for (range, s2) in &block_ranges {
                let pull = share / s2;
                for k in range.clone() {
                    let step = grad[k] - pull * weights[k];
                    norm2 += step * step;
                    weights[k] += lr * step;
                    grad[k] = 0.0;
                }
            }
            norm_sum += norm2.sqrt();
        }
        let objective = pseudo_log_likelihood(ctx, params, &config.sigma);
        report.epochs.push(EpochStats {
            epoch: epoch + 1,
            learning_rate: lr,
            objective,
            mean_gradient_norm: norm_sum / users.len() as f64,
        });
        if !objective.is_finite() || objective < previous - config.divergence_tolerance * previous.abs() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                previous,
                current: objective,
            });
        }
        previous = objective;
    }
    report.wall_time = started.elapsed();
    Ok(report)
}

/// A trained model: context, weights and the training trace.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub ctx: ModelContext,
    pub params: ParameterVector,
    pub report: TrainReport,
}

/// Builds the model context over `table` and trains from zero weights.
pub fn fit(
    table: RatingTable,
    attrs: AttributeCatalog,
    features: FeatureToggles,
    selection: &SelectionConfig,
    tying: IdentityTying,
    config: &TrainConfig,
) -> Result<FittedModel> {
    if !features.any() {
        return Err(Error::Validation("at least one feature family must be enabled".into()));
    }
    config.validate()?;
    let ctx = ModelContext::build(table, attrs, features, selection);
    let mut params = ctx.zero_params(tying);
    let report = train(&ctx, &mut params, config)?;
    Ok(FittedModel { ctx, params, report })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullBatchConfig {
    pub sigma: Sigma,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for FullBatchConfig {
    fn default() -> Self {
        FullBatchConfig {
            sigma: Sigma::uniform(1.0),
            max_iters: 2_000,
            tolerance: 1e-8,
            initial_step: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullBatchReport {
    pub iterations: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Full-batch L-BFGS ascent with Armijo backtracking. Falls back to the
/// plain gradient whenever the quasi-Newton direction is not an ascent
/// direction.
pub fn train_full_batch(ctx: &ModelContext, params: &mut ParameterVector, config: &FullBatchConfig) -> FullBatchReport {
    const MEMORY: usize = 10;
    let all = ctx.table().ratings();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut objective = pseudo_log_likelihood(ctx, params, &config.sigma);
    let mut grad = gradient(ctx, params, all, &config.sigma);
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut iterations = 0;
    loop {
        let grad_norm = dot(&grad, &grad).sqrt();
        if grad_norm < config.tolerance || iterations >= config.max_iters {
            return FullBatchReport {
                iterations,
                objective,
                gradient_norm: grad_norm,
                converged: grad_norm < config.tolerance,
            };
        }
        iterations += 1;

        // two-loop recursion on the negated objective
        let mut dir: Vec<f64> = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yk) in dir.iter_mut().zip(y) {
                *d -= a * yk;
            }
            alphas.push(a);
        }
        let mut step = config.initial_step;
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for d in dir.iter_mut() {
                *d *= gamma;
            }
            step = 1.0;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            for (d, sk) in dir.iter_mut().zip(s) {
                *d += (a - b) * sk;
            }
        }
        let mut slope = dot(&grad, &dir);
        if !(slope > 0.0) {
            dir = grad.clone();
            slope = grad_norm * grad_norm;
            history.clear();
            step = config.initial_step;
        }

        let accepted = loop {
            let mut trial = params.clone();
            for (w, d) in trial.weights_mut().iter_mut().zip(&dir) {
                *w += step * d;
            }
            let value = pseudo_log_likelihood(ctx, &trial, &config.sigma);
            if value >= objective + 1e-4 * step * slope {
                break Some((trial, value));
            }
            step *= 0.5;
            if step < 1e-16 {
                break None;
            }
        };
        let Some((trial, value)) = accepted else {
            return FullBatchReport {
                iterations,
                objective,
                gradient_norm: grad_norm,
                converged: false,
            };
        };
        let new_grad = gradient(ctx, &trial, all, &config.sigma);
        let s: Vec<f64> = trial.weights().iter().zip(params.weights()).map(|(a, b)| a - b).collect();
        // y for the negated objective
        let y: Vec<f64> = grad.iter().zip(&new_grad).map(|(old, new)| old - new).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        *params = trial;
        objective = value;
        grad = new_grad;
    }
}

/// Weights drawn uniformly from `[-scale, scale]`.
pub fn random_params(layout: Layout, seed: u64, scale: f64) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..layout.len()).map(|_| rng.gen_range(-scale..=scale)).collect();
    ParameterVector::from_weights(layout, weights).expect("finite weights")
}

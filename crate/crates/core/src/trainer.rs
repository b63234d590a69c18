//! Training protocol: epochs of fixed update counts on freshly generated
//! batches, evaluation on a frozen held-out set after each epoch, early stop
//! at perfect accuracy, and learning-rate sweeps.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loss_and_gradients, predict, ModelParams, PoolingMode};
use crate::numeric::Rng;
use crate::optim::{adam_step, init_params, AdamState};
use crate::tasks::{make_test_set, training_batch, LengthSpec, TaskInstance, TaskKind, INIT_STREAM};

/// Learning rates searched per experiment.
pub const DEFAULT_LR_GRID: [f64; 4] = [0.0003, 0.001, 0.003, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub lengths: LengthSpec,
    pub pooling: PoolingMode,
    pub lr: f64,
    pub batch_size: usize,
    pub updates_per_epoch: usize,
    pub max_epochs: usize,
    pub test_size: usize,
    pub threshold: f64,
    pub seed: u64,
    pub dim: usize,
}

impl TrainConfig {
    /// The full protocol for one task, length setting and pooling mode.
    pub fn new(task: TaskKind, lengths: LengthSpec, pooling: PoolingMode) -> Self {
        TrainConfig {
            task,
            lengths,
            pooling,
            lr: 0.001,
            batch_size: 100,
            updates_per_epoch: 1000,
            max_epochs: 100,
            test_size: 1000,
            threshold: 0.04,
            seed: 0,
            dim: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lengths.validate()?;
        let (_, hi) = self.lengths.bounds();
        if hi < 2 {
            return Err(Error::usage("sequences need at least two time steps"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::usage(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.updates_per_epoch == 0 || self.test_size == 0 {
            return Err(Error::usage(
                "batch size, updates per epoch and test size must be positive",
            ));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::usage("accuracy threshold must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::usage("model dimension must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

/// Parameters and optimizer state at an epoch boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ModelParams,
    pub adam: AdamState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: TrainConfig,
    pub reports: Vec<EpochReport>,
    pub solved_at_epoch: Option<usize>,
    pub final_accuracy: f64,
    pub final_params: ModelParams,
    pub final_state: AdamState,
}

impl RunResult {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.reports.last().map_or(0, |r| r.epoch),
            params: self.final_params.clone(),
            adam: self.final_state.clone(),
        }
    }

    pub fn epochs_run(&self) -> usize {
        self.reports.last().map_or(0, |r| r.epoch)
    }
}

/// Fraction of instances whose prediction is strictly within `threshold`.
pub fn evaluate(params: &ModelParams, test_set: &[TaskInstance], threshold: f64) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty test set"));
    }
    if !(threshold > 0.0) {
        return Err(Error::usage("accuracy threshold must be positive"));
    }
    let correct = test_set
        .par_iter()
        .map(|inst| Ok(is_correct(predict(params, &inst.steps)?, inst.target, threshold)))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    Ok(correct as f64 / test_set.len() as f64)
}

#[inline]
pub fn is_correct(prediction: f64, target: f64, threshold: f64) -> bool {
    (prediction - target).abs() < threshold
}

pub fn train(config: &TrainConfig) -> Result<RunResult> {
    train_with(config, None, |_| {})
}

/// Runs the protocol, calling `on_epoch` after each evaluation.
///
/// With `resume`, training continues from the checkpoint's epoch boundary
/// and draws exactly the batches an uninterrupted run would have drawn.
pub fn train_with(
    config: &TrainConfig,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<RunResult> {
    config.validate()?;
    let (mut params, mut state, start_epoch) = match resume {
        Some(ck) => {
            ck.params.validate()?;
            if ck.params.dim != config.dim || ck.params.pooling != config.pooling {
                return Err(Error::usage(
                    "checkpoint model does not match the configured dimension and pooling",
                ));
            }
            if ck.adam.t != (ck.epoch * config.updates_per_epoch) as u64 {
                return Err(Error::usage(format!(
                    "checkpoint step count {} is not at the boundary of epoch {}",
                    ck.adam.t, ck.epoch
                )));
            }
            let mut adam = ck.adam;
            adam.lr = config.lr;
            (ck.params, adam, ck.epoch)
        }
        None => {
            let params = init_params(config.dim, config.pooling, &mut Rng::new(config.seed, INIT_STREAM))?;
            (params, AdamState::new(config.dim, config.lr)?, 0)
        }
    };

    let test_set = make_test_set(config.task, config.lengths, config.test_size, config.seed)?;
    let mut reports = Vec::new();
    let mut solved_at_epoch = None;

    for epoch in start_epoch + 1..=config.max_epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for update in 0..config.updates_per_epoch {
            let counter = state.t;
            let batch = training_batch(
                config.task,
                config.lengths,
                config.batch_size,
                config.seed,
                counter,
            )?;
            let (batch_loss, grads) = loss_and_gradients(&params, &batch)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    update,
                    lr: config.lr,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            adam_step(&mut params, &grads, &mut state)?;
        }
        let test_accuracy = evaluate(&params, &test_set, config.threshold)?;
        let report = EpochReport {
            epoch,
            mean_train_loss: loss_sum / config.updates_per_epoch as f64,
            test_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        reports.push(report);
        if test_accuracy == 1.0 {
            solved_at_epoch = Some(epoch);
            break;
        }
    }

    let final_accuracy = match reports.last() {
        Some(r) => r.test_accuracy,
        None => evaluate(&params, &test_set, config.threshold)?,
    };
    Ok(RunResult {
        config: config.clone(),
        reports,
        solved_at_epoch,
        final_accuracy,
        final_params: params,
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<RunResult>,
    pub best: usize,
}

impl SweepResult {
    pub fn best(&self) -> &RunResult {
        &self.runs[self.best]
    }
}

/// Ranking used to pick the best run: earliest solve, then higher final
/// accuracy, then smaller learning rate.
pub fn compare_runs(a: &RunResult, b: &RunResult) -> Ordering {
    let solved = |r: &RunResult| r.solved_at_epoch.unwrap_or(usize::MAX);
    solved(a)
        .cmp(&solved(b))
        .then_with(|| b.final_accuracy.total_cmp(&a.final_accuracy))
        .then_with(|| a.config.lr.total_cmp(&b.config.lr))
}

/// Trains once per learning rate with the template's seed and picks the best.
pub fn lr_sweep(template: &TrainConfig, lrs: &[f64]) -> Result<SweepResult> {
    sweep(template, lrs, false, |_| {})
}

/// Like [`lr_sweep`], but once some rate has solved at epoch `k`, later rates
/// are only trained for up to `k` epochs. The best run (and its epoch count)
/// is the same as the full sweep's; the losing runs may be truncated.
pub fn lr_sweep_pruned(template: &TrainConfig, lrs: &[f64]) -> Result<SweepResult> {
    sweep(template, lrs, true, |_| {})
}

pub fn sweep(
    template: &TrainConfig,
    lrs: &[f64],
    prune: bool,
    mut on_run: impl FnMut(&RunResult),
) -> Result<SweepResult> {
    if lrs.is_empty() {
        return Err(Error::usage("learning-rate grid is empty"));
    }
    let mut runs: Vec<RunResult> = Vec::with_capacity(lrs.len());
    let mut best: Option<usize> = None;
    for &lr in lrs {
        let mut config = template.clone();
        config.lr = lr;
        if prune {
            if let Some(solved) = best.and_then(|i| runs[i].solved_at_epoch) {
                config.max_epochs = config.max_epochs.min(solved);
            }
        }
        let run = train(&config)?;
        on_run(&run);
        runs.push(run);
        let idx = runs.len() - 1;
        best = match best {
            Some(b) if compare_runs(&runs[b], &runs[idx]) != Ordering::Greater => Some(b),
            _ => Some(idx),
        };
    }
    Ok(SweepResult {
        runs,
        best: best.expect("grid is nonempty"),
    })
}

//! Self-relative throughput of forward+backward over worker counts.

use std::time::Instant;

use anyhow::{bail, Result};
use ffattn_core::numeric::Rng;
use ffattn_core::optim::init_params;
use ffattn_core::tasks::{generate_batch, train_stream, INIT_STREAM};
use ffattn_core::{backward, forward, LengthSpec, PoolingMode, TaskKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub t0: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub workers: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerTiming {
    pub workers: usize,
    pub seconds: f64,
    pub steps_per_second: f64,
    /// Throughput relative to the first entry of the worker list.
    pub speedup: f64,
    /// Largest output difference against the first entry.
    pub max_output_diff: f64,
    pub max_grad_diff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub sequence_length: usize,
    pub available_cores: usize,
    pub timings: Vec<WorkerTiming>,
}

impl BenchReport {
    pub fn speedup(&self, workers: usize) -> Option<f64> {
        self.timings.iter().find(|t| t.workers == workers).map(|t| t.speedup)
    }

    pub fn max_output_diff(&self) -> f64 {
        self.timings.iter().fold(0.0, |m, t| m.max(t.max_output_diff))
    }
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.workers.is_empty() || config.workers.contains(&0) {
        bail!("worker counts must be a nonempty list of positive integers");
    }
    if config.repeats == 0 {
        bail!("repeats must be positive");
    }
    let params = init_params(config.dim, PoolingMode::Attention, &mut Rng::new(config.seed, INIT_STREAM))?;
    let batch = generate_batch(
        TaskKind::Addition,
        LengthSpec::Fixed { t0: config.t0 },
        config.batch_size,
        &Rng::new(config.seed, train_stream(0)),
    )?;

    let mut timings: Vec<WorkerTiming> = Vec::new();
    let mut reference: Option<(Vec<f64>, f64, ffattn_core::Gradients)> = None;
    for &workers in &config.workers {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        let (seconds, y, grads) = pool.install(|| -> Result<_> {
            // warm-up pass, also the output compared across worker counts
            let cache = forward(&params, &batch)?;
            let grads = backward(&params, &batch, &cache)?;
            let y = cache.y;
            let started = Instant::now();
            for _ in 0..config.repeats {
                let cache = forward(&params, &batch)?;
                std::hint::black_box(backward(&params, &batch, &cache)?);
            }
            Ok((started.elapsed().as_secs_f64(), y, grads))
        })?;
        let steps = (batch.batch_size() * batch.len() * config.repeats) as f64;
        let rate = steps / seconds;
        let (max_output_diff, max_grad_diff, speedup) = match &reference {
            None => (0.0, 0.0, 1.0),
            Some((y0, rate0, g0)) => {
                let dy = y.iter().zip(y0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let dg = grad_diff(&grads, g0);
                (dy, dg, rate / rate0)
            }
        };
        if reference.is_none() {
            reference = Some((y, rate, grads));
        }
        timings.push(WorkerTiming {
            workers,
            seconds,
            steps_per_second: rate,
            speedup,
            max_output_diff,
            max_grad_diff,
        });
    }

    Ok(BenchReport {
        config: config.clone(),
        sequence_length: batch.len(),
        available_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        timings,
    })
}

fn grad_diff(a: &ffattn_core::Gradients, b: &ffattn_core::Gradients) -> f64 {
    use ffattn_core::{TensorName, Tensors};
    TensorName::ALL
        .into_iter()
        .flat_map(|n| a.tensor(n).iter().zip(b.tensor(n)))
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

//! Shared fixtures for the criterion benchmarks in `benches/`.

use ffattn_core::numeric::Rng;
use ffattn_core::optim::init_params;
use ffattn_core::tasks::{generate_batch, train_stream, INIT_STREAM};
use ffattn_core::{LengthSpec, ModelParams, PoolingMode, Result, SequenceBatch, TaskKind};

/// Freshly initialized parameters and one addition-task batch of exact
/// length `len`.
pub fn fixture(
    len: usize,
    batch_size: usize,
    dim: usize,
    pooling: PoolingMode,
    seed: u64,
) -> Result<(ModelParams, SequenceBatch)> {
    let params = init_params(dim, pooling, &mut Rng::new(seed, INIT_STREAM))?;
    let batch = generate_batch(
        TaskKind::Addition,
        LengthSpec::Range { lo: len, hi: len },
        batch_size,
        &Rng::new(seed, train_stream(0)),
    )?;
    Ok((params, batch))
}

/// Worker counts worth measuring on this host: powers of two up to the
/// available parallelism, plus 4 so scaling runs have the same rows everywhere.
pub fn worker_counts() -> Vec<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::iter::successors(Some(1usize), |n| Some(n * 2))
        .take_while(|&n| n <= cores.max(4))
        .collect()
}

//! Feed-forward attention over sequences.
//!
//! A per-time-step encoder `h_t = LReLU(W_xh x_t + b_xh)` is collapsed into a
//! fixed-length context vector either by softmax attention over
//! `e_t = tanh(W_hc h_t + b_hc)` or by a plain mean over time, followed by two
//! dense layers. Gradients are derived by hand, training uses adam, and the
//! synthetic addition / multiplication long-term-memory tasks are generated
//! deterministically from counter-based random streams.

pub mod error;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    backward, forward, loss, loss_and_gradients, param_count, predict, ForwardCache, Gradients, ModelParams,
    PoolingMode, SequenceBatch, TensorName, Tensors,
};
pub use numeric::{Matrix, Rng};
pub use optim::{adam_step, init_params, AdamState};
pub use tasks::{LengthSpec, TaskInstance, TaskKind};
pub use trainer::{evaluate, lr_sweep, train, EpochReport, RunResult, SweepResult, TrainConfig};

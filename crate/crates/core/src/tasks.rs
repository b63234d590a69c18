//! Addition and multiplication long-term-memory problems.
//!
//! Each time step carries a value and a marker bit. Exactly two steps are
//! marked, one in each half of the sequence, and the target is a function of
//! the two marked values:
//!
//! * addition: values `U[-1, 1]`, target `0.5 + (v1 + v2) / 4`
//! * multiplication: values `U[0, 1]`, target `v1 * v2`
//!
//! Both targets lie in `[0, 1]`.
//!
//! Randomness is addressed, never threaded through: training batch `k` reads
//! stream [`train_stream`]`(k)`, test instance `i` reads [`test_stream`]`(i)`,
//! and within a batch each sequence owns a substream, so any instance can be
//! regenerated on its own.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SequenceBatch, INPUT_WIDTH};
use crate::numeric::Rng;

/// Stream used for parameter initialization.
pub const INIT_STREAM: u64 = 0;
const TRAIN_BASE: u64 = 1;
const TEST_BASE: u64 = 1 << 63;

/// Stream id of training batch `counter`; always below the test range.
pub fn train_stream(counter: u64) -> u64 {
    assert!(counter < TEST_BASE - TRAIN_BASE, "batch counter overflow");
    TRAIN_BASE + counter
}

/// Stream id of held-out instance `index`.
pub fn test_stream(index: u64) -> u64 {
    assert!(index < TEST_BASE, "test index overflow");
    TEST_BASE + index
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Addition,
    Multiplication,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::Addition, TaskKind::Multiplication];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Addition => "addition",
            TaskKind::Multiplication => "multiplication",
        }
    }

    pub fn target(self, v1: f64, v2: f64) -> f64 {
        match self {
            TaskKind::Addition => 0.5 + (v1 + v2) / 4.0,
            TaskKind::Multiplication => v1 * v2,
        }
    }

    fn sample_value(self, rng: &mut Rng) -> f64 {
        match self {
            TaskKind::Addition => rng.random_range(-1.0..=1.0),
            TaskKind::Multiplication => rng.random_range(0.0..=1.0),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "addition" | "add" => Ok(TaskKind::Addition),
            "multiplication" | "mul" => Ok(TaskKind::Multiplication),
            other => Err(Error::usage(format!(
                "unknown task {other:?} (expected addition|multiplication)"
            ))),
        }
    }
}

/// How sequence lengths are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LengthSpec {
    /// Uniform over `[t0, floor(1.1 * t0)]`.
    Fixed { t0: usize },
    /// Uniform over `[lo, hi]`.
    Range { lo: usize, hi: usize },
}

impl LengthSpec {
    /// Inclusive bounds of the length distribution.
    pub fn bounds(self) -> (usize, usize) {
        match self {
            // floor(1.1 * t0) in exact integer arithmetic
            LengthSpec::Fixed { t0 } => (t0, t0 + t0 / 10),
            LengthSpec::Range { lo, hi } => (lo, hi),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            LengthSpec::Fixed { t0: 0 } => Err(Error::usage("T0 must be positive")),
            LengthSpec::Range { lo, hi } if lo == 0 || lo > hi => Err(Error::usage(format!(
                "invalid length range [{lo}, {hi}]"
            ))),
            _ => Ok(()),
        }
    }

    pub fn sample(self, rng: &mut Rng) -> Result<usize> {
        self.validate()?;
        let (lo, hi) = self.bounds();
        Ok(rng.random_range(lo..=hi))
    }
}

impl fmt::Display for LengthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthSpec::Fixed { t0 } => write!(f, "fixed:{t0}"),
            LengthSpec::Range { lo, hi } => write!(f, "range:{lo}-{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    /// `(value, marker)` per time step.
    pub steps: Vec<[f64; 2]>,
    pub target: f64,
    /// Marked positions, first-half then second-half.
    pub marked: (usize, usize),
}

impl TaskInstance {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s[0])
    }

    pub fn markers(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s[1])
    }

    pub fn to_batch(&self) -> Result<SequenceBatch> {
        SequenceBatch::from_sequences(&[&self.steps], vec![self.target])
    }
}

/// One instance of exactly `len` steps drawn from `rng`.
pub fn generate_with_len(kind: TaskKind, len: usize, rng: &mut Rng) -> Result<TaskInstance> {
    if len < 2 {
        return Err(Error::usage(format!(
            "sequence length {len} is too short for two markers"
        )));
    }
    let mut steps: Vec<[f64; 2]> = (0..len).map(|_| [kind.sample_value(rng), 0.0]).collect();
    let half = len / 2;
    let i1 = rng.random_range(0..half);
    let i2 = rng.random_range(half..len);
    steps[i1][1] = 1.0;
    steps[i2][1] = 1.0;
    let target = kind.target(steps[i1][0], steps[i2][0]);
    Ok(TaskInstance {
        kind,
        steps,
        target,
        marked: (i1, i2),
    })
}

/// Draws a length from `spec` on `rng`, then the instance on `rng.substream(0)`.
///
/// This is the same layout [`generate_batch`] uses for a batch of one.
pub fn generate(kind: TaskKind, spec: LengthSpec, rng: &Rng) -> Result<TaskInstance> {
    let mut root = rng.root();
    let len = spec.sample(&mut root)?;
    generate_with_len(kind, len, &mut rng.substream(0))
}

/// `batch_size` instances sharing one length drawn from `spec`.
///
/// The length comes from the root of `rng`; sequence `j` reads substream `j`.
pub fn generate_batch(
    kind: TaskKind,
    spec: LengthSpec,
    batch_size: usize,
    rng: &Rng,
) -> Result<SequenceBatch> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let len = spec.sample(&mut rng.root())?;
    let mut inputs = Vec::with_capacity(batch_size * len * INPUT_WIDTH);
    let mut targets = Vec::with_capacity(batch_size);
    for j in 0..batch_size {
        let inst = generate_with_len(kind, len, &mut rng.substream(j as u64))?;
        inputs.extend(inst.steps.iter().flatten());
        targets.push(inst.target);
    }
    SequenceBatch::new(inputs, targets, len)
}

/// Training batch number `counter` of a run seeded with `seed`.
pub fn training_batch(
    kind: TaskKind,
    spec: LengthSpec,
    batch_size: usize,
    seed: u64,
    counter: u64,
) -> Result<SequenceBatch> {
    generate_batch(kind, spec, batch_size, &Rng::new(seed, train_stream(counter)))
}

/// Held-out instances, each with its own length draw, on the test streams.
pub fn make_test_set(
    kind: TaskKind,
    spec: LengthSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<TaskInstance>> {
    if n == 0 {
        return Err(Error::usage("test set size must be at least 1"));
    }
    (0..n as u64)
        .map(|i| generate(kind, spec, &Rng::new(seed, test_stream(i))))
        .collect()
}

/// Two sequences differing only in the order of two marked symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderProbe {
    /// Symbol X (`[1, 0]`) then symbol Y (`[0, 1]`).
    pub xy: Vec<[f64; 2]>,
    /// Y then X.
    pub yx: Vec<[f64; 2]>,
    pub positions: (usize, usize),
}

pub const SYMBOL_X: [f64; 2] = [1.0, 0.0];
pub const SYMBOL_Y: [f64; 2] = [0.0, 1.0];

pub fn order_probe(len: usize) -> Result<OrderProbe> {
    if len < 2 {
        return Err(Error::usage("order probe needs at least two time steps"));
    }
    let first = len / 4;
    let second = len / 2 + len / 4;
    let mut xy = vec![[0.0, 0.0]; len];
    let mut yx = xy.clone();
    xy[first] = SYMBOL_X;
    xy[second] = SYMBOL_Y;
    yx[first] = SYMBOL_Y;
    yx[second] = SYMBOL_X;
    Ok(OrderProbe {
        xy,
        yx,
        positions: (first, second),
    })
}

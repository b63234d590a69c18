//! Independent checks on the model: central-difference gradients, invariance
//! of the output under time permutations, and the reduction of attention to
//! the plain mean when the scoring weights vanish.

use std::fmt;

use rand::seq::SliceRandom;
use serde::Serialize;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::model::{backward, forward, predict, Gradients, ModelParams, PoolingMode, SequenceBatch, TensorName, Tensors};
use crate::numeric::{Rng, LRELU_SLOPE};
use crate::tasks::order_probe;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const PERMUTATION_TOLERANCE: f64 = 1e-10;
pub const POOLING_TOLERANCE: f64 = 1e-12;

/// `(f(x + h) − f(x − h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// |a − b| / max(|a|, |b|, 1e-8)
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Loss gradient by central differences, one fresh forward pass per probe.
///
/// The loss of each probe is evaluated in double-double arithmetic with the
/// perturbed parameter held exactly, so the difference quotient keeps its
/// accuracy on coordinates whose gradient is many orders of magnitude below
/// the loss itself. The quotient is rounded to `f64` at the end.
pub fn finite_difference_gradient(params: &ModelParams, batch: &SequenceBatch, h: f64) -> Result<Gradients> {
    if !(h > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be positive, got {h}")));
    }
    params.validate()?;
    if batch.batch_size() == 0 || batch.is_empty() {
        return Err(Error::usage("finite differences need a nonempty batch"));
    }
    let mut wide = WideParams::new(params);
    let mut grads = Gradients::zeros(params.dim);
    for (k, name) in TensorName::ALL.into_iter().enumerate() {
        for i in 0..wide.tensors[k].len() {
            let base = params.tensor(name)[i];
            wide.tensors[k][i] = TwoFloat::new_add(base, h);
            let plus = wide.loss(batch);
            wide.tensors[k][i] = TwoFloat::new_add(base, -h);
            let minus = wide.loss(batch);
            wide.tensors[k][i] = TwoFloat::from(base);
            grads.tensor_mut(name)[i] = ((plus - minus) / (2.0 * h)).hi();
        }
    }
    Ok(grads)
}

/// Model parameters widened to double-double, one flat vector per tensor in
/// [`TensorName::ALL`] order. Written independently of `model::forward`.
struct WideParams {
    tensors: Vec<Vec<TwoFloat>>,
    dim: usize,
    pooling: PoolingMode,
}

impl WideParams {
    fn new(params: &ModelParams) -> Self {
        WideParams {
            tensors: TensorName::ALL
                .into_iter()
                .map(|n| params.tensor(n).iter().map(|&x| TwoFloat::from(x)).collect())
                .collect(),
            dim: params.dim,
            pooling: params.pooling,
        }
    }

    fn loss(&self, batch: &SequenceBatch) -> TwoFloat {
        let total = batch
            .targets()
            .iter()
            .enumerate()
            .map(|(b, &target)| {
                let err = self.predict(batch.sequence(b)) - target;
                err * err
            })
            .fold(TwoFloat::from(0.0), |acc, x| acc + x);
        total / batch.batch_size() as f64
    }

    fn predict(&self, steps: &[f64]) -> TwoFloat {
        let [w_xh, b_xh, w_hc, b_hc, w_cs, b_cs, w_sy, b_sy] = [0, 1, 2, 3, 4, 5, 6, 7].map(|k| &self.tensors[k]);
        let d = self.dim;
        let zero = TwoFloat::from(0.0);
        let hidden: Vec<Vec<TwoFloat>> = steps
            .chunks_exact(2)
            .map(|x| {
                (0..d)
                    .map(|j| wide_lrelu(w_xh[2 * j] * x[0] + w_xh[2 * j + 1] * x[1] + b_xh[j]))
                    .collect()
            })
            .collect();
        let len = hidden.len();
        let weights: Vec<TwoFloat> = match self.pooling {
            PoolingMode::UnweightedMean => vec![TwoFloat::from(1.0) / len as f64; len],
            PoolingMode::Attention => {
                let scores: Vec<TwoFloat> = hidden
                    .iter()
                    .map(|h| wide_tanh(h.iter().zip(w_hc).fold(zero, |acc, (&a, &w)| acc + a * w) + b_hc[0]))
                    .collect();
                let top = scores.iter().copied().fold(scores[0], |m, s| if s > m { s } else { m });
                let exps: Vec<TwoFloat> = scores.iter().map(|&s| wide_exp(s - top)).collect();
                let norm = exps.iter().fold(zero, |acc, &e| acc + e);
                exps.into_iter().map(|e| wide_div(e, norm)).collect()
            }
        };
        let context: Vec<TwoFloat> = (0..d)
            .map(|j| hidden.iter().zip(&weights).fold(zero, |acc, (h, &a)| acc + a * h[j]))
            .collect();
        let s: Vec<TwoFloat> = (0..d)
            .map(|i| wide_lrelu((0..d).fold(b_cs[i], |acc, j| acc + w_cs[i * d + j] * context[j])))
            .collect();
        wide_lrelu(s.iter().zip(w_sy).fold(b_sy[0], |acc, (&a, &w)| acc + a * w))
    }
}

/// `e^x` to full double-double precision: `x = k ln 2 + r`, then a Taylor
/// series on `r / 2^10` followed by ten squarings.
fn wide_exp(x: TwoFloat) -> TwoFloat {
    const HALVINGS: i32 = 10;
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = (x - twofloat::consts::LN_2 * k) / f64::from(1 << HALVINGS);
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=14 {
        term = term * r / f64::from(n);
        sum += term;
    }
    for _ in 0..HALVINGS {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

fn wide_tanh(x: TwoFloat) -> TwoFloat {
    let e = wide_exp(x * 2.0);
    wide_div(e - 1.0, e + 1.0)
}

/// `a / b` refined with two residual corrections, each residual formed
/// exactly from double-double products.
fn wide_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

fn wide_lrelu(x: TwoFloat) -> TwoFloat {
    if x.hi() >= 0.0 {
        x
    } else {
        x * LRELU_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Maximum relative error per tensor, in checkpoint order.
    pub per_tensor: Vec<(&'static str, f64)>,
    pub worst: (&'static str, usize),
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the analytic gradient of `backward` against central differences.
pub fn gradient_check(params: &ModelParams, batch: &SequenceBatch, h: f64) -> Result<GradCheckReport> {
    let cache = forward(params, batch)?;
    let analytic = backward(params, batch, &cache)?;
    let numeric = finite_difference_gradient(params, batch, h)?;
    Ok(compare_gradients(&analytic, &numeric, GRAD_TOLERANCE))
}

pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients, tolerance: f64) -> GradCheckReport {
    let mut per_tensor = Vec::with_capacity(TensorName::ALL.len());
    let mut worst = (TensorName::ALL[0].as_str(), 0);
    let mut max_err = 0.0;
    for name in TensorName::ALL {
        let mut tensor_max = 0.0f64;
        for (i, (a, n)) in analytic.tensor(name).iter().zip(numeric.tensor(name)).enumerate() {
            let err = relative_error(*a, *n);
            if err > max_err {
                max_err = err;
                worst = (name.as_str(), i);
            }
            tensor_max = tensor_max.max(err);
        }
        per_tensor.push((name.as_str(), tensor_max));
    }
    GradCheckReport {
        per_tensor,
        worst,
        max_relative_error: max_err,
        tolerance,
        pass: max_err < tolerance,
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check")?;
        for (name, err) in &self.per_tensor {
            writeln!(f, "  {name:<5} max_rel_err = {err:.3e}")?;
        }
        writeln!(f, "  worst      = {}[{}]", self.worst.0, self.worst.1)?;
        writeln!(f, "  max        = {:.3e} (tolerance {:.0e})", self.max_relative_error, self.tolerance)?;
        write!(f, "  result     = {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Largest output change over `trials` random reorderings of `steps`, and
/// over swapping the two marked symbols of an order probe of the same length.
pub fn max_permutation_deviation(
    params: &ModelParams,
    steps: &[[f64; 2]],
    trials: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if steps.len() < 2 {
        return Ok(0.0);
    }
    let reference = predict(params, steps)?;
    let mut worst = 0.0f64;
    let mut shuffled = steps.to_vec();
    for _ in 0..trials {
        shuffled.shuffle(rng);
        worst = worst.max((predict(params, &shuffled)? - reference).abs());
    }
    let probe = order_probe(steps.len())?;
    let xy = predict(params, &probe.xy)?;
    let yx = predict(params, &probe.yx)?;
    Ok(worst.max((xy - yx).abs()))
}

/// True iff the output is unchanged (within 1e-10) under every tried
/// permutation and on the XY / YX order probe.
pub fn check_permutation_invariance(
    params: &ModelParams,
    steps: &[[f64; 2]],
    trials: usize,
    rng: &mut Rng,
) -> Result<bool> {
    Ok(max_permutation_deviation(params, steps, trials, rng)? <= PERMUTATION_TOLERANCE)
}

/// Largest `|y_attention − y_mean|` over the batch for the given parameters.
pub fn pooling_difference(params: &ModelParams, batch: &SequenceBatch) -> Result<f64> {
    let mut attention = params.clone();
    attention.pooling = PoolingMode::Attention;
    let mut mean = params.clone();
    mean.pooling = PoolingMode::UnweightedMean;
    let ya = forward(&attention, batch)?.y;
    let ym = forward(&mean, batch)?.y;
    Ok(ya.iter().zip(&ym).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// With `W_hc` zeroed (any `b_hc`), attention pooling must equal the mean.
pub fn check_pooling_equivalence(params: &ModelParams, batch: &SequenceBatch) -> Result<bool> {
    let mut zeroed = params.clone();
    zeroed.w_hc.as_mut_slice().fill(0.0);
    Ok(pooling_difference(&zeroed, batch)? <= POOLING_TOLERANCE)
}

/// Shape of one randomized gradient-check case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CaseShape {
    pub dim: usize,
    pub len: usize,
    pub batch_size: usize,
    pub pooling: PoolingMode,
}

const CASE_DIMS: [usize; 3] = [1, 3, 10];
const CASE_LENS: [usize; 3] = [1, 2, 17];
const CASE_BATCHES: [usize; 2] = [1, 4];

/// The `i`-th shape of the standard sweep. Consecutive indices cycle through
/// every (D, T, pooling) combination within 18 cases and both batch sizes.
pub fn case_shape(i: usize) -> CaseShape {
    CaseShape {
        dim: CASE_DIMS[i % 3],
        len: CASE_LENS[(i / 3) % 3],
        batch_size: CASE_BATCHES[(i / 9) % 2],
        pooling: PoolingMode::ALL[i % 2],
    }
}

/// Smallest distance from the LReLU kink that any activation input of a
/// random case may have. Keeps every central-difference probe on one side
/// of the kink, where the loss is differentiable.
pub const KINK_MARGIN: f64 = 1e-4;

/// Fan-in initialized parameters with nonzero biases, plus a batch of
/// `U[-1, 1]` inputs and `U[0, 1]` targets. Draws are repeated until every
/// activation input is at least [`KINK_MARGIN`] away from zero.
pub fn random_case(shape: CaseShape, rng: &mut Rng) -> Result<(ModelParams, SequenceBatch)> {
    loop {
        let (params, batch) = draw_case(shape, rng)?;
        let cache = forward(&params, &batch)?;
        let nearest = cache
            .h
            .iter()
            .chain(&cache.s)
            .chain(&cache.y)
            .map(|&v| if v >= 0.0 { v } else { -v / LRELU_SLOPE })
            .fold(f64::INFINITY, f64::min);
        if nearest >= KINK_MARGIN {
            return Ok((params, batch));
        }
    }
}

fn draw_case(shape: CaseShape, rng: &mut Rng) -> Result<(ModelParams, SequenceBatch)> {
    use rand::Rng as _;
    let mut params = crate::optim::init_params(shape.dim, shape.pooling, rng)?;
    for b in params.b_xh.iter_mut().chain(params.b_cs.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    params.b_hc = rng.random_range(-0.5..0.5);
    params.b_sy = rng.random_range(0.0..1.0);
    let n = shape.batch_size * shape.len * crate::model::INPUT_WIDTH;
    let inputs = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets = (0..shape.batch_size).map(|_| rng.random_range(0.0..1.0)).collect();
    Ok((params, SequenceBatch::new(inputs, targets, shape.len)?))
}

/// Runs [`gradient_check`] on `cases` shapes from [`case_shape`], case `i`
/// drawing its values from stream `i` of `seed`.
pub fn gradient_check_suite(cases: usize, seed: u64, h: f64) -> Result<Vec<(CaseShape, GradCheckReport)>> {
    (0..cases)
        .map(|i| {
            let shape = case_shape(i);
            let (params, batch) = random_case(shape, &mut Rng::new(seed, i as u64))?;
            Ok((shape, gradient_check(&params, &batch, h)?))
        })
        .collect()
}

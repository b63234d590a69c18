//! The feed-forward attention network.
//!
//! Per time step `h_t = LReLU(W_xh x_t + b_xh)`. The context `c` is either the
//! attention-weighted average `Σ α_t h_t` with `α = softmax(tanh(W_hc h_t + b_hc))`
//! or the unweighted mean of `h_t`. Then `s = LReLU(W_cs c + b_cs)` and
//! `y = LReLU(W_sy s + b_sy)`.
//!
//! Every sequence in a batch is processed independently; the per-sequence work
//! runs on the current rayon pool and results are always combined in batch
//! order, so outputs do not depend on the number of worker threads.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, lrelu, lrelu_grad, softmax_in_place, Matrix};

/// Input channels per time step: value and marker.
pub const INPUT_WIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Attention,
    #[serde(rename = "mean")]
    UnweightedMean,
}

impl PoolingMode {
    pub const ALL: [PoolingMode; 2] = [PoolingMode::Attention, PoolingMode::UnweightedMean];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMode::Attention => "attention",
            PoolingMode::UnweightedMean => "mean",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(PoolingMode::Attention),
            "mean" | "unweighted" => Ok(PoolingMode::UnweightedMean),
            other => Err(Error::usage(format!(
                "unknown pooling mode {other:?} (expected attention|mean)"
            ))),
        }
    }
}

/// Names of the eight learnable tensors, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorName {
    WXh,
    BXh,
    WHc,
    BHc,
    WCs,
    BCs,
    WSy,
    BSy,
}

impl TensorName {
    pub const ALL: [TensorName; 8] = [
        TensorName::WXh,
        TensorName::BXh,
        TensorName::WHc,
        TensorName::BHc,
        TensorName::WCs,
        TensorName::BCs,
        TensorName::WSy,
        TensorName::BSy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TensorName::WXh => "W_xh",
            TensorName::BXh => "b_xh",
            TensorName::WHc => "W_hc",
            TensorName::BHc => "b_hc",
            TensorName::WCs => "W_cs",
            TensorName::BCs => "b_cs",
            TensorName::WSy => "W_sy",
            TensorName::BSy => "b_sy",
        }
    }

    /// Whether the tensor takes part in the forward graph for `pooling`.
    pub fn is_active(self, pooling: PoolingMode) -> bool {
        !(pooling == PoolingMode::UnweightedMean
            && matches!(self, TensorName::WHc | TensorName::BHc))
    }
}

impl fmt::Display for TensorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Uniform flat access to the eight tensors of a parameter-shaped container.
pub trait Tensors {
    fn tensor(&self, name: TensorName) -> &[f64];
    fn tensor_mut(&mut self, name: TensorName) -> &mut [f64];
}

macro_rules! impl_tensors {
    ($ty:ty) => {
        impl Tensors for $ty {
            fn tensor(&self, name: TensorName) -> &[f64] {
                match name {
                    TensorName::WXh => self.w_xh.as_slice(),
                    TensorName::BXh => &self.b_xh,
                    TensorName::WHc => self.w_hc.as_slice(),
                    TensorName::BHc => std::slice::from_ref(&self.b_hc),
                    TensorName::WCs => self.w_cs.as_slice(),
                    TensorName::BCs => &self.b_cs,
                    TensorName::WSy => self.w_sy.as_slice(),
                    TensorName::BSy => std::slice::from_ref(&self.b_sy),
                }
            }

            fn tensor_mut(&mut self, name: TensorName) -> &mut [f64] {
                match name {
                    TensorName::WXh => self.w_xh.as_mut_slice(),
                    TensorName::BXh => &mut self.b_xh,
                    TensorName::WHc => self.w_hc.as_mut_slice(),
                    TensorName::BHc => std::slice::from_mut(&mut self.b_hc),
                    TensorName::WCs => self.w_cs.as_mut_slice(),
                    TensorName::BCs => &mut self.b_cs,
                    TensorName::WSy => self.w_sy.as_mut_slice(),
                    TensorName::BSy => std::slice::from_mut(&mut self.b_sy),
                }
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "W_xh")]
    pub w_xh: Matrix,
    pub b_xh: Vec<f64>,
    #[serde(rename = "W_hc")]
    pub w_hc: Matrix,
    pub b_hc: f64,
    #[serde(rename = "W_cs")]
    pub w_cs: Matrix,
    pub b_cs: Vec<f64>,
    #[serde(rename = "W_sy")]
    pub w_sy: Matrix,
    pub b_sy: f64,
    #[serde(rename = "D")]
    pub dim: usize,
    pub pooling: PoolingMode,
}

impl_tensors!(ModelParams);

impl ModelParams {
    pub fn zeros(dim: usize, pooling: PoolingMode) -> Self {
        ModelParams {
            w_xh: Matrix::zeros(dim, INPUT_WIDTH),
            b_xh: vec![0.0; dim],
            w_hc: Matrix::zeros(1, dim),
            b_hc: 0.0,
            w_cs: Matrix::zeros(dim, dim),
            b_cs: vec![0.0; dim],
            w_sy: Matrix::zeros(1, dim),
            b_sy: 0.0,
            dim,
            pooling,
        }
    }

    /// Checks every tensor shape against `dim` and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::usage("model dimension D must be positive"));
        }
        let expect = |name: TensorName, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::shape(
                    "ModelParams",
                    format!("{name} {}x{}", got.0, got.1),
                    format!("expected {}x{}", want.0, want.1),
                ))
            }
        };
        expect(TensorName::WXh, self.w_xh.shape(), (d, INPUT_WIDTH))?;
        expect(TensorName::BXh, (self.b_xh.len(), 1), (d, 1))?;
        expect(TensorName::WHc, self.w_hc.shape(), (1, d))?;
        expect(TensorName::WCs, self.w_cs.shape(), (d, d))?;
        expect(TensorName::BCs, (self.b_cs.len(), 1), (d, 1))?;
        expect(TensorName::WSy, self.w_sy.shape(), (1, d))?;
        for name in TensorName::ALL {
            if self.tensor(name).iter().any(|x| !x.is_finite()) {
                return Err(Error::usage(format!("{name} contains non-finite entries")));
            }
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        self.dim.hash(&mut hasher);
        self.pooling.hash(&mut hasher);
        for name in TensorName::ALL {
            for x in self.tensor(name) {
                x.to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }
}

/// Number of scalars in the tensors the active pooling mode actually uses.
pub fn param_count(params: &ModelParams) -> usize {
    TensorName::ALL
        .into_iter()
        .filter(|n| n.is_active(params.pooling))
        .map(|n| params.tensor(n).len())
        .sum()
}

/// Gradient of the loss with respect to each parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    #[serde(rename = "W_xh")]
    pub w_xh: Matrix,
    pub b_xh: Vec<f64>,
    #[serde(rename = "W_hc")]
    pub w_hc: Matrix,
    pub b_hc: f64,
    #[serde(rename = "W_cs")]
    pub w_cs: Matrix,
    pub b_cs: Vec<f64>,
    #[serde(rename = "W_sy")]
    pub w_sy: Matrix,
    pub b_sy: f64,
}

impl_tensors!(Gradients);

impl Gradients {
    pub fn zeros(dim: usize) -> Self {
        let p = ModelParams::zeros(dim, PoolingMode::Attention);
        Gradients {
            w_xh: p.w_xh,
            b_xh: p.b_xh,
            w_hc: p.w_hc,
            b_hc: p.b_hc,
            w_cs: p.w_cs,
            b_cs: p.b_cs,
            w_sy: p.w_sy,
            b_sy: p.b_sy,
        }
    }

    pub fn dim(&self) -> usize {
        self.b_xh.len()
    }

    pub fn max_abs(&self) -> f64 {
        TensorName::ALL
            .into_iter()
            .flat_map(|n| self.tensor(n).iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A minibatch of equal-length two-channel sequences with scalar targets.
///
/// Inputs are stored flat as `(batch, time, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    len: usize,
}

impl SequenceBatch {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::usage("sequence length must be positive"));
        }
        if targets.is_empty() {
            return Err(Error::usage("batch must contain at least one sequence"));
        }
        let want = targets.len() * len * INPUT_WIDTH;
        if inputs.len() != want {
            return Err(Error::shape(
                "SequenceBatch::new",
                format!("{} input values", inputs.len()),
                format!("{} sequences x {len} steps x {INPUT_WIDTH}", targets.len()),
            ));
        }
        if inputs.iter().chain(&targets).any(|x| !x.is_finite()) {
            return Err(Error::usage("batch contains non-finite values"));
        }
        Ok(SequenceBatch {
            inputs,
            targets,
            len,
        })
    }

    /// Builds a batch from per-sequence step lists, which must share one length.
    pub fn from_sequences(sequences: &[&[[f64; 2]]], targets: Vec<f64>) -> Result<Self> {
        if sequences.len() != targets.len() {
            return Err(Error::shape(
                "SequenceBatch::from_sequences",
                format!("{} sequences", sequences.len()),
                format!("{} targets", targets.len()),
            ));
        }
        let len = sequences.first().map_or(0, |s| s.len());
        if let Some(bad) = sequences.iter().find(|s| s.len() != len) {
            return Err(Error::shape(
                "SequenceBatch::from_sequences",
                format!("length {len}"),
                format!("length {}", bad.len()),
            ));
        }
        let inputs = sequences
            .iter()
            .flat_map(|s| s.iter().flatten().copied())
            .collect();
        Self::new(inputs, targets, len)
    }

    pub fn batch_size(&self) -> usize {
        self.targets.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Flat `(time, channel)` inputs of sequence `b`.
    pub fn sequence(&self, b: usize) -> &[f64] {
        let stride = self.len * INPUT_WIDTH;
        &self.inputs[b * stride..(b + 1) * stride]
    }

    /// Same batch with time steps reordered: step `t` of the result is step
    /// `perm[t]` of `self`, for every sequence.
    pub fn permute_time(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len];
        if perm.len() != self.len || perm.iter().any(|&p| p >= self.len || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::usage(format!(
                "not a permutation of {} time steps",
                self.len
            )));
        }
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for b in 0..self.batch_size() {
            let seq = self.sequence(b);
            for &p in perm {
                inputs.extend_from_slice(&seq[p * INPUT_WIDTH..(p + 1) * INPUT_WIDTH]);
            }
        }
        Ok(SequenceBatch {
            inputs,
            targets: self.targets.clone(),
            len: self.len,
        })
    }

    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        Self::new(self.inputs.clone(), targets, self.len)
    }
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Hidden states, `(batch, time, D)`.
    pub h: Vec<f64>,
    /// `tanh` attention scores, `(batch, time)`; zero in mean mode.
    pub e: Vec<f64>,
    /// Pooling weights, `(batch, time)`.
    pub alpha: Vec<f64>,
    /// Context vectors, `(batch, D)`.
    pub c: Vec<f64>,
    /// Intermediate vectors, `(batch, D)`.
    pub s: Vec<f64>,
    /// Outputs, one per sequence.
    pub y: Vec<f64>,
    batch_size: usize,
    len: usize,
    dim: usize,
    pooling: PoolingMode,
    params_fingerprint: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.batch_size == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pooling(&self) -> PoolingMode {
        self.pooling
    }

    pub fn alpha_row(&self, b: usize) -> &[f64] {
        &self.alpha[b * self.len..(b + 1) * self.len]
    }

    pub fn context(&self, b: usize) -> &[f64] {
        &self.c[b * self.dim..(b + 1) * self.dim]
    }

    pub fn hidden(&self, b: usize, t: usize) -> &[f64] {
        let off = (b * self.len + t) * self.dim;
        &self.h[off..off + self.dim]
    }
}

pub fn forward(params: &ModelParams, batch: &SequenceBatch) -> Result<ForwardCache> {
    params.validate()?;
    let (bsz, len, d) = (batch.batch_size(), batch.len(), params.dim);

    let mut cache = ForwardCache {
        h: vec![0.0; bsz * len * d],
        e: vec![0.0; bsz * len],
        alpha: vec![0.0; bsz * len],
        c: vec![0.0; bsz * d],
        s: vec![0.0; bsz * d],
        y: vec![0.0; bsz],
        batch_size: bsz,
        len,
        dim: d,
        pooling: params.pooling,
        params_fingerprint: params.fingerprint(),
    };

    cache
        .h
        .par_chunks_mut(len * d)
        .zip(cache.e.par_chunks_mut(len))
        .zip(cache.alpha.par_chunks_mut(len))
        .zip(cache.c.par_chunks_mut(d))
        .zip(cache.s.par_chunks_mut(d))
        .zip(cache.y.par_iter_mut())
        .zip(batch.inputs.par_chunks(len * INPUT_WIDTH))
        .for_each(|((((((h, e), alpha), c), s), y), x)| {
            *y = forward_sequence(params, x, h, e, alpha, c, s);
        });

    Ok(cache)
}

/// Forward pass for one sequence, writing into the per-sequence cache slices.
fn forward_sequence(
    params: &ModelParams,
    x: &[f64],
    h: &mut [f64],
    e: &mut [f64],
    alpha: &mut [f64],
    c: &mut [f64],
    s: &mut [f64],
) -> f64 {
    let d = params.dim;
    let len = e.len();
    let (w0, w1) = input_columns(params);
    let w_hc = params.w_hc.as_slice();
    let attention = params.pooling == PoolingMode::Attention;

    for (t, ht) in h.chunks_exact_mut(d).enumerate() {
        let (x0, x1) = (x[2 * t], x[2 * t + 1]);
        for (((hj, a), b), bias) in ht.iter_mut().zip(&w0).zip(&w1).zip(&params.b_xh) {
            *hj = lrelu(a * x0 + b * x1 + bias);
        }
        if attention {
            e[t] = (dot(ht, w_hc) + params.b_hc).tanh();
        }
    }

    if attention {
        alpha.copy_from_slice(e);
        softmax_in_place(alpha);
    } else {
        alpha.fill(1.0 / len as f64);
    }

    c.fill(0.0);
    for (a, ht) in alpha.iter().zip(h.chunks_exact(d)) {
        for (ci, hi) in c.iter_mut().zip(ht) {
            *ci += a * hi;
        }
    }

    params.w_cs.matvec_into(c, s);
    for (si, b) in s.iter_mut().zip(&params.b_cs) {
        *si = lrelu(*si + b);
    }
    let out: f64 = s
        .iter()
        .zip(params.w_sy.as_slice())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + params.b_sy;
    lrelu(out)
}

/// The two columns of `W_xh` as contiguous vectors.
fn input_columns(params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    params.w_xh.as_slice().chunks_exact(INPUT_WIDTH).map(|w| (w[0], w[1])).unzip()
}

/// Output for a single sequence.
pub fn predict(params: &ModelParams, steps: &[[f64; 2]]) -> Result<f64> {
    let batch = SequenceBatch::from_sequences(&[steps], vec![0.0])?;
    Ok(forward(params, &batch)?.y[0])
}

/// Mean over the batch of squared output errors.
pub fn loss(cache: &ForwardCache, targets: &[f64]) -> Result<f64> {
    if cache.y.len() != targets.len() || targets.is_empty() {
        return Err(Error::shape(
            "loss",
            format!("{} outputs", cache.y.len()),
            format!("{} targets", targets.len()),
        ));
    }
    let sum: f64 = cache
        .y
        .iter()
        .zip(targets)
        .map(|(y, t)| (y - t) * (y - t))
        .sum();
    Ok(sum / targets.len() as f64)
}

/// Time-dependent gradient contributions of one sequence.
struct SequenceGrad {
    w_xh: Vec<f64>,
    b_xh: Vec<f64>,
    w_hc: Vec<f64>,
    b_hc: f64,
}

/// Exact gradient of [`loss`] for the batch that produced `cache`.
pub fn backward(
    params: &ModelParams,
    batch: &SequenceBatch,
    cache: &ForwardCache,
) -> Result<Gradients> {
    if cache.batch_size != batch.batch_size()
        || cache.len != batch.len()
        || cache.dim != params.dim
        || cache.pooling != params.pooling
        || cache.params_fingerprint != params.fingerprint()
    {
        return Err(Error::usage(
            "forward cache was not produced by these parameters and this batch",
        ));
    }

    let (bsz, d) = (batch.batch_size(), params.dim);
    let mut grads = Gradients::zeros(d);
    let scale = 2.0 / bsz as f64;

    // Dense head, sequentially in batch order; it is O(B·D²) and cheap.
    let mut dc = vec![0.0; bsz * d];
    let mut ds_pre = vec![0.0; d];
    for b in 0..bsz {
        head_backward(
            params,
            cache.y[b],
            batch.targets[b],
            scale,
            &cache.s[b * d..(b + 1) * d],
            cache.context(b),
            &mut grads,
            &mut ds_pre,
            &mut dc[b * d..(b + 1) * d],
        );
    }

    // Pooling and encoder, one task per sequence, reduced in batch order.
    let partials: Vec<SequenceGrad> = (0..bsz)
        .into_par_iter()
        .map(|b| {
            let (len, x) = (cache.len, batch.sequence(b));
            backward_sequence(
                params,
                x,
                &cache.h[b * len * d..(b + 1) * len * d],
                cache.alpha_row(b),
                &cache.e[b * len..(b + 1) * len],
                &dc[b * d..(b + 1) * d],
            )
        })
        .collect();

    for p in &partials {
        add_into(grads.w_xh.as_mut_slice(), &p.w_xh);
        add_into(&mut grads.b_xh, &p.b_xh);
        add_into(grads.w_hc.as_mut_slice(), &p.w_hc);
        grads.b_hc += p.b_hc;
    }
    Ok(grads)
}

/// Adds one sequence's output-layer gradients into `grads` and writes the
/// gradient with respect to its context vector into `dc`. Leaves `dc`
/// untouched when the output error is exactly zero.
#[allow(clippy::too_many_arguments)]
fn head_backward(
    params: &ModelParams,
    y: f64,
    target: f64,
    scale: f64,
    s: &[f64],
    c: &[f64],
    grads: &mut Gradients,
    ds_pre: &mut [f64],
    dc: &mut [f64],
) {
    let d = params.dim;
    let dy = scale * (y - target) * lrelu_grad(y);
    if dy == 0.0 {
        return;
    }
    grads.b_sy += dy;
    for (g, si) in grads.w_sy.as_mut_slice().iter_mut().zip(s) {
        *g += dy * si;
    }
    for ((dsp, w), si) in ds_pre.iter_mut().zip(params.w_sy.as_slice()).zip(s) {
        *dsp = dy * w * lrelu_grad(*si);
    }
    for (i, &g) in ds_pre.iter().enumerate() {
        grads.b_cs[i] += g;
        let row = &mut grads.w_cs.as_mut_slice()[i * d..(i + 1) * d];
        for (r, ci) in row.iter_mut().zip(c) {
            *r += g * ci;
        }
    }
    params.w_cs.matvec_t_into(ds_pre, dc);
}

/// Per-thread buffers for [`loss_and_gradients`].
struct Scratch {
    h: Vec<f64>,
    e: Vec<f64>,
    alpha: Vec<f64>,
    c: Vec<f64>,
    s: Vec<f64>,
    ds_pre: Vec<f64>,
    dc: Vec<f64>,
}

impl Scratch {
    fn new(len: usize, d: usize) -> Self {
        Scratch {
            h: vec![0.0; len * d],
            e: vec![0.0; len],
            alpha: vec![0.0; len],
            c: vec![0.0; d],
            s: vec![0.0; d],
            ds_pre: vec![0.0; d],
            dc: vec![0.0; d],
        }
    }
}

/// [`loss`] and [`backward`] for a batch without materializing a
/// [`ForwardCache`].
///
/// Each sequence runs its forward and backward pass back to back in scratch
/// memory that stays in cache, and the per-sequence terms are summed in batch
/// order, so the result is bitwise identical to `forward`, `loss` and
/// `backward` in sequence.
pub fn loss_and_gradients(params: &ModelParams, batch: &SequenceBatch) -> Result<(f64, Gradients)> {
    params.validate()?;
    let (bsz, len, d) = (batch.batch_size(), batch.len(), params.dim);
    if bsz == 0 {
        return Err(Error::shape("loss", "0 outputs", "0 targets"));
    }
    let scale = 2.0 / bsz as f64;
    let partials: Vec<(f64, Gradients)> = (0..bsz)
        .into_par_iter()
        .map_init(
            || Scratch::new(len, d),
            |scr, b| {
                let x = batch.sequence(b);
                let target = batch.targets[b];
                let y = forward_sequence(params, x, &mut scr.h, &mut scr.e, &mut scr.alpha, &mut scr.c, &mut scr.s);
                let mut grads = Gradients::zeros(d);
                scr.dc.fill(0.0);
                head_backward(params, y, target, scale, &scr.s, &scr.c, &mut grads, &mut scr.ds_pre, &mut scr.dc);
                let seq = backward_sequence(params, x, &scr.h, &scr.alpha, &scr.e, &scr.dc);
                grads.w_xh.as_mut_slice().copy_from_slice(&seq.w_xh);
                grads.b_xh = seq.b_xh;
                grads.w_hc.as_mut_slice().copy_from_slice(&seq.w_hc);
                grads.b_hc = seq.b_hc;
                ((y - target) * (y - target), grads)
            },
        )
        .collect();

    let loss = partials.iter().map(|(sq, _)| sq).sum::<f64>() / bsz as f64;
    let mut total = Gradients::zeros(d);
    for (_, g) in &partials {
        for name in TensorName::ALL {
            add_into(total.tensor_mut(name), g.tensor(name));
        }
    }
    Ok((loss, total))
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn backward_sequence(
    params: &ModelParams,
    x: &[f64],
    h: &[f64],
    alpha: &[f64],
    e: &[f64],
    dc: &[f64],
) -> SequenceGrad {
    let (len, d) = (e.len(), params.dim);
    let w_hc = params.w_hc.as_slice();
    let attention = params.pooling == PoolingMode::Attention;

    let mut out = SequenceGrad {
        w_xh: vec![0.0; d * INPUT_WIDTH],
        b_xh: vec![0.0; d],
        w_hc: vec![0.0; d],
        b_hc: 0.0,
    };
    if dc.iter().all(|&g| g == 0.0) {
        return out;
    }

    // Through the softmax: de_t = α_t (dc·h_t − Σ_k α_k dc·h_k).
    let mut dscore = vec![0.0; len];
    if attention {
        let mut mean_dalpha = 0.0;
        for ((ds, ht), a) in dscore.iter_mut().zip(h.chunks_exact(d)).zip(alpha) {
            *ds = dot(ht, dc);
            mean_dalpha += a * *ds;
        }
        for ((ds, a), et) in dscore.iter_mut().zip(alpha).zip(e) {
            *ds = a * (*ds - mean_dalpha) * (1.0 - et * et);
        }
    }

    let mut dpre = vec![0.0; d];
    let (mut g0, mut g1) = (vec![0.0; d], vec![0.0; d]);
    for (t, ht) in h.chunks_exact(d).enumerate() {
        let (x0, x1) = (x[2 * t], x[2 * t + 1]);
        let (a, g) = (alpha[t], dscore[t]);
        if attention {
            out.b_hc += g;
            for (acc, hj) in out.w_hc.iter_mut().zip(ht) {
                *acc += g * hj;
            }
            for (((dp, hj), dcj), wj) in dpre.iter_mut().zip(ht).zip(dc).zip(w_hc) {
                *dp = (a * dcj + g * wj) * lrelu_grad(*hj);
            }
        } else {
            for ((dp, hj), dcj) in dpre.iter_mut().zip(ht).zip(dc) {
                *dp = a * dcj * lrelu_grad(*hj);
            }
        }
        for (((w0, w1), bx), dp) in g0.iter_mut().zip(&mut g1).zip(&mut out.b_xh).zip(&dpre) {
            *w0 += dp * x0;
            *w1 += dp * x1;
            *bx += dp;
        }
    }
    for ((w, a), b) in out.w_xh.chunks_exact_mut(INPUT_WIDTH).zip(&g0).zip(&g1) {
        w[0] = *a;
        w[1] = *b;
    }
    out
}

use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LRELU_SLOPE: f64 = 0.01;

#[inline]
pub fn lrelu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LRELU_SLOPE * x
    }
}

/// Derivative of [`lrelu`]; 1 at exactly zero.
///
/// The sign of the output matches the sign of the input, so this may be
/// evaluated on either.
#[inline]
pub fn lrelu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LRELU_SLOPE
    }
}

pub fn lrelu_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = lrelu(*x);
    }
}

pub fn softmax(e: &[f64]) -> Result<Vec<f64>> {
    if e.is_empty() {
        return Err(Error::usage("softmax of an empty vector"));
    }
    let mut out = e.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Max-subtracted softmax; `xs` must be nonempty.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = 1.0 / total;
    for x in xs.iter_mut() {
        *x *= inv;
    }
}

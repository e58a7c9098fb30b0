//! Untracked neural building blocks on plain matrices.
//!
//! The tape in [`super::tape`] records the same computations for
//! differentiation; these versions serve direct use and test oracles.

use alloc::vec::Vec;
use rand::{Rng, RngCore};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn elementwise(x: &Matrix, f: Activation) -> Matrix {
    match f {
        Activation::Relu => x.map(relu),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(a: &Matrix) -> Result<Matrix> {
    if a.is_empty() {
        return Err(Error::invalid("softmax_rows of an empty matrix"));
    }
    let mut out = a.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Per-row standardization (population variance) followed by `gamma`/`beta`.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Matrix> {
    if gamma.len() != x.cols() || beta.len() != x.cols() {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape(),
            right: (gamma.len(), beta.len()),
        });
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let (mean, inv_std) = row_moments(row, eps);
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv_std * gamma[c] + beta[c];
        }
    }
    Ok(out)
}

/// Mean and `1/sqrt(var + eps)` of a row, with population variance.
pub(crate) fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / libm::sqrt(var + eps))
}

/// Draws an inverted-dropout mask: zero with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Result<Matrix> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Ok(Matrix::from_vec_unchecked(rows, cols, data))
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(alloc::format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted dropout. Eval mode and `rate == 0` are the identity.
pub fn dropout(x: &Matrix, rate: f64, mode: Mode, rng: &mut dyn RngCore) -> Result<Matrix> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, rng)?;
    x.hadamard(&mask)
}

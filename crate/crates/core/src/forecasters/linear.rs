//! Linear base models written as `ŷ = F θ` with a per-sample design matrix.
//!
//! DLinear rows are `[trend (L), remainder (L), 1]` with the weights shared
//! across nodes. Graph-linear rows are `[x (L), (P x) (L), onehot(node) (n)]`,
//! so each node carries its own bias.

use crate::error::{Error, Result};
use crate::graph::MixingOperator;
use crate::linalg::Matrix;

/// Centered moving average of one series, edge-padded by replication.
pub fn moving_average(series: &[f64], kernel: usize) -> Vec<f64> {
    let len = series.len() as isize;
    let half = (kernel / 2) as isize;
    (0..len)
        .map(|t| {
            let sum: f64 = (t - half..=t + half).map(|j| series[j.clamp(0, len - 1) as usize]).sum();
            sum / kernel as f64
        })
        .collect()
}

pub fn validate_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("trend kernel {kernel} must be odd and positive")));
    }
    Ok(())
}

pub fn dlinear_len(lookback: usize) -> usize {
    2 * lookback + 1
}

pub fn graph_linear_len(lookback: usize, num_nodes: usize) -> usize {
    2 * lookback + num_nodes
}

fn check(history: &[f64], lookback: usize, n: usize) -> Result<()> {
    if lookback == 0 || history.len() != lookback * n {
        return Err(Error::DimensionMismatch {
            expected: lookback * n,
            actual: history.len(),
        });
    }
    Ok(())
}

/// Design rows for an `L × n` row-major window.
pub fn dlinear_design(history: &[f64], lookback: usize, n: usize, kernel: usize) -> Result<Matrix> {
    check(history, lookback, n)?;
    validate_kernel(kernel)?;
    let m = dlinear_len(lookback);
    let mut f = Matrix::zeros(n, m);
    for i in 0..n {
        let col: Vec<f64> = (0..lookback).map(|l| history[l * n + i]).collect();
        let trend = moving_average(&col, kernel);
        for l in 0..lookback {
            f[(i, l)] = trend[l];
            f[(i, lookback + l)] = col[l] - trend[l];
        }
        f[(i, m - 1)] = 1.0;
    }
    Ok(f)
}

pub fn graph_linear_design(history: &[f64], lookback: usize, mixing: &MixingOperator) -> Result<Matrix> {
    let n = mixing.dim();
    check(history, lookback, n)?;
    let mut f = Matrix::zeros(n, graph_linear_len(lookback, n));
    for l in 0..lookback {
        let row = &history[l * n..(l + 1) * n];
        let mixed = mixing.mix(row)?;
        for i in 0..n {
            f[(i, l)] = row[i];
            f[(i, lookback + l)] = mixed[i];
        }
    }
    for i in 0..n {
        f[(i, 2 * lookback + i)] = 1.0;
    }
    Ok(f)
}

/// Weights that reproduce the last observation exactly.
pub fn dlinear_persistence(lookback: usize) -> Vec<f64> {
    let mut w = vec![0.0; dlinear_len(lookback)];
    w[lookback - 1] = 1.0;
    w[2 * lookback - 1] = 1.0;
    w
}

pub fn graph_linear_persistence(lookback: usize, num_nodes: usize) -> Vec<f64> {
    let mut w = vec![0.0; graph_linear_len(lookback, num_nodes)];
    w[lookback - 1] = 1.0;
    w
}

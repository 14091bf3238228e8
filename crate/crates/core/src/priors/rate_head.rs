//! Sample-dependent transmission and recovery rates predicted from the
//! lookback window.
//!
//! Per node, the features are the last value, window mean, window OLS slope
//! and the base forecaster's prediction; the last one couples the auxiliary
//! branch to the base parameters. Two shared affine maps followed by
//! softplus give `β` and `γ`.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct EpiRates<T: Scalar = f64> {
    pub beta: Vec<T>,
    pub gamma: Vec<T>,
}

pub const NUM_FEATURES: usize = 4;
/// Weights and bias for `β`, then for `γ`.
pub const PARAM_LEN: usize = 2 * (NUM_FEATURES + 1);
/// Keeps rates strictly positive when the softplus underflows.
pub const RATE_FLOOR: f64 = 1e-8;
/// Margin added above the mixing row sums for the next-generation variant.
pub const NGM_EPSILON: f64 = 1e-2;

/// `[last, mean, slope]` per node from an `L × n` row-major window.
pub fn summary_features(history: &[f64], lookback: usize) -> Vec<[f64; 3]> {
    let n = history.len() / lookback;
    let l_mean = (lookback as f64 - 1.0) / 2.0;
    let sxx: f64 = (0..lookback).map(|l| (l as f64 - l_mean).powi(2)).sum();
    (0..n)
        .map(|i| {
            let col = (0..lookback).map(|l| history[l * n + i]);
            let mean = col.clone().sum::<f64>() / lookback as f64;
            let slope = if sxx > 0.0 {
                col.enumerate().map(|(l, x)| (l as f64 - l_mean) * (x - mean)).sum::<f64>() / sxx
            } else {
                0.0
            };
            [history[(lookback - 1) * n + i], mean, slope]
        })
        .collect()
}

pub fn features_with_prediction(summary: &[[f64; 3]], base_prediction: &[f64]) -> Vec<[f64; NUM_FEATURES]> {
    summary
        .iter()
        .zip(base_prediction)
        .map(|(s, &y)| [s[0], s[1], s[2], y])
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct RateHead<'a> {
    params: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct RateCache {
    pre_beta: Vec<f64>,
    pre_gamma: Vec<f64>,
}

impl<'a> RateHead<'a> {
    pub fn new(params: &'a [f64]) -> Result<Self> {
        if params.len() != PARAM_LEN {
            return Err(Error::DimensionMismatch {
                expected: PARAM_LEN,
                actual: params.len(),
            });
        }
        Ok(Self { params })
    }

    /// Starting point: zero weights, biases giving `β = 0.3`, `γ = 0.2`.
    pub fn init_params() -> Vec<f64> {
        let mut p = vec![0.0; PARAM_LEN];
        p[NUM_FEATURES] = softplus_inverse(0.3 - RATE_FLOOR);
        p[PARAM_LEN - 1] = softplus_inverse(0.2 - RATE_FLOOR);
        p
    }

    fn affine(&self, offset: usize, f: &[f64; NUM_FEATURES]) -> f64 {
        let w = &self.params[offset..offset + NUM_FEATURES];
        w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + self.params[offset + NUM_FEATURES]
    }

    /// `gamma_offset` is added after the softplus (zero except for the
    /// next-generation variant).
    pub fn forward(&self, features: &[[f64; NUM_FEATURES]], gamma_offset: &[f64]) -> (EpiRates, RateCache) {
        let pre_beta: Vec<f64> = features.iter().map(|f| self.affine(0, f)).collect();
        let pre_gamma: Vec<f64> = features.iter().map(|f| self.affine(NUM_FEATURES + 1, f)).collect();
        let rates = EpiRates {
            beta: pre_beta.iter().map(|&x| softplus(x) + RATE_FLOOR).collect(),
            gamma: pre_gamma
                .iter()
                .zip(gamma_offset)
                .map(|(&x, &o)| softplus(x) + RATE_FLOOR + o)
                .collect(),
        };
        (rates, RateCache { pre_beta, pre_gamma })
    }

    /// Accumulates parameter gradients; returns `∂L/∂(base prediction)` per node.
    pub fn backward(
        &self,
        features: &[[f64; NUM_FEATURES]],
        cache: &RateCache,
        g_beta: &[f64],
        g_gamma: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let mut g_pred = vec![0.0; features.len()];
        for (k, f) in features.iter().enumerate() {
            let gb = g_beta[k] * sigmoid(cache.pre_beta[k]);
            let gg = g_gamma[k] * sigmoid(cache.pre_gamma[k]);
            for j in 0..NUM_FEATURES {
                grad[j] += gb * f[j];
                grad[NUM_FEATURES + 1 + j] += gg * f[j];
            }
            grad[NUM_FEATURES] += gb;
            grad[PARAM_LEN - 1] += gg;
            g_pred[k] = gb * self.params[NUM_FEATURES - 1] + gg * self.params[2 * NUM_FEATURES];
        }
        g_pred
    }
}

/// Rates for one window; `gamma_offset` as in [`RateHead::forward`].
pub fn rate_head(
    history: &[f64],
    lookback: usize,
    base_prediction: &[f64],
    params: &[f64],
    gamma_offset: &[f64],
) -> Result<EpiRates> {
    if history.len() != lookback * base_prediction.len() || gamma_offset.len() != base_prediction.len() {
        return Err(Error::DimensionMismatch {
            expected: lookback * base_prediction.len(),
            actual: history.len(),
        });
    }
    let head = RateHead::new(params)?;
    let features = features_with_prediction(&summary_features(history, lookback), base_prediction);
    Ok(head.forward(&features, gamma_offset).0)
}

/// `γ` offsets that keep `diag(γ) − P` strictly diagonally dominant.
pub fn ngm_gamma_offset<T: Scalar>(row_sums: &[T]) -> Vec<f64> {
    row_sums
        .iter()
        .map(|s| s.to_f64().unwrap_or(1.0) + NGM_EPSILON)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_constant_rates() {
        let mut params = vec![0.0; PARAM_LEN];
        params[NUM_FEATURES] = 0.7;
        params[PARAM_LEN - 1] = -1.0;
        let history: Vec<f64> = (0..12 * 3).map(|k| k as f64).collect();
        let rates = rate_head(&history, 12, &[1.0, 5.0, 9.0], &params, &[0.0; 3]).unwrap();
        assert!(rates.beta.iter().all(|&b| b == softplus(0.7) + RATE_FLOOR && b > 0.0));
        assert!(rates.gamma.iter().all(|&g| g == softplus(-1.0) + RATE_FLOOR));
    }

    #[test]
    fn ngm_offset_exceeds_row_sums() {
        let params = vec![-50.0; PARAM_LEN];
        let history = vec![1.0; 12 * 2];
        let rates = rate_head(&history, 12, &[1.0, 1.0], &params, &ngm_gamma_offset(&[1.0, 1.0])).unwrap();
        assert!(rates.gamma.iter().all(|&g| g > 1.0 + NGM_EPSILON));
    }

    #[test]
    fn random_histories_give_positive_finite_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let l = rng.random_range(1..15);
            let history: Vec<f64> = (0..l * n).map(|_| rng.random_range(0.0..1e4)).collect();
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..1e4)).collect();
            let params: Vec<f64> = (0..PARAM_LEN).map(|_| rng.random_range(-3.0..3.0)).collect();
            let rates = rate_head(&history, l, &pred, &params, &vec![0.0; n]).unwrap();
            assert!(rates.beta.iter().chain(&rates.gamma).all(|&v| v.is_finite() && v > 0.0));
        }
    }

    #[test]
    fn slope_of_ramp() {
        let history: Vec<f64> = (0..5).flat_map(|l| [2.0 * l as f64, 7.0]).collect();
        let f = summary_features(&history, 5);
        assert_eq!(f[0], [8.0, 4.0, 2.0]);
        assert_eq!(f[1], [7.0, 7.0, 0.0]);
    }
}

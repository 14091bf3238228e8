//! Calendar correction: an embedding of the target's calendar category fed
//! through a one-hidden-layer tanh network gives an additive per-node offset.

use crate::error::{Error, Result};

/// Shape of a TID head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TidDims {
    pub num_categories: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub num_nodes: usize,
}

impl TidDims {
    /// Parameter count, laid out as embedding, `w1`, `b1`, `w2`, `b2`.
    pub fn len(&self) -> usize {
        self.num_categories * self.embed_dim
            + self.hidden * self.embed_dim
            + self.hidden
            + self.num_nodes * self.hidden
            + self.num_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offsets(&self) -> [usize; 5] {
        let e = 0;
        let w1 = e + self.num_categories * self.embed_dim;
        let b1 = w1 + self.hidden * self.embed_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.num_nodes * self.hidden;
        [e, w1, b1, w2, b2]
    }
}

/// Borrowed view of TID parameters.
#[derive(Debug, Clone, Copy)]
pub struct TidHead<'a> {
    dims: TidDims,
    params: &'a [f64],
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TidForward {
    pub hidden: Vec<f64>,
    pub delta: Vec<f64>,
}

impl<'a> TidHead<'a> {
    pub fn new(dims: TidDims, params: &'a [f64]) -> Result<Self> {
        if params.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                actual: params.len(),
            });
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> TidDims {
        self.dims
    }

    pub fn forward(&self, indicator: usize) -> Result<TidForward> {
        let d = self.dims;
        if indicator >= d.num_categories {
            return Err(Error::InvalidArgument(format!(
                "calendar indicator {indicator} outside 0..{}",
                d.num_categories
            )));
        }
        let [e, w1, b1, w2, b2] = d.offsets();
        let emb = &self.params[e + indicator * d.embed_dim..e + (indicator + 1) * d.embed_dim];
        let hidden: Vec<f64> = (0..d.hidden)
            .map(|k| {
                let row = &self.params[w1 + k * d.embed_dim..w1 + (k + 1) * d.embed_dim];
                let pre: f64 = row.iter().zip(emb).map(|(w, x)| w * x).sum::<f64>() + self.params[b1 + k];
                pre.tanh()
            })
            .collect();
        let delta = (0..d.num_nodes)
            .map(|i| {
                let row = &self.params[w2 + i * d.hidden..w2 + (i + 1) * d.hidden];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.params[b2 + i]
            })
            .collect();
        Ok(TidForward { hidden, delta })
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂delta`.
    pub fn backward(&self, indicator: usize, fwd: &TidForward, g_delta: &[f64], grad: &mut [f64]) {
        let d = self.dims;
        let [e, w1, b1, w2, b2] = d.offsets();
        let mut g_hidden = vec![0.0; d.hidden];
        for (i, &g) in g_delta.iter().enumerate() {
            grad[b2 + i] += g;
            for k in 0..d.hidden {
                grad[w2 + i * d.hidden + k] += g * fwd.hidden[k];
                g_hidden[k] += g * self.params[w2 + i * d.hidden + k];
            }
        }
        let emb_off = e + indicator * d.embed_dim;
        for k in 0..d.hidden {
            let g_pre = g_hidden[k] * (1.0 - fwd.hidden[k] * fwd.hidden[k]);
            grad[b1 + k] += g_pre;
            for j in 0..d.embed_dim {
                grad[w1 + k * d.embed_dim + j] += g_pre * self.params[emb_off + j];
                grad[emb_off + j] += g_pre * self.params[w1 + k * d.embed_dim + j];
            }
        }
    }

    /// Deterministic initialization: small embedding and first layer, zero
    /// output layer so the initial correction is exactly zero.
    pub fn init_params(dims: TidDims, mut next_uniform: impl FnMut() -> f64) -> Vec<f64> {
        let [_, _, b1, w2, _] = dims.offsets();
        let mut params = vec![0.0; dims.len()];
        for p in &mut params[..b1] {
            *p = 0.5 * (2.0 * next_uniform() - 1.0);
        }
        debug_assert!(params[w2..].iter().all(|&p| p == 0.0));
        params
    }
}

/// `base + δ(s)`.
pub fn apply_tid(base_prediction: &[f64], indicator: usize, head: &TidHead<'_>) -> Result<Vec<f64>> {
    if base_prediction.len() != head.dims.num_nodes {
        return Err(Error::DimensionMismatch {
            expected: head.dims.num_nodes,
            actual: base_prediction.len(),
        });
    }
    let fwd = head.forward(indicator)?;
    Ok(base_prediction.iter().zip(&fwd.delta).map(|(b, d)| b + d).collect())
}

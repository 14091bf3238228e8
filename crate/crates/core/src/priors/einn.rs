//! Time-only latent SIR trajectories for the EINN auxiliary objective.
//!
//! Each node's `S`, `I`, `R` are polynomials in normalized time
//! `τ = (t − t₀)/span`. The ODE residual is evaluated with the analytic time
//! derivative against the SIR right-hand side; the implied incidence
//! `β⊙S⊙I/p` is the auxiliary forecast.

use crate::error::{Error, Result};
use crate::priors::rate_head::{EpiRates, RATE_FLOOR};
use crate::scalar::{sigmoid, softplus, softplus_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EinnDims {
    pub num_nodes: usize,
    pub degree: usize,
}

impl EinnDims {
    /// Coefficient blocks for S, I, R (`n × (degree+1)` each), then raw
    /// `β` and raw `γ` (`n` each).
    pub fn len(&self) -> usize {
        3 * self.num_nodes * (self.degree + 1) + 2 * self.num_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coef(&self, compartment: usize, node: usize) -> usize {
        (compartment * self.num_nodes + node) * (self.degree + 1)
    }

    fn raw_beta(&self, node: usize) -> usize {
        3 * self.num_nodes * (self.degree + 1) + node
    }

    fn raw_gamma(&self, node: usize) -> usize {
        self.raw_beta(node) + self.num_nodes
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EinnTimeModule<'a> {
    dims: EinnDims,
    params: &'a [f64],
}

/// Latent state and residuals at one time point.
#[derive(Debug, Clone)]
pub struct EinnPoint {
    pub tau: f64,
    /// Raw polynomial values `[S, I, R]` per node (before clamping).
    pub latent: Vec<[f64; 3]>,
    /// ODE residuals `[e_S, e_I, e_R]` per node, in native time units.
    pub residuals: Vec<[f64; 3]>,
    /// Implied incidence per node.
    pub incidence: Vec<f64>,
}

impl<'a> EinnTimeModule<'a> {
    pub fn new(dims: EinnDims, params: &'a [f64]) -> Result<Self> {
        if params.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                actual: params.len(),
            });
        }
        Ok(Self { dims, params })
    }

    /// Constant trajectories at `S = p − level`, `I = level`, `R = 0`.
    pub fn init_params(dims: EinnDims, level: &[f64], populations: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; dims.len()];
        for k in 0..dims.num_nodes {
            let i0 = level[k].clamp(0.0, populations[k]);
            p[dims.coef(0, k)] = populations[k] - i0;
            p[dims.coef(1, k)] = i0;
            p[dims.raw_beta(k)] = softplus_inverse(0.3);
            p[dims.raw_gamma(k)] = softplus_inverse(0.2);
        }
        p
    }

    pub fn rates(&self) -> EpiRates {
        let n = self.dims.num_nodes;
        EpiRates {
            beta: (0..n).map(|k| softplus(self.params[self.dims.raw_beta(k)]) + RATE_FLOOR).collect(),
            gamma: (0..n).map(|k| softplus(self.params[self.dims.raw_gamma(k)]) + RATE_FLOOR).collect(),
        }
    }

    fn poly(&self, compartment: usize, node: usize, tau: f64) -> (f64, f64) {
        let c = &self.params[self.dims.coef(compartment, node)..][..self.dims.degree + 1];
        let mut value = 0.0;
        let mut deriv = 0.0;
        let mut pow = 1.0;
        for (k, &ck) in c.iter().enumerate() {
            if k + 1 < c.len() {
                deriv += (k + 1) as f64 * c[k + 1] * pow;
            }
            value += ck * pow;
            pow *= tau;
        }
        (value, deriv)
    }

    pub fn evaluate(&self, tau: f64, span: f64, populations: &[f64]) -> EinnPoint {
        let rates = self.rates();
        let n = self.dims.num_nodes;
        let mut latent = Vec::with_capacity(n);
        let mut residuals = Vec::with_capacity(n);
        let mut incidence = Vec::with_capacity(n);
        for k in 0..n {
            let (s, ds) = self.poly(0, k, tau);
            let (i, di) = self.poly(1, k, tau);
            let (r, dr) = self.poly(2, k, tau);
            let (sc, ic) = (s.max(0.0), i.max(0.0));
            let f = rates.beta[k] * sc * ic / populations[k];
            let g = rates.gamma[k] * ic;
            latent.push([s, i, r]);
            residuals.push([ds / span + f, di / span - f + g, dr / span - g]);
            incidence.push(f);
        }
        EinnPoint {
            tau,
            latent,
            residuals,
            incidence,
        }
    }

    /// Accumulates gradients given `∂L/∂incidence` and `∂L/∂residuals`.
    pub fn backward(
        &self,
        point: &EinnPoint,
        span: f64,
        populations: &[f64],
        g_incidence: &[f64],
        g_residuals: &[[f64; 3]],
        grad: &mut [f64],
    ) {
        let d = self.dims;
        let rates = self.rates();
        for k in 0..d.num_nodes {
            let [s, i, _] = point.latent[k];
            let (sc, ic) = (s.max(0.0), i.max(0.0));
            let [g_es, g_ei, g_er] = g_residuals[k];
            let (beta, gamma, p) = (rates.beta[k], rates.gamma[k], populations[k]);
            let g_f = g_es - g_ei + g_incidence[k];
            let g_gamma = (g_ei - g_er) * ic;
            let g_beta = g_f * sc * ic / p;
            let mut g_ic = (g_ei - g_er) * gamma + g_f * beta * sc / p;
            let mut g_sc = g_f * beta * ic / p;
            if s <= 0.0 {
                g_sc = 0.0;
            }
            if i <= 0.0 {
                g_ic = 0.0;
            }
            let value_grads = [g_sc, g_ic, 0.0];
            let deriv_grads = [g_es / span, g_ei / span, g_er / span];
            for comp in 0..3 {
                let off = d.coef(comp, k);
                let mut pow = 1.0;
                let mut pow_prev = 0.0;
                for j in 0..=d.degree {
                    // ∂value/∂c_j = τ^j, ∂deriv/∂c_j = j τ^(j−1).
                    grad[off + j] += value_grads[comp] * pow + deriv_grads[comp] * j as f64 * pow_prev;
                    pow_prev = pow;
                    pow *= point.tau;
                }
            }
            grad[d.raw_beta(k)] += g_beta * sigmoid(self.params[d.raw_beta(k)]);
            grad[d.raw_gamma(k)] += g_gamma * sigmoid(self.params[d.raw_gamma(k)]);
        }
    }
}

/// Mean squared ODE residual over the given normalized times.
pub fn dynamics_loss(module: &EinnTimeModule<'_>, taus: &[f64], span: f64, populations: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for &tau in taus {
        for res in module.evaluate(tau, span, populations).residuals {
            total += res.iter().map(|e| e * e).sum::<f64>();
            count += 3;
        }
    }
    total / count.max(1) as f64
}

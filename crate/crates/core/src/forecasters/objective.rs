//! The composed training objective: base MSE (optionally IQR-filtered), an
//! additive calendar correction, an epidemic regularizer and the EINN
//! auxiliary terms, all with analytic gradients.
//!
//! Everything here works in scaled units (values divided by one global
//! factor `σ`); callers convert back. The base model additionally sees its
//! inputs centered by `μ/σ` and adds it back at the output.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasters::train::Differentiable;
use crate::graph::MixingOperator;
use crate::linalg::Matrix;
use crate::metrics::FilterMask;
use crate::priors::einn::{EinnDims, EinnTimeModule};
use crate::priors::filter::masked_mse;
use crate::priors::ngm::ngm_solve;
use crate::priors::rate_head::{features_with_prediction, RateHead};
use crate::priors::sir::{init_sir_states, sir_rollout};
use crate::priors::tid::{TidDims, TidHead};
use crate::priors::{EinnConfig, EpiConfig, EpiVariant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub len: usize,
}

/// Named contiguous blocks of the flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layout {
    pub segments: Vec<Segment>,
}

impl Layout {
    pub fn push(&mut self, name: &str, len: usize) {
        self.segments.push(Segment {
            name: name.to_string(),
            len,
        });
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        let mut offset = 0;
        for s in &self.segments {
            if s.name == name {
                return Some(offset..offset + s.len);
            }
            offset += s.len;
        }
        None
    }
}

pub const BASE: &str = "base";
pub const TID: &str = "tid";
pub const RATES: &str = "rate_head";
pub const EINN: &str = "einn";

/// One sample in scaled units with its precomputed design (built from the
/// centered window).
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub design: Matrix,
    pub target: Vec<f64>,
    pub last_row: Vec<f64>,
    /// `[last, mean, slope]` per node.
    pub summary: Vec<[f64; 3]>,
    pub indicator: usize,
    /// Target time normalized to the training window.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub base: f64,
    pub epi: f64,
    pub dynamics: f64,
    pub data: f64,
    pub align: f64,
    pub l2: f64,
    pub total: f64,
    /// The filter masked every training target.
    pub all_masked: bool,
}

/// `ŷ = Fθ`, plus the calendar correction when present.
pub fn final_prediction(
    design: &Matrix,
    params: &[f64],
    layout: &Layout,
    tid: Option<TidDims>,
    indicator: usize,
    offset: f64,
) -> Result<Vec<f64>> {
    let base = layout.range(BASE).ok_or_else(|| Error::InvalidArgument("layout has no base segment".into()))?;
    let mut y = design.mul_vec(&params[base])?;
    for v in &mut y {
        *v += offset;
    }
    if let (Some(dims), Some(range)) = (tid, layout.range(TID)) {
        let fwd = TidHead::new(dims, &params[range])?.forward(indicator)?;
        for (a, d) in y.iter_mut().zip(&fwd.delta) {
            *a += d;
        }
    }
    Ok(y)
}

pub struct PatchedObjective<'a> {
    pub train: Vec<PreparedSample>,
    pub validation: Vec<PreparedSample>,
    pub layout: Layout,
    pub tid: Option<TidDims>,
    pub filter_keep: Option<Vec<bool>>,
    pub epi: Option<EpiConfig>,
    pub einn: Option<(EinnConfig, EinnDims)>,
    pub mixing: &'a MixingOperator,
    /// Populations in scaled units.
    pub populations: Vec<f64>,
    pub gamma_offset: Vec<f64>,
    pub l2: f64,
    /// Training-window length in native steps, the EINN time unit.
    pub span: f64,
    pub horizon: usize,
    /// Centering `μ/σ` removed from the base model's inputs.
    pub offset: f64,
}

impl<'a> PatchedObjective<'a> {
    /// Builds the filter mask over every training target entry.
    pub fn filter_mask(train: &[PreparedSample], c: f64) -> Result<Vec<bool>> {
        let targets: Vec<f64> = train.iter().flat_map(|s| s.target.iter().copied()).collect();
        Ok(FilterMask::build(&targets, c)?.keep)
    }

    fn num_nodes(&self) -> usize {
        self.mixing.dim()
    }

    pub fn predict(&self, sample: &PreparedSample, params: &[f64]) -> Result<Vec<f64>> {
        final_prediction(&sample.design, params, &self.layout, self.tid, sample.indicator, self.offset)
    }

    /// Mean squared error of the final prediction, scaled units.
    pub fn plain_mse(&self, samples: &[PreparedSample], params: &[f64]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty validation set".into()));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for s in samples {
            let y = self.predict(s, params)?;
            total += y.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += y.len();
        }
        Ok(total / count as f64)
    }

    /// Loss components; accumulates the gradient into `grad` when given.
    pub fn evaluate(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> Result<LossBreakdown> {
        if params.len() != self.layout.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.len(),
                actual: params.len(),
            });
        }
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let n = self.num_nodes();
        let ns = self.train.len();
        if ns == 0 {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let base_range = self.layout.range(BASE).expect("base segment");
        let theta = &params[base_range.clone()];
        let tid_range = self.layout.range(TID);
        let tid_head = match (self.tid, &tid_range) {
            (Some(d), Some(r)) => Some(TidHead::new(d, &params[r.clone()])?),
            _ => None,
        };
        let rate_range = self.layout.range(RATES);
        let einn_range = self.layout.range(EINN);
        let einn_module = match (&self.einn, &einn_range) {
            (Some((_, d)), Some(r)) => Some(EinnTimeModule::new(*d, &params[r.clone()])?),
            _ => None,
        };

        // Forward pass for the base and calendar parts.
        let mut tid_fwd = Vec::with_capacity(ns);
        let mut final_pred: Vec<Vec<f64>> = Vec::with_capacity(ns);
        for s in &self.train {
            let mut yt = s.design.mul_vec(theta)?;
            for v in &mut yt {
                *v += self.offset;
            }
            if let Some(head) = &tid_head {
                let f = head.forward(s.indicator)?;
                for (a, d) in yt.iter_mut().zip(&f.delta) {
                    *a += d;
                }
                tid_fwd.push(f);
            }
            final_pred.push(yt);
        }

        let mut out = LossBreakdown::default();
        let mut g_final = vec![vec![0.0; n]; ns];

        // Base loss over the flattened batch.
        let flat_pred: Vec<f64> = final_pred.iter().flatten().copied().collect();
        let flat_target: Vec<f64> = self.train.iter().flat_map(|s| s.target.iter().copied()).collect();
        let keep = match &self.filter_keep {
            Some(k) => k.clone(),
            None => vec![true; flat_pred.len()],
        };
        let base = masked_mse(&flat_pred, &flat_target, &keep);
        out.base = base.loss;
        out.all_masked = base.all_masked;
        for (k, g) in base.gradient.iter().enumerate() {
            g_final[k / n][k % n] += g;
        }

        // Epidemic regularizer.
        let mut g_rate = rate_range.as_ref().map(|r| vec![0.0; r.len()]);
        if let (Some(epi), Some(rr)) = (&self.epi, &rate_range) {
            let head = RateHead::new(&params[rr.clone()])?;
            let weight = epi.lambda_epi / (ns * n) as f64;
            let pops = &self.populations;
            for (si, s) in self.train.iter().enumerate() {
                let features = features_with_prediction(&s.summary, &final_pred[si]);
                let (rates, cache) = head.forward(&features, &self.gamma_offset);
                let (g_beta, g_gamma, aux_err) = match epi.variant {
                    EpiVariant::SirIncidence | EpiVariant::SirPercent => {
                        let state = init_sir_states(&s.last_row, pops);
                        let roll = sir_rollout(&state, &rates, self.mixing, pops, epi.dt, self.horizon)?;
                        let raw = roll.output().to_vec();
                        let (r, tgt): (Vec<f64>, Vec<f64>) = match epi.variant {
                            EpiVariant::SirPercent => (
                                raw.iter().zip(pops).map(|(v, p)| epi.scale_s * v / p).collect(),
                                s.target.iter().zip(pops).map(|(v, p)| epi.scale_s * v / p).collect(),
                            ),
                            _ => (raw.clone(), s.target.clone()),
                        };
                        let err: Vec<f64> = r.iter().zip(&tgt).map(|(a, b)| a - b).collect();
                        let mut g_r: Vec<f64> = err.iter().map(|e| 2.0 * weight * e).collect();
                        if epi.variant == EpiVariant::SirPercent {
                            for (g, p) in g_r.iter_mut().zip(pops) {
                                *g *= epi.scale_s / p;
                            }
                        }
                        let (gb, gg) = if grad.is_some() {
                            roll.backward(&g_r, &rates, self.mixing, pops)?
                        } else {
                            (vec![0.0; n], vec![0.0; n])
                        };
                        (gb, gg, err)
                    }
                    EpiVariant::Ngm => {
                        let solve = ngm_solve(&rates.beta, &rates.gamma, self.mixing.matrix(), &s.last_row)?;
                        let err: Vec<f64> = solve.output.iter().zip(&s.target).map(|(a, b)| a - b).collect();
                        let g_r: Vec<f64> = err.iter().map(|e| 2.0 * weight * e).collect();
                        let (gb, gg) = if grad.is_some() {
                            solve.backward(&g_r, &rates.beta)?
                        } else {
                            (vec![0.0; n], vec![0.0; n])
                        };
                        (gb, gg, err)
                    }
                };
                out.epi += epi.lambda_epi * aux_err.iter().map(|e| e * e).sum::<f64>() / (ns * n) as f64;
                if let Some(g) = g_rate.as_mut() {
                    let g_pred = head.backward(&features, &cache, &g_beta, &g_gamma, g);
                    for (a, b) in g_final[si].iter_mut().zip(&g_pred) {
                        *a += b;
                    }
                }
            }
        }

        // EINN auxiliary objective.
        let mut g_einn = einn_range.as_ref().map(|r| vec![0.0; r.len()]);
        if let (Some((cfg, _)), Some(module)) = (&self.einn, &einn_module) {
            let pops = &self.populations;
            let w_dyn = cfg.lambda_dyn / (ns * n * 3) as f64;
            let w_pair = 1.0 / ns as f64;
            for (si, s) in self.train.iter().enumerate() {
                let pt = module.evaluate(s.tau, self.span, pops);
                let mut g_inc = vec![0.0; n];
                let mut g_res = vec![[0.0; 3]; n];
                for k in 0..n {
                    for c in 0..3 {
                        let e = pt.residuals[k][c];
                        out.dynamics += cfg.lambda_dyn * e * e / (ns * n * 3) as f64;
                        g_res[k][c] = 2.0 * w_dyn * e;
                    }
                    let d = pt.incidence[k] - s.target[k];
                    out.data += cfg.lambda_data * d * d * w_pair;
                    g_inc[k] += 2.0 * cfg.lambda_data * d * w_pair;
                    let a = final_pred[si][k] - pt.incidence[k];
                    out.align += cfg.lambda_align * a * a * w_pair;
                    g_inc[k] -= 2.0 * cfg.lambda_align * a * w_pair;
                    g_final[si][k] += 2.0 * cfg.lambda_align * a * w_pair;
                }
                if let Some(g) = g_einn.as_mut() {
                    module.backward(&pt, self.span, pops, &g_inc, &g_res, g);
                }
            }
        }

        out.l2 = self.l2 * theta.iter().map(|w| w * w).sum::<f64>();
        out.total = out.base + out.epi + out.dynamics + out.data + out.align + out.l2;

        if let Some(grad) = grad {
            let mut g_theta = vec![0.0; theta.len()];
            for (si, s) in self.train.iter().enumerate() {
                let gt = s.design.tr_mul_vec(&g_final[si])?;
                for (a, b) in g_theta.iter_mut().zip(&gt) {
                    *a += b;
                }
                if let (Some(head), Some(r)) = (&tid_head, &tid_range) {
                    head.backward(s.indicator, &tid_fwd[si], &g_final[si], &mut grad[r.clone()]);
                }
            }
            for (k, (a, w)) in g_theta.iter().zip(theta).enumerate() {
                grad[base_range.start + k] = a + 2.0 * self.l2 * w;
            }
            if let (Some(g), Some(r)) = (g_rate, &rate_range) {
                grad[r.clone()].copy_from_slice(&g);
            }
            if let (Some(g), Some(r)) = (g_einn, &einn_range) {
                grad[r.clone()].copy_from_slice(&g);
            }
        }
        Ok(out)
    }
}

impl Differentiable for PatchedObjective<'_> {
    fn num_params(&self) -> usize {
        self.layout.len()
    }

    fn loss_and_grad(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        Ok(self.evaluate(params, Some(grad))?.total)
    }

    fn validation_loss(&self, params: &[f64]) -> Result<f64> {
        self.plain_mse(&self.validation, params)
    }
}

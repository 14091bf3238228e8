//! Reference forecasters and their trainer.
//!
//! `naive` and `ar1` are closed-form; `dlinear` and `graph_linear` are linear
//! in a per-sample design and train by gradient descent on the composed
//! patch objective. One model is fitted per horizon.

pub mod ar1;
pub mod linear;
pub mod objective;
pub mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MixingOperator;
use crate::metrics::DEFAULT_FILTER_C;
use crate::panel::{Frequency, Sample};
use crate::priors::einn::{EinnDims, EinnTimeModule};
use crate::priors::rate_head::{ngm_gamma_offset, summary_features, RateHead, PARAM_LEN};
use crate::priors::tid::{TidDims, TidHead};
use crate::priors::{EpiVariant, FilterConfig, PatchConfig};

pub use ar1::{fit_ar1, Ar1Coefficients};
pub use objective::{Layout, LossBreakdown, PatchedObjective, PreparedSample, Segment};
pub use train::{gradient_descent, DescentOutcome, Differentiable};

use objective::{final_prediction, BASE, EINN, RATES, TID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Naive,
    Ar1,
    Dlinear,
    GraphLinear,
    /// Forecasts produced outside the process and scored from a file.
    External,
}

impl ModelKind {
    pub fn is_trainable(self) -> bool {
        matches!(self, Self::Dlinear | Self::GraphLinear)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Naive => "naive",
            Self::Ar1 => "ar1",
            Self::Dlinear => "dlinear",
            Self::GraphLinear => "graph_linear",
            Self::External => "external",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "ar1" => Ok(Self::Ar1),
            "dlinear" => Ok(Self::Dlinear),
            "graph_linear" => Ok(Self::GraphLinear),
            "external" => Ok(Self::External),
            _ => Err(Error::InvalidArgument(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Hyperparameter keys understood by [`resolve`].
pub const HYPERPARAMETER_KEYS: &[&str] = &[
    "kernel",
    "l2",
    "learning_rate",
    "epochs",
    "lambda_epi",
    "scale_s",
    "dt",
    "lambda_dyn",
    "lambda_data",
    "lambda_align",
    "basis_degree",
    "filter_c",
    "embed_dim",
    "hidden_width",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    1
}

impl ModelSpec {
    pub fn new(kind: ModelKind, horizon: usize) -> Self {
        Self {
            kind,
            hyperparameters: BTreeMap::new(),
            horizon,
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.hyperparameters.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    FilteredMse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainConfig::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "TrainConfig::default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub l2: f64,
}

impl TrainConfig {
    fn default_epochs() -> usize {
        500
    }

    fn default_learning_rate() -> f64 {
        0.01
    }

    fn default_loss() -> LossKind {
        LossKind::Mse
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::InvalidArgument(
                "train config requires epochs >= 1, learning_rate > 0, l2 >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: Self::default_epochs(),
            learning_rate: Self::default_learning_rate(),
            seed: 0,
            loss: Self::default_loss(),
            l2: 0.0,
        }
    }
}

/// Applies a spec's hyperparameters on top of a base training and patch
/// configuration. Returns the resolved trend kernel alongside.
pub fn resolve(
    spec: &ModelSpec,
    config: &TrainConfig,
    patches: &PatchConfig,
    frequency: Frequency,
) -> Result<(TrainConfig, PatchConfig, usize)> {
    let mut config = config.clone();
    let mut patches = *patches;
    let mut kernel = frequency.default_trend_kernel();
    let count = |key: &str, v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidArgument(format!("hyperparameter {key} must be a positive integer, got {v}")))
        }
    };
    let missing = |key: &str, patch: &str| Error::InvalidArgument(format!("hyperparameter {key} requires the {patch} patch"));
    for (key, &v) in &spec.hyperparameters {
        match key.as_str() {
            "kernel" if spec.kind == ModelKind::Dlinear => kernel = count(key, v)?,
            "l2" => config.l2 = v,
            "learning_rate" => config.learning_rate = v,
            "epochs" => config.epochs = count(key, v)?,
            "lambda_epi" => patches.epi.as_mut().ok_or_else(|| missing(key, "epi"))?.lambda_epi = v,
            "scale_s" => patches.epi.as_mut().ok_or_else(|| missing(key, "epi"))?.scale_s = v,
            "dt" => patches.epi.as_mut().ok_or_else(|| missing(key, "epi"))?.dt = v,
            "lambda_dyn" => patches.einn.as_mut().ok_or_else(|| missing(key, "einn"))?.lambda_dyn = v,
            "lambda_data" => patches.einn.as_mut().ok_or_else(|| missing(key, "einn"))?.lambda_data = v,
            "lambda_align" => patches.einn.as_mut().ok_or_else(|| missing(key, "einn"))?.lambda_align = v,
            "basis_degree" => {
                patches.einn.as_mut().ok_or_else(|| missing(key, "einn"))?.basis_degree = count(key, v)?
            }
            "filter_c" => patches.filter.as_mut().ok_or_else(|| missing(key, "filter"))?.c = v,
            "embed_dim" => patches.tid.as_mut().ok_or_else(|| missing(key, "tid"))?.embed_dim = count(key, v)?,
            "hidden_width" => patches.tid.as_mut().ok_or_else(|| missing(key, "tid"))?.hidden_width = count(key, v)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {key:?} not applicable to {}",
                    spec.kind
                )))
            }
        }
    }
    if config.loss == LossKind::FilteredMse && patches.filter.is_none() {
        patches.filter = Some(FilterConfig { c: DEFAULT_FILTER_C });
    }
    if spec.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    config.validate()?;
    patches.validate()?;
    linear::validate_kernel(kernel)?;
    Ok((config, patches, kernel))
}

/// The last observed row, whatever the horizon.
pub fn naive_forecast(sample: &Sample) -> Vec<f64> {
    sample.last_row().to_vec()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    /// Objective at the kept parameters, original units.
    pub train_loss: f64,
    /// Validation MSE of the final prediction, original units.
    pub validation_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// The filter masked every training target and training was a no-op.
    pub all_masked: bool,
}

/// Everything needed to fit one model for one horizon.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub train: &'a [Sample],
    pub validation: &'a [Sample],
    pub mixing: &'a MixingOperator,
    pub populations: Option<&'a [f64]>,
    pub frequency: Frequency,
    /// Training window as `(first index, length)`; also the EINN time axis.
    pub window: (usize, usize),
    /// Per-region values over the training window for AR(1); NaN marks a
    /// missing cell.
    pub series: &'a [Vec<f64>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub patches: PatchConfig,
    pub lookback: usize,
    pub num_nodes: usize,
    pub num_categories: usize,
    /// Linear models see `x/scale − offset`.
    pub offset: f64,
    pub scale: f64,
    pub layout: Layout,
    pub parameters: Vec<f64>,
    pub diagnostics: TrainingDiagnostics,
}

impl FittedModel {
    fn tid_dims(&self) -> Option<TidDims> {
        self.patches.tid.map(|t| TidDims {
            num_categories: self.num_categories,
            embed_dim: t.embed_dim,
            hidden: t.hidden_width,
            num_nodes: self.num_nodes,
        })
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.lookback != self.lookback || sample.num_regions() != self.num_nodes {
            return Err(Error::DimensionMismatch {
                expected: self.lookback * self.num_nodes,
                actual: sample.history.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, sample: &Sample, mixing: &MixingOperator) -> Result<Vec<f64>> {
        match self.spec.kind {
            ModelKind::Naive => Ok(naive_forecast(sample)),
            ModelKind::Ar1 => {
                self.check_sample(sample)?;
                let n = self.num_nodes;
                Ok((0..n)
                    .map(|i| {
                        let c = Ar1Coefficients {
                            intercept: self.parameters[i],
                            phi: self.parameters[n + i],
                        };
                        c.forecast(sample.last_row()[i], self.spec.horizon)
                    })
                    .collect())
            }
            ModelKind::Dlinear => forecast_dlinear(sample, self),
            ModelKind::GraphLinear => forecast_graph_linear(sample, mixing, self),
            ModelKind::External => Err(Error::InvalidArgument("external models cannot predict in-process".into())),
        }
    }

    fn design(&self, sample: &Sample, mixing: &MixingOperator) -> Result<crate::linalg::Matrix> {
        self.check_sample(sample)?;
        let scaled: Vec<f64> = sample.history.iter().map(|v| v / self.scale - self.offset).collect();
        match self.spec.kind {
            ModelKind::Dlinear => {
                let kernel = self.spec.hyperparameters.get("kernel").copied().unwrap_or(1.0) as usize;
                linear::dlinear_design(&scaled, self.lookback, self.num_nodes, kernel)
            }
            ModelKind::GraphLinear => {
                if mixing.dim() != self.num_nodes {
                    return Err(Error::DimensionMismatch {
                        expected: self.num_nodes,
                        actual: mixing.dim(),
                    });
                }
                linear::graph_linear_design(&scaled, self.lookback, mixing)
            }
            _ => Err(Error::InvalidArgument(format!("{} has no design", self.spec.kind))),
        }
    }

    fn predict_linear(&self, sample: &Sample, mixing: &MixingOperator) -> Result<Vec<f64>> {
        let f = self.design(sample, mixing)?;
        let y = final_prediction(&f, &self.parameters, &self.layout, self.tid_dims(), sample.calendar_indicator, self.offset)?;
        Ok(y.into_iter().map(|v| v * self.scale).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

pub fn forecast_dlinear(sample: &Sample, model: &FittedModel) -> Result<Vec<f64>> {
    if model.spec.kind != ModelKind::Dlinear {
        return Err(Error::InvalidArgument(format!("expected a dlinear model, got {}", model.spec.kind)));
    }
    // The mixing operator is unused by DLinear; any square one will do.
    model.predict_linear(sample, &MixingOperator::identity(model.num_nodes))
}

pub fn forecast_graph_linear(sample: &Sample, mixing: &MixingOperator, model: &FittedModel) -> Result<Vec<f64>> {
    if model.spec.kind != ModelKind::GraphLinear {
        return Err(Error::InvalidArgument(format!("expected a graph_linear model, got {}", model.spec.kind)));
    }
    model.predict_linear(sample, mixing)
}

/// Mean and standard deviation over the training histories. A constant set
/// falls back to its absolute mean as the scale, and an all-zero one to 1.
pub fn data_scale(train: &[Sample]) -> (f64, f64) {
    let values: Vec<f64> = train.iter().flat_map(|s| s.history.iter().copied()).collect();
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { mean.abs() };
    if scale > 0.0 && scale.is_finite() {
        (mean, scale)
    } else {
        (mean, 1.0)
    }
}

fn check_shapes(ctx: &FitContext<'_>, spec: &ModelSpec) -> Result<(usize, usize)> {
    let first = ctx
        .train
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    if ctx.validation.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let (lookback, n) = (first.lookback, first.num_regions());
    for s in ctx.train.iter().chain(ctx.validation) {
        if s.lookback != lookback || s.num_regions() != n || s.horizon != spec.horizon {
            return Err(Error::InvalidArgument(format!(
                "sample at origin {} does not share (L={lookback}, n={n}, h={})",
                s.origin, spec.horizon
            )));
        }
    }
    if ctx.mixing.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: ctx.mixing.dim(),
        });
    }
    Ok((lookback, n))
}

fn mse(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (s, c) = pairs.fold((0.0, 0usize), |(s, c), (a, b)| (s + (a - b) * (a - b), c + 1));
    s / c.max(1) as f64
}

/// Builds the patched objective for a trainable model along with its
/// starting parameters.
pub fn build_objective<'a>(
    spec: &ModelSpec,
    ctx: &FitContext<'a>,
    config: &TrainConfig,
    patches: &PatchConfig,
) -> Result<(PatchedObjective<'a>, Vec<f64>, f64, usize)> {
    if !spec.kind.is_trainable() {
        return Err(Error::InvalidArgument(format!("{} is not trainable", spec.kind)));
    }
    let (lookback, n) = check_shapes(ctx, spec)?;
    let (config, patches, kernel) = resolve(spec, config, patches, ctx.frequency)?;
    let (center, scale) = data_scale(ctx.train);
    let offset = center / scale;
    let (w0, span) = (ctx.window.0 as f64, ctx.window.1.max(1) as f64);
    let prepare = |s: &Sample| -> Result<PreparedSample> {
        let history: Vec<f64> = s.history.iter().map(|v| v / scale).collect();
        let centered: Vec<f64> = history.iter().map(|v| v - offset).collect();
        let design = match spec.kind {
            ModelKind::Dlinear => linear::dlinear_design(&centered, lookback, n, kernel)?,
            _ => linear::graph_linear_design(&centered, lookback, ctx.mixing)?,
        };
        Ok(PreparedSample {
            design,
            target: s.target.iter().map(|v| v / scale).collect(),
            last_row: history[(lookback - 1) * n..].to_vec(),
            summary: summary_features(&history, lookback),
            indicator: s.calendar_indicator,
            tau: (s.target_index() as f64 - w0) / span,
        })
    };
    let train: Vec<PreparedSample> = ctx.train.iter().map(prepare).collect::<Result<_>>()?;
    let validation: Vec<PreparedSample> = ctx.validation.iter().map(prepare).collect::<Result<_>>()?;

    let needs_populations = patches.epi.is_some() || patches.einn.is_some();
    let populations: Vec<f64> = match ctx.populations {
        Some(p) if p.len() == n => p.iter().map(|v| v / scale).collect(),
        Some(p) => return Err(Error::DimensionMismatch { expected: n, actual: p.len() }),
        None if needs_populations => {
            return Err(Error::InvalidArgument("epidemic patches require a population vector".into()))
        }
        None => vec![1.0; n],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layout = Layout::default();
    let mut init = match spec.kind {
        ModelKind::Dlinear => linear::dlinear_persistence(lookback),
        _ => linear::graph_linear_persistence(lookback, n),
    };
    layout.push(BASE, init.len());
    let tid = patches.tid.map(|t| TidDims {
        num_categories: ctx.frequency.num_categories(),
        embed_dim: t.embed_dim,
        hidden: t.hidden_width,
        num_nodes: n,
    });
    if let Some(dims) = tid {
        layout.push(TID, dims.len());
        init.extend(TidHead::init_params(dims, || rng.random::<f64>()));
    }
    let mut gamma_offset = vec![0.0; n];
    if let Some(epi) = &patches.epi {
        layout.push(RATES, PARAM_LEN);
        init.extend(RateHead::init_params());
        if epi.variant == EpiVariant::Ngm {
            gamma_offset = ngm_gamma_offset(&ctx.mixing.row_sums());
        }
    }
    let einn = patches.einn.map(|cfg| {
        (
            cfg,
            EinnDims {
                num_nodes: n,
                degree: cfg.basis_degree,
            },
        )
    });
    if let Some((_, dims)) = einn {
        layout.push(EINN, dims.len());
        let level: Vec<f64> = (0..n)
            .map(|k| train.iter().map(|s| s.target[k]).sum::<f64>() / train.len() as f64)
            .collect();
        init.extend(EinnTimeModule::init_params(dims, &level, &populations));
    }
    let filter_keep = match &patches.filter {
        Some(f) => Some(PatchedObjective::filter_mask(&train, f.c)?),
        None => None,
    };
    let objective = PatchedObjective {
        train,
        validation,
        layout,
        tid,
        filter_keep,
        epi: patches.epi,
        einn,
        mixing: ctx.mixing,
        populations,
        gamma_offset,
        l2: config.l2,
        span,
        horizon: spec.horizon,
        offset,
    };
    Ok((objective, init, scale, kernel))
}

/// Fits one model. Closed-form kinds ignore the training configuration and
/// reject patches.
pub fn train(spec: &ModelSpec, ctx: &FitContext<'_>, config: &TrainConfig, patches: &PatchConfig) -> Result<FittedModel> {
    let (lookback, n) = check_shapes(ctx, spec)?;
    let num_categories = ctx.frequency.num_categories();
    match spec.kind {
        ModelKind::Naive | ModelKind::Ar1 => {
            if !patches.is_empty() {
                return Err(Error::InvalidArgument(format!("patches require a trainable model, not {}", spec.kind)));
            }
            let mut model = FittedModel {
                spec: spec.clone(),
                patches: PatchConfig::none(),
                lookback,
                num_nodes: n,
                num_categories,
                offset: 0.0,
                scale: 1.0,
                layout: Layout::default(),
                parameters: Vec::new(),
                diagnostics: TrainingDiagnostics::default(),
            };
            if spec.kind == ModelKind::Ar1 {
                if ctx.series.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: ctx.series.len(),
                    });
                }
                let coefs = fit_ar1(ctx.series)?;
                model.layout.push("intercept", n);
                model.layout.push("phi", n);
                model.parameters = coefs.iter().map(|c| c.intercept).chain(coefs.iter().map(|c| c.phi)).collect();
            }
            let score = |samples: &[Sample]| -> Result<f64> {
                let mut pairs = Vec::new();
                for s in samples {
                    let y = model.predict(s, ctx.mixing)?;
                    pairs.extend(y.into_iter().zip(s.target.iter().copied()));
                }
                Ok(mse(pairs.into_iter()))
            };
            let train_loss = score(ctx.train)?;
            let validation_loss = score(ctx.validation)?;
            model.diagnostics.train_loss = train_loss;
            model.diagnostics.validation_loss = validation_loss;
            Ok(model)
        }
        ModelKind::Dlinear | ModelKind::GraphLinear => {
            let (resolved, resolved_patches, kernel) = resolve(spec, config, patches, ctx.frequency)?;
            let (objective, init, scale, _) = build_objective(spec, ctx, config, patches)?;
            let outcome = gradient_descent(&objective, init, resolved.learning_rate, resolved.epochs)?;
            let all_masked = objective.evaluate(&outcome.params, None)?.all_masked;
            let mut spec = spec.clone();
            if spec.kind == ModelKind::Dlinear {
                spec.hyperparameters.insert("kernel".into(), kernel as f64);
            }
            Ok(FittedModel {
                spec,
                patches: resolved_patches,
                lookback,
                num_nodes: n,
                num_categories,
                offset: objective.offset,
                scale,
                layout: objective.layout.clone(),
                parameters: outcome.params,
                diagnostics: TrainingDiagnostics {
                    train_loss: outcome.train_loss * scale * scale,
                    validation_loss: outcome.validation_loss * scale * scale,
                    epochs_run: resolved.epochs,
                    best_epoch: outcome.best_epoch,
                    all_masked,
                },
            })
        }
        ModelKind::External => Err(Error::InvalidArgument("external models are fitted outside the process".into())),
    }
}

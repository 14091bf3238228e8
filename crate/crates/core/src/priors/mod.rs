//! Model-agnostic epidemic priors ("patches") layered on a node-level
//! forecaster: calendar correction, filtered loss, mechanistic auxiliary
//! regularizers, and the EINN objective.

pub mod einn;
pub mod filter;
pub mod ngm;
pub mod rate_head;
pub mod sir;
pub mod tid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use einn::EinnTimeModule;
pub use filter::{filtered_loss, FilteredLoss};
pub use ngm::{ngm_propagate, NgmSolve};
pub use rate_head::{EpiRates, RateHead};
pub use sir::{init_sir_states, sir_percent, sir_rollout, Rollout, SirState};
pub use tid::{apply_tid, TidHead};

/// Candidate weights for the auxiliary loss terms when they are tuned.
pub const DEFAULT_LAMBDA_GRID: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TidConfig {
    #[serde(default = "TidConfig::default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "TidConfig::default_hidden_width")]
    pub hidden_width: usize,
}

impl TidConfig {
    fn default_embed_dim() -> usize {
        4
    }

    fn default_hidden_width() -> usize {
        8
    }
}

impl Default for TidConfig {
    fn default() -> Self {
        Self {
            embed_dim: Self::default_embed_dim(),
            hidden_width: Self::default_hidden_width(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "FilterConfig::default_c")]
    pub c: f64,
}

impl FilterConfig {
    fn default_c() -> f64 {
        crate::metrics::DEFAULT_FILTER_C
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { c: Self::default_c() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpiVariant {
    SirIncidence,
    SirPercent,
    Ngm,
}

impl EpiVariant {
    pub fn identifier(self) -> &'static str {
        match self {
            EpiVariant::SirIncidence => "sir_incidence",
            EpiVariant::SirPercent => "sir_percent",
            EpiVariant::Ngm => "ngm",
        }
    }

    /// Whether the auxiliary loss compares against `s·y/p` rather than `y`.
    pub fn target_scale(self) -> TargetScale {
        match self {
            EpiVariant::SirPercent => TargetScale::Rate,
            _ => TargetScale::Counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetScale {
    Counts,
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpiConfig {
    pub variant: EpiVariant,
    #[serde(default = "EpiConfig::default_lambda")]
    pub lambda_epi: f64,
    #[serde(default = "EpiConfig::default_scale")]
    pub scale_s: f64,
    #[serde(default = "EpiConfig::default_dt")]
    pub dt: f64,
}

impl EpiConfig {
    fn default_lambda() -> f64 {
        0.1
    }

    fn default_scale() -> f64 {
        100.0
    }

    fn default_dt() -> f64 {
        1.0
    }

    pub fn new(variant: EpiVariant) -> Self {
        Self {
            variant,
            lambda_epi: Self::default_lambda(),
            scale_s: Self::default_scale(),
            dt: Self::default_dt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EinnConfig {
    #[serde(default = "EinnConfig::default_lambda")]
    pub lambda_dyn: f64,
    #[serde(default = "EinnConfig::default_lambda")]
    pub lambda_data: f64,
    #[serde(default = "EinnConfig::default_lambda")]
    pub lambda_align: f64,
    #[serde(default = "EinnConfig::default_degree")]
    pub basis_degree: usize,
}

impl EinnConfig {
    fn default_lambda() -> f64 {
        0.1
    }

    fn default_degree() -> usize {
        3
    }
}

impl Default for EinnConfig {
    fn default() -> Self {
        Self {
            lambda_dyn: Self::default_lambda(),
            lambda_data: Self::default_lambda(),
            lambda_align: Self::default_lambda(),
            basis_degree: Self::default_degree(),
        }
    }
}

/// Which priors are active, with their weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tid: Option<TidConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epi: Option<EpiConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub einn: Option<EinnConfig>,
}

impl PatchConfig {
    pub fn none() -> Self {
        Self::default()
    }

    /// Builds a configuration with default settings from patch identifiers
    /// (`tid`, `filter`, `sir_incidence`, `sir_percent`, `ngm`, `einn`).
    pub fn from_identifiers<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        let mut cfg = Self::default();
        for id in ids {
            match id.as_ref() {
                "tid" => cfg.tid = Some(TidConfig::default()),
                "filter" => cfg.filter = Some(FilterConfig::default()),
                "einn" => cfg.einn = Some(EinnConfig::default()),
                other => {
                    let variant = match other {
                        "sir_incidence" => EpiVariant::SirIncidence,
                        "sir_percent" => EpiVariant::SirPercent,
                        "ngm" => EpiVariant::Ngm,
                        _ => return Err(Error::InvalidArgument(format!("unknown patch {other:?}"))),
                    };
                    if cfg.epi.is_some() {
                        return Err(Error::InvalidArgument("at most one epi regularizer variant".into()));
                    }
                    cfg.epi = Some(EpiConfig::new(variant));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn identifiers(&self) -> Vec<&'static str> {
        let mut ids = Vec::new();
        if self.tid.is_some() {
            ids.push("tid");
        }
        if self.filter.is_some() {
            ids.push("filter");
        }
        if let Some(epi) = &self.epi {
            ids.push(epi.variant.identifier());
        }
        if self.einn.is_some() {
            ids.push("einn");
        }
        ids
    }

    /// `+`-joined identifiers, or `none`.
    pub fn label(&self) -> String {
        let ids = self.identifiers();
        if ids.is_empty() {
            "none".into()
        } else {
            ids.join("+")
        }
    }

    pub fn is_empty(&self) -> bool {
        self.identifiers().is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("patch config: {what}")));
        if let Some(t) = &self.tid {
            if t.embed_dim == 0 || t.hidden_width == 0 {
                return bad("tid dimensions must be positive");
            }
        }
        if let Some(f) = &self.filter {
            if f.c.is_nan() || f.c < 0.0 {
                return bad("filter c must be >= 0");
            }
        }
        if let Some(e) = &self.epi {
            if [e.lambda_epi, e.dt, e.scale_s].iter().any(|v| v.is_nan()) || e.lambda_epi < 0.0 || e.dt <= 0.0 || e.scale_s <= 0.0 {
                return bad("epi requires lambda_epi >= 0, dt > 0, scale_s > 0");
            }
        }
        if let Some(e) = &self.einn {
            if !(e.lambda_dyn >= 0.0 && e.lambda_data >= 0.0 && e.lambda_align >= 0.0) {
                return bad("einn weights must be >= 0");
            }
        }
        Ok(())
    }
}

/// `base + λ·MSE(r, target')`, where `target'` is the raw target for count
/// variants and `s·y/p` for the rate variant.
pub fn epi_regularized_loss<T: Scalar>(
    base_loss: T,
    r: &[T],
    target: &[T],
    lambda_epi: T,
    scale: TargetScale,
    populations: &[T],
    s: T,
) -> T {
    let n = T::from_count(target.len());
    let mse = r
        .iter()
        .zip(target)
        .zip(populations.iter().chain(std::iter::repeat(&T::one())))
        .map(|((&ri, &yi), &p)| {
            let y = match scale {
                TargetScale::Counts => yi,
                TargetScale::Rate => s * yi / p,
            };
            (ri - y) * (ri - y)
        })
        .sum::<T>()
        / n;
    base_loss + lambda_epi * mse
}

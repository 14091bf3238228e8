//! Rolling-origin round planning.
//!
//! Round `k` trains on the `train_size` steps ending at
//! `o_k = train_size − 1 + k·cadence` and forecasts from origins
//! `o_k .. o_k + cadence − 1`. Each horizon keeps the origins whose target
//! still lies inside the panel, so short horizons may run one round longer
//! than long ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::train_count;

pub const DEFAULT_LOOKBACK: usize = 12;
pub const DEFAULT_CADENCE: usize = 8;
pub const DEFAULT_TRAIN_SIZE: usize = 100;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSettings {
    pub lookback: usize,
    pub cadence: usize,
    pub train_size: usize,
    pub horizons: Vec<usize>,
}

/// Sample origins for one horizon within one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonPlan {
    pub horizon: usize,
    pub train_origins: Vec<usize>,
    pub validation_origins: Vec<usize>,
    pub eval_origins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round_index: usize,
    /// Inclusive time-index range.
    pub train_window: (usize, usize),
    pub horizons: Vec<HorizonPlan>,
}

impl RoundPlan {
    pub fn origin(&self) -> usize {
        self.train_window.1
    }

    pub fn horizon(&self, h: usize) -> Option<&HorizonPlan> {
        self.horizons.iter().find(|p| p.horizon == h)
    }

    /// Union of the horizons' evaluation origins, ascending.
    pub fn eval_origins(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.horizons.iter().flat_map(|h| h.eval_origins.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

impl PlanSettings {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.cadence == 0 || self.train_size == 0 {
            return Err(Error::InvalidArgument("lookback, cadence and train_size must be positive".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::InvalidArgument("horizons must be a nonempty list of positive steps".into()));
        }
        let mut sorted = self.horizons.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.horizons.len() {
            return Err(Error::InvalidArgument("duplicate horizons".into()));
        }
        Ok(())
    }
}

pub fn plan_rounds(series_len: usize, settings: &PlanSettings) -> Result<Vec<RoundPlan>> {
    settings.validate()?;
    let PlanSettings {
        lookback,
        cadence,
        train_size,
        ..
    } = *settings;
    let max_h = *settings.horizons.iter().max().expect("validated nonempty");
    let min_h = *settings.horizons.iter().min().expect("validated nonempty");
    let required = train_size + max_h;
    if series_len < required {
        return Err(Error::SeriesTooShort {
            required,
            actual: series_len,
        });
    }
    for &h in &settings.horizons {
        let n = (train_size + 1).saturating_sub(lookback + h);
        let k = train_count(n, TRAIN_FRACTION);
        if k == 0 || k >= n {
            return Err(Error::WindowTooShort(format!(
                "training window of {train_size} with lookback {lookback} leaves {n} samples at horizon {h}"
            )));
        }
    }
    let mut plans = Vec::new();
    let mut origin = train_size - 1;
    while origin + min_h < series_len {
        let start = origin + 1 - train_size;
        let horizons = settings
            .horizons
            .iter()
            .map(|&h| {
                let samples: Vec<usize> = (start + lookback - 1..=origin - h).collect();
                let k = train_count(samples.len(), TRAIN_FRACTION);
                HorizonPlan {
                    horizon: h,
                    train_origins: samples[..k].to_vec(),
                    validation_origins: samples[k..].to_vec(),
                    eval_origins: (origin..origin + cadence).filter(|o| o + h < series_len).collect(),
                }
            })
            .collect();
        plans.push(RoundPlan {
            round_index: plans.len(),
            train_window: (start, origin),
            horizons,
        });
        origin += cadence;
    }
    Ok(plans)
}

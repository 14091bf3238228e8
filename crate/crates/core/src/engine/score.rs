//! Per-horizon, per-stratum scoring with bootstrap intervals and pooled
//! cross-horizon estimates.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    bootstrap_by_month, build_filter_mask, filtered_metrics, mean_signed_error, meta_across_horizons, point_metrics,
    relative_rmse, win_rate, ForecastRecord, IntervalEstimate, MetricSet, Statistic, DEFAULT_FILTER_C,
};
use crate::outbreak::{stratify, AnnotationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    All,
    Outbreak,
    NonOutbreak,
    Filtered,
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [Stratum::All, Stratum::Outbreak, Stratum::NonOutbreak, Stratum::Filtered];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::All => "all",
            Stratum::Outbreak => "outbreak",
            Stratum::NonOutbreak => "non_outbreak",
            Stratum::Filtered => "filtered",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Statistics that receive bootstrap intervals.
pub const INTERVAL_STATISTICS: [Statistic; 3] = [Statistic::Rmse, Statistic::RelativeRmse, Statistic::WinRate];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub horizon: usize,
    pub stratum: Stratum,
    pub count: usize,
    pub metrics: MetricSet,
    /// `None` when the filter removes every record of the row.
    pub filtered: Option<MetricSet>,
    pub win_rate: f64,
    pub mean_signed_error: f64,
    pub relative_rmse: f64,
    /// Empty when the row's targets span fewer than two calendar months.
    pub intervals: BTreeMap<Statistic, IntervalEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledRow {
    pub stratum: Stratum,
    pub statistic: Statistic,
    pub horizons: Vec<usize>,
    pub estimate: IntervalEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub model: String,
    pub patches: String,
    pub record_count: usize,
    pub stratum_counts: BTreeMap<Stratum, usize>,
    pub rows: Vec<ScoreRow>,
    pub pooled: Vec<PooledRow>,
    pub failed_fits: usize,
}

impl ScoreTable {
    pub fn row(&self, horizon: usize, stratum: Stratum) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.horizon == horizon && r.stratum == stratum)
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.rows.iter().map(|r| r.horizon).collect();
        h.dedup();
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSettings {
    pub replicates: usize,
    pub seed: u64,
    pub filter_c: f64,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            replicates: crate::metrics::DEFAULT_REPLICATES,
            seed: 0,
            filter_c: DEFAULT_FILTER_C,
        }
    }
}

/// Orders records by `(horizon, origin, region)` so scores do not depend on
/// how the records were produced.
pub fn canonical_sort(records: &mut [ForecastRecord]) {
    records.sort_by(|a, b| (a.horizon, a.origin, &a.region).cmp(&(b.horizon, b.origin, &b.region)));
}

fn stream_seed(seed: u64, horizon: usize, stratum: Stratum, statistic: Statistic) -> u64 {
    crate::engine::mix_seed(&[seed, horizon as u64, stratum as u64, statistic as u64])
}

fn score_row(
    horizon: usize,
    stratum: Stratum,
    records: &[ForecastRecord],
    settings: &ScoreSettings,
) -> Result<ScoreRow> {
    let filtered = match filtered_metrics(records, &build_filter_mask(records, settings.filter_c)?) {
        Ok(m) => Some(m),
        Err(Error::EmptyAfterFiltering) => None,
        Err(e) => return Err(e),
    };
    let mut intervals = BTreeMap::new();
    for stat in INTERVAL_STATISTICS {
        match bootstrap_by_month(records, stat, settings.replicates, stream_seed(settings.seed, horizon, stratum, stat)) {
            Ok(est) => {
                intervals.insert(stat, est);
            }
            Err(Error::InsufficientBlocks(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(ScoreRow {
        horizon,
        stratum,
        count: records.len(),
        metrics: point_metrics(records)?,
        filtered,
        win_rate: win_rate(records)?,
        mean_signed_error: mean_signed_error(records)?,
        relative_rmse: relative_rmse(records)?,
        intervals,
    })
}

/// Scores records into a table. Empty strata produce no row.
pub fn score_records(
    records: &[ForecastRecord],
    annotations: &AnnotationSet,
    settings: &ScoreSettings,
    model: &str,
    patches: &str,
) -> Result<ScoreTable> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut sorted = records.to_vec();
    canonical_sort(&mut sorted);
    let mut by_horizon: BTreeMap<usize, Vec<ForecastRecord>> = BTreeMap::new();
    for r in sorted {
        by_horizon.entry(r.horizon).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut stratum_counts: BTreeMap<Stratum, usize> = Stratum::ALL.iter().map(|&s| (s, 0)).collect();
    for (&h, recs) in &by_horizon {
        let (outbreak, non_outbreak) = stratify(recs, annotations);
        let mask = build_filter_mask(recs, settings.filter_c)?;
        let kept: Vec<ForecastRecord> = recs
            .iter()
            .zip(&mask.keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect();
        for (stratum, subset) in [
            (Stratum::All, recs.as_slice()),
            (Stratum::Outbreak, outbreak.as_slice()),
            (Stratum::NonOutbreak, non_outbreak.as_slice()),
            (Stratum::Filtered, kept.as_slice()),
        ] {
            *stratum_counts.get_mut(&stratum).expect("all strata present") += subset.len();
            if !subset.is_empty() {
                rows.push(score_row(h, stratum, subset, settings)?);
            }
        }
    }
    let mut pooled = Vec::new();
    for stratum in Stratum::ALL {
        for stat in INTERVAL_STATISTICS {
            let (horizons, estimates): (Vec<usize>, Vec<IntervalEstimate>) = rows
                .iter()
                .filter(|r| r.stratum == stratum)
                .filter_map(|r| r.intervals.get(&stat).map(|e| (r.horizon, *e)))
                .unzip();
            if !estimates.is_empty() {
                pooled.push(PooledRow {
                    stratum,
                    statistic: stat,
                    horizons,
                    estimate: meta_across_horizons(&estimates)?,
                });
            }
        }
    }
    Ok(ScoreTable {
        model: model.to_string(),
        patches: patches.to_string(),
        record_count: records.len(),
        stratum_counts,
        rows,
        pooled,
        failed_fits: 0,
    })
}

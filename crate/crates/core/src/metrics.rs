//! Point-forecast metrics, the IQR filter, win rate, signed error, and
//! month-block bootstrap intervals pooled across horizons.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Frequency;
use crate::scalar::Scalar;

/// One scored prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin: NaiveDate,
    pub horizon: usize,
    pub region: String,
    pub prediction: f64,
    pub truth: f64,
    /// Last observed value at the origin.
    pub naive_reference: f64,
    #[serde(skip)]
    pub target: NaiveDate,
}

impl ForecastRecord {
    pub fn new(
        origin: NaiveDate,
        horizon: usize,
        region: impl Into<String>,
        prediction: f64,
        truth: f64,
        naive_reference: f64,
        frequency: Frequency,
    ) -> Self {
        Self {
            origin,
            horizon,
            region: region.into(),
            prediction,
            truth,
            naive_reference,
            target: origin + frequency.step() * horizon as i32,
        }
    }

    pub fn error(&self) -> f64 {
        self.prediction - self.truth
    }
}

/// Writes records with header `origin,horizon,region,prediction,truth,naive_reference`.
pub fn write_records(path: impl AsRef<Path>, records: &[ForecastRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(["origin", "horizon", "region", "prediction", "truth", "naive_reference"])?;
        for r in records {
            w.write_record([
                r.origin.format("%Y-%m-%d").to_string(),
                r.horizon.to_string(),
                r.region.clone(),
                r.prediction.to_string(),
                r.truth.to_string(),
                r.naive_reference.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::csv(path, e))
}

/// Mean, median and root summaries of squared and absolute errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet<T: Scalar = f64> {
    pub mse: T,
    pub mae: T,
    pub rmse: T,
    pub med_ae: T,
    pub med_se: T,
    pub count: usize,
}

impl<T: Scalar> MetricSet<T> {
    pub fn from_pairs(predictions: &[T], truths: &[T]) -> Result<Self> {
        if predictions.len() != truths.len() {
            return Err(Error::DimensionMismatch {
                expected: truths.len(),
                actual: predictions.len(),
            });
        }
        if truths.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut abs: Vec<T> = predictions.iter().zip(truths).map(|(&p, &y)| (p - y).abs()).collect();
        let mut sq: Vec<T> = abs.iter().map(|&e| e * e).collect();
        let count = abs.len();
        let n = T::from_count(count);
        let mae = abs.iter().copied().sum::<T>() / n;
        let mse = sq.iter().copied().sum::<T>() / n;
        Ok(Self {
            mse,
            mae,
            rmse: mse.sqrt(),
            med_ae: median_in_place(&mut abs),
            med_se: median_in_place(&mut sq),
            count,
        })
    }
}

fn median_in_place<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile_sorted(values, T::lit(0.5))
}

/// Quantile by linear interpolation, with quantile `q` at position `q·(N−1)`
/// of the ascending order statistics.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: T) -> T {
    debug_assert!(!sorted.is_empty());
    let pos = q * T::from_count(sorted.len() - 1);
    let lo = pos.floor();
    let frac = pos - lo;
    let i = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    if i + 1 < sorted.len() && frac > T::zero() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Zero-and-outlier mask over a pool of target values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMask<T: Scalar = f64> {
    pub keep: Vec<bool>,
    pub q1: T,
    pub q3: T,
    pub lower_fence: T,
    pub upper_fence: T,
    pub c: T,
}

impl<T: Scalar> FilterMask<T> {
    /// Keeps targets that are nonzero and inside `[q1 − c·IQR, q3 + c·IQR]`.
    ///
    /// A zero IQR collapses both fences onto the quartiles, also for `c = ∞`.
    pub fn build(truths: &[T], c: T) -> Result<Self> {
        if truths.is_empty() {
            return Err(Error::NoRecords);
        }
        if c.is_nan() || c < T::zero() {
            return Err(Error::InvalidArgument(format!("filter threshold {c} must be >= 0")));
        }
        let mut sorted = truths.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let q1 = quantile_sorted(&sorted, T::lit(0.25));
        let q3 = quantile_sorted(&sorted, T::lit(0.75));
        let iqr = q3 - q1;
        let span = if iqr == T::zero() { T::zero() } else { c * iqr };
        let (lower_fence, upper_fence) = (q1 - span, q3 + span);
        let keep = truths
            .iter()
            .map(|&y| y != T::zero() && y >= lower_fence && y <= upper_fence)
            .collect();
        Ok(Self {
            keep,
            q1,
            q3,
            lower_fence,
            upper_fence,
            c,
        })
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn excluded_fraction(&self) -> f64 {
        1.0 - self.kept() as f64 / self.keep.len() as f64
    }
}

pub fn win_rate_of<T: Scalar>(predictions: &[T], truths: &[T], naive: &[T]) -> Result<T> {
    if truths.is_empty() {
        return Err(Error::NoRecords);
    }
    let wins = predictions
        .iter()
        .zip(truths)
        .zip(naive)
        .filter(|((&p, &y), &b)| (p - y).abs() < (b - y).abs())
        .count();
    Ok(T::from_count(wins) / T::from_count(truths.len()))
}

/// Default filter threshold.
pub const DEFAULT_FILTER_C: f64 = 1.5;

/// Prediction, truth and persistence columns of a record set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Columns {
    pub prediction: Vec<f64>,
    pub truth: Vec<f64>,
    pub naive: Vec<f64>,
}

impl Columns {
    pub fn from_records(records: &[ForecastRecord]) -> Self {
        let mut c = Self {
            prediction: Vec::with_capacity(records.len()),
            truth: Vec::with_capacity(records.len()),
            naive: Vec::with_capacity(records.len()),
        };
        for r in records {
            c.prediction.push(r.prediction);
            c.truth.push(r.truth);
            c.naive.push(r.naive_reference);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    fn extend(&mut self, other: &Columns) {
        self.prediction.extend_from_slice(&other.prediction);
        self.truth.extend_from_slice(&other.truth);
        self.naive.extend_from_slice(&other.naive);
    }
}

fn columns(records: &[ForecastRecord]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = Columns::from_records(records);
    (c.prediction, c.truth, c.naive)
}

pub fn relative_rmse_of<T: Scalar>(predictions: &[T], truths: &[T], naive: &[T]) -> Result<T> {
    let model = MetricSet::from_pairs(predictions, truths)?.rmse;
    let reference = MetricSet::from_pairs(naive, truths)?.rmse;
    Ok(if model == reference { T::one() } else { model / reference })
}

pub fn point_metrics(records: &[ForecastRecord]) -> Result<MetricSet> {
    let (p, y, _) = columns(records);
    MetricSet::from_pairs(&p, &y)
}

/// Mask over the records' truths.
pub fn build_filter_mask(records: &[ForecastRecord], c: f64) -> Result<FilterMask> {
    let truths: Vec<f64> = records.iter().map(|r| r.truth).collect();
    FilterMask::build(&truths, c)
}

pub fn filtered_metrics(records: &[ForecastRecord], mask: &FilterMask) -> Result<MetricSet> {
    if mask.keep.len() != records.len() {
        return Err(Error::DimensionMismatch {
            expected: records.len(),
            actual: mask.keep.len(),
        });
    }
    let kept: Vec<ForecastRecord> = records
        .iter()
        .zip(&mask.keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    point_metrics(&kept)
}

/// Fraction of records strictly closer to the truth than persistence.
pub fn win_rate(records: &[ForecastRecord]) -> Result<f64> {
    let (p, y, b) = columns(records);
    win_rate_of(&p, &y, &b)
}

/// Mean of `prediction − truth`; negative values mean under-prediction.
pub fn mean_signed_error(records: &[ForecastRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(records.iter().map(ForecastRecord::error).sum::<f64>() / records.len() as f64)
}

/// Ratio of model RMSE to persistence RMSE on the same records.
pub fn relative_rmse(records: &[ForecastRecord]) -> Result<f64> {
    let (p, y, b) = columns(records);
    relative_rmse_of(&p, &y, &b)
}

/// Statistics available to the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mse,
    Mae,
    Rmse,
    MedAe,
    MedSe,
    MseFiltered,
    MaeFiltered,
    RmseFiltered,
    WinRate,
    MeanSignedError,
    RelativeRmse,
}

impl Statistic {
    pub fn evaluate(self, records: &[ForecastRecord]) -> Result<f64> {
        self.evaluate_columns(&Columns::from_records(records))
    }

    pub fn evaluate_columns(self, c: &Columns) -> Result<f64> {
        let filtered = || -> Result<MetricSet> {
            let mask = FilterMask::build(&c.truth, DEFAULT_FILTER_C)?;
            let (p, y): (Vec<f64>, Vec<f64>) = c
                .prediction
                .iter()
                .zip(&c.truth)
                .zip(&mask.keep)
                .filter(|(_, &k)| k)
                .map(|((&p, &y), _)| (p, y))
                .unzip();
            if y.is_empty() {
                return Err(Error::EmptyAfterFiltering);
            }
            MetricSet::from_pairs(&p, &y)
        };
        let point = || MetricSet::from_pairs(&c.prediction, &c.truth);
        Ok(match self {
            Statistic::Mse => point()?.mse,
            Statistic::Mae => point()?.mae,
            Statistic::Rmse => point()?.rmse,
            Statistic::MedAe => point()?.med_ae,
            Statistic::MedSe => point()?.med_se,
            Statistic::MseFiltered => filtered()?.mse,
            Statistic::MaeFiltered => filtered()?.mae,
            Statistic::RmseFiltered => filtered()?.rmse,
            Statistic::WinRate => win_rate_of(&c.prediction, &c.truth, &c.naive)?,
            Statistic::MeanSignedError => {
                if c.truth.is_empty() {
                    return Err(Error::NoRecords);
                }
                c.prediction.iter().zip(&c.truth).map(|(p, y)| p - y).sum::<f64>() / c.truth.len() as f64
            }
            Statistic::RelativeRmse => relative_rmse_of(&c.prediction, &c.truth, &c.naive)?,
        })
    }
}

/// A point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate<T: Scalar = f64> {
    pub point: T,
    pub lower: T,
    pub upper: T,
    pub replicates: usize,
    pub seed: u64,
}

pub const DEFAULT_REPLICATES: usize = 1000;

/// Percentile bootstrap over calendar-month blocks of target dates.
///
/// Replicate `b` draws from its own ChaCha stream `(seed, b)`, so results do
/// not depend on scheduling.
pub fn bootstrap_by_month(
    records: &[ForecastRecord],
    statistic: Statistic,
    replicates: usize,
    seed: u64,
) -> Result<IntervalEstimate> {
    if replicates < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 replicates, got {replicates}")));
    }
    let mut months: BTreeMap<(i32, u32), Vec<ForecastRecord>> = BTreeMap::new();
    for r in records {
        months.entry((r.target.year(), r.target.month())).or_default().push(r.clone());
    }
    if months.len() < 2 {
        return Err(Error::InsufficientBlocks(months.len()));
    }
    let blocks: Vec<Columns> = months.values().map(|m| Columns::from_records(m)).collect();
    let point = statistic.evaluate(records)?;
    let mut stats = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut resample = Columns::default();
            for _ in 0..blocks.len() {
                resample.extend(&blocks[rng.random_range(0..blocks.len())]);
            }
            statistic.evaluate_columns(&resample)
        })
        .collect::<Result<Vec<f64>>>()?;
    stats.sort_by(f64::total_cmp);
    Ok(IntervalEstimate {
        point,
        lower: quantile_sorted(&stats, 0.025),
        upper: quantile_sorted(&stats, 0.975),
        replicates,
        seed,
    })
}

/// Floor on the per-horizon standard error so a zero-width interval gets a
/// large but finite weight.
pub const MIN_SIGMA: f64 = 1e-9;

const Z_975: f64 = 1.959_963_984_540_054;

/// Fixed-effect inverse-variance pooling of per-horizon estimates; each
/// standard error is the interval half-width over 1.96.
pub fn meta_across_horizons<T: Scalar>(per_horizon: &[IntervalEstimate<T>]) -> Result<IntervalEstimate<T>> {
    match per_horizon {
        [] => Err(Error::NoRecords),
        [single] => Ok(*single),
        all => {
            let z = T::lit(Z_975);
            let mut sum_w = T::zero();
            let mut sum_wx = T::zero();
            for est in all {
                let sigma = ((est.upper - est.lower) / (T::lit(2.0) * z)).max(T::lit(MIN_SIGMA));
                let w = T::one() / (sigma * sigma);
                sum_w += w;
                sum_wx += w * est.point;
            }
            let point = sum_wx / sum_w;
            let sigma = (T::one() / sum_w).sqrt();
            Ok(IntervalEstimate {
                point,
                lower: point - z * sigma,
                upper: point + z * sigma,
                replicates: all.iter().map(|e| e.replicates).min().unwrap_or(0),
                seed: all[0].seed,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pred: f64, truth: f64, naive: f64) -> ForecastRecord {
        ForecastRecord::new(
            NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
            1,
            "a",
            pred,
            truth,
            naive,
            Frequency::Daily,
        )
    }

    fn recs(preds: &[f64], truths: &[f64]) -> Vec<ForecastRecord> {
        preds.iter().zip(truths).map(|(&p, &y)| rec(p, y, y + 1.0)).collect()
    }

    #[test]
    fn hand_arithmetic() {
        let m = point_metrics(&recs(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0])).unwrap();
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.mse - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((m.med_ae, m.med_se), (0.0, 0.0));
    }

    #[test]
    fn perfect_and_single() {
        let m = point_metrics(&recs(&[4.0, 5.0], &[4.0, 5.0])).unwrap();
        assert_eq!((m.mse, m.mae, m.rmse, m.med_ae, m.med_se), (0.0, 0.0, 0.0, 0.0, 0.0));
        let m = point_metrics(&recs(&[5.0], &[3.0])).unwrap();
        assert_eq!((m.mae, m.mse, m.med_ae, m.med_se), (2.0, 4.0, 2.0, 4.0));
        assert!(matches!(point_metrics(&[]), Err(Error::NoRecords)));
    }

    #[test]
    fn filter_examples() {
        let m = FilterMask::build(&[0.0, 1.0, 2.0, 3.0], f64::INFINITY).unwrap();
        assert_eq!(m.keep, vec![false, true, true, true]);
        // q3 sits a quarter of the way to 1000, so the fences are wide but
        // still exclude it.
        let m = FilterMask::build(&[1.0, 1.0, 1.0, 1000.0], 1.5).unwrap();
        assert_eq!((m.q1, m.q3), (1.0, 250.75));
        assert_eq!(m.keep, vec![true, true, true, false]);
        let m = FilterMask::build(&[1.0, 1.0, 1.0, 1.0, 1.0, 1000.0], 1.5).unwrap();
        assert_eq!((m.lower_fence, m.upper_fence), (1.0, 1.0));
        assert_eq!(m.keep, vec![true, true, true, true, true, false]);
    }

    #[test]
    fn filtered_metrics_cases() {
        let records = recs(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.0, 3.0, 4.0]);
        let mask = build_filter_mask(&records, f64::INFINITY).unwrap();
        assert_eq!(filtered_metrics(&records, &mask).unwrap(), point_metrics(&records).unwrap());
        let records = recs(&[5.0, 2.0, 3.0], &[0.0, 2.0, 3.0]);
        let mask = build_filter_mask(&records, 1.5).unwrap();
        let m = filtered_metrics(&records, &mask).unwrap();
        assert_eq!((m.mse, m.count), (0.0, 2));
        let zeros = recs(&[1.0], &[0.0]);
        let mask = build_filter_mask(&zeros, 1.5).unwrap();
        assert!(matches!(filtered_metrics(&zeros, &mask), Err(Error::EmptyAfterFiltering)));
    }

    #[test]
    fn win_rate_cases() {
        let naive_self: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&y| rec(y + 1.0, y, y + 1.0)).collect();
        assert_eq!(win_rate(&naive_self).unwrap(), 0.0);
        let perfect: Vec<_> = [1.0, 2.0].iter().map(|&y| rec(y, y, y + 1.0)).collect();
        assert_eq!(win_rate(&perfect).unwrap(), 1.0);
        let mixed = vec![rec(1.0, 1.0, 2.0), rec(3.0, 2.0, 1.0)];
        assert_eq!(win_rate(&mixed).unwrap(), 0.5);
    }

    #[test]
    fn signed_error_cases() {
        assert_eq!(mean_signed_error(&recs(&[1.0, 3.0], &[3.0, 5.0])).unwrap(), -2.0);
        assert_eq!(mean_signed_error(&recs(&[2.0, 4.0], &[3.0, 3.0])).unwrap(), 0.0);
        assert_eq!(mean_signed_error(&recs(&[5.0], &[3.0])).unwrap(), 2.0);
    }

    fn monthly_records(months: u32, copies: bool) -> Vec<ForecastRecord> {
        let mut out = Vec::new();
        for m in 1..=months {
            for d in 1..=5u32 {
                let origin = NaiveDate::from_ymd_opt(2021, m, d).unwrap();
                let (p, y) = if copies { (d as f64, 2.0 * d as f64) } else { ((m * d) as f64 % 7.0, d as f64) };
                out.push(ForecastRecord::new(origin, 1, "a", p, y, y + 0.5, Frequency::Daily));
            }
        }
        out
    }

    #[test]
    fn bootstrap_identical_months_is_degenerate() {
        let est = bootstrap_by_month(&monthly_records(4, true), Statistic::Rmse, 200, 3).unwrap();
        assert!((est.upper - est.point).abs() < 1e-12 && (est.lower - est.point).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic_and_covers_point() {
        let records = monthly_records(12, false);
        let a = bootstrap_by_month(&records, Statistic::Rmse, 1000, 42).unwrap();
        let b = bootstrap_by_month(&records, Statistic::Rmse, 1000, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.lower <= a.point && a.point <= a.upper, "{a:?}");
    }

    #[test]
    fn bootstrap_needs_two_months() {
        let one = monthly_records(1, false);
        assert!(matches!(bootstrap_by_month(&one, Statistic::Mae, 100, 0), Err(Error::InsufficientBlocks(1))));
        assert!(bootstrap_by_month(&monthly_records(3, false), Statistic::Mae, 10, 0).is_err());
    }

    fn est(point: f64, sigma: f64) -> IntervalEstimate {
        IntervalEstimate {
            point,
            lower: point - Z_975 * sigma,
            upper: point + Z_975 * sigma,
            replicates: 1000,
            seed: 0,
        }
    }

    #[test]
    fn meta_analysis_cases() {
        let single = IntervalEstimate { point: 2.0, lower: 1.0, upper: 5.0, replicates: 100, seed: 9 };
        assert_eq!(meta_across_horizons(&[single]).unwrap(), single);
        let pooled = meta_across_horizons(&[est(1.0, 1.0), est(3.0, 1.0)]).unwrap();
        assert!((pooled.point - 2.0).abs() < 1e-12);
        let pooled = meta_across_horizons(&[est(0.0, 1.0), est(5.0, 2.0)]).unwrap();
        assert!((pooled.point - 1.0).abs() < 1e-12);
        assert!((pooled.upper - pooled.point - Z_975 * (1.0f64 / 1.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn meta_floors_zero_width() {
        let zero = IntervalEstimate { point: 1.0, lower: 1.0, upper: 1.0, replicates: 100, seed: 0 };
        let pooled = meta_across_horizons(&[zero, est(3.0, 1.0)]).unwrap();
        assert!(pooled.point.is_finite() && (pooled.point - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generic_metric_set_in_f32() {
        let m = MetricSet::<f32>::from_pairs(&[1.0, 2.0], &[1.0, 4.0]).unwrap();
        assert_eq!((m.mae, m.mse, m.med_ae), (1.0, 2.0, 1.0));
    }
}

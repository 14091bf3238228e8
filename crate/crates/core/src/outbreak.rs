//! Rising-interval annotations used to split scoring into outbreak and
//! non-outbreak periods.
//!
//! [`annotate_rising`] is a simplified detector: a trailing-window
//! log-linear slope test. Externally computed intervals can be ingested with
//! [`load_annotations`] instead.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::metrics::ForecastRecord;
use crate::panel::{parse_date, Frequency, PanelDataset};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutbreakInterval {
    pub region: String,
    pub start: NaiveDate,
    /// Inclusive.
    pub end: NaiveDate,
}

impl OutbreakInterval {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Computed,
    Ingested,
}

/// Per-region disjoint, sorted intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub intervals: Vec<OutbreakInterval>,
    pub source: AnnotationSource,
}

impl AnnotationSet {
    pub fn empty(source: AnnotationSource) -> Self {
        Self {
            intervals: Vec::new(),
            source,
        }
    }

    pub fn for_region<'a>(&'a self, region: &'a str) -> impl Iterator<Item = &'a OutbreakInterval> + 'a {
        self.intervals.iter().filter(move |iv| iv.region == region)
    }

    pub fn is_outbreak(&self, region: &str, date: NaiveDate) -> bool {
        self.for_region(region).any(|iv| iv.contains(date))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut write = || -> std::result::Result<(), csv::Error> {
            w.write_record(["region", "start", "end"])?;
            for iv in &self.intervals {
                w.write_record([
                    iv.region.clone(),
                    iv.start.format("%Y-%m-%d").to_string(),
                    iv.end.format("%Y-%m-%d").to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        };
        write().map_err(|e| Error::csv(path, e))
    }
}

/// Two-sided p-value of the OLS slope of `ys` against `0..len`, and the slope.
pub fn slope_test(ys: &[f64]) -> (f64, f64) {
    let m = ys.len() as f64;
    let x_mean = (m - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / m;
    let sxx: f64 = (0..ys.len()).map(|i| (i as f64 - x_mean).powi(2)).sum();
    let sxy: f64 = ys.iter().enumerate().map(|(i, y)| (i as f64 - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - intercept - slope * i as f64).powi(2))
        .sum();
    let df = m - 2.0;
    let se = (sse / df / sxx).sqrt();
    if slope == 0.0 {
        return (slope, 1.0);
    }
    if se == 0.0 {
        return (slope, 0.0);
    }
    let t = slope / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (slope, 2.0 * dist.sf(t.abs()))
}

/// Marks timestamp `t` rising when the slope of `ln(value + 1)` over the
/// trailing window ending at `t` is positive with p-value below `alpha`.
/// Maximal rising runs of at least two steps become intervals.
pub fn annotate_rising(panel: &PanelDataset, window: usize, alpha: f64) -> Result<AnnotationSet> {
    if window < 3 {
        return Err(Error::InvalidArgument(format!("window {window} must be at least 3")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    if window > panel.len() {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds series length {}",
            panel.len()
        )));
    }
    let mut intervals = Vec::new();
    for (i, region) in panel.regions().iter().enumerate() {
        let rising: Vec<bool> = (0..panel.len())
            .map(|t| {
                if t + 1 < window {
                    return false;
                }
                let ys: Option<Vec<f64>> = (t + 1 - window..=t).map(|s| panel.value(s, i).map(f64::ln_1p)).collect();
                ys.is_some_and(|ys| {
                    let (slope, p) = slope_test(&ys);
                    slope > 0.0 && p < alpha
                })
            })
            .collect();
        let mut t = 0;
        while t < rising.len() {
            if !rising[t] {
                t += 1;
                continue;
            }
            let start = t;
            while t + 1 < rising.len() && rising[t + 1] {
                t += 1;
            }
            if t > start {
                intervals.push(OutbreakInterval {
                    region: region.clone(),
                    start: panel.dates()[start],
                    end: panel.dates()[t],
                });
            }
            t += 1;
        }
    }
    Ok(AnnotationSet {
        intervals,
        source: AnnotationSource::Computed,
    })
}

/// Reads a `region,start,end` CSV, validating against the panel and merging
/// overlapping intervals per region.
pub fn load_annotations(path: impl AsRef<Path>, panel: &PanelDataset) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["region", "start", "end"] {
        return Err(Error::validation(&ctx, "expected header `region,start,end`"));
    }
    let mut by_region: BTreeMap<String, Vec<(NaiveDate, NaiveDate)>> = BTreeMap::new();
    for (k, record) in reader.records().enumerate() {
        let at = format!("{ctx}:{}", k + 2);
        let record = record.map_err(|e| Error::csv(path, e))?;
        let region = record[0].trim().to_string();
        if panel.region_index(&region).is_none() {
            return Err(Error::validation(at, format!("unknown region {region:?}")));
        }
        let date = |s: &str| -> Result<NaiveDate> {
            let d = parse_date(s).ok_or_else(|| Error::validation(&at, format!("invalid date {s:?}")))?;
            if panel.date_index(d).is_none() {
                return Err(Error::validation(&at, format!("date {d} is outside the panel date axis")));
            }
            Ok(d)
        };
        let (start, end) = (date(&record[1])?, date(&record[2])?);
        if end < start {
            return Err(Error::validation(at, format!("end {end} before start {start}")));
        }
        by_region.entry(region).or_default().push((start, end));
    }
    let mut intervals = Vec::new();
    for (region, mut spans) in by_region {
        spans.sort();
        let mut merged: Vec<(NaiveDate, NaiveDate)> = Vec::new();
        for (s, e) in spans {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        intervals.extend(merged.into_iter().map(|(start, end)| OutbreakInterval {
            region: region.clone(),
            start,
            end,
        }));
    }
    Ok(AnnotationSet {
        intervals,
        source: AnnotationSource::Ingested,
    })
}

/// Splits records by whether their target date falls inside an interval of
/// their region (inclusive ends).
pub fn stratify(records: &[ForecastRecord], annotations: &AnnotationSet) -> (Vec<ForecastRecord>, Vec<ForecastRecord>) {
    records
        .iter()
        .cloned()
        .partition(|r| annotations.is_outbreak(&r.region, r.target))
}

/// Default annotator window for a frequency.
pub fn default_window(frequency: Frequency) -> usize {
    frequency.default_annotation_window()
}

pub const DEFAULT_ALPHA: f64 = 0.05;

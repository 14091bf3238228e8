//! Regional epidemic panels: loading, validation, windowing into samples and
//! chronological splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Daily,
    Weekly,
}

impl Frequency {
    pub fn step(self) -> Duration {
        match self {
            Frequency::Daily => Duration::days(1),
            Frequency::Weekly => Duration::days(7),
        }
    }

    /// Number of calendar categories: days of the week or ISO weeks.
    pub fn num_categories(self) -> usize {
        match self {
            Frequency::Daily => 7,
            Frequency::Weekly => 53,
        }
    }

    /// Zero-based calendar category of `date`: Monday = 0 for daily data,
    /// ISO week number minus one for weekly data.
    pub fn calendar_indicator(self, date: NaiveDate) -> usize {
        match self {
            Frequency::Daily => date.weekday().num_days_from_monday() as usize,
            Frequency::Weekly => date.iso_week().week() as usize - 1,
        }
    }

    /// Default forecast horizons in native steps.
    pub fn default_horizons(self) -> Vec<usize> {
        match self {
            Frequency::Daily => (1..=28).collect(),
            Frequency::Weekly => (1..=4).collect(),
        }
    }

    /// Default sliding window for the rising-interval annotator.
    pub fn default_annotation_window(self) -> usize {
        match self {
            Frequency::Daily => 7,
            Frequency::Weekly => 4,
        }
    }

    /// Default DLinear moving-average kernel.
    pub fn default_trend_kernel(self) -> usize {
        match self {
            Frequency::Daily => 7,
            Frequency::Weekly => 3,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
        })
    }
}

impl std::str::FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(Frequency::Daily),
            "weekly" => Ok(Frequency::Weekly),
            other => Err(Error::InvalidArgument(format!(
                "unknown frequency {other:?} (expected daily or weekly)"
            ))),
        }
    }
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Dense (time × region) observation matrix.
///
/// Values are row-major, one row per date. Missing cells hold `0.0` and are
/// flagged in the mask; every unflagged cell is finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    dates: Vec<NaiveDate>,
    regions: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
    frequency: Frequency,
}

impl PanelDataset {
    /// Builds a fully observed panel from rows of values.
    pub fn from_rows(
        start: NaiveDate,
        frequency: Frequency,
        regions: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let n = regions.len();
        let dates = (0..rows.len())
            .map(|t| start + frequency.step() * t as i32)
            .collect();
        let mut values = Vec::with_capacity(rows.len() * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        let missing = vec![false; values.len()];
        Self::new(dates, regions, values, missing, frequency)
    }

    pub fn new(
        dates: Vec<NaiveDate>,
        regions: Vec<String>,
        values: Vec<f64>,
        missing: Vec<bool>,
        frequency: Frequency,
    ) -> Result<Self> {
        let (t, n) = (dates.len(), regions.len());
        if t == 0 || n == 0 {
            return Err(Error::validation("panel", "panel needs at least one date and one region"));
        }
        if values.len() != t * n || missing.len() != t * n {
            return Err(Error::DimensionMismatch {
                expected: t * n,
                actual: values.len().min(missing.len()),
            });
        }
        for w in dates.windows(2) {
            if w[1] - w[0] != frequency.step() {
                return Err(Error::validation(
                    "panel",
                    format!(
                        "date-step inconsistent with {frequency} frequency between {} and {}",
                        w[0], w[1]
                    ),
                ));
            }
        }
        let unique: BTreeSet<&String> = regions.iter().collect();
        if unique.len() != n {
            return Err(Error::validation("panel", "duplicate region identifiers"));
        }
        for (k, (&v, &m)) in values.iter().zip(&missing).enumerate() {
            if !m && !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(
                    "panel",
                    format!("value {v} at ({}, {}) is not a finite nonnegative number", dates[k / n], regions[k % n]),
                ));
            }
        }
        Ok(Self {
            dates,
            regions,
            values,
            missing,
            frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.num_regions();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn value(&self, t: usize, region: usize) -> Option<f64> {
        let k = t * self.num_regions() + region;
        (!self.missing[k]).then(|| self.values[k])
    }

    pub fn is_missing(&self, t: usize, region: usize) -> bool {
        self.missing[t * self.num_regions() + region]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn row_complete(&self, t: usize) -> bool {
        let n = self.num_regions();
        !self.missing[t * n..(t + 1) * n].iter().any(|&m| m)
    }

    pub fn region_index(&self, region: &str) -> Option<usize> {
        self.regions.iter().position(|r| r == region)
    }

    /// Index of `date` on the panel axis, if it is one of the panel's dates.
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.dates[0]).num_days();
        let step = self.frequency.step().num_days();
        if offset < 0 || offset % step != 0 {
            return None;
        }
        let t = (offset / step) as usize;
        (t < self.len()).then_some(t)
    }

    /// Date `steps` native steps after index `t`; may lie past the panel end.
    pub fn date_after(&self, t: usize, steps: usize) -> NaiveDate {
        self.dates[0] + self.frequency.step() * (t + steps) as i32
    }

    /// Rows `start..=end` as a new panel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..={end} outside panel of length {}",
                self.len()
            )));
        }
        let n = self.num_regions();
        Self::new(
            self.dates[start..=end].to_vec(),
            self.regions.clone(),
            self.values[start * n..(end + 1) * n].to_vec(),
            self.missing[start * n..(end + 1) * n].to_vec(),
            self.frequency,
        )
    }

    /// Observed values of one region as `(time index, value)` pairs.
    pub fn series(&self, region: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len()).filter_map(move |t| self.value(t, region).map(|v| (t, v)))
    }

    /// Writes the panel as long-format CSV; missing cells are omitted.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        self.write_rows(&mut w, 0, self.len() - 1)
            .map_err(|e| Error::csv(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub(crate) fn write_rows<W: std::io::Write>(
        &self,
        w: &mut csv::Writer<W>,
        start: usize,
        end: usize,
    ) -> std::result::Result<(), csv::Error> {
        w.write_record(["date", "region", "value"])?;
        for t in start..=end {
            let date = self.dates[t].format("%Y-%m-%d").to_string();
            for (i, region) in self.regions.iter().enumerate() {
                if let Some(v) = self.value(t, i) {
                    w.write_record([date.as_str(), region.as_str(), &v.to_string()])?;
                }
            }
        }
        Ok(())
    }
}

/// Loads a long-format `date,region,value` CSV into a dense panel.
///
/// Dates and regions are the sorted union over all rows; cells without a
/// row are marked missing.
pub fn load_panel(path: impl AsRef<Path>, frequency: Frequency) -> Result<PanelDataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let ctx = path.display().to_string();
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["date", "region", "value"] {
        return Err(Error::validation(&ctx, "expected header `date,region,value`"));
    }
    let mut cells: BTreeMap<(NaiveDate, String), f64> = BTreeMap::new();
    for (k, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = k + 2;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let date = parse_date(&record[0]).ok_or_else(|| {
            Error::validation(format!("{ctx}:{line}"), format!("invalid date {:?}", &record[0]))
        })?;
        let region = record[1].trim().to_string();
        let value: f64 = record[2].trim().parse().map_err(|_| {
            Error::validation(format!("{ctx}:{line}"), format!("non-numeric value {:?}", &record[2]))
        })?;
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::validation(
                format!("{ctx}:{line}"),
                format!("value {value} is not a finite nonnegative number"),
            ));
        }
        if cells.insert((date, region.clone()), value).is_some() {
            return Err(Error::validation(
                format!("{ctx}:{line}"),
                format!("duplicate (date, region) pair ({date}, {region})"),
            ));
        }
    }
    if cells.is_empty() {
        return Err(Error::validation(&ctx, "no data rows"));
    }
    let dates: Vec<NaiveDate> = cells
        .keys()
        .map(|(d, _)| *d)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let regions: Vec<String> = cells
        .keys()
        .map(|(_, r)| r.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for w in dates.windows(2) {
        if w[1] - w[0] != frequency.step() {
            return Err(Error::validation(
                &ctx,
                format!("date-step inconsistent with {frequency} frequency between {} and {}", w[0], w[1]),
            ));
        }
    }
    let n = regions.len();
    let date_idx: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let region_idx: HashMap<&str, usize> = regions.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let mut values = vec![0.0; dates.len() * n];
    let mut missing = vec![true; dates.len() * n];
    for ((date, region), v) in &cells {
        let k = date_idx[date] * n + region_idx[region.as_str()];
        values[k] = *v;
        missing[k] = false;
    }
    PanelDataset::new(dates, regions, values, missing, frequency)
}

/// Strictly positive regional populations aligned to a panel's region order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationVector {
    populations: Vec<f64>,
}

impl PopulationVector {
    pub fn new(populations: Vec<f64>) -> Result<Self> {
        if let Some(i) = populations.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::validation(
                "population",
                format!("population at position {i} is not strictly positive"),
            ));
        }
        Ok(Self { populations })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.populations
    }

    pub fn len(&self) -> usize {
        self.populations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.populations.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, regions: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut write = || -> std::result::Result<(), csv::Error> {
            w.write_record(["region", "population"])?;
            for (r, p) in regions.iter().zip(&self.populations) {
                w.write_record([r.as_str(), &p.to_string()])?;
            }
            w.flush()?;
            Ok(())
        };
        write().map_err(|e| Error::csv(path, e))
    }
}

/// Loads a `region,population` CSV, aligned to `regions`.
pub fn load_population(path: impl AsRef<Path>, regions: &[String]) -> Result<PopulationVector> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["region", "population"] {
        return Err(Error::validation(&ctx, "expected header `region,population`"));
    }
    let mut found: HashMap<String, f64> = HashMap::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let region = record[0].trim().to_string();
        let p: f64 = record[1].trim().parse().map_err(|_| {
            Error::validation(format!("{ctx}:{line}"), format!("non-numeric population {:?}", &record[1]))
        })?;
        if !regions.contains(&region) {
            return Err(Error::validation(format!("{ctx}:{line}"), format!("unknown region {region:?}")));
        }
        if found.insert(region.clone(), p).is_some() {
            return Err(Error::validation(format!("{ctx}:{line}"), format!("duplicate region {region:?}")));
        }
    }
    let populations = regions
        .iter()
        .map(|r| {
            found
                .get(r)
                .copied()
                .ok_or_else(|| Error::validation(&ctx, format!("missing population for region {r:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    PopulationVector::new(populations).map_err(|e| match e {
        Error::Validation { message, .. } => Error::validation(&ctx, message),
        other => other,
    })
}

/// Model input and target at one forecast origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub origin: usize,
    pub horizon: usize,
    pub lookback: usize,
    /// `lookback × n` row-major: rows are `x_{t-L+1} … x_t`.
    pub history: Vec<f64>,
    pub target: Vec<f64>,
    pub calendar_indicator: usize,
}

impl Sample {
    pub fn num_regions(&self) -> usize {
        self.target.len()
    }

    pub fn history_row(&self, l: usize) -> &[f64] {
        let n = self.num_regions();
        &self.history[l * n..(l + 1) * n]
    }

    /// The most recent observation `x_t`.
    pub fn last_row(&self) -> &[f64] {
        self.history_row(self.lookback - 1)
    }

    pub fn target_index(&self) -> usize {
        self.origin + self.horizon
    }
}

/// A sample dropped because its window touched missing data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub origin: usize,
    pub horizon: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub skipped: Vec<SkippedSample>,
}

/// Builds one sample per origin.
///
/// Origins whose window or target touches a missing cell are skipped and
/// reported; origins outside `[L-1, T-1-h]` are an error.
pub fn make_samples(
    panel: &PanelDataset,
    lookback: usize,
    horizon: usize,
    origins: &[usize],
) -> Result<SampleSet> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("lookback and horizon must be positive".into()));
    }
    let t_len = panel.len();
    let mut out = SampleSet::default();
    for &origin in origins {
        if origin + 1 < lookback || origin + horizon >= t_len {
            return Err(Error::InvalidArgument(format!(
                "origin {origin} out of bounds for lookback {lookback}, horizon {horizon}, length {t_len}"
            )));
        }
        let start = origin + 1 - lookback;
        let target_t = origin + horizon;
        if let Some(t) = (start..=origin).find(|&t| !panel.row_complete(t)) {
            out.skipped.push(SkippedSample {
                origin,
                horizon,
                reason: format!("missing history at {}", panel.dates()[t]),
            });
            continue;
        }
        if !panel.row_complete(target_t) {
            out.skipped.push(SkippedSample {
                origin,
                horizon,
                reason: format!("missing target at {}", panel.dates()[target_t]),
            });
            continue;
        }
        let history = (start..=origin).flat_map(|t| panel.row(t).iter().copied()).collect();
        out.samples.push(Sample {
            origin,
            horizon,
            lookback,
            history,
            target: panel.row(target_t).to_vec(),
            calendar_indicator: panel.frequency().calendar_indicator(panel.dates()[target_t]),
        });
    }
    Ok(out)
}

/// Number of training items under the ceiling rule.
pub fn train_count(total: usize, train_fraction: f64) -> usize {
    // Guard against 0.8 * 5 landing a hair above 4.
    ((train_fraction * total as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Splits ordered samples into the first `⌈f·N⌉` for training and the rest
/// for validation.
pub fn chrono_split<S: Clone>(samples: &[S], train_fraction: f64) -> Result<(Vec<S>, Vec<S>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let k = train_count(samples.len(), train_fraction);
    if k == 0 || k >= samples.len() {
        return Err(Error::WindowTooShort(format!(
            "{} samples cannot be split into nonempty train and validation sets",
            samples.len()
        )));
    }
    Ok((samples[..k].to_vec(), samples[k..].to_vec()))
}

//! Scoring forecasts produced outside the process.
//!
//! Keys are resolved against the panel and the round plans; truths and naive
//! references are re-derived from the panel. A supplied `truth` column is
//! only checked, never used.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;

use super::plan::RoundPlan;
use super::score::{score_records, ScoreSettings, ScoreTable};
use crate::error::{Error, Result};
use crate::metrics::ForecastRecord;
use crate::outbreak::AnnotationSet;
use crate::panel::PanelDataset;

/// One parsed row of a forecasts file; `line` is 1-based including the header.
#[derive(Debug, Clone, PartialEq)]
pub struct RawForecast {
    pub line: usize,
    pub origin: NaiveDate,
    pub horizon: usize,
    pub region: String,
    pub prediction: f64,
    pub truth: Option<f64>,
}

/// Reads `origin,horizon,region,prediction[,truth,naive_reference]`.
pub fn read_forecasts(path: impl AsRef<Path>) -> Result<Vec<RawForecast>> {
    let path = path.as_ref();
    let context = path.display().to_string();
    let invalid = |message: String| Error::Validation {
        context: context.clone(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(c_origin), Some(c_horizon), Some(c_region), Some(c_pred)) =
        (column("origin"), column("horizon"), column("region"), column("prediction"))
    else {
        return Err(invalid("header must contain origin, horizon, region, prediction".into()));
    };
    let c_truth = column("truth");
    let mut out = Vec::new();
    let mut non_finite = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| Error::csv(path, e))?;
        let field = |c: usize| row.get(c).map(str::trim).unwrap_or("");
        let origin = NaiveDate::parse_from_str(field(c_origin), "%Y-%m-%d")
            .map_err(|_| invalid(format!("line {line}: bad origin date {:?}", field(c_origin))))?;
        let horizon = field(c_horizon)
            .parse::<usize>()
            .map_err(|_| invalid(format!("line {line}: bad horizon {:?}", field(c_horizon))))?;
        let prediction = field(c_pred)
            .parse::<f64>()
            .map_err(|_| invalid(format!("line {line}: bad prediction {:?}", field(c_pred))))?;
        if !prediction.is_finite() {
            non_finite.push(line);
        }
        let truth = match c_truth.map(field) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|_| invalid(format!("line {line}: bad truth {s:?}")))?,
            ),
        };
        out.push(RawForecast {
            line,
            origin,
            horizon,
            region: field(c_region).to_string(),
            prediction,
            truth,
        });
    }
    if !non_finite.is_empty() {
        return Err(invalid(format!("non-finite predictions at lines {}", join_lines(&non_finite))));
    }
    Ok(out)
}

fn join_lines(lines: &[usize]) -> String {
    const SHOWN: usize = 20;
    let mut s = lines.iter().take(SHOWN).map(|l| l.to_string()).collect::<Vec<_>>().join(", ");
    if lines.len() > SHOWN {
        s.push_str(&format!(" and {} more", lines.len() - SHOWN));
    }
    s
}

/// Scale-aware equality used by the tamper guard.
fn same_value(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Resolves forecasts into records with truths and naive references from
/// the panel.
pub fn resolve_forecasts(
    forecasts: &[RawForecast],
    panel: &PanelDataset,
    plans: &[RoundPlan],
) -> Result<Vec<ForecastRecord>> {
    let mut planned: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for plan in plans {
        for hp in &plan.horizons {
            for &o in &hp.eval_origins {
                planned.insert((o, hp.horizon), plan.round_index);
            }
        }
    }
    let mut unresolved = Vec::new();
    let mut mismatched = Vec::new();
    let mut seen = BTreeSet::new();
    let mut duplicates = Vec::new();
    let mut records = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        let (Some(t), Some(i)) = (panel.date_index(f.origin), panel.region_index(&f.region)) else {
            unresolved.push(f.line);
            continue;
        };
        if !planned.contains_key(&(t, f.horizon)) {
            unresolved.push(f.line);
            continue;
        }
        let (Some(truth), Some(naive)) = (panel.value(t + f.horizon, i), panel.value(t, i)) else {
            unresolved.push(f.line);
            continue;
        };
        if !seen.insert((t, f.horizon, i)) {
            duplicates.push(f.line);
            continue;
        }
        if let Some(claimed) = f.truth {
            if !same_value(claimed, truth) {
                mismatched.push(f.line);
                continue;
            }
        }
        records.push(ForecastRecord::new(
            f.origin,
            f.horizon,
            f.region.clone(),
            f.prediction,
            truth,
            naive,
            panel.frequency(),
        ));
    }
    let context = "forecasts".to_string();
    if !unresolved.is_empty() {
        return Err(Error::Validation {
            context,
            message: format!(
                "keys outside every plan or panel at lines {}",
                join_lines(&unresolved)
            ),
        });
    }
    if !duplicates.is_empty() {
        return Err(Error::Validation {
            context,
            message: format!("duplicate keys at lines {}", join_lines(&duplicates)),
        });
    }
    if !mismatched.is_empty() {
        return Err(Error::TruthMismatch(format!("lines {}", join_lines(&mismatched))));
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(records)
}

/// Scores a forecasts file through the same pipeline as in-process runs.
pub fn score_external(
    records_path: impl AsRef<Path>,
    panel: &PanelDataset,
    plans: &[RoundPlan],
    annotations: &AnnotationSet,
    settings: &ScoreSettings,
    model: &str,
) -> Result<ScoreTable> {
    let forecasts = read_forecasts(records_path)?;
    let records = resolve_forecasts(&forecasts, panel, plans)?;
    score_records(&records, annotations, settings, model, "none")
}

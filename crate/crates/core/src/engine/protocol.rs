//! File-based task bundles for forecasters that run outside the process.
//!
//! Each round becomes `round_NNN/` holding:
//!
//! - `manifest.json`: round index, frequency, lookback, horizons, regions,
//!   the training window and per-horizon origin dates.
//! - `train_panel.csv`: the training window in the panel schema.
//! - `history.csv`: the lookback rows behind every evaluation origin,
//!   keyed by origin. Rows never postdate their own origin.
//! - `targets.csv`: the `origin,horizon,region` rows to fill, with target
//!   dates and calendar indicators.
//! - `adjacency.csv` and `population.csv` when the dataset has them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::plan::RoundPlan;
use super::{mix_seed, to_json, write_text, RunData};
use crate::error::{Error, Result};
use crate::graph::write_adjacency;
use crate::panel::{Frequency, PanelDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonManifest {
    pub horizon: usize,
    pub seed: u64,
    pub train_origins: Vec<NaiveDate>,
    pub validation_origins: Vec<NaiveDate>,
    pub eval_origins: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub round_index: usize,
    pub frequency: Frequency,
    pub lookback: usize,
    pub horizons: Vec<usize>,
    pub regions: Vec<String>,
    pub train_window_start: NaiveDate,
    pub train_window_end: NaiveDate,
    pub splits: Vec<HorizonManifest>,
    pub files: BTreeMap<String, String>,
}

/// What the leakage scan found in one bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleScan {
    pub round_index: usize,
    pub train_window_end: NaiveDate,
    /// Latest date in `train_panel.csv`.
    pub max_train_date: Option<NaiveDate>,
    /// Latest `date − origin` gap in `history.csv`, in days; never positive
    /// in a valid bundle.
    pub max_history_lead_days: Option<i64>,
}

pub fn bundle_name(round_index: usize) -> String {
    format!("round_{round_index:03}")
}

fn date_list(panel: &PanelDataset, idx: &[usize]) -> Vec<NaiveDate> {
    idx.iter().map(|&t| panel.dates()[t]).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn write_history(path: &Path, panel: &PanelDataset, plan: &RoundPlan, lookback: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(["origin", "date", "region", "value"])?;
        for o in plan.eval_origins() {
            let origin = panel.dates()[o].format("%Y-%m-%d").to_string();
            for t in (o + 1).saturating_sub(lookback)..=o {
                let date = panel.dates()[t].format("%Y-%m-%d").to_string();
                for (i, region) in panel.regions().iter().enumerate() {
                    if let Some(v) = panel.value(t, i) {
                        w.write_record([origin.as_str(), date.as_str(), region.as_str(), &v.to_string()])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::csv(path, e))
}

fn write_targets(path: &Path, panel: &PanelDataset, plan: &RoundPlan) -> Result<()> {
    let mut w = csv_writer(path)?;
    let freq = panel.frequency();
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(["origin", "horizon", "region", "target_date", "calendar_indicator"])?;
        for hp in &plan.horizons {
            for &o in &hp.eval_origins {
                let target = panel.date_after(o, hp.horizon);
                let origin = panel.dates()[o].format("%Y-%m-%d").to_string();
                let target_s = target.format("%Y-%m-%d").to_string();
                let indicator = freq.calendar_indicator(target).to_string();
                for region in panel.regions() {
                    w.write_record([
                        origin.as_str(),
                        &hp.horizon.to_string(),
                        region.as_str(),
                        target_s.as_str(),
                        indicator.as_str(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::csv(path, e))
}

/// Writes one bundle and scans it.
pub fn write_bundle(dir: &Path, data: &RunData, plan: &RoundPlan, lookback: usize, seed: u64) -> Result<BundleScan> {
    let panel = &data.panel;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (start, end) = plan.train_window;
    let mut files = BTreeMap::new();

    let path = dir.join("train_panel.csv");
    let mut w = csv_writer(&path)?;
    panel.write_rows(&mut w, start, end).map_err(|e| Error::csv(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    files.insert("train_panel".into(), "train_panel.csv".into());

    write_history(&dir.join("history.csv"), panel, plan, lookback)?;
    files.insert("history".into(), "history.csv".into());
    write_targets(&dir.join("targets.csv"), panel, plan)?;
    files.insert("targets".into(), "targets.csv".into());
    if let Some(a) = &data.adjacency {
        write_adjacency(dir.join("adjacency.csv"), a, panel.regions())?;
        files.insert("adjacency".into(), "adjacency.csv".into());
    }
    if let Some(p) = &data.populations {
        p.write_csv(dir.join("population.csv"), panel.regions())?;
        files.insert("population".into(), "population.csv".into());
    }

    let manifest = Manifest {
        round_index: plan.round_index,
        frequency: panel.frequency(),
        lookback,
        horizons: plan.horizons.iter().map(|h| h.horizon).collect(),
        regions: panel.regions().to_vec(),
        train_window_start: panel.dates()[start],
        train_window_end: panel.dates()[end],
        splits: plan
            .horizons
            .iter()
            .map(|hp| HorizonManifest {
                horizon: hp.horizon,
                seed: mix_seed(&[seed, plan.round_index as u64, hp.horizon as u64]),
                train_origins: date_list(panel, &hp.train_origins),
                validation_origins: date_list(panel, &hp.validation_origins),
                eval_origins: date_list(panel, &hp.eval_origins),
            })
            .collect(),
        files,
    };
    write_text(&dir.join("manifest.json"), &to_json(&manifest)?)?;
    scan_bundle(dir)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

fn parse_date(path: &Path, line: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| Error::Validation {
        context: format!("{}:{line}", path.display()),
        message: format!("bad date {s:?}"),
    })
}

/// Reads a bundle back from disk and checks that nothing postdates the
/// information available at its origins.
pub fn scan_bundle(dir: &Path) -> Result<BundleScan> {
    let manifest = read_manifest(dir)?;
    let leak = |message: String| Error::Validation {
        context: dir.display().to_string(),
        message,
    };

    let path = dir.join("train_panel.csv");
    let mut max_train_date = None;
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    for (k, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::csv(&path, e))?;
        let d = parse_date(&path, k + 2, row.get(0).unwrap_or(""))?;
        if d > manifest.train_window_end || d < manifest.train_window_start {
            return Err(leak(format!("train_panel.csv line {} dated {d} outside the training window", k + 2)));
        }
        max_train_date = max_train_date.max(Some(d));
    }

    let path = dir.join("history.csv");
    let allowed: std::collections::BTreeSet<NaiveDate> =
        manifest.splits.iter().flat_map(|s| s.eval_origins.iter().copied()).collect();
    let mut max_lead = None;
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    for (k, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::csv(&path, e))?;
        let origin = parse_date(&path, k + 2, row.get(0).unwrap_or(""))?;
        let d = parse_date(&path, k + 2, row.get(1).unwrap_or(""))?;
        if !allowed.contains(&origin) {
            return Err(leak(format!("history.csv line {} has unplanned origin {origin}", k + 2)));
        }
        let lead = (d - origin).num_days();
        if lead > 0 {
            return Err(leak(format!("history.csv line {} dated {d} after its origin {origin}", k + 2)));
        }
        max_lead = max_lead.max(Some(lead));
    }
    Ok(BundleScan {
        round_index: manifest.round_index,
        train_window_end: manifest.train_window_end,
        max_train_date,
        max_history_lead_days: max_lead,
    })
}

/// Writes one bundle per round into `dir`.
///
/// A nonempty `dir` is refused unless `force`, in which case existing
/// `round_*` subdirectories are replaced and other files are left alone.
pub fn export_tasks(
    data: &RunData,
    plans: &[RoundPlan],
    lookback: usize,
    seed: u64,
    dir: impl AsRef<Path>,
    force: bool,
) -> Result<Vec<(PathBuf, BundleScan)>> {
    let dir = dir.as_ref();
    if dir.exists() {
        let entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir, e))?;
        if !entries.is_empty() && !force {
            return Err(Error::Validation {
                context: dir.display().to_string(),
                message: "output directory is not empty (use --force to overwrite)".into(),
            });
        }
        for e in entries {
            let is_bundle = e.is_dir()
                && e.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("round_"));
            if is_bundle {
                fs::remove_dir_all(&e).map_err(|err| Error::io(&e, err))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    plans
        .iter()
        .map(|plan| {
            let path = dir.join(bundle_name(plan.round_index));
            let scan = write_bundle(&path, data, plan, lookback, seed)?;
            Ok((path, scan))
        })
        .collect()
}

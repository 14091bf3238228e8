//! Text and CSV renderings of score tables.

use std::fmt::Write as _;
use std::path::Path;

use super::score::{ScoreRow, ScoreTable, Stratum};
use super::write_text;
use crate::error::{Error, Result};
use crate::metrics::Statistic;

fn interval(row: &ScoreRow, stat: Statistic) -> String {
    row.intervals
        .get(&stat)
        .map(|e| format!("[{:.3}, {:.3}]", e.lower, e.upper))
        .unwrap_or_else(|| "-".into())
}

/// Aligned plain-text tables, one block per score table.
pub fn render_text(tables: &[ScoreTable]) -> String {
    let mut out = String::new();
    for t in tables {
        let _ = writeln!(
            out,
            "model {}  patches {}  records {}  failed fits {}",
            t.model, t.patches, t.record_count, t.failed_fits
        );
        let header = [
            "horizon", "stratum", "n", "rmse", "mae", "rel_rmse", "rel_rmse 95%", "win_rate", "win_rate 95%",
        ];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &t.rows {
            lines.push(vec![
                r.horizon.to_string(),
                r.stratum.name().to_string(),
                r.count.to_string(),
                format!("{:.3}", r.metrics.rmse),
                format!("{:.3}", r.metrics.mae),
                format!("{:.3}", r.relative_rmse),
                interval(r, Statistic::RelativeRmse),
                format!("{:.3}", r.win_rate),
                interval(r, Statistic::WinRate),
            ]);
        }
        align(&mut out, &lines, &[1]);
        if !t.pooled.is_empty() {
            let mut pooled: Vec<Vec<String>> =
                vec![["pooled", "stratum", "statistic", "horizons", "estimate", "95%"].iter().map(|s| s.to_string()).collect()];
            for p in &t.pooled {
                let e = &p.estimate;
                pooled.push(vec![
                    String::new(),
                    p.stratum.name().to_string(),
                    stat_name(p.statistic),
                    p.horizons.len().to_string(),
                    format!("{:.3}", e.point),
                    format!("[{:.3}, {:.3}]", e.lower, e.upper),
                ]);
            }
            out.push('\n');
            align(&mut out, &pooled, &[1, 2]);
        }
        out.push('\n');
    }
    out
}

/// Right-aligns every column except those listed.
fn align(out: &mut String, lines: &[Vec<String>], left: &[usize]) {
    let cols = lines.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
    for l in lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if left.contains(&c) { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
}

fn stat_name(s: Statistic) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn all_horizons(tables: &[ScoreTable]) -> Vec<usize> {
    let mut h: Vec<usize> = tables.iter().flat_map(|t| t.horizons()).collect();
    h.sort_unstable();
    h.dedup();
    h
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// One row per (model, patches, stratum), one column per horizon plus the
/// pooled estimate.
pub fn wide_csv(tables: &[ScoreTable], stat: Statistic) -> Result<String> {
    let horizons = all_horizons(tables);
    let mut rows = vec![["model", "patches", "stratum"]
        .iter()
        .map(|s| s.to_string())
        .chain(horizons.iter().map(|h| format!("h{h}")))
        .chain(["pooled".to_string()])
        .collect::<Vec<_>>()];
    for t in tables {
        for stratum in Stratum::ALL {
            let mut row = vec![t.model.clone(), t.patches.clone(), stratum.name().to_string()];
            for &h in &horizons {
                row.push(
                    t.row(h, stratum)
                        .map(|r| match stat {
                            Statistic::WinRate => r.win_rate,
                            _ => r.relative_rmse,
                        })
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                );
            }
            row.push(
                t.pooled
                    .iter()
                    .find(|p| p.stratum == stratum && p.statistic == stat)
                    .map(|p| p.estimate.point.to_string())
                    .unwrap_or_default(),
            );
            rows.push(row);
        }
    }
    csv_string(rows)
}

/// Plot-ready rows `model,patches,horizon,stratum,statistic,value,lower,upper`.
pub fn long_csv(tables: &[ScoreTable]) -> Result<String> {
    let mut rows = vec![["model", "patches", "horizon", "stratum", "statistic", "value", "lower", "upper"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for t in tables {
        for r in &t.rows {
            let m = &r.metrics;
            let mut values = vec![
                (Statistic::Mse, m.mse),
                (Statistic::Mae, m.mae),
                (Statistic::Rmse, m.rmse),
                (Statistic::MedAe, m.med_ae),
                (Statistic::MedSe, m.med_se),
            ];
            if let Some(f) = &r.filtered {
                values.extend([
                    (Statistic::MseFiltered, f.mse),
                    (Statistic::MaeFiltered, f.mae),
                    (Statistic::RmseFiltered, f.rmse),
                ]);
            }
            values.extend([
                (Statistic::WinRate, r.win_rate),
                (Statistic::MeanSignedError, r.mean_signed_error),
                (Statistic::RelativeRmse, r.relative_rmse),
            ]);
            for (stat, v) in values {
                let (lo, hi) = r
                    .intervals
                    .get(&stat)
                    .map(|e| (e.lower.to_string(), e.upper.to_string()))
                    .unwrap_or_default();
                rows.push(vec![
                    t.model.clone(),
                    t.patches.clone(),
                    r.horizon.to_string(),
                    r.stratum.name().to_string(),
                    stat_name(stat),
                    v.to_string(),
                    lo,
                    hi,
                ]);
            }
        }
        for p in &t.pooled {
            rows.push(vec![
                t.model.clone(),
                t.patches.clone(),
                "pooled".into(),
                p.stratum.name().to_string(),
                stat_name(p.statistic),
                p.estimate.point.to_string(),
                p.estimate.lower.to_string(),
                p.estimate.upper.to_string(),
            ]);
        }
    }
    csv_string(rows)
}

/// Writes `report.txt`, `relative_rmse.csv`, `win_rate.csv` and `long.csv`.
pub fn write_report(tables: &[ScoreTable], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("report.txt"), &render_text(tables))?;
    write_text(&dir.join("relative_rmse.csv"), &wide_csv(tables, Statistic::RelativeRmse)?)?;
    write_text(&dir.join("win_rate.csv"), &wide_csv(tables, Statistic::WinRate)?)?;
    write_text(&dir.join("long.csv"), &long_csv(tables)?)?;
    Ok(())
}

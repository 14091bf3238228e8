#![allow(dead_code)]

use epiroll::forecasters::{Differentiable, FitContext};
use epiroll::graph::{row_normalize, ZeroRowPolicy};
use epiroll::panel::{chrono_split, make_samples, Sample};
use epiroll::priors::{EinnConfig, EpiConfig, EpiVariant, FilterConfig, PatchConfig, TidConfig};
use epiroll::synthetic::SyntheticPanel;
use epiroll::MixingOperator;

/// Samples, split and AR(1) series for one training window
/// `[start, start + len)` with lookback `l` and horizon `h`.
pub struct Window {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub series: Vec<Vec<f64>>,
    pub mixing: MixingOperator,
    pub populations: Vec<f64>,
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn new(data: &SyntheticPanel, start: usize, len: usize, l: usize, h: usize) -> Self {
        let end = start + len - 1;
        let origins: Vec<usize> = (start + l - 1..=end - h).collect();
        let set = make_samples(&data.panel, l, h, &origins).unwrap();
        let (train, validation) = chrono_split(&set.samples, 0.8).unwrap();
        let n = data.panel.num_regions();
        let series = (0..n)
            .map(|i| (start..=end).map(|t| data.panel.row(t)[i]).collect())
            .collect();
        Self {
            train,
            validation,
            series,
            mixing: row_normalize(&data.adjacency, ZeroRowPolicy::SelfLoop),
            populations: data.populations.as_slice().to_vec(),
            start,
            len,
        }
    }

    pub fn context(&self) -> FitContext<'_> {
        FitContext {
            train: &self.train,
            validation: &self.validation,
            mixing: &self.mixing,
            populations: Some(&self.populations),
            frequency: epiroll::panel::Frequency::Daily,
            window: (self.start, self.len),
            series: &self.series,
        }
    }
}

/// Every subset of {tid, filter, epi variant or none, einn}.
pub fn all_patch_combinations() -> Vec<PatchConfig> {
    let mut out = Vec::new();
    for mask in 0..2 * 2 * 4 * 2 {
        let epi = match (mask >> 2) & 3 {
            0 => None,
            1 => Some(EpiConfig::new(EpiVariant::SirIncidence)),
            2 => Some(EpiConfig::new(EpiVariant::SirPercent)),
            _ => Some(EpiConfig::new(EpiVariant::Ngm)),
        };
        out.push(PatchConfig {
            tid: (mask & 1 != 0).then(TidConfig::default),
            filter: (mask & 2 != 0).then(FilterConfig::default),
            epi,
            einn: (mask & 16 != 0).then(EinnConfig::default),
        });
    }
    out
}

/// Central differences against the analytic gradient; returns
/// `‖a − f‖∞ / max(‖a‖∞, ‖f‖∞)`.
pub fn gradient_relative_error(objective: &impl Differentiable, params: &[f64], eps: f64) -> f64 {
    let mut analytic = vec![0.0; params.len()];
    objective.loss_and_grad(params, &mut analytic).unwrap();
    let mut scratch = vec![0.0; params.len()];
    let mut p = params.to_vec();
    let mut max_diff: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for k in 0..params.len() {
        p[k] = params[k] + eps;
        let up = objective.loss_and_grad(&p, &mut scratch).unwrap();
        p[k] = params[k] - eps;
        let down = objective.loss_and_grad(&p, &mut scratch).unwrap();
        p[k] = params[k];
        let fd = (up - down) / (2.0 * eps);
        max_diff = max_diff.max((fd - analytic[k]).abs());
        max_abs = max_abs.max(fd.abs()).max(analytic[k].abs());
    }
    if max_abs == 0.0 {
        0.0
    } else {
        max_diff / max_abs
    }
}

/// Writes the panel, adjacency and population into `dir` and returns a
/// run configuration over them with bootstrap replicates reduced.
pub fn write_run(data: &SyntheticPanel, dir: &std::path::Path, kind: epiroll::forecasters::ModelKind) -> epiroll::engine::RunConfig {
    data.write_files(dir).unwrap();
    let json = serde_json::json!({
        "dataset": {
            "panel": dir.join("panel.csv"),
            "frequency": data.panel.frequency(),
            "adjacency": dir.join("adjacency.csv"),
            "population": dir.join("population.csv"),
        },
        "model": { "kind": kind },
        "seed": 11,
        "bootstrap_replicates": 100,
        "output_dir": dir.join("out"),
    });
    serde_json::from_value(json).unwrap()
}

/// `(horizon, train origins, validation origins, eval origins)`.
pub type OracleHorizon = (usize, Vec<usize>, Vec<usize>, Vec<usize>);

/// One round of an independent plan enumeration.
#[derive(Debug, PartialEq)]
pub struct OracleRound {
    pub window: (usize, usize),
    pub horizons: Vec<OracleHorizon>,
}

/// Enumerates rounds by assigning each time step to the round whose
/// cadence block contains it, instead of stepping origins forward.
pub fn enumerate_plans(t_len: usize, l: usize, cadence: usize, train: usize, horizons: &[usize]) -> Vec<OracleRound> {
    let min_h = *horizons.iter().min().unwrap();
    let mut rounds: Vec<OracleRound> = Vec::new();
    for t in (train - 1)..t_len {
        if t + min_h >= t_len {
            break;
        }
        let k = (t + 1 - train) / cadence;
        if k == rounds.len() {
            let end = train - 1 + k * cadence;
            let start = end + 1 - train;
            let hs = horizons
                .iter()
                .map(|&h| {
                    let samples: Vec<usize> = (0..t_len).filter(|&s| s + 1 >= start + l && s + h <= end).collect();
                    let n_train = (4 * samples.len()).div_ceil(5);
                    let eval: Vec<usize> = (end..end + cadence).filter(|&o| o + h < t_len).collect();
                    (h, samples[..n_train].to_vec(), samples[n_train..].to_vec(), eval)
                })
                .collect();
            rounds.push(OracleRound { window: (start, end), horizons: hs });
        }
    }
    rounds
}

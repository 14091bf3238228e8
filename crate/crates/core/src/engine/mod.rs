//! The rolling-origin benchmark: plan rounds, fit one model per round and
//! horizon from scratch, forecast the round's origins, and score.

pub mod external;
pub mod plan;
pub mod protocol;
pub mod report;
pub mod score;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasters::{train, FitContext, FittedModel, ModelKind, ModelSpec, TrainConfig};
use crate::graph::{load_adjacency, row_normalize, AdjacencyMatrix, MixingOperator, ZeroRowPolicy};
use crate::metrics::{write_records, ForecastRecord, DEFAULT_REPLICATES};
use crate::outbreak::{annotate_rising, default_window, load_annotations, AnnotationSet, DEFAULT_ALPHA};
use crate::panel::{load_panel, load_population, make_samples, Frequency, PanelDataset, PopulationVector, Sample};
use crate::priors::PatchConfig;

pub use plan::{plan_rounds, HorizonPlan, PlanSettings, RoundPlan};
pub use score::{canonical_sort, score_records, PooledRow, ScoreRow, ScoreSettings, ScoreTable, Stratum};

/// SplitMix64 folded over the parts; used to derive independent seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub id: Option<String>,
    pub panel: PathBuf,
    pub frequency: Frequency,
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
    #[serde(default)]
    pub population: Option<PathBuf>,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
}

/// Patches either as identifiers with default settings or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatchSpec {
    Identifiers(Vec<String>),
    Full(PatchConfig),
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec::Identifiers(Vec::new())
    }
}

impl PatchSpec {
    pub fn resolve(&self) -> Result<PatchConfig> {
        match self {
            PatchSpec::Identifiers(ids) => PatchConfig::from_identifiers(ids),
            PatchSpec::Full(cfg) => {
                cfg.validate()?;
                Ok(*cfg)
            }
        }
    }
}

fn default_cadence() -> usize {
    plan::DEFAULT_CADENCE
}

fn default_train_size() -> usize {
    plan::DEFAULT_TRAIN_SIZE
}

fn default_lookback() -> usize {
    plan::DEFAULT_LOOKBACK
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The run configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub patches: PatchSpec,
    #[serde(default)]
    pub horizons: Option<Vec<usize>>,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_replicates")]
    pub bootstrap_replicates: usize,
    #[serde(default)]
    pub annotation_window: Option<usize>,
    #[serde(default)]
    pub annotation_alpha: Option<f64>,
}

impl RunConfig {
    /// Reads a configuration; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset.panel);
        cfg.dataset.adjacency.as_mut().map(fix);
        cfg.dataset.population.as_mut().map(fix);
        cfg.dataset.annotations.as_mut().map(fix);
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn plan_settings(&self) -> PlanSettings {
        PlanSettings {
            lookback: self.lookback,
            cadence: self.cadence,
            train_size: self.train_size,
            horizons: self
                .horizons
                .clone()
                .unwrap_or_else(|| self.dataset.frequency.default_horizons()),
        }
    }

    pub fn dataset_id(&self) -> String {
        self.dataset.id.clone().unwrap_or_else(|| {
            self.dataset
                .panel
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }
}

/// Loaded inputs of a run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub panel: PanelDataset,
    pub adjacency: Option<AdjacencyMatrix>,
    pub mixing: MixingOperator,
    pub populations: Option<PopulationVector>,
    pub annotations: AnnotationSet,
}

impl RunData {
    pub fn load(cfg: &DatasetConfig, window: Option<usize>, alpha: Option<f64>) -> Result<Self> {
        let panel = load_panel(&cfg.panel, cfg.frequency)?;
        let adjacency = match &cfg.adjacency {
            Some(p) => Some(load_adjacency(p, panel.regions())?),
            None => None,
        };
        let mixing = match &adjacency {
            Some(a) => row_normalize(a, ZeroRowPolicy::SelfLoop),
            None => MixingOperator::identity(panel.num_regions()),
        };
        let populations = match &cfg.population {
            Some(p) => Some(load_population(p, panel.regions())?),
            None => None,
        };
        let annotations = match &cfg.annotations {
            Some(p) => load_annotations(p, &panel)?,
            None => annotate_rising(
                &panel,
                window.unwrap_or_else(|| default_window(cfg.frequency)),
                alpha.unwrap_or(DEFAULT_ALPHA),
            )?,
        };
        Ok(Self {
            panel,
            adjacency,
            mixing,
            populations,
            annotations,
        })
    }
}

/// Outcome of fitting one (round, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub round: usize,
    pub horizon: usize,
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub train_loss: Option<f64>,
    pub validation_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub skipped_samples: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparameters: BTreeMap<String, f64>,
    /// Mean validation MSE across horizons; `None` when a fit failed.
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub dataset: String,
    pub model: ModelKind,
    pub hyperparameters: BTreeMap<String, f64>,
    pub patches: String,
    pub seed: u64,
    pub grid: Vec<GridPoint>,
    pub fits: Vec<FitReport>,
    pub failed_fits: usize,
    pub record_count: usize,
    pub annotation_intervals: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub dataset: String,
    pub frequency: Frequency,
    pub spec: ModelSpec,
    pub patches: PatchConfig,
    pub seed: u64,
    pub settings: PlanSettings,
    pub plans: Vec<RoundPlan>,
    pub records: Vec<ForecastRecord>,
    pub report: ScoreTable,
    pub diagnostics: Diagnostics,
    /// Region and date labels for `plans.json`.
    pub dates: Vec<chrono::NaiveDate>,
}

/// Samples for one horizon of one round, with the training-window series.
pub struct RoundSamples {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub series: Vec<Vec<f64>>,
    pub skipped: usize,
}

pub fn round_samples(panel: &PanelDataset, lookback: usize, plan: &RoundPlan, hp: &HorizonPlan) -> Result<RoundSamples> {
    let train = make_samples(panel, lookback, hp.horizon, &hp.train_origins)?;
    let validation = make_samples(panel, lookback, hp.horizon, &hp.validation_origins)?;
    let eval = make_samples(panel, lookback, hp.horizon, &hp.eval_origins)?;
    let (start, end) = plan.train_window;
    let series = (0..panel.num_regions())
        .map(|i| (start..=end).map(|t| panel.value(t, i).unwrap_or(f64::NAN)).collect())
        .collect();
    Ok(RoundSamples {
        skipped: train.skipped.len() + validation.skipped.len() + eval.skipped.len(),
        train: train.samples,
        validation: validation.samples,
        eval: eval.samples,
        series,
    })
}

pub fn fit_cell(
    data: &RunData,
    plan: &RoundPlan,
    hp: &HorizonPlan,
    lookback: usize,
    spec: &ModelSpec,
    config: &TrainConfig,
    patches: &PatchConfig,
) -> Result<(FittedModel, RoundSamples)> {
    let samples = round_samples(&data.panel, lookback, plan, hp)?;
    let ctx = FitContext {
        train: &samples.train,
        validation: &samples.validation,
        mixing: &data.mixing,
        populations: data.populations.as_ref().map(|p| p.as_slice()),
        frequency: data.panel.frequency(),
        window: (plan.train_window.0, plan.train_window.1 - plan.train_window.0 + 1),
        series: &samples.series,
    };
    let spec = ModelSpec {
        horizon: hp.horizon,
        ..spec.clone()
    };
    let model = train(&spec, &ctx, config, patches)?;
    Ok((model, samples))
}

/// Cartesian product of the grid in key order, the last key varying fastest.
pub fn lattice(grid: &BTreeMap<String, Vec<f64>>) -> Vec<BTreeMap<String, f64>> {
    let mut points = vec![BTreeMap::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Trains every lattice point on the first round and keeps the one with the
/// lowest validation loss averaged over horizons; ties go to the earlier
/// point.
pub fn grid_search(
    spec: &ModelSpec,
    grid: &BTreeMap<String, Vec<f64>>,
    first_plan: &RoundPlan,
    data: &RunData,
    lookback: usize,
    config: &TrainConfig,
    patches: &PatchConfig,
) -> Result<(ModelSpec, Vec<GridPoint>)> {
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(Error::InvalidArgument("grid must have at least one value per key".into()));
    }
    let points = lattice(grid);
    let candidates: Vec<ModelSpec> = points
        .iter()
        .map(|p| {
            let mut s = spec.clone();
            s.hyperparameters.extend(p.iter().map(|(k, v)| (k.clone(), *v)));
            s
        })
        .collect();
    let losses: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|cand| {
            let mut total = 0.0;
            for hp in &first_plan.horizons {
                let cfg = TrainConfig {
                    seed: mix_seed(&[config.seed, 0, hp.horizon as u64]),
                    ..config.clone()
                };
                match fit_cell(data, first_plan, hp, lookback, cand, &cfg, patches) {
                    Ok((m, _)) if m.diagnostics.validation_loss.is_finite() => total += m.diagnostics.validation_loss,
                    Ok(_) | Err(Error::NonFiniteLoss { .. }) | Err(Error::GammaTooSmall { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(total / first_plan.horizons.len() as f64))
        })
        .collect::<Result<_>>()?;
    let report: Vec<GridPoint> = points
        .iter()
        .zip(&losses)
        .map(|(p, l)| GridPoint {
            hyperparameters: p.clone(),
            validation_loss: *l,
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, l) in losses.iter().enumerate() {
        if let Some(l) = *l {
            if best.is_none_or(|(_, b)| l < b) {
                best = Some((i, l));
            }
        }
    }
    match best {
        Some((i, _)) => Ok((candidates[i].clone(), report)),
        None => Err(Error::GridDiverged(
            report
                .iter()
                .map(|g| format!("{:?}: diverged", g.hyperparameters))
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

/// Runs the full protocol in memory.
pub fn run_benchmark(config: &RunConfig) -> Result<BenchmarkRun> {
    let data = RunData::load(&config.dataset, config.annotation_window, config.annotation_alpha)?;
    run_with_data(config, &data)
}

pub fn run_with_data(config: &RunConfig, data: &RunData) -> Result<BenchmarkRun> {
    let patches = config.patches.resolve()?;
    if config.model.kind == ModelKind::External {
        return Err(Error::InvalidArgument(
            "external models are scored with `score`, not run in-process".into(),
        ));
    }
    if (patches.epi.is_some() || patches.einn.is_some()) && data.populations.is_none() {
        return Err(Error::InvalidArgument("epidemic patches require dataset.population".into()));
    }
    let settings = config.plan_settings();
    let plans = plan_rounds(data.panel.len(), &settings)?;
    let mut spec = ModelSpec {
        kind: config.model.kind,
        hyperparameters: config.model.hyperparameters.clone(),
        horizon: 1,
    };
    let train_cfg = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let mut grid_report = Vec::new();
    if !config.grid.is_empty() {
        let (selected, report) = grid_search(&spec, &config.grid, &plans[0], data, settings.lookback, &train_cfg, &patches)?;
        spec = selected;
        grid_report = report;
    }

    let cells: Vec<(usize, usize)> = plans
        .iter()
        .flat_map(|p| {
            p.horizons
                .iter()
                .enumerate()
                .filter(|(_, hp)| !hp.eval_origins.is_empty())
                .map(move |(j, _)| (p.round_index, j))
        })
        .collect();
    let results: Vec<(FitReport, Vec<ForecastRecord>)> = cells
        .par_iter()
        .map(|&(round, j)| {
            let plan = &plans[round];
            let hp = &plan.horizons[j];
            let seed = mix_seed(&[config.seed, round as u64, hp.horizon as u64]);
            let cfg = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let mut report = FitReport {
                round,
                horizon: hp.horizon,
                seed,
                ok: false,
                message: None,
                train_loss: None,
                validation_loss: None,
                best_epoch: None,
                skipped_samples: 0,
                records: 0,
            };
            let outcome = fit_cell(data, plan, hp, settings.lookback, &spec, &cfg, &patches).and_then(|(model, samples)| {
                let records = forecast_records(&data.panel, &data.mixing, &model, &samples.eval)?;
                Ok((model, samples, records))
            });
            match outcome {
                Ok((model, samples, records)) => {
                    report.ok = true;
                    report.train_loss = Some(model.diagnostics.train_loss);
                    report.validation_loss = Some(model.diagnostics.validation_loss);
                    report.best_epoch = Some(model.diagnostics.best_epoch);
                    report.skipped_samples = samples.skipped;
                    report.records = records.len();
                    (report, records)
                }
                Err(e) => {
                    report.message = Some(e.to_string());
                    (report, Vec::new())
                }
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut fits = Vec::with_capacity(results.len());
    for (report, recs) in results {
        records.extend(recs);
        fits.push(report);
    }
    let failed_fits = fits.iter().filter(|f| !f.ok).count();
    let label = spec.kind.to_string();
    // With every cell failed there is nothing to score, but the failures
    // are still reported.
    let mut report = if records.is_empty() {
        ScoreTable {
            model: label,
            patches: patches.label(),
            record_count: 0,
            stratum_counts: Stratum::ALL.iter().map(|&s| (s, 0)).collect(),
            rows: Vec::new(),
            pooled: Vec::new(),
            failed_fits: 0,
        }
    } else {
        score_records(
            &records,
            &data.annotations,
            &ScoreSettings {
                replicates: config.bootstrap_replicates,
                seed: config.seed,
                ..ScoreSettings::default()
            },
            &label,
            &patches.label(),
        )?
    };
    report.failed_fits = failed_fits;
    let diagnostics = Diagnostics {
        dataset: config.dataset_id(),
        model: spec.kind,
        hyperparameters: spec.hyperparameters.clone(),
        patches: patches.label(),
        seed: config.seed,
        grid: grid_report,
        fits,
        failed_fits,
        record_count: records.len(),
        annotation_intervals: data.annotations.intervals.len(),
    };
    Ok(BenchmarkRun {
        dataset: config.dataset_id(),
        frequency: data.panel.frequency(),
        spec,
        patches,
        seed: config.seed,
        settings,
        plans,
        records,
        report,
        diagnostics,
        dates: data.panel.dates().to_vec(),
    })
}

/// One record per (sample, region), in region order.
pub fn forecast_records(
    panel: &PanelDataset,
    mixing: &MixingOperator,
    model: &FittedModel,
    samples: &[Sample],
) -> Result<Vec<ForecastRecord>> {
    let mut out = Vec::with_capacity(samples.len() * panel.num_regions());
    for s in samples {
        let prediction = model.predict(s, mixing)?;
        if let Some(i) = prediction.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch: i });
        }
        for (i, region) in panel.regions().iter().enumerate() {
            out.push(ForecastRecord::new(
                panel.dates()[s.origin],
                s.horizon,
                region.clone(),
                prediction[i],
                s.target[i],
                s.last_row()[i],
                panel.frequency(),
            ));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct PlanView<'a> {
    round_index: usize,
    train_window: (usize, usize),
    train_window_dates: (chrono::NaiveDate, chrono::NaiveDate),
    horizons: &'a [HorizonPlan],
}

#[derive(Serialize)]
struct PlansDocument<'a> {
    settings: &'a PlanSettings,
    frequency: Frequency,
    headroom: &'static str,
    rounds: Vec<PlanView<'a>>,
}

pub fn plans_json(run: &BenchmarkRun) -> Result<String> {
    let doc = PlansDocument {
        settings: &run.settings,
        frequency: run.frequency,
        headroom: "per-horizon: each horizon keeps the origins whose target lies inside the panel",
        rounds: run
            .plans
            .iter()
            .map(|p| PlanView {
                round_index: p.round_index,
                train_window: p.train_window,
                train_window_dates: (run.dates[p.train_window.0], run.dates[p.train_window.1]),
                horizons: &p.horizons,
            })
            .collect(),
    };
    to_json(&doc)
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `records.csv`, `scoretable.json`, `plans.json` and
/// `diagnostics.json` into `dir`.
pub fn write_outputs(run: &BenchmarkRun, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = run.records.clone();
    canonical_sort(&mut records);
    write_records(dir.join("records.csv"), &records)?;
    write_text(&dir.join("scoretable.json"), &to_json(&run.report)?)?;
    write_text(&dir.join("plans.json"), &plans_json(run)?)?;
    write_text(&dir.join("diagnostics.json"), &to_json(&run.diagnostics)?)?;
    Ok(())
}

pub fn read_score_table(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{all_patch_combinations, enumerate_plans, gradient_relative_error, Window};
use epiroll::engine::{plan_rounds, run_benchmark, write_outputs, PlanSettings, RunConfig};
use epiroll::forecasters::{build_objective, train, FittedModel, ModelKind, ModelSpec, TrainConfig};
use epiroll::graph::{row_normalize, ZeroRowPolicy};
use epiroll::metrics::{FilterMask, ForecastRecord, Statistic};
use epiroll::panel::Frequency;
use epiroll::priors::{
    ngm_propagate, sir_rollout, EpiConfig, EpiRates, EpiVariant, PatchConfig, SirState, TidConfig, DEFAULT_LAMBDA_GRID,
};
use epiroll::synthetic::{sir_panel, weekday_panel};
use epiroll::{AdjacencyMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const FILTER_TARGET: f64 = 0.007;
const FILTER_TOLERANCE: f64 = 0.001;
const FILTER_BUDGET: Duration = Duration::from_secs(5);
const NAIVE_BUDGET: Duration = Duration::from_secs(30);
const SIR_ROLLOUTS: usize = 10_000;
const SIR_TOLERANCE: f64 = 1e-9;
const NGM_TOLERANCE: f64 = 1e-10;
const GRADIENT_CONFIGS: usize = 100;
const GRADIENT_EPS: f64 = 1e-5;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(120);
const METRIC_INSTANCES: usize = 1000;
const METRIC_TOLERANCE: f64 = 1e-12;
const TID_MIN_GAIN: f64 = 0.10;
const EPI_MAX_LOSS: f64 = 0.01;
const EFFICACY_BUDGET: Duration = Duration::from_secs(300);
/// Shorter than the weekly period, so the lags alone cannot see the
/// planted weekday effect.
const WEEKDAY_LOOKBACK: usize = 6;

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn bundled_config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/fixtures").join(name);
    RunConfig::load(path).expect("bundled fixture config")
}

fn filter_calibration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(10.0, 1.0).unwrap();
    let draws: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
    let mask = FilterMask::build(&draws, 1.5).unwrap();
    let excluded = mask.excluded_fraction();
    let elapsed = start.elapsed();
    outcome(
        (excluded - FILTER_TARGET).abs() <= FILTER_TOLERANCE && elapsed < FILTER_BUDGET,
        format!("excluded {:.4}% in {:.2?}", 100.0 * excluded, elapsed),
    )
}

fn naive_fixed_point() -> Outcome {
    let start = Instant::now();
    let run = match run_benchmark(&bundled_config("run.json")) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let bad: Vec<String> = run
        .report
        .rows
        .iter()
        .filter(|r| r.relative_rmse != 1.0 || r.win_rate != 0.0)
        .map(|r| format!("h{} {}", r.horizon, r.stratum))
        .collect();
    outcome(
        bad.is_empty() && !run.report.rows.is_empty() && elapsed < NAIVE_BUDGET,
        format!("{} cells, {} off, {:.2?}", run.report.rows.len(), bad.len(), elapsed),
    )
}

fn random_mixing(rng: &mut ChaCha8Rng, n: usize) -> epiroll::MixingOperator {
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if rng.random_bool(0.3) {
                w[(i, j)] = rng.random_range(0.0..2.0);
            }
        }
    }
    row_normalize(&AdjacencyMatrix::new(w).unwrap(), ZeroRowPolicy::SelfLoop)
}

fn sir_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..SIR_ROLLOUTS {
        let n = rng.random_range(1..=50);
        let pops: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(2.0..7.0))).collect();
        let i0: Vec<f64> = pops.iter().map(|p| p * rng.random_range(0.0..1.0)).collect();
        let state = SirState {
            s: pops.iter().zip(&i0).map(|(p, i)| p - i).collect(),
            i: i0,
            r: vec![0.0; n],
        };
        let rates = EpiRates {
            beta: (0..n).map(|_| rng.random_range(0.0..3.0)).collect(),
            gamma: (0..n).map(|_| rng.random_range(0.0..1.5)).collect(),
        };
        let dt = rng.random_range(0.1..1.0);
        let mixing = random_mixing(&mut rng, n);
        let roll = sir_rollout(&state, &rates, &mixing, &pops, dt, 28).unwrap();
        for st in &roll.states {
            for (k, total) in st.totals().iter().enumerate() {
                worst = worst.max((total - pops[k]).abs() / pops[k]);
            }
            if st.s.iter().chain(&st.i).chain(&st.r).any(|&v| v < 0.0) {
                return outcome(false, "negative compartment".into());
            }
        }
    }
    outcome(
        worst <= SIR_TOLERANCE,
        format!("{SIR_ROLLOUTS} rollouts, max relative drift {worst:.2e}"),
    )
}

fn ngm_closed_form() -> Outcome {
    let scalar = ngm_propagate(&[0.5], &[0.25], &Matrix::zeros(1, 1), &[1.0]).unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..3.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let r = ngm_propagate(&beta, &gamma, &Matrix::zeros(n, n), &x).unwrap();
        for k in 0..n {
            let expected = beta[k] / gamma[k] * x[k];
            worst = worst.max((r[k] - expected).abs() / expected.abs().max(1.0));
        }
    }
    outcome(
        scalar == 2.0 && worst <= NGM_TOLERANCE,
        format!("scalar factor {scalar}, decoupled max error {worst:.2e}"),
    )
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let combos = all_patch_combinations();
    let kinds = [ModelKind::Dlinear, ModelKind::GraphLinear];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut worst_label = String::new();
    for k in 0..GRADIENT_CONFIGS {
        // Every model × patch pair first, then random draws.
        let (kind, patches) = if k < kinds.len() * combos.len() {
            (kinds[k / combos.len()], combos[k % combos.len()])
        } else {
            (kinds[rng.random_range(0..2)], combos[rng.random_range(0..combos.len())])
        };
        let n = rng.random_range(2..=4);
        let l = rng.random_range(3..=6);
        let h = rng.random_range(1..=4);
        let data = sir_panel(n, 60, 0.05, rng.random()).unwrap();
        let w = Window::new(&data, 5, 50, l, h);
        let spec = ModelSpec::new(kind, h);
        let (obj, init, _, _) = build_objective(&spec, &w.context(), &TrainConfig::default(), &patches).unwrap();
        let params: Vec<f64> = init.iter().map(|p| p + 0.05 * rng.random_range(-1.0..1.0)).collect();
        let err = gradient_relative_error(&obj, &params, GRADIENT_EPS);
        if err > worst {
            worst = err;
            worst_label = format!("{kind} {}", patches.label());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < GRADIENT_TOLERANCE && elapsed < GRADIENT_BUDGET,
        format!("{GRADIENT_CONFIGS} configs, worst {worst:.2e} ({worst_label}), {elapsed:.2?}"),
    )
}

/// Definition-level reimplementations, written without the library's helpers.
mod brute {
    pub fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            (v[m / 2 - 1] + v[m / 2]) / 2.0
        }
    }

    pub fn quantile(v: &[f64], q: f64) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let pos = q * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    }

    pub fn point(p: &[f64], y: &[f64]) -> [f64; 5] {
        let m = y.len() as f64;
        let se: Vec<f64> = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).collect();
        let ae: Vec<f64> = p.iter().zip(y).map(|(a, b)| (a - b).abs()).collect();
        let mse = se.iter().sum::<f64>() / m;
        [mse, ae.iter().sum::<f64>() / m, mse.sqrt(), median(ae), median(se)]
    }

    pub fn filtered(p: &[f64], y: &[f64]) -> Option<[f64; 3]> {
        let (q1, q3) = (quantile(y, 0.25), quantile(y, 0.75));
        let iqr = q3 - q1;
        let (lo, hi) = if iqr == 0.0 { (q1, q3) } else { (q1 - 1.5 * iqr, q3 + 1.5 * iqr) };
        let (kp, ky): (Vec<f64>, Vec<f64>) = p
            .iter()
            .zip(y)
            .filter(|(_, &t)| t != 0.0 && lo <= t && t <= hi)
            .map(|(a, b)| (*a, *b))
            .unzip();
        if ky.is_empty() {
            return None;
        }
        let [mse, mae, rmse, _, _] = point(&kp, &ky);
        Some([mse, mae, rmse])
    }

    pub fn relative_rmse(p: &[f64], y: &[f64], b: &[f64]) -> f64 {
        let model = point(p, y)[2];
        let naive = point(b, y)[2];
        if model == naive {
            1.0
        } else {
            model / naive
        }
    }

    pub fn win_rate(p: &[f64], y: &[f64], b: &[f64]) -> f64 {
        let mut wins = 0;
        for k in 0..y.len() {
            if (p[k] - y[k]).abs() < (b[k] - y[k]).abs() {
                wins += 1;
            }
        }
        wins as f64 / y.len() as f64
    }
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let date = chrono::NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    let close = |a: f64, b: f64| a == b || (a - b).abs() <= METRIC_TOLERANCE * b.abs().max(1.0);
    for _ in 0..METRIC_INSTANCES {
        let m = rng.random_range(1..=20);
        let grid = rng.random_bool(0.3);
        let draw = |rng: &mut ChaCha8Rng| {
            if grid {
                rng.random_range(0..5) as f64
            } else if rng.random_bool(0.1) {
                0.0
            } else {
                rng.random_range(-50.0..200.0)
            }
        };
        let y: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        let p: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        let records: Vec<ForecastRecord> = (0..m)
            .map(|k| ForecastRecord::new(date, 1, format!("r{k}"), p[k], y[k], b[k], Frequency::Daily))
            .collect();
        let [mse, mae, rmse, med_ae, med_se] = brute::point(&p, &y);
        let mut expected = vec![
            (Statistic::Mse, Some(mse)),
            (Statistic::Mae, Some(mae)),
            (Statistic::Rmse, Some(rmse)),
            (Statistic::MedAe, Some(med_ae)),
            (Statistic::MedSe, Some(med_se)),
            (Statistic::RelativeRmse, Some(brute::relative_rmse(&p, &y, &b))),
            (Statistic::WinRate, Some(brute::win_rate(&p, &y, &b))),
            (
                Statistic::MeanSignedError,
                Some(p.iter().zip(&y).map(|(a, t)| a - t).sum::<f64>() / m as f64),
            ),
        ];
        let f = brute::filtered(&p, &y);
        expected.push((Statistic::MseFiltered, f.map(|f| f[0])));
        expected.push((Statistic::MaeFiltered, f.map(|f| f[1])));
        expected.push((Statistic::RmseFiltered, f.map(|f| f[2])));
        for (stat, want) in expected {
            match (stat.evaluate(&records), want) {
                (Ok(got), Some(want)) => {
                    if !close(got, want) {
                        mismatches += 1;
                    }
                    if got.is_finite() && want.is_finite() {
                        worst = worst.max((got - want).abs() / want.abs().max(1.0));
                    }
                }
                (Err(epiroll::Error::EmptyAfterFiltering), None) => {}
                _ => mismatches += 1,
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{METRIC_INSTANCES} instances, {mismatches} mismatches, max error {worst:.2e}"),
    )
}

fn plan_oracle() -> Outcome {
    let mut checked = 0;
    for horizons in [vec![1, 2, 3, 4], vec![1, 7, 13], vec![13]] {
        for t in 113..=160 {
            let settings = PlanSettings {
                lookback: 12,
                cadence: 8,
                train_size: 100,
                horizons: horizons.clone(),
            };
            let plans = match plan_rounds(t, &settings) {
                Ok(p) => p,
                Err(e) => return outcome(false, format!("T={t}: {e}")),
            };
            let oracle = enumerate_plans(t, 12, 8, 100, &horizons);
            let same = plans.len() == oracle.len()
                && plans.iter().zip(&oracle).all(|(p, o)| {
                    p.train_window == o.window
                        && p.horizons.iter().zip(&o.horizons).all(|(hp, (h, tr, va, ev))| {
                            hp.horizon == *h && &hp.train_origins == tr && &hp.validation_origins == va && &hp.eval_origins == ev
                        })
                });
            if !same {
                return outcome(false, format!("T={t} horizons {horizons:?} differ"));
            }
            checked += 1;
        }
    }
    outcome(true, format!("{checked} (T, horizon set) cases"))
}

fn validation_rmse(model: &FittedModel, w: &Window) -> f64 {
    let mut se = 0.0;
    let mut count = 0;
    for s in &w.validation {
        let y = model.predict(s, &w.mixing).unwrap();
        se += y.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += y.len();
    }
    (se / count as f64).sqrt()
}

fn prior_efficacy() -> Outcome {
    let start = Instant::now();
    let config = TrainConfig {
        epochs: 800,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    let spec = ModelSpec::new(ModelKind::GraphLinear, 1);

    let weekday = weekday_panel(5, 120, 0.03, 6).unwrap();
    let tid_patches = PatchConfig {
        tid: Some(TidConfig::default()),
        ..PatchConfig::none()
    };
    let tid_gain = |lookback: usize| {
        let w = Window::new(&weekday, 0, 100, lookback, 1);
        let base = train(&spec, &w.context(), &config, &PatchConfig::none()).unwrap();
        let tid = train(&spec, &w.context(), &config, &tid_patches).unwrap();
        let (b, t) = (validation_rmse(&base, &w), validation_rmse(&tid, &w));
        (1.0 - t / b, b, t)
    };
    let (gain, base_rmse, tid_rmse) = tid_gain(WEEKDAY_LOOKBACK);
    // Reported only: with a full week of lags the base model already
    // captures the effect.
    let (gain_long, _, _) = tid_gain(12);

    let sir = sir_panel(5, 120, 0.03, 7).unwrap();
    let w = Window::new(&sir, 0, 100, 12, 1);
    let plain = train(&spec, &w.context(), &config, &PatchConfig::none()).unwrap();
    let plain_rmse = validation_rmse(&plain, &w);
    let mut best: Option<(f64, f64, f64)> = None;
    for lambda in DEFAULT_LAMBDA_GRID {
        let patches = PatchConfig {
            epi: Some(EpiConfig {
                lambda_epi: lambda,
                ..EpiConfig::new(EpiVariant::SirIncidence)
            }),
            ..PatchConfig::none()
        };
        let Ok(model) = train(&spec, &w.context(), &config, &patches) else {
            continue;
        };
        let loss = model.diagnostics.validation_loss;
        if best.is_none_or(|(_, l, _)| loss < l) {
            best = Some((lambda, loss, validation_rmse(&model, &w)));
        }
    }
    let elapsed = start.elapsed();
    let Some((lambda, _, epi_rmse)) = best else {
        return outcome(false, "every sir_incidence fit failed".into());
    };
    let worsening = epi_rmse / plain_rmse - 1.0;
    outcome(
        gain >= TID_MIN_GAIN && worsening <= EPI_MAX_LOSS && elapsed < EFFICACY_BUDGET,
        format!(
            "tid gain {:.1}% at L={WEEKDAY_LOOKBACK} ({base_rmse:.3} -> {tid_rmse:.3}), {:.1}% at L=12; sir_incidence lambda {lambda} change {:+.2}% ({plain_rmse:.3} -> {epi_rmse:.3}); {elapsed:.2?}",
            100.0 * gain,
            100.0 * gain_long,
            100.0 * worsening
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = bundled_config("run_graph_linear.json");
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        match run_benchmark(&cfg) {
            Ok(run) => write_outputs(&run, dir.path().join(name)).unwrap(),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let same = ["records.csv", "scoretable.json"].iter().all(|f| {
        fs::read(dir.path().join("a").join(f)).unwrap() == fs::read(dir.path().join("b").join(f)).unwrap()
    });
    outcome(same, "records.csv and scoretable.json compared byte for byte".into())
}

fn main() {
    let checks: [Check; 9] = [
        ("iqr_filter_calibration", filter_calibration),
        ("naive_fixed_point", naive_fixed_point),
        ("sir_conservation", sir_conservation),
        ("ngm_closed_form", ngm_closed_form),
        ("gradient_oracle", gradient_oracle),
        ("metric_oracle", metric_oracle),
        ("rolling_plan_oracle", plan_oracle),
        ("prior_efficacy", prior_efficacy),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let o = std::panic::catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked".into()));
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

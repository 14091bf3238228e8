//! `epiroll`: validate inputs, run rolling-origin benchmarks, exchange task
//! bundles with external forecasters, and render reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epiroll::engine::external::score_external;
use epiroll::engine::protocol::export_tasks;
use epiroll::engine::report::{render_text, write_report};
use epiroll::engine::{plan_rounds, read_score_table, run_with_data, write_outputs, RunConfig, RunData, ScoreSettings};
use epiroll::graph::load_adjacency;
use epiroll::outbreak::{annotate_rising, default_window, DEFAULT_ALPHA};
use epiroll::panel::{load_panel, load_population, Frequency};
use epiroll::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "epiroll", version, about = "Rolling-origin benchmark for spatiotemporal epidemic forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a panel and optional adjacency and population files.
    Ingest {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value = "daily")]
        frequency: Frequency,
        #[arg(long)]
        adjacency: Option<PathBuf>,
        #[arg(long)]
        population: Option<PathBuf>,
    },
    /// Detect rising intervals and write them as an annotation CSV.
    Annotate {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value = "daily")]
        frequency: Frequency,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark from a JSON configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configuration's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score forecasts produced by an external model.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "external")]
        model: String,
        /// Where to write the score table; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one task bundle per round for external forecasters.
    ExportTasks {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Render score tables as text and CSV.
    Report {
        /// `scoretable.json` files.
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_data(cfg: &RunConfig) -> Result<RunData> {
    RunData::load(&cfg.dataset, cfg.annotation_window, cfg.annotation_alpha)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            panel,
            frequency,
            adjacency,
            population,
        } => {
            let p = load_panel(&panel, frequency)?;
            println!(
                "panel {}: {} steps x {} regions, {} missing cells, {} .. {}",
                panel.display(),
                p.len(),
                p.num_regions(),
                p.missing_count(),
                p.dates()[0],
                p.dates()[p.len() - 1]
            );
            if let Some(path) = adjacency {
                let a = load_adjacency(&path, p.regions())?;
                println!("adjacency {}: {} x {}", path.display(), a.dim(), a.dim());
            }
            if let Some(path) = population {
                let v = load_population(&path, p.regions())?;
                println!("population {}: {} regions", path.display(), v.len());
            }
        }
        Command::Annotate {
            panel,
            frequency,
            window,
            alpha,
            out,
        } => {
            let p = load_panel(&panel, frequency)?;
            let set = annotate_rising(&p, window.unwrap_or_else(|| default_window(frequency)), alpha)?;
            set.write_csv(&out)?;
            println!("{} intervals written to {}", set.intervals.len(), out.display());
        }
        Command::Run { config, output_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let data = load_data(&cfg)?;
            let run = run_with_data(&cfg, &data)?;
            write_outputs(&run, &cfg.output_dir)?;
            println!(
                "{} records, {} failed fits, outputs in {}",
                run.records.len(),
                run.report.failed_fits,
                cfg.output_dir.display()
            );
        }
        Command::Score {
            config,
            records,
            model,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let data = load_data(&cfg)?;
            let plans = plan_rounds(data.panel.len(), &cfg.plan_settings())?;
            let settings = ScoreSettings {
                replicates: cfg.bootstrap_replicates,
                seed: cfg.seed,
                ..ScoreSettings::default()
            };
            let table = score_external(&records, &data.panel, &plans, &data.annotations, &settings, &model)?;
            let json = serde_json::to_string_pretty(&table).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            match out {
                Some(path) => std::fs::write(&path, json + "\n").map_err(|e| Error::Io { path, source: e })?,
                None => println!("{json}"),
            }
        }
        Command::ExportTasks { config, out, force } => {
            let cfg = RunConfig::load(&config)?;
            let data = load_data(&cfg)?;
            let settings = cfg.plan_settings();
            let plans = plan_rounds(data.panel.len(), &settings)?;
            let bundles = export_tasks(&data, &plans, settings.lookback, cfg.seed, &out, force)?;
            println!("{} bundles written to {}", bundles.len(), out.display());
        }
        Command::Report { tables, out } => {
            let tables = tables.iter().map(read_score_table).collect::<Result<Vec<_>>>()?;
            print!("{}", render_text(&tables));
            if let Some(dir) = out {
                write_report(&tables, dir)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

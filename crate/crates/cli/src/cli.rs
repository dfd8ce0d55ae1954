use std::ffi::OsString;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use casql_core::diversity::SamplingRegime;
use casql_core::executor::Limits;
use casql_core::schema::DifficultyTier;
use casql_core::search::IterationsMode;
use casql_core::voting::Strategy;
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, DiversityOptions, TaskFilter, Workload};
use crate::config::{BackendKind, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "casql", version, about = "Inference-time search for text-to-SQL")]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset root holding dev.json and dev_databases/.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub backend: Option<BackendKind>,
    /// Scenario file or trace directory for the scripted backend.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub n_samples: Option<usize>,
    #[arg(long, global = true)]
    pub crossover_p: Option<f64>,
    #[arg(long, global = true)]
    pub iterations_mode: Option<IterationsMode>,
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,
    /// Per-query execution timeout.
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    pub max_rows: Option<usize>,
    /// Concurrent refinement chains per task.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Tasks searched at once.
    #[arg(long, global = true)]
    pub task_workers: Option<usize>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Endpoint for the live backend.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Per-role sampling temperature, e.g. `critic=0.2`.
    #[arg(long = "temperature", value_name = "ROLE=T", global = true, value_parser = parse_role_temp)]
    pub role_temperatures: Vec<(String, f64)>,
    /// Replace prompts in written traces with a placeholder.
    #[arg(long, global = true)]
    pub redact: bool,
}

fn parse_role_temp(s: &str) -> Result<(String, f64), String> {
    let (role, t) = s.split_once('=').ok_or_else(|| format!("expected ROLE=T, got {s:?}"))?;
    let t: f64 = t.trim().parse().map_err(|e| format!("bad temperature in {s:?}: {e}"))?;
    Ok((role.trim().to_string(), t))
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset_root = Some(d.clone());
        }
        if let Some(b) = self.backend {
            cfg.backend.kind = b;
        }
        if let Some(s) = &self.scenario {
            cfg.backend.scenario = Some(s.clone());
            if self.backend.is_none() {
                cfg.backend.kind = BackendKind::Scripted;
            }
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.n_samples {
            cfg.search.n_samples = v;
        }
        if let Some(v) = self.crossover_p {
            cfg.search.crossover_p = v;
        }
        if let Some(v) = self.iterations_mode {
            cfg.search.iterations_mode = v;
        }
        if let Some(v) = self.strategy {
            cfg.search.strategy = v;
        }
        if let Some(v) = self.timeout_ms {
            cfg.search.limits.timeout = std::time::Duration::from_millis(v);
        }
        if let Some(v) = self.max_rows {
            cfg.search.limits.max_rows = v;
        }
        if let Some(v) = self.concurrency {
            cfg.search.concurrency = v;
        }
        if let Some(v) = self.task_workers {
            cfg.task_workers = v;
        }
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(v) = &self.endpoint {
            cfg.backend.http.endpoint = v.clone();
        }
        for (role, t) in &self.role_temperatures {
            cfg.temperatures.insert(role.clone(), *t);
        }
        if self.redact {
            cfg.redact_prompts = true;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search every selected task and write predictions.
    Run {
        /// Predictions file (JSON lines).
        #[arg(long, short)]
        out: PathBuf,
        /// Directory for per-task traces.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Only these question ids.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<i64>,
        #[arg(long)]
        db_id: Option<String>,
        #[arg(long, value_delimiter = ',')]
        tier: Vec<DifficultyTier>,
        /// At most this many tasks.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score a predictions file against the gold queries.
    Eval {
        #[arg(long, short)]
        predictions: PathBuf,
        /// Aggregate metrics as JSON.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Per-task records as CSV.
        #[arg(long)]
        records_out: Option<PathBuf>,
    },
    /// Compare voting strategies over stored buffers.
    Ablate {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Measure subset diversity under each sampling regime.
    Diversity {
        /// Number of generated tasks (ignored with --per-tier).
        #[arg(long, default_value_t = 50)]
        tasks: usize,
        /// Sample this many dataset tasks per tier instead of generated tasks.
        #[arg(long)]
        per_tier: Option<usize>,
        /// Subsets requested per task.
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.7, 1.0])]
        temperatures: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        regimes: Vec<SamplingRegime>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Write a small demo dataset.
    Demo {
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .try_init();
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn limits(cfg: &RunConfig) -> Limits {
    cfg.search.limits
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Run {
            out,
            traces,
            ids,
            db_id,
            tier,
            limit,
        } => {
            let filter = TaskFilter {
                ids,
                db_id,
                tiers: tier,
                limit,
            };
            let summary = commands::cmd_run(&cfg, &filter, &out, traces.as_deref())?;
            println!(
                "{} task(s): {} answered, {} without a query",
                summary.tasks, summary.answered, summary.failed
            );
        }
        Command::Eval {
            predictions,
            metrics_out,
            records_out,
        } => {
            let outcome = commands::cmd_eval(&predictions, cfg.dataset_root()?, limits(&cfg))?;
            print!("{}", outcome.report.render_table());
            if let Some(p) = metrics_out {
                commands::write_metrics(&outcome.report, &p)?;
            }
            if let Some(p) = records_out {
                commands::write_records_csv(&outcome.records, &p)?;
            }
        }
        Command::Ablate {
            traces,
            strategies,
            csv_out,
        } => {
            let strategies = if strategies.is_empty() {
                Strategy::ALL.to_vec()
            } else {
                strategies
            };
            let table = commands::cmd_ablate(&traces, cfg.dataset_root()?, &strategies, limits(&cfg))?;
            print!("{}", table.render_table());
            if let Some(p) = csv_out {
                write_text(&p, &table.to_csv())?;
            }
        }
        Command::Diversity {
            tasks,
            per_tier,
            n,
            temperatures,
            regimes,
            csv_out,
        } => {
            let opts = DiversityOptions {
                workload: match per_tier {
                    Some(k) => Workload::Dataset { per_tier: k },
                    None => Workload::Synthetic { tasks },
                },
                n,
                temperatures,
                regimes: if regimes.is_empty() {
                    SamplingRegime::ALL.to_vec()
                } else {
                    regimes
                },
            };
            let report = commands::cmd_diversity(&cfg, &opts)?;
            print!("{}", report.render_table());
            if let Some(p) = csv_out {
                write_text(&p, &commands::diversity_csv(&report))?;
            }
        }
        Command::Demo { out } => {
            casql_core::fixtures::write_demo_dataset(&out).map_err(|e| CliError::io(&out, e))?;
            println!("demo dataset written to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

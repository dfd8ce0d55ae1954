use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use casql_core::diversity::{
    run_comparison, sample_per_tier, synthetic_workload, ComparisonConfig, ComparisonReport, SamplingRegime,
};
use casql_core::eval::{aggregate_report, evaluate_task, load_bird_dev, pct, DevSet, EvalRecord, MetricsReport};
use casql_core::executor::Limits;
use casql_core::schema::{load_schema, DifficultyTier, FullSchema, Task};
use casql_core::search::{run_task, SolutionReport};
use casql_core::util::mix;
use casql_core::voting::{select, Strategy};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::trace::{self, TraceRecord, REDACTED};

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: i64,
    pub sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct TaskFilter {
    pub ids: Vec<i64>,
    pub db_id: Option<String>,
    pub tiers: Vec<DifficultyTier>,
    pub limit: Option<usize>,
}

impl TaskFilter {
    pub fn apply(&self, tasks: &[Task]) -> Vec<Task> {
        let keep = |t: &&Task| {
            (self.ids.is_empty() || self.ids.contains(&t.question_id))
                && self.db_id.as_ref().is_none_or(|d| &t.db_id == d)
                && (self.tiers.is_empty() || t.difficulty_tier.is_some_and(|x| self.tiers.contains(&x)))
        };
        let selected = tasks.iter().filter(keep).cloned();
        match self.limit {
            Some(n) => selected.take(n).collect(),
            None => selected.collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub tasks: usize,
    pub answered: usize,
    pub failed: usize,
}

fn load_dev(root: &Path) -> Result<DevSet, CliError> {
    let dev = load_bird_dev(root).map_err(|e| CliError::Dataset(e.to_string()))?;
    if dev.skipped > 0 {
        tracing::warn!(skipped = dev.skipped, "malformed dev.json records were skipped");
    }
    Ok(dev)
}

fn load_schemas<'a>(
    dev: &DevSet,
    tasks: impl IntoIterator<Item = &'a Task>,
) -> Result<HashMap<String, FullSchema>, CliError> {
    let mut schemas = HashMap::new();
    for t in tasks {
        if !schemas.contains_key(&t.db_id) {
            let schema = load_schema(&dev.db_path(&t.db_id)).map_err(|e| CliError::Dataset(e.to_string()))?;
            schemas.insert(t.db_id.clone(), schema);
        }
    }
    Ok(schemas)
}

/// True when every backend call of the report failed inside the backend.
fn backend_dead(report: &SolutionReport) -> bool {
    let calls = report.transcript.calls();
    !calls.is_empty()
        && calls.iter().all(|c| {
            c.error
                .as_deref()
                .is_some_and(|e| e.starts_with("backend failure") || e.starts_with("no scripted response"))
        })
}

/// Searches every selected task, writes one prediction line per task in
/// dataset order, and one trace file per task when `trace_dir` is given.
pub fn cmd_run(
    cfg: &RunConfig,
    filter: &TaskFilter,
    predictions: &Path,
    trace_dir: Option<&Path>,
) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let dev = load_dev(cfg.dataset_root()?)?;
    let tasks = filter.apply(&dev.tasks);
    let schemas = load_schemas(&dev, &tasks)?;
    let gateway = cfg.gateway()?;

    let slots: Vec<Mutex<Option<SolutionReport>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.task_workers.min(tasks.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let seed = mix(cfg.seed, task.question_id as u64);
                tracing::info!(question_id = task.question_id, "searching");
                let report = run_task(
                    task,
                    &schemas[&task.db_id],
                    &dev.db_path(&task.db_id),
                    &cfg.search,
                    &gateway,
                    seed,
                );
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(report);
            });
        }
    });

    let mut summary = RunSummary::default();
    let mut lines = String::new();
    let mut dead = 0;
    for (task, slot) in tasks.iter().zip(slots) {
        let mut report = slot
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .expect("every task ran");
        summary.tasks += 1;
        if report.chosen_sql.is_some() {
            summary.answered += 1;
        } else {
            summary.failed += 1;
        }
        if backend_dead(&report) {
            dead += 1;
        }
        let prediction = Prediction {
            question_id: task.question_id,
            sql: report.chosen_sql.clone(),
            failure: report.failure.clone(),
        };
        lines.push_str(&serde_json::to_string(&prediction).expect("predictions serialize"));
        lines.push('\n');
        if let Some(dir) = trace_dir {
            if cfg.redact_prompts {
                report.transcript.redact_prompts(REDACTED);
            }
            trace::write(
                dir,
                &TraceRecord {
                    question_id: task.question_id,
                    db_id: task.db_id.clone(),
                    tier: task.difficulty_tier,
                    seed: mix(cfg.seed, task.question_id as u64),
                    redacted: cfg.redact_prompts,
                    report,
                },
            )?;
        }
    }
    if let Some(parent) = predictions.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(predictions, lines).map_err(|e| CliError::io(predictions, e))?;
    if dead > 0 {
        return Err(CliError::Backend(format!(
            "{dead} of {} task(s) got no usable response from the backend",
            summary.tasks
        )));
    }
    Ok(summary)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub records: Vec<EvalRecord>,
}

/// Scores a predictions file against the dataset's gold queries. Dataset
/// tasks without a prediction are ignored.
pub fn cmd_eval(predictions: &Path, dataset_root: &Path, limits: Limits) -> Result<EvalOutcome, CliError> {
    let preds = read_predictions(predictions)?;
    let dev = load_dev(dataset_root)?;
    let by_id: HashMap<i64, &Task> = dev.tasks.iter().map(|t| (t.question_id, t)).collect();
    let mut records = Vec::with_capacity(preds.len());
    for p in &preds {
        let task = by_id
            .get(&p.question_id)
            .ok_or(CliError::UnknownQuestionId(p.question_id))?;
        records.push(evaluate_task(task, p.sql.as_deref(), &dev.db_path(&task.db_id), limits));
    }
    Ok(EvalOutcome {
        report: aggregate_report(&records),
        records,
    })
}

pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).expect("metrics serialize");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn write_records_csv(records: &[EvalRecord], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let io = |e: csv::Error| CliError::io(path, e.into());
    w.write_record([
        "question_id",
        "db_id",
        "tier",
        "ex",
        "soft_f1",
        "valid",
        "predicted_sql",
        "gold_sql",
        "note",
    ])
    .map_err(io)?;
    for r in records {
        w.write_record([
            r.question_id.to_string(),
            r.db_id.clone(),
            r.tier.map(|t| t.as_str().to_string()).unwrap_or_default(),
            u8::from(r.ex).to_string(),
            format!("{:.6}", r.soft_f1),
            u8::from(r.valid).to_string(),
            r.predicted_sql.clone().unwrap_or_default(),
            r.gold_sql.clone(),
            r.note.clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Execution accuracy per tier under each voting strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub strategies: Vec<Strategy>,
    /// Tier name to one EX percentage per strategy.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
    /// Per task, whether each strategy's pick was correct.
    pub per_task: Vec<(i64, Vec<bool>)>,
}

impl AblationTable {
    pub fn column(&self, strategy: Strategy) -> Option<Vec<Option<f64>>> {
        let i = self.strategies.iter().position(|s| *s == strategy)?;
        Some(self.rows.iter().map(|(_, v)| v[i]).collect())
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<12}", "tier");
        for s in &self.strategies {
            out.push_str(&format!(" {:>18}", s.as_str()));
        }
        out.push('\n');
        for (tier, values) in &self.rows {
            out.push_str(&format!("{tier:<12}"));
            for v in values {
                out.push_str(&format!(" {:>18}", pct(*v)));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["tier".to_string()];
        header.extend(self.strategies.iter().map(|s| s.as_str().to_string()));
        w.write_record(&header).expect("in-memory csv");
        for (tier, values) in &self.rows {
            let mut row = vec![tier.clone()];
            row.extend(values.iter().map(|v| pct(*v)));
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}

/// Re-selects from stored buffers under each strategy and scores the picks.
/// No model calls are made.
pub fn cmd_ablate(
    trace_dir: &Path,
    dataset_root: &Path,
    strategies: &[Strategy],
    limits: Limits,
) -> Result<AblationTable, CliError> {
    let traces = trace::read_dir(trace_dir)?;
    let dev = load_dev(dataset_root)?;
    let by_id: HashMap<i64, &Task> = dev.tasks.iter().map(|t| (t.question_id, t)).collect();

    let mut per_strategy: Vec<Vec<EvalRecord>> = vec![Vec::new(); strategies.len()];
    let mut per_task = Vec::new();
    for tr in &traces {
        let task = by_id
            .get(&tr.question_id)
            .ok_or(CliError::UnknownQuestionId(tr.question_id))?;
        let db = dev.db_path(&task.db_id);
        let mut hits = Vec::with_capacity(strategies.len());
        for (i, s) in strategies.iter().enumerate() {
            let sql = select(&tr.report.buffer, *s).ok().map(|sel| sel.sql);
            let record = evaluate_task(task, sql.as_deref(), &db, limits);
            hits.push(record.ex);
            per_strategy[i].push(record);
        }
        per_task.push((tr.question_id, hits));
    }
    let reports: Vec<MetricsReport> = per_strategy.iter().map(|r| aggregate_report(r)).collect();
    let tiers = ["simple", "moderate", "challenging", "overall"];
    let rows = tiers
        .iter()
        .map(|t| {
            let values = reports.iter().map(|r| r.tier(t).and_then(|m| m.ex)).collect();
            (t.to_string(), values)
        })
        .collect();
    Ok(AblationTable {
        strategies: strategies.to_vec(),
        rows,
        per_task,
    })
}

/// Where the diversity comparison takes its tasks from.
#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// Generated tasks over generated schemas.
    Synthetic { tasks: usize },
    /// Up to `per_tier` dataset tasks from each difficulty tier.
    Dataset { per_tier: usize },
}

#[derive(Debug, Clone)]
pub struct DiversityOptions {
    pub workload: Workload,
    pub n: usize,
    pub temperatures: Vec<f64>,
    pub regimes: Vec<SamplingRegime>,
}

impl Default for DiversityOptions {
    fn default() -> Self {
        Self {
            workload: Workload::Synthetic { tasks: 50 },
            n: 20,
            temperatures: vec![0.0, 0.3, 0.7, 1.0],
            regimes: SamplingRegime::ALL.to_vec(),
        }
    }
}

pub fn cmd_diversity(cfg: &RunConfig, opts: &DiversityOptions) -> Result<ComparisonReport, CliError> {
    cfg.validate()?;
    if opts.n < 2 {
        return Err(CliError::Usage("the diversity comparison needs N of at least 2".into()));
    }
    if let Some(t) = opts.temperatures.iter().find(|t| !(0.0..=2.0).contains(*t)) {
        return Err(CliError::Usage(format!("temperature {t} outside [0, 2]")));
    }
    let gateway = cfg.gateway()?;
    let workload: Vec<(Task, FullSchema)> = match opts.workload {
        Workload::Synthetic { tasks } => synthetic_workload(tasks, cfg.seed),
        Workload::Dataset { per_tier } => {
            let dev = load_dev(cfg.dataset_root()?)?;
            let tasks = sample_per_tier(&dev.tasks, per_tier, cfg.seed);
            let schemas = load_schemas(&dev, &tasks)?;
            tasks
                .into_iter()
                .map(|t| {
                    let s = schemas[&t.db_id].clone();
                    (t, s)
                })
                .collect()
        }
    };
    let comparison = ComparisonConfig {
        n: opts.n,
        temperatures: opts.temperatures.clone(),
        regimes: opts.regimes.clone(),
        seed: cfg.seed,
        workers: cfg.task_workers.max(cfg.search.concurrency),
    };
    run_comparison(&workload, &comparison, &gateway).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn diversity_csv(report: &ComparisonReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["regime", "temperature", "mean_uniqueness", "unique_pct", "tasks", "n"])
        .expect("in-memory csv");
    for c in &report.cells {
        w.write_record([
            c.regime.as_str().to_string(),
            format!("{}", c.temperature),
            format!("{:.6}", c.mean_ratio),
            format!("{:.2}", 100.0 * c.mean_ratio),
            c.tasks.to_string(),
            c.n.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

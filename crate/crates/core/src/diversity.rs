//! How many distinct queries a sampling regime produces.
//!
//! Three regimes are compared on the same tasks and call seeds: one query
//! per distinct seed subset, N queries from the merged superset rendered in
//! a fresh random order each call, and N queries from the superset rendered
//! in a fixed order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::llm::{Gateway, Transcript};
use crate::schema::{
    render_schema_block, ColumnDef, DifficultyTier, FullSchema, Ordering, SchemaSubset, TableDef, Task,
};
use crate::sqltext::canonicalize_sql;
use crate::util::{mix_all, stable_hash};

const ORDER_TAG: u64 = 0x0dd3;
const SUBSET_TAG: u64 = 0x5b5e;
const QUERY_TAG: u64 = 0x9e11;
/// Subset proposals tried per wanted unique subset.
pub const PROPOSALS_PER_SUBSET: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiversityError {
    #[error("uniqueness of an empty query list is undefined")]
    EmptyPool,
    #[error("only {found} unique subsets found, {wanted} needed")]
    InsufficientSubsets { found: usize, wanted: usize },
    #[error("N must be at least 2")]
    PoolTooSmall,
}

/// |distinct canonical queries| / |queries|
pub fn uniqueness_ratio<S: AsRef<str>>(queries: &[S]) -> Result<f64, DiversityError> {
    if queries.is_empty() {
        return Err(DiversityError::EmptyPool);
    }
    Ok(distinct_queries(queries) as f64 / queries.len() as f64)
}

fn distinct_queries<S: AsRef<str>>(queries: &[S]) -> usize {
    queries
        .iter()
        .map(|q| canonicalize_sql(q.as_ref()))
        .collect::<BTreeSet<String>>()
        .len()
}

/// Mean of per-task `distinct / total` ratios. When every task has the same
/// total the mean is taken over integer counts, so equal ratios average to
/// exactly themselves.
fn mean_ratio(counts: &[(usize, usize)]) -> f64 {
    let total = counts[0].1;
    if counts.iter().all(|c| c.1 == total) {
        let distinct: usize = counts.iter().map(|c| c.0).sum();
        distinct as f64 / (total * counts.len()) as f64
    } else {
        counts.iter().map(|&(d, t)| d as f64 / t as f64).sum::<f64>() / counts.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingRegime {
    PoolOfSeeds,
    SingleSeedRandomOrder,
    SingleSeedFixedOrder,
}

impl SamplingRegime {
    pub const ALL: [SamplingRegime; 3] = [
        Self::PoolOfSeeds,
        Self::SingleSeedRandomOrder,
        Self::SingleSeedFixedOrder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PoolOfSeeds => "pool_of_seeds",
            Self::SingleSeedRandomOrder => "single_seed_random_order",
            Self::SingleSeedFixedOrder => "single_seed_fixed_order",
        }
    }
}

impl fmt::Display for SamplingRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown sampling regime {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityCell {
    pub regime: SamplingRegime,
    pub temperature: f64,
    /// Mean uniqueness ratio over tasks, in (0, 1].
    pub mean_ratio: f64,
    pub tasks: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cells: Vec<DiversityCell>,
    /// Tasks dropped for lack of N unique subsets.
    pub skipped: usize,
}

impl ComparisonReport {
    pub fn cell(&self, regime: SamplingRegime, temperature: f64) -> Option<&DiversityCell> {
        self.cells
            .iter()
            .find(|c| c.regime == regime && c.temperature == temperature)
    }

    /// Regimes as rows, temperatures as columns, percentages with two decimals.
    pub fn render_table(&self) -> String {
        let mut temps: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !temps.contains(&c.temperature) {
                temps.push(c.temperature);
            }
        }
        let mut regimes: Vec<SamplingRegime> = Vec::new();
        for c in &self.cells {
            if !regimes.contains(&c.regime) {
                regimes.push(c.regime);
            }
        }
        let mut out = format!("{:<26}", "regime \\ temperature");
        for t in &temps {
            out.push_str(&format!(" {:>8}", format!("{t:.1}")));
        }
        out.push('\n');
        for r in regimes {
            out.push_str(&format!("{:<26}", r.as_str()));
            for t in &temps {
                let v = self
                    .cell(r, *t)
                    .map_or_else(|| "-".to_string(), |c| format!("{:.2}", 100.0 * c.mean_ratio));
                out.push_str(&format!(" {v:>8}"));
            }
            out.push('\n');
        }
        if self.skipped > 0 {
            out.push_str(&format!("tasks skipped (too few unique subsets): {}\n", self.skipped));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub n: usize,
    pub temperatures: Vec<f64>,
    pub regimes: Vec<SamplingRegime>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            n: 20,
            temperatures: vec![0.0, 0.3, 0.7, 1.0],
            regimes: SamplingRegime::ALL.to_vec(),
            seed: 0,
            workers: 4,
        }
    }
}

/// Per-task (distinct, total) query counts keyed by (temperature index, regime).
type TaskRatios = BTreeMap<(usize, SamplingRegime), (usize, usize)>;

/// Collects `n` unique subsets for a task. The same subsets are reused for
/// every temperature.
pub fn unique_subsets(
    task: &Task,
    schema: &FullSchema,
    n: usize,
    gateway: &Gateway,
    seed: u64,
) -> Result<Vec<SchemaSubset>, DiversityError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let mut log = Transcript::default();
    for k in 0..n * PROPOSALS_PER_SUBSET {
        if out.len() == n {
            break;
        }
        let s = mix_all(&[seed, SUBSET_TAG, k as u64]);
        if let Ok(subset) = gateway.propose_subset(task, schema, s, &mut log) {
            if seen.insert(subset.fingerprint()) {
                out.push(subset);
            }
        }
    }
    if out.len() < n {
        return Err(DiversityError::InsufficientSubsets {
            found: out.len(),
            wanted: n,
        });
    }
    Ok(out)
}

fn task_ratios(
    task: &Task,
    schema: &FullSchema,
    cfg: &ComparisonConfig,
    gateway: &Gateway,
) -> Result<TaskRatios, DiversityError> {
    let task_seed = mix_all(&[
        cfg.seed,
        stable_hash(&task.question_id.to_le_bytes()),
        stable_hash(task.db_id.as_bytes()),
    ]);
    let subsets = unique_subsets(task, schema, cfg.n, gateway, task_seed)?;
    let superset = subsets.iter().fold(SchemaSubset::default(), |acc, s| acc.union(s));
    let render = |subset: &SchemaSubset, ordering| {
        render_schema_block(subset, schema, ordering, gateway.render_options()).expect("subsets come from the schema")
    };
    let fixed_super = render(&superset, Ordering::Fixed);

    let mut out = TaskRatios::new();
    let mut log = Transcript::default();
    for (ti, &temperature) in cfg.temperatures.iter().enumerate() {
        for &regime in &cfg.regimes {
            let mut queries = Vec::with_capacity(cfg.n);
            for (i, subset) in subsets.iter().enumerate() {
                // Shared by every regime so that only the prompt differs.
                let call_seed = mix_all(&[task_seed, QUERY_TAG, ti as u64, i as u64]);
                let block = match regime {
                    SamplingRegime::PoolOfSeeds => render(subset, Ordering::Fixed),
                    SamplingRegime::SingleSeedRandomOrder => {
                        render(&superset, Ordering::SeededRandom(mix_all(&[call_seed, ORDER_TAG])))
                    }
                    SamplingRegime::SingleSeedFixedOrder => fixed_super.clone(),
                };
                match gateway.generate_query_from_block(task, block, Some(temperature), call_seed, &mut log) {
                    Ok(q) => queries.push(q),
                    Err(e) => tracing::debug!(question_id = task.question_id, %regime, "generation failed: {e}"),
                }
            }
            if !queries.is_empty() {
                out.insert((ti, regime), (distinct_queries(&queries), queries.len()));
            }
        }
    }
    Ok(out)
}

/// Runs every task under every (temperature, regime) cell and averages the
/// per-task uniqueness ratios.
pub fn run_comparison(
    tasks: &[(Task, FullSchema)],
    cfg: &ComparisonConfig,
    gateway: &Gateway,
) -> Result<ComparisonReport, DiversityError> {
    if cfg.n < 2 {
        return Err(DiversityError::PoolTooSmall);
    }
    let results: Vec<Mutex<Option<Result<TaskRatios, DiversityError>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                let Some((task, schema)) = tasks.get(i) else { break };
                let r = task_ratios(task, schema, cfg, gateway);
                *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });

    let mut skipped = 0;
    let mut counts: BTreeMap<(usize, SamplingRegime), Vec<(usize, usize)>> = BTreeMap::new();
    for slot in results {
        match slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
            Some(Ok(ratios)) => {
                for (k, v) in ratios {
                    counts.entry(k).or_default().push(v);
                }
            }
            Some(Err(DiversityError::InsufficientSubsets { .. })) => skipped += 1,
            Some(Err(e)) => return Err(e),
            None => unreachable!("every task ran"),
        }
    }
    let mut cells = Vec::new();
    for (ti, &temperature) in cfg.temperatures.iter().enumerate() {
        for &regime in &cfg.regimes {
            if let Some(c) = counts.get(&(ti, regime)) {
                cells.push(DiversityCell {
                    regime,
                    temperature,
                    mean_ratio: mean_ratio(c),
                    tasks: c.len(),
                    n: cfg.n,
                });
            }
        }
    }
    Ok(ComparisonReport { cells, skipped })
}

/// Up to `per_tier` tasks from each tier, drawn with a fixed seed. Tasks
/// without a tier are never drawn.
pub fn sample_per_tier(tasks: &[Task], per_tier: usize, seed: u64) -> Vec<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for tier in DifficultyTier::ALL {
        let mut pool: Vec<&Task> = tasks.iter().filter(|t| t.difficulty_tier == Some(tier)).collect();
        pool.shuffle(&mut rng);
        out.extend(pool.into_iter().take(per_tier).cloned());
    }
    out
}

/// Random tasks over random schemas of 2 to 4 tables with 3 to 6 columns
/// each, for offline runs of the comparison.
pub fn synthetic_workload(count: usize, seed: u64) -> Vec<(Task, FullSchema)> {
    const TYPES: [&str; 4] = ["INTEGER", "TEXT", "REAL", "DATE"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let db_id = format!("synthetic_{i}");
            let tables: Vec<TableDef> = (0..rng.random_range(2..=4))
                .map(|t| TableDef {
                    name: format!("table_{t}"),
                    columns: (0..rng.random_range(3..=6))
                        .map(|c| ColumnDef {
                            name: format!("col_{t}_{c}"),
                            datatype: TYPES[rng.random_range(0..TYPES.len())].to_string(),
                            example_values: (0..3).map(|v| format!("v{}", v + c)).collect(),
                        })
                        .collect(),
                })
                .collect();
            let schema = FullSchema::new(db_id.clone(), tables, vec![]).expect("generated names are unique");
            let task = Task {
                question_id: i as i64,
                db_id,
                question: format!(
                    "Synthetic question {i}: which rows match condition {}?",
                    rng.random::<u32>()
                ),
                hint: String::new(),
                gold_sql: None,
                difficulty_tier: Some(DifficultyTier::ALL[i % 3]),
            };
            (task, schema)
        })
        .collect()
}

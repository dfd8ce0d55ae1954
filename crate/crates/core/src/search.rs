//! Difficulty-scaled search over candidate queries for one task.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evolution::{evolve_pool, seed_pool, SeedPool, DEFAULT_ATTEMPT_FACTOR};
use crate::executor::{output_key_for, render_preview, Limits, Sandbox, Value};
use crate::llm::{Critique, Gateway, Role, Transcript};
use crate::schema::{Fingerprint, FullSchema, SchemaSubset, Task};
use crate::util::{mix_all, stable_hash};
use crate::voting::{self, Strategy, VoteTally};

const DIFFICULTY_TAG: u64 = 0xd1ff;
const POOL_TAG: u64 = 0x9001;
const EVOLVE_TAG: u64 = 0xe701;

/// Maximum refinement depth for difficulty `c`.
pub fn depth_limit(c: u32) -> u32 {
    c / 2 + 1
}

/// How many outer iterations a difficulty score buys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationsMode {
    /// `C` iterations.
    #[default]
    Prose,
    /// `C + 1` iterations, as the loop `while C >= 0` counts.
    Alg1,
}

impl IterationsMode {
    pub fn iterations(self, c: u32) -> u32 {
        match self {
            Self::Prose => c,
            Self::Alg1 => c + 1,
        }
    }
}

impl std::str::FromStr for IterationsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prose" => Ok(Self::Prose),
            "alg1" => Ok(Self::Alg1),
            other => Err(format!("unknown iterations mode {other:?} (expected prose or alg1)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_samples: usize,
    pub crossover_p: f64,
    pub iterations_mode: IterationsMode,
    pub strategy: Strategy,
    pub limits: Limits,
    /// Refinement chains run at once within an iteration.
    pub concurrency: usize,
    /// Difficulty samples per task, aggregated by median.
    pub difficulty_samples: usize,
    /// Rows shown to the critic and kept on buffer entries.
    pub preview_rows: usize,
    pub evolution_attempt_factor: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_samples: 20,
            crossover_p: 0.5,
            iterations_mode: IterationsMode::Prose,
            strategy: Strategy::SumOfRewards,
            limits: Limits::default(),
            concurrency: 4,
            difficulty_samples: 1,
            preview_rows: 20,
            evolution_attempt_factor: DEFAULT_ATTEMPT_FACTOR,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_samples == 0 {
            return Err("n_samples must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_p) {
            return Err(format!("crossover_p {} outside [0, 1]", self.crossover_p));
        }
        if self.concurrency == 0 {
            return Err("concurrency must be at least 1".into());
        }
        if self.difficulty_samples == 0 {
            return Err("difficulty_samples must be at least 1".into());
        }
        if self.limits.max_rows == 0 {
            return Err("max_rows must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    SeedSubset,
    RefinedCandidate { sql: String },
}

/// A unit of work in a refinement chain. `subset` is the seed subset the
/// chain started from.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementItem {
    pub subset: SchemaSubset,
    pub payload: Payload,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub candidate: String,
    pub reward: f64,
    pub output: crate::executor::OutputKey,
    pub raw_rows: Vec<Vec<Value>>,
    pub critique: Critique,
    /// `<iteration>/<seed fingerprint>`.
    pub chain_id: String,
    pub iteration: u32,
    pub depth: u32,
}

/// What happened at one depth of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    /// Why the chain ended here, if it did so early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub chain_id: String,
    pub iteration: u32,
    pub seed_fingerprint: Fingerprint,
    pub steps: Vec<StepTrace>,
}

/// Everything a chain step needs besides the item itself.
pub struct ChainContext<'a> {
    pub task: &'a Task,
    pub schema: &'a FullSchema,
    pub gateway: &'a Gateway,
    pub sandbox: &'a Sandbox,
    pub depth_limit: u32,
    pub preview_rows: usize,
    pub chain_seed: u64,
    pub chain_id: String,
    pub iteration: u32,
}

impl ChainContext<'_> {
    fn seed(&self, depth: u32, role: Role) -> u64 {
        mix_all(&[self.chain_seed, u64::from(depth), role as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub entry: Option<BufferEntry>,
    pub next: Option<RefinementItem>,
    pub trace: StepTrace,
}

/// Generates (for seed items), executes, critiques and optionally mutates.
/// Failures end the chain and are recorded in the trace note.
pub fn refine_step(item: RefinementItem, ctx: &ChainContext<'_>, log: &mut Transcript) -> StepOutcome {
    let depth = item.depth;
    let end = |sql: Option<String>, note: String| StepOutcome {
        entry: None,
        next: None,
        trace: StepTrace {
            depth,
            sql,
            reward: None,
            note: Some(note),
        },
    };

    let sql = match item.payload {
        Payload::SeedSubset => {
            match ctx
                .gateway
                .generate_query(ctx.task, ctx.schema, &item.subset, ctx.seed(depth, Role::GenQuery), log)
            {
                Ok(sql) => sql,
                Err(e) => return end(None, format!("generation failed: {e}")),
            }
        }
        Payload::RefinedCandidate { sql } => sql,
    };

    let result = ctx.sandbox.execute(&sql);
    if let Some(err) = &result.error {
        return end(Some(sql), format!("execution failed: {err}"));
    }
    let preview = render_preview(&result, ctx.preview_rows);
    let critique = match ctx.gateway.critique(
        ctx.task,
        ctx.schema,
        &item.subset,
        &sql,
        &preview,
        ctx.seed(depth, Role::Critic),
        log,
    ) {
        Ok(c) => c,
        Err(e) => return end(Some(sql), format!("critique failed: {e}")),
    };
    let reward = match voting::reward(critique.score, critique.mutation_temperature, critique.confidence) {
        Ok(r) => r,
        Err(e) => return end(Some(sql), e.to_string()),
    };
    let output = output_key_for(&sql, &result).expect("result has no error");

    let mut note = None;
    let next = if critique.wants_changes() && depth < ctx.depth_limit {
        match ctx.gateway.mutate_query(
            ctx.task,
            ctx.schema,
            &item.subset,
            &sql,
            &critique,
            ctx.seed(depth, Role::Mutate),
            log,
        ) {
            Ok(revised) => Some(RefinementItem {
                subset: item.subset.clone(),
                payload: Payload::RefinedCandidate { sql: revised },
                depth: depth + 1,
            }),
            Err(e) => {
                note = Some(format!("mutation failed: {e}"));
                None
            }
        }
    } else {
        None
    };

    let entry = BufferEntry {
        candidate: sql.clone(),
        reward,
        output,
        raw_rows: result.rows.iter().take(ctx.preview_rows).cloned().collect(),
        critique,
        chain_id: ctx.chain_id.clone(),
        iteration: ctx.iteration,
        depth,
    };
    StepOutcome {
        entry: Some(entry),
        next,
        trace: StepTrace {
            depth,
            sql: Some(sql),
            reward: Some(reward),
            note,
        },
    }
}

/// Runs one chain from a seed subset until it stops.
pub fn run_chain(
    subset: &SchemaSubset,
    ctx: &ChainContext<'_>,
    log: &mut Transcript,
) -> (Vec<BufferEntry>, ChainTrace) {
    let mut entries = Vec::new();
    let mut trace = ChainTrace {
        chain_id: ctx.chain_id.clone(),
        iteration: ctx.iteration,
        seed_fingerprint: subset.fingerprint(),
        steps: Vec::new(),
    };
    let mut item = Some(RefinementItem {
        subset: subset.clone(),
        payload: Payload::SeedSubset,
        depth: 0,
    });
    while let Some(current) = item.take() {
        let outcome = refine_step(current, ctx, log);
        entries.extend(outcome.entry);
        trace.steps.push(outcome.trace);
        item = outcome.next;
    }
    (entries, trace)
}

/// Result of searching one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub question_id: i64,
    pub db_id: String,
    pub chosen_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub difficulty: u32,
    /// True when no difficulty response could be parsed.
    pub difficulty_fallback: bool,
    pub iterations: u32,
    pub depth_limit: u32,
    /// Pool member fingerprints at the start of each iteration.
    pub pools: Vec<Vec<Fingerprint>>,
    pub evolution_notes: Vec<String>,
    pub buffer: Vec<BufferEntry>,
    pub chains: Vec<ChainTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tally: Option<VoteTally>,
    pub call_counts: BTreeMap<Role, usize>,
    pub transcript: Transcript,
    pub wall_time_ms: u64,
}

impl SolutionReport {
    /// The report with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_ms: 0,
            ..self.clone()
        }
    }
}

struct ChainJob<'a> {
    subset: &'a SchemaSubset,
    chain_seed: u64,
    chain_id: String,
}

type ChainResult = (Vec<BufferEntry>, ChainTrace, Transcript);

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    task: &Task,
    schema: &FullSchema,
    db_path: &Path,
    cfg: &SearchConfig,
    gateway: &Gateway,
    jobs: &[ChainJob<'_>],
    iteration: u32,
    limit: u32,
) -> Vec<ChainResult> {
    let slots: Vec<Mutex<Option<ChainResult>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.concurrency.min(jobs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let sandbox = Sandbox::open(db_path, cfg.limits);
                loop {
                    let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    let ctx = ChainContext {
                        task,
                        schema,
                        gateway,
                        sandbox: &sandbox,
                        depth_limit: limit,
                        preview_rows: cfg.preview_rows,
                        chain_seed: job.chain_seed,
                        chain_id: job.chain_id.clone(),
                        iteration,
                    };
                    let mut log = Transcript::default();
                    let (entries, trace) = run_chain(job.subset, &ctx, &mut log);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some((entries, trace, log));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every job ran")
        })
        .collect()
}

fn median(mut values: Vec<u32>) -> Option<u32> {
    values.sort_unstable();
    values.get(values.len().saturating_sub(1) / 2).copied()
}

/// Searches one task end to end.
pub fn run_task(
    task: &Task,
    schema: &FullSchema,
    db_path: &Path,
    cfg: &SearchConfig,
    gateway: &Gateway,
    seed: u64,
) -> SolutionReport {
    let started = Instant::now();
    let mut log = Transcript::default();

    let scores: Vec<u32> = (0..cfg.difficulty_samples)
        .filter_map(|j| {
            let s = mix_all(&[seed, DIFFICULTY_TAG, j as u64]);
            gateway
                .score_difficulty(task, schema, s, &mut log)
                .map_err(|e| tracing::warn!(question_id = task.question_id, "difficulty: {e}"))
                .ok()
        })
        .collect();
    let difficulty_fallback = scores.is_empty();
    let difficulty = median(scores).unwrap_or_else(|| gateway.difficulty_scale().midpoint());
    let limit = depth_limit(difficulty);
    let iterations = cfg.iterations_mode.iterations(difficulty);

    let mut report = SolutionReport {
        question_id: task.question_id,
        db_id: task.db_id.clone(),
        chosen_sql: None,
        failure: None,
        difficulty,
        difficulty_fallback,
        iterations,
        depth_limit: limit,
        pools: Vec::new(),
        evolution_notes: Vec::new(),
        buffer: Vec::new(),
        chains: Vec::new(),
        tally: None,
        call_counts: BTreeMap::new(),
        transcript: Transcript::default(),
        wall_time_ms: 0,
    };

    let pool = seed_pool(
        task,
        schema,
        cfg.n_samples,
        gateway,
        mix_all(&[seed, POOL_TAG]),
        &mut log,
    );
    match pool {
        Ok(mut pool) => {
            for it in 0..iterations {
                report.pools.push(pool.fingerprints());
                let jobs: Vec<ChainJob<'_>> = pool
                    .members()
                    .iter()
                    .map(|m| {
                        let fp = m.fingerprint();
                        ChainJob {
                            subset: m,
                            chain_seed: mix_all(&[seed, u64::from(it), stable_hash(fp.as_str().as_bytes())]),
                            chain_id: format!("{it}/{fp}"),
                        }
                    })
                    .collect();
                for (entries, trace, chain_log) in run_iteration(task, schema, db_path, cfg, gateway, &jobs, it, limit)
                {
                    report.buffer.extend(entries);
                    report.chains.push(trace);
                    log.extend(chain_log);
                }
                drop(jobs);
                if it + 1 < iterations {
                    pool = evolve(&pool, cfg, seed, it, &mut report.evolution_notes);
                }
            }
        }
        Err(e) => report.failure = Some(e.to_string()),
    }

    match voting::select(&report.buffer, cfg.strategy) {
        Ok(sel) => {
            report.chosen_sql = Some(sel.sql);
            report.tally = Some(sel.tally);
        }
        Err(e) => {
            report.failure.get_or_insert_with(|| e.to_string());
        }
    }
    report.call_counts = log.counts();
    report.transcript = log;
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    report
}

fn evolve(pool: &SeedPool, cfg: &SearchConfig, seed: u64, it: u32, notes: &mut Vec<String>) -> SeedPool {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_all(&[seed, EVOLVE_TAG, u64::from(it)]));
    match evolve_pool(pool, cfg.crossover_p, cfg.evolution_attempt_factor, &mut rng) {
        Ok(next) => next,
        Err(e) => {
            notes.push(format!("iteration {it}: {e}; reusing the previous pool"));
            pool.clone()
        }
    }
}

#[cfg(test)]
pub(crate) fn test_entry(sql: &str, reward: f64, key: &str) -> BufferEntry {
    BufferEntry {
        candidate: sql.to_string(),
        reward,
        output: crate::executor::OutputKey::from_raw(key),
        raw_rows: Vec::new(),
        critique: Critique {
            score: reward,
            confidence: 1.0,
            mutation_temperature: 0.0,
            assessment: String::new(),
        },
        chain_id: "0/test".into(),
        iteration: 0,
        depth: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_limits() {
        assert_eq!(depth_limit(1), 1);
        assert_eq!(depth_limit(2), 2);
        assert_eq!(depth_limit(3), 2);
        assert_eq!(depth_limit(4), 3);
        assert_eq!(depth_limit(5), 3);
    }

    #[test]
    fn iteration_modes() {
        assert_eq!(IterationsMode::Prose.iterations(3), 3);
        assert_eq!(IterationsMode::Alg1.iterations(3), 4);
        assert_eq!("alg1".parse::<IterationsMode>().unwrap(), IterationsMode::Alg1);
    }

    #[test]
    fn median_takes_lower_middle() {
        assert_eq!(median(vec![5, 1, 3]), Some(3));
        assert_eq!(median(vec![4, 2]), Some(2));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        let bad = SearchConfig {
            crossover_p: 1.5,
            ..SearchConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

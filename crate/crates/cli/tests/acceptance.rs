//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use casql_cli::commands::{cmd_ablate, cmd_run, TaskFilter};
use casql_cli::config::{BackendKind, RunConfig};
use casql_cli::trace;
use casql_core::diversity::{run_comparison, synthetic_workload, ComparisonConfig, SamplingRegime};
use casql_core::eval::{execution_accuracy, load_bird_dev, soft_f1, DevSet};
use casql_core::evolution::{evolve_pool, mutate_subset, SeedPool};
use casql_core::executor::{Limits, OutputKey, Value};
use casql_core::fixtures::{scripted_scenarios, write_demo_dataset};
use casql_core::llm::{Critique, Gateway, SyntheticBackend};
use casql_core::load_schema;
use casql_core::schema::{ColumnRef, SchemaSubset};
use casql_core::search::{depth_limit, run_task, BufferEntry, SearchConfig, SolutionReport};
use casql_core::voting::{reward, select, Strategy};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn demo() -> (tempfile::TempDir, DevSet) {
    let dir = tempfile::tempdir().expect("tempdir");
    write_demo_dataset(dir.path()).expect("demo dataset");
    let dev = load_bird_dev(dir.path()).expect("demo loads");
    (dir, dev)
}

fn entry(key: &str, reward: f64) -> BufferEntry {
    BufferEntry {
        candidate: format!("SELECT '{key}'"),
        reward,
        output: OutputKey::from_raw(key),
        raw_rows: Vec::new(),
        critique: Critique {
            score: reward,
            confidence: 1.0,
            mutation_temperature: 0.0,
            assessment: String::new(),
        },
        chain_id: "0/x".into(),
        iteration: 0,
        depth: 0,
    }
}

// -- reward law --------------------------------------------------------------

fn reward_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let (s, t, k): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let r = reward(s, t, k).map_err(|e| e.to_string())?;
        worst = worst.max((r - s * (1.0 - t) * k).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;

    for _ in 0..10_000 {
        let mut v: [f64; 2] = [rng.random(), rng.random()];
        v.sort_by(f64::total_cmp);
        let (lo, hi) = (v[0], v[1]);
        let (s, t, k): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let r = |s, t, k| reward(s, t, k).unwrap();
        ensure(r(lo, t, k) <= r(hi, t, k), || {
            format!("not increasing in score at {lo},{hi}")
        })?;
        ensure(r(s, lo, k) >= r(s, hi, k), || {
            format!("not decreasing in temperature at {lo},{hi}")
        })?;
        ensure(r(s, t, lo) <= r(s, t, hi), || {
            format!("not increasing in confidence at {lo},{hi}")
        })?;
    }
    ensure(
        reward(1.2, 0.0, 1.0).is_err() && reward(0.5, f64::NAN, 1.0).is_err(),
        || "out-of-range inputs accepted".into(),
    )?;
    Ok(format!("10^5 samples, max deviation {worst:e}; 10^4 monotone triples"))
}

// -- voting ------------------------------------------------------------------

/// Sum per key in buffer order; highest sum, then highest single reward,
/// then the smaller key.
fn brute_force_sum_winner(buffer: &[BufferEntry]) -> String {
    let keys: BTreeSet<&str> = buffer.iter().map(|e| e.output.as_str()).collect();
    let mut best: Option<(f64, f64, &str)> = None;
    for key in keys {
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for e in buffer.iter().filter(|e| e.output.as_str() == key) {
            sum += e.reward;
            max = max.max(e.reward);
        }
        let better = match best {
            None => true,
            Some((bs, bm, _)) => sum > bs || (sum == bs && max > bm),
        };
        if better {
            best = Some((sum, max, key));
        }
    }
    best.expect("non-empty buffer").2.to_string()
}

fn voting_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0;
    for case in 0..1000 {
        let len = rng.random_range(1..=20);
        let keys = rng.random_range(1..=6);
        let buffer: Vec<BufferEntry> = (0..len)
            .map(|_| {
                let key = format!("k{}", rng.random_range(0..keys));
                // quarter steps make exact ties common
                entry(&key, f64::from(rng.random_range(0..=4)) / 4.0)
            })
            .collect();
        let got = select(&buffer, Strategy::SumOfRewards).map_err(|e| e.to_string())?;
        let want = brute_force_sum_winner(&buffer);
        ensure(got.tally.winner.as_str() == want, || {
            format!("case {case}: selected {} but the fold gives {want}", got.tally.winner)
        })?;
        let sums: Vec<f64> = got.tally.groups.iter().map(|g| g.sum).collect();
        if sums.iter().filter(|s| **s == got.tally.winning_group().sum).count() > 1 {
            ties += 1;
        }

        let r = rng.random_range(0.01..=1.0);
        let equal: Vec<BufferEntry> = buffer.iter().map(|e| entry(e.output.as_str(), r)).collect();
        let sum = select(&equal, Strategy::SumOfRewards).unwrap().tally.winner;
        let majority = select(&equal, Strategy::Majority).unwrap().tally.winner;
        ensure(sum == majority, || {
            format!("case {case}: equal rewards, sum picks {sum}, majority {majority}")
        })?;
    }
    Ok(format!(
        "1000 buffers ({ties} with tied sums); equal-reward equivalence 1000/1000"
    ))
}

// -- evolution ---------------------------------------------------------------

fn random_subset(pairs: &[ColumnRef], rng: &mut ChaCha8Rng) -> SchemaSubset {
    let k = rng.random_range(1..=pairs.len().min(6));
    pairs.choose_multiple(rng, k).cloned().collect()
}

fn evolution_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = Vec::new();
    let mut stalled = 0;
    let mut mutations_checked = 0;
    for round in 0..1000 {
        let tables = rng.random_range(1..=4);
        let mut pairs = Vec::new();
        for t in 0..tables {
            for c in 0..rng.random_range(1..=30 / tables) {
                pairs.push(ColumnRef::new(format!("t{t}"), format!("c{c}")));
            }
        }
        let universe: BTreeSet<ColumnRef> = pairs.iter().cloned().collect();
        let size = rng.random_range(1..=6);
        let pool = SeedPool::from_members((0..size).map(|_| random_subset(&pairs, &mut rng)));
        let parents = pool.members();
        let observed = pool.observed().clone();
        let p = rng.random::<f64>();
        let seed = rng.random::<u64>();

        let a = evolve_pool(&pool, p, 50, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = evolve_pool(&pool, p, 50, &mut ChaCha8Rng::seed_from_u64(seed));
        if a != b {
            violations.push(format!("round {round}: equal seeds gave different pools"));
        }
        match a {
            Ok(next) => {
                if next.len() != pool.len() {
                    violations.push(format!("round {round}: size {} became {}", pool.len(), next.len()));
                }
                let fps: BTreeSet<_> = next.fingerprints().into_iter().collect();
                if fps.len() != next.len() {
                    violations.push(format!("round {round}: duplicate members"));
                }
                if !observed.is_subset(next.observed()) || !fps.is_subset(next.observed()) {
                    violations.push(format!("round {round}: observed set lost entries"));
                }
                for child in next.members() {
                    if child.is_empty() || !child.pairs().is_subset(&universe) {
                        violations.push(format!("round {round}: child leaves the schema"));
                    }
                    let crossed = parents
                        .iter()
                        .enumerate()
                        .any(|(i, x)| parents.iter().skip(i + 1).any(|y| x.union(y) == *child));
                    let mutated = !observed.contains(&child.fingerprint())
                        && parents.iter().any(|x| child.is_subset_of(x) && child.len() < x.len());
                    if !crossed && !mutated {
                        violations.push(format!(
                            "round {round}: child {} is neither a union nor a novel strict subset",
                            child.fingerprint()
                        ));
                    }
                }
            }
            Err(_) => stalled += 1,
        }

        let parent = &parents[rng.random_range(0..parents.len())];
        if let Ok(m) = mutate_subset(parent, &observed, &mut rng) {
            mutations_checked += 1;
            if m.is_empty() || !m.is_subset_of(parent) || m.len() >= parent.len() || observed.contains(&m.fingerprint())
            {
                violations.push(format!(
                    "round {round}: mutation {} of {} is not a novel strict subset",
                    m.fingerprint(),
                    parent.fingerprint()
                ));
            }
        }
    }
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    Ok(format!(
        "1000 rounds, 0 violations ({stalled} stalled, {mutations_checked} direct mutations checked)"
    ))
}

// -- search trace conformance ------------------------------------------------

fn check_report(name: &str, r: &SolutionReport, mode: casql_core::IterationsMode) -> Result<(), String> {
    let c = r.difficulty;
    ensure(r.depth_limit == depth_limit(c) && r.depth_limit == c / 2 + 1, || {
        format!("{name}: depth limit {} for C={c}", r.depth_limit)
    })?;
    ensure(r.iterations == mode.iterations(c), || {
        format!("{name}: {} iterations for C={c}", r.iterations)
    })?;
    ensure(r.pools.len() as u32 == r.iterations, || {
        format!("{name}: {} pools recorded", r.pools.len())
    })?;
    let seen: BTreeSet<u32> = r.chains.iter().map(|ch| ch.iteration).collect();
    ensure(seen == (0..r.iterations).collect(), || {
        format!("{name}: chain iterations {seen:?}")
    })?;

    let entries: BTreeMap<(&str, u32), &BufferEntry> =
        r.buffer.iter().map(|e| ((e.chain_id.as_str(), e.depth), e)).collect();
    ensure(entries.len() == r.buffer.len(), || {
        format!("{name}: two entries share a chain step")
    })?;
    for e in &r.buffer {
        ensure(e.depth <= r.depth_limit, || {
            format!("{name}: entry at depth {}", e.depth)
        })?;
    }
    for chain in &r.chains {
        for (i, step) in chain.steps.iter().enumerate() {
            ensure(step.depth as usize == i && step.depth <= r.depth_limit, || {
                format!("{name}: {} step {i} has depth {}", chain.chain_id, step.depth)
            })?;
            let entry = entries.get(&(chain.chain_id.as_str(), step.depth));
            let errored = step.note.as_deref().is_some_and(|n| n.starts_with("execution failed"));
            if errored {
                ensure(entry.is_none(), || format!("{name}: errored step kept in buffer"))?;
                ensure(i + 1 == chain.steps.len(), || {
                    format!("{name}: chain continued after an error")
                })?;
            }
            if let Some(e) = entry {
                if !e.critique.wants_changes() {
                    ensure(i + 1 == chain.steps.len(), || {
                        format!("{name}: {} continued after an empty assessment", chain.chain_id)
                    })?;
                }
            }
        }
    }
    Ok(())
}

fn trace_conformance() -> Outcome {
    ensure(
        depth_limit(1) == 1 && depth_limit(4) == 3 && depth_limit(5) == 3,
        || "depth_limit table".into(),
    )?;
    let (_dir, dev) = demo();
    let scenarios = scripted_scenarios();
    ensure(scenarios.len() >= 5, || format!("only {} scenarios", scenarios.len()))?;
    let mut steps = 0;
    for sc in &scenarios {
        let task = dev
            .tasks
            .iter()
            .find(|t| t.question_id == sc.question_id)
            .ok_or("scenario task missing")?;
        let db = dev.db_path(&task.db_id);
        let schema = load_schema(&db).map_err(|e| e.to_string())?;
        let cfg = SearchConfig {
            n_samples: 4,
            iterations_mode: sc.iterations_mode,
            ..SearchConfig::default()
        };
        let runs: Vec<SolutionReport> = (0..3)
            .map(|_| {
                let gateway = Gateway::new(Arc::new(sc.backend()));
                run_task(task, &schema, &db, &cfg, &gateway, 5).without_timing()
            })
            .collect();
        check_report(sc.name, &runs[0], sc.iterations_mode)?;
        ensure(runs[0] == runs[1] && runs[1] == runs[2], || {
            format!("{}: repeated runs differ", sc.name)
        })?;
        steps += runs[0].chains.iter().map(|c| c.steps.len()).sum::<usize>();
    }
    Ok(format!(
        "{} scripted scenarios, {steps} chain steps, 3 identical runs each",
        scenarios.len()
    ))
}

// -- diversity ---------------------------------------------------------------

fn diversity_ordering() -> Outcome {
    let gateway = Gateway::new(Arc::new(SyntheticBackend::new()));
    let temps = [0.0, 0.3, 0.7, 1.0];
    let mut at_one = [0.0; 3];
    for seed in 0..10 {
        let workload = synthetic_workload(50, seed);
        let cfg = ComparisonConfig {
            n: 20,
            temperatures: temps.to_vec(),
            regimes: SamplingRegime::ALL.to_vec(),
            seed,
            workers: 8,
        };
        let report = run_comparison(&workload, &cfg, &gateway).map_err(|e| e.to_string())?;
        ensure(report.skipped == 0, || {
            format!("seed {seed}: {} tasks skipped", report.skipped)
        })?;
        for t in temps {
            let m = |r| {
                report
                    .cell(r, t)
                    .map(|c| c.mean_ratio)
                    .ok_or(format!("seed {seed}: missing cell"))
            };
            let pool = m(SamplingRegime::PoolOfSeeds)?;
            let random = m(SamplingRegime::SingleSeedRandomOrder)?;
            let fixed = m(SamplingRegime::SingleSeedFixedOrder)?;
            ensure(pool >= random && random >= fixed, || {
                format!("seed {seed}, temperature {t}: {pool} / {random} / {fixed}")
            })?;
            if t == 0.0 {
                ensure(fixed == 1.0 / 20.0, || {
                    format!("seed {seed}: fixed order at 0 gives {fixed}")
                })?;
            }
            if t == 1.0 {
                at_one[0] += pool / 10.0;
                at_one[1] += random / 10.0;
                at_one[2] += fixed / 10.0;
            }
        }
    }
    Ok(format!(
        "10 seeds x 50 tasks; at temperature 1.0 mean uniqueness {:.2} / {:.2} / {:.2}",
        100.0 * at_one[0],
        100.0 * at_one[1],
        100.0 * at_one[2]
    ))
}

// -- metrics -----------------------------------------------------------------

const EX_CASES: [(&str, &str, &str, bool); 15] = [
    (
        "permutation, unordered gold",
        "SELECT 1 UNION ALL SELECT 2",
        "SELECT 2 UNION ALL SELECT 1",
        true,
    ),
    (
        "permutation, ordered gold",
        "SELECT 2 UNION ALL SELECT 1",
        "SELECT x FROM (SELECT 2 AS x UNION ALL SELECT 1) ORDER BY x",
        false,
    ),
    (
        "same order, ordered gold",
        "SELECT 1 UNION ALL SELECT 2",
        "SELECT x FROM (SELECT 2 AS x UNION ALL SELECT 1) ORDER BY x",
        true,
    ),
    ("float sum rounding", "SELECT 0.1 + 0.2", "SELECT 0.3", true),
    ("below sixth decimal", "SELECT 0.3000001", "SELECT 0.3", true),
    ("at sixth decimal", "SELECT 0.300001", "SELECT 0.3", false),
    ("integer equals real", "SELECT 1", "SELECT 1.0", true),
    ("text is not number", "SELECT '1'", "SELECT 1", false),
    ("extra duplicate row", "SELECT 1 UNION ALL SELECT 1", "SELECT 1", false),
    (
        "duplicate multiset permuted",
        "SELECT 1 UNION ALL SELECT 1 UNION ALL SELECT 2",
        "SELECT 2 UNION ALL SELECT 1 UNION ALL SELECT 1",
        true,
    ),
    ("both empty", "SELECT 1 WHERE 0", "SELECT 2 WHERE 0", true),
    ("empty prediction", "SELECT 1 WHERE 0", "SELECT 1", false),
    ("prediction errors", "SELECT nope FROM singer", "SELECT 1", false),
    ("column order", "SELECT 1, 2", "SELECT 2, 1", false),
    ("trailing spaces", "SELECT 'a  '", "SELECT 'a'", true),
];

fn int(v: i64) -> Value {
    Value::Integer(v)
}

fn text(v: &str) -> Value {
    Value::Text(v.into())
}

type Rows = Vec<Vec<Value>>;

fn soft_cases() -> Vec<(&'static str, Rows, Rows, f64)> {
    vec![
        ("both empty", vec![], vec![], 1.0),
        ("empty prediction", vec![], vec![vec![int(1)]], 0.0),
        (
            "identical",
            vec![vec![int(1)], vec![int(2)]],
            vec![vec![int(1)], vec![int(2)]],
            1.0,
        ),
        // tp 2, fp 1, fn 0
        (
            "extra duplicate row",
            vec![vec![int(1)], vec![int(2)], vec![int(2)]],
            vec![vec![int(1)], vec![int(2)]],
            0.8,
        ),
        // one of two cells shared: tp 1/2, fp 1/2, fn 1/2
        (
            "half a row",
            vec![vec![int(1), text("b")]],
            vec![vec![int(1), text("a")]],
            0.5,
        ),
        (
            "permutation",
            vec![vec![int(2)], vec![int(1)]],
            vec![vec![int(1)], vec![int(2)]],
            1.0,
        ),
        (
            "float rounding",
            vec![vec![Value::Real(0.1 + 0.2)]],
            vec![vec![Value::Real(0.3)]],
            1.0,
        ),
        // overlap 2 of 3: tp 2/3, fp 0, fn 1/3
        (
            "short row",
            vec![vec![int(1), int(2)]],
            vec![vec![int(1), int(2), int(3)]],
            0.8,
        ),
        // cell multiset {1,2} against {1,1}: overlap 1 of 2
        (
            "cell multiplicity",
            vec![vec![int(1), int(2)]],
            vec![vec![int(1), int(1)]],
            0.5,
        ),
        // tp 1, fp 0, fn 1
        (
            "missing duplicate row",
            vec![vec![int(1)]],
            vec![vec![int(1)], vec![int(1)]],
            2.0 / 3.0,
        ),
    ]
}

fn metrics_oracle() -> Outcome {
    let (_dir, dev) = demo();
    let db = dev.db_path("concert_hall");
    let limits = Limits::default();
    for (name, pred, gold, want) in EX_CASES {
        let got = execution_accuracy(pred, gold, &db, limits).map_err(|e| format!("{name}: {e}"))?;
        ensure(got == want, || format!("EX {name}: got {got}"))?;
    }
    let soft = soft_cases();
    for (name, pred, gold, want) in &soft {
        let got = soft_f1(pred, gold);
        ensure((got - want).abs() < 1e-12, || {
            format!("soft F1 {name}: got {got}, want {want}")
        })?;
    }
    let total = EX_CASES.len() + soft.len();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let width = rng.random_range(1..=4);
        let rows: Vec<Vec<Value>> = (0..rng.random_range(1..=8))
            .map(|_| (0..width).map(|_| int(rng.random_range(0..6))).collect())
            .collect();
        let other: Vec<Vec<Value>> = rows
            .iter()
            .map(|r| r.iter().map(|_| int(rng.random_range(100..106))).collect())
            .collect();
        ensure(soft_f1(&rows, &rows) == 1.0, || {
            format!("soft_f1(x, x) != 1 for {rows:?}")
        })?;
        ensure(soft_f1(&other, &rows) == 0.0, || {
            format!("disjoint rows scored above 0: {rows:?}")
        })?;
    }
    Ok(format!(
        "{total}-case table; 500 randomized identity and disjoint fixtures"
    ))
}

// -- replay ------------------------------------------------------------------

fn run_config(dataset: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        dataset_root: Some(dataset.to_path_buf()),
        seed,
        task_workers: 2,
        ..RunConfig::default()
    };
    cfg.search.n_samples = 6;
    cfg
}

fn replay_determinism() -> Outcome {
    let (dir, dev) = demo();
    let mut compared = 0;
    for seed in [0, 7, 42] {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let first = out.path().join("first.jsonl");
        let traces = out.path().join("traces");
        let cfg = run_config(dir.path(), seed);
        cmd_run(&cfg, &TaskFilter::default(), &first, Some(&traces)).map_err(|e| e.to_string())?;

        let mut replay = cfg.clone();
        replay.backend.kind = BackendKind::Scripted;
        replay.backend.scenario = Some(traces.clone());
        replay.task_workers = 3;
        replay.search.concurrency = 1;
        let second = out.path().join("second.jsonl");
        cmd_run(&replay, &TaskFilter::default(), &second, None).map_err(|e| format!("replay: {e}"))?;

        let a = std::fs::read(&first).map_err(|e| e.to_string())?;
        let b = std::fs::read(&second).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("seed {seed}: replayed predictions differ"))?;
        compared += a.iter().filter(|c| **c == b'\n').count();
    }
    ensure(compared == 3 * dev.tasks.len(), || {
        format!("only {compared} predictions compared")
    })?;
    Ok(format!("{compared} predictions over 3 seeds replayed byte-for-byte"))
}

// -- ablation ----------------------------------------------------------------

fn ablation_harness() -> Outcome {
    let (dir, _dev) = demo();
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let traces = out.path().join("traces");
    let cfg = run_config(dir.path(), 3);
    cmd_run(&cfg, &TaskFilter::default(), &out.path().join("p.jsonl"), Some(&traces)).map_err(|e| e.to_string())?;
    let limits = Limits::default();

    let table = cmd_ablate(&traces, dir.path(), &Strategy::ALL, limits).map_err(|e| e.to_string())?;
    ensure(
        table.strategies.len() == 4 && table.rows.iter().all(|(_, v)| v.len() == 4),
        || "expected four strategy columns".into(),
    )?;
    ensure(
        table.to_csv().lines().next().map(|h| h.split(',').count()) == Some(5),
        || "csv header".into(),
    )?;

    let records = trace::read_dir(&traces).map_err(|e| e.to_string())?;
    let single = out.path().join("single");
    let equal = out.path().join("equal");
    for r in &records {
        let mut one = r.clone();
        one.report.buffer.truncate(1);
        trace::write(&single, &one).map_err(|e| e.to_string())?;
        let mut same = r.clone();
        for e in &mut same.report.buffer {
            e.reward = 0.5;
        }
        trace::write(&equal, &same).map_err(|e| e.to_string())?;
    }

    let t = cmd_ablate(&single, dir.path(), &Strategy::ALL, limits).map_err(|e| e.to_string())?;
    ensure(
        t.per_task.iter().all(|(_, hits)| hits.iter().all(|h| *h == hits[0])),
        || "single-entry buffers gave different picks".into(),
    )?;
    let first = t.column(Strategy::ALL[0]);
    ensure(Strategy::ALL.iter().all(|s| t.column(*s) == first), || {
        "single-entry columns differ".into()
    })?;

    let t = cmd_ablate(
        &equal,
        dir.path(),
        &[Strategy::SumOfRewards, Strategy::Majority],
        limits,
    )
    .map_err(|e| e.to_string())?;
    ensure(t.column(Strategy::SumOfRewards) == t.column(Strategy::Majority), || {
        "equal rewards: sum and majority columns differ".into()
    })?;
    for r in &trace::read_dir(&equal).map_err(|e| e.to_string())? {
        let a = select(&r.report.buffer, Strategy::SumOfRewards).map(|s| s.sql).ok();
        let b = select(&r.report.buffer, Strategy::Majority).map(|s| s.sql).ok();
        ensure(a == b, || {
            format!("task {}: equal rewards pick different queries", r.question_id)
        })?;
    }
    Ok(format!(
        "{} stored buffers, 4 columns, single-entry and equal-reward checks",
        records.len()
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 8] = [
        ("reward_law", reward_law, Duration::from_secs(5)),
        ("voting_oracle", voting_oracle, Duration::from_secs(10)),
        ("evolution_invariants", evolution_invariants, Duration::from_secs(30)),
        ("trace_conformance", trace_conformance, Duration::from_secs(20)),
        ("diversity_ordering", diversity_ordering, Duration::from_secs(60)),
        ("metrics_oracle", metrics_oracle, Duration::from_secs(10)),
        ("replay_determinism", replay_determinism, Duration::from_secs(60)),
        ("ablation_harness", ablation_harness, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {name:<22} {detail} ({} ms)", elapsed.as_millis()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name:<22} {why} ({} ms)", elapsed.as_millis());
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

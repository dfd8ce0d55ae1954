//! Seed pool construction and evolution between outer iterations.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::llm::{Gateway, Role, Transcript};
use crate::schema::{Fingerprint, FullSchema, SchemaSubset, Task};
use crate::util::mix_all;

pub const DEFAULT_ATTEMPT_FACTOR: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvolutionError {
    #[error("every subset proposal failed or was empty")]
    NoValidSubsets,
    #[error("every removal chain reached the empty subset through observed subsets")]
    ExhaustedMutations,
    #[error("could only fill {filled} of {target} pool slots")]
    EvolutionStalled { filled: usize, target: usize },
}

/// Working population of schema subsets for one task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeedPool {
    members: Vec<SchemaSubset>,
    observed: BTreeSet<Fingerprint>,
}

impl SeedPool {
    /// Deduplicates by fingerprint and drops empty subsets.
    pub fn from_members(members: impl IntoIterator<Item = SchemaSubset>) -> Self {
        let mut pool = Self::default();
        for m in members {
            pool.insert(m);
        }
        pool
    }

    fn insert(&mut self, subset: SchemaSubset) -> bool {
        if subset.is_empty() {
            return false;
        }
        let fp = subset.fingerprint();
        if self.members.iter().any(|m| m.fingerprint() == fp) {
            return false;
        }
        self.observed.insert(fp);
        self.members.push(subset);
        true
    }

    pub fn members(&self) -> &[SchemaSubset] {
        &self.members
    }

    pub fn observed(&self) -> &BTreeSet<Fingerprint> {
        &self.observed
    }

    pub fn fingerprints(&self) -> Vec<Fingerprint> {
        self.members.iter().map(SchemaSubset::fingerprint).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Marks extra fingerprints as seen.
    pub fn observe(&mut self, fps: impl IntoIterator<Item = Fingerprint>) {
        self.observed.extend(fps);
    }
}

/// Samples `n` subset proposals, keeps the unique ones in order of first
/// appearance, then appends the union of every sample.
pub fn seed_pool(
    task: &Task,
    schema: &FullSchema,
    n: usize,
    gateway: &Gateway,
    seed: u64,
    log: &mut Transcript,
) -> Result<SeedPool, EvolutionError> {
    let mut pool = SeedPool::default();
    let mut superset = SchemaSubset::default();
    for i in 0..n {
        let call_seed = mix_all(&[seed, i as u64, Role::SchemaSubset as u64]);
        match gateway.propose_subset(task, schema, call_seed, log) {
            Ok(subset) => {
                superset = superset.union(&subset);
                pool.insert(subset);
            }
            Err(e) => tracing::debug!(sample = i, "subset proposal dropped: {e}"),
        }
    }
    if pool.is_empty() {
        return Err(EvolutionError::NoValidSubsets);
    }
    pool.insert(superset);
    Ok(pool)
}

pub fn crossover(a: &SchemaSubset, b: &SchemaSubset) -> SchemaSubset {
    a.union(b)
}

/// Removes uniformly chosen pairs one at a time until the subset has not
/// been observed. Never returns the empty subset.
pub fn mutate_subset<R: Rng + ?Sized>(
    subset: &SchemaSubset,
    observed: &BTreeSet<Fingerprint>,
    rng: &mut R,
) -> Result<SchemaSubset, EvolutionError> {
    let mut current = subset.clone();
    loop {
        if current.len() <= 1 {
            return Err(EvolutionError::ExhaustedMutations);
        }
        let victim = current
            .pairs()
            .iter()
            .nth(rng.random_range(0..current.len()))
            .cloned()
            .expect("index within bounds");
        current = current.without(&victim);
        if !observed.contains(&current.fingerprint()) {
            return Ok(current);
        }
    }
}

/// Builds a new pool of the same size: each draw is a crossover of two
/// distinct parents with probability `p`, otherwise a mutation of one
/// parent. Draws that duplicate a member already in the new pool are
/// rejected. A single-member pool can only mutate.
pub fn evolve_pool<R: Rng + ?Sized>(
    pool: &SeedPool,
    p: f64,
    attempt_factor: usize,
    rng: &mut R,
) -> Result<SeedPool, EvolutionError> {
    let target = pool.len();
    if target == 0 {
        return Err(EvolutionError::NoValidSubsets);
    }
    let parents = pool.members();
    let mut next = SeedPool {
        members: Vec::with_capacity(target),
        observed: pool.observed.clone(),
    };
    let mut taken: BTreeSet<Fingerprint> = BTreeSet::new();
    let budget = attempt_factor.max(1) * target;
    let mut attempts = 0;
    while next.members.len() < target {
        if attempts == budget {
            return Err(EvolutionError::EvolutionStalled {
                filled: next.members.len(),
                target,
            });
        }
        attempts += 1;
        let child = if target >= 2 && rng.random::<f64>() < p {
            let pick = sample(rng, target, 2);
            crossover(&parents[pick.index(0)], &parents[pick.index(1)])
        } else {
            let parent = &parents[rng.random_range(0..target)];
            match mutate_subset(parent, &next.observed, rng) {
                Ok(c) => c,
                Err(_) => continue,
            }
        };
        let fp = child.fingerprint();
        if taken.insert(fp.clone()) {
            next.observed.insert(fp);
            next.members.push(child);
        }
    }
    Ok(next)
}

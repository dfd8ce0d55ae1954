//! Candidate rewards and final-answer selection over the candidate buffer.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::executor::OutputKey;
use crate::search::BufferEntry;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VotingError {
    #[error("reward inputs must lie in [0, 1]: s={s}, t={t}, k={k}")]
    DomainError { s: f64, t: f64, k: f64 },
    #[error("no candidates to vote over")]
    NoCandidates,
    #[error("output key not present in the buffer")]
    KeyAbsent,
}

/// Critic score weighted by confidence and by how little change is still needed.
pub fn reward(score: f64, mutation_temperature: f64, confidence: f64) -> Result<f64, VotingError> {
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    if !(in_unit(score) && in_unit(mutation_temperature) && in_unit(confidence)) {
        return Err(VotingError::DomainError {
            s: score,
            t: mutation_temperature,
            k: confidence,
        });
    }
    Ok(score * (1.0 - mutation_temperature) * confidence)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    SumOfRewards,
    Majority,
    HighestReward,
    HighestAvgReward,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Self::SumOfRewards,
        Self::Majority,
        Self::HighestReward,
        Self::HighestAvgReward,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SumOfRewards => "sum_of_rewards",
            Self::Majority => "majority",
            Self::HighestReward => "highest_reward",
            Self::HighestAvgReward => "highest_avg_reward",
        }
    }

    fn metric(self, stats: &KeyStats) -> f64 {
        match self {
            Self::SumOfRewards => stats.sum,
            Self::Majority => stats.count as f64,
            Self::HighestReward => stats.max,
            Self::HighestAvgReward => stats.mean,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| format!("unknown voting strategy {s:?}"))
    }
}

/// Aggregates for one output key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyStats {
    pub key: OutputKey,
    pub sum: f64,
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    /// Highest-reward query with this key, earliest on ties.
    pub representative: String,
    pub representative_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub strategy: Strategy,
    /// One entry per distinct key, in order of first appearance.
    pub groups: Vec<KeyStats>,
    pub winner: OutputKey,
}

impl VoteTally {
    pub fn winning_group(&self) -> &KeyStats {
        self.groups
            .iter()
            .find(|g| g.key == self.winner)
            .expect("winner is one of the groups")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub sql: String,
    pub tally: VoteTally,
}

/// Groups the buffer by output key. Sums accumulate in insertion order.
pub fn group_by_output(buffer: &[BufferEntry]) -> Vec<KeyStats> {
    let mut index: HashMap<&OutputKey, usize> = HashMap::new();
    let mut groups: Vec<KeyStats> = Vec::new();
    for (i, entry) in buffer.iter().enumerate() {
        match index.get(&entry.output) {
            Some(&g) => {
                let stats = &mut groups[g];
                stats.sum += entry.reward;
                stats.count += 1;
                if entry.reward > stats.max {
                    stats.max = entry.reward;
                    stats.representative = entry.candidate.clone();
                    stats.representative_index = i;
                }
            }
            None => {
                index.insert(&entry.output, groups.len());
                groups.push(KeyStats {
                    key: entry.output.clone(),
                    sum: entry.reward,
                    count: 1,
                    max: entry.reward,
                    mean: 0.0,
                    representative: entry.candidate.clone(),
                    representative_index: i,
                });
            }
        }
    }
    for g in &mut groups {
        g.mean = g.sum / g.count as f64;
    }
    groups
}

/// Ranking used by every strategy: the strategy's metric, then the higher
/// max reward, then the lexicographically smaller key.
fn rank(strategy: Strategy, a: &KeyStats, b: &KeyStats) -> Ordering {
    strategy
        .metric(a)
        .total_cmp(&strategy.metric(b))
        .then(a.max.total_cmp(&b.max))
        .then_with(|| b.key.cmp(&a.key))
}

pub fn select(buffer: &[BufferEntry], strategy: Strategy) -> Result<Selection, VotingError> {
    let groups = group_by_output(buffer);
    let best = groups
        .iter()
        .max_by(|a, b| rank(strategy, a, b))
        .ok_or(VotingError::NoCandidates)?;
    let sql = best.representative.clone();
    let winner = best.key.clone();
    Ok(Selection {
        sql,
        tally: VoteTally {
            strategy,
            groups,
            winner,
        },
    })
}

pub fn representative_query<'a>(buffer: &'a [BufferEntry], key: &OutputKey) -> Result<&'a str, VotingError> {
    let mut best: Option<&BufferEntry> = None;
    for entry in buffer.iter().filter(|e| &e.output == key) {
        if best.is_none_or(|b| entry.reward > b.reward) {
            best = Some(entry);
        }
    }
    best.map(|e| e.candidate.as_str()).ok_or(VotingError::KeyAbsent)
}

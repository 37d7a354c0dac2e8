//! Sampled-negative ranking evaluation.
//!
//! Each user's held-out item is ranked against 100 items the user never
//! interacted with; HR@10 and NDCG@10 are averaged over users.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mean_std;
use crate::preprocess::SplitDataset;
use crate::recommender::ScorerModel;
use crate::rng::{substream, Purpose};
use crate::types::{ItemId, UserId};

pub const NUM_NEGATIVES: usize = 100;
pub const CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Rank the validation item given the training items.
    Valid,
    /// Rank the test item given the training items plus the validation item.
    Test,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "valid" | "validation" => Ok(Mode::Valid),
            "test" => Ok(Mode::Test),
            _ => Err(Error::config(format!("unknown evaluation mode `{s}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Valid => "valid",
            Mode::Test => "test",
        })
    }
}

/// `count` distinct catalog items the user never interacted with, drawn
/// uniformly without replacement. Deterministic in `(seed, user)`.
pub fn sample_eval_negatives(user: UserId, split: &SplitDataset, count: usize, seed: u64) -> Result<Vec<ItemId>> {
    let record = split
        .users
        .get(&user)
        .ok_or_else(|| Error::config(format!("user {user} is not part of the split")))?;
    let seen = record.interacted();
    let pool: Vec<ItemId> = split.catalog.iter().copied().filter(|i| !seen.contains(i)).collect();
    if pool.len() < count {
        return Err(Error::InsufficientNegatives {
            user,
            available: pool.len(),
            needed: count,
        });
    }
    let mut rng = substream(seed, Purpose::EvalNegatives, user.0 as u64);
    Ok(index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

/// 1 + the number of negatives ranked ahead of `truth`: strictly higher
/// score, or equal score and lower item id.
pub fn rank_of_truth(model: &ScorerModel, history: &[ItemId], truth: ItemId, negatives: &[ItemId]) -> usize {
    let mut candidates = Vec::with_capacity(negatives.len() + 1);
    candidates.push(truth);
    candidates.extend_from_slice(negatives);
    let scores = model.score_all(history, &candidates);
    rank_from_scores(
        truth,
        scores[0],
        negatives.iter().copied().zip(scores[1..].iter().copied()),
    )
}

pub(crate) fn rank_from_scores(truth: ItemId, truth_score: f64, others: impl Iterator<Item = (ItemId, f64)>) -> usize {
    1 + others
        .filter(|&(item, s)| s > truth_score || (s == truth_score && item < truth))
        .count()
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// With one relevant item the ideal DCG is 1, so NDCG is the discounted gain.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hr_at_10: f64,
    pub ndcg_at_10: f64,
    pub per_user_ranks: BTreeMap<UserId, usize>,
    pub seed: u64,
    pub mode: Mode,
    pub evaluated_users: usize,
    pub skipped_users: usize,
}

impl EvalReport {
    /// Averages HR@10 and NDCG@10 over the given ranks.
    pub fn from_ranks(per_user_ranks: BTreeMap<UserId, usize>, seed: u64, mode: Mode, skipped_users: usize) -> Self {
        let n = per_user_ranks.len();
        let (hr, ndcg) = per_user_ranks.values().fold((0.0, 0.0), |(h, d), &r| {
            (h + hr_at_k(r, CUTOFF), d + ndcg_at_k(r, CUTOFF))
        });
        let denom = n.max(1) as f64;
        EvalReport {
            hr_at_10: hr / denom,
            ndcg_at_10: ndcg / denom,
            per_user_ranks,
            seed,
            mode,
            evaluated_users: n,
            skipped_users,
        }
    }
}

/// Runs the 101-candidate protocol for every user in `split`.
pub fn evaluate(model: &ScorerModel, split: &SplitDataset, mode: Mode, seed: u64) -> Result<EvalReport> {
    let users: Vec<_> = split.users.iter().collect();
    let outcomes: Vec<(UserId, Option<usize>)> = users
        .par_iter()
        .map(|(&user, record)| {
            let negatives = match sample_eval_negatives(user, split, NUM_NEGATIVES, seed) {
                Ok(n) => n,
                Err(e) => {
                    log::warn!("skipping user {user}: {e}");
                    return (user, None);
                }
            };
            let (history, truth) = match mode {
                Mode::Valid => (record.train.clone(), record.valid),
                Mode::Test => {
                    let mut h = record.train.clone();
                    h.push(record.valid);
                    (h, record.test)
                }
            };
            (user, Some(rank_of_truth(model, &history, truth, &negatives)))
        })
        .collect();

    let skipped = outcomes.iter().filter(|(_, r)| r.is_none()).count();
    let ranks: BTreeMap<UserId, usize> = outcomes.into_iter().filter_map(|(u, r)| r.map(|r| (u, r))).collect();
    if ranks.is_empty() {
        return Err(Error::Empty("no user could be evaluated"));
    }
    Ok(EvalReport::from_ranks(ranks, seed, mode, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean_hr: f64,
    pub mean_ndcg: f64,
    pub std_hr: f64,
    pub std_ndcg: f64,
    pub n_seeds: usize,
}

/// Means and sample standard deviations across per-seed reports.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to aggregate"));
    }
    let hr: Vec<f64> = reports.iter().map(|r| r.hr_at_10).collect();
    let ndcg: Vec<f64> = reports.iter().map(|r| r.ndcg_at_10).collect();
    let (mean_hr, std_hr) = mean_std(&hr);
    let (mean_ndcg, std_ndcg) = mean_std(&ndcg);
    Ok(AggregateReport {
        mean_hr,
        mean_ndcg,
        std_hr,
        std_ndcg,
        n_seeds: reports.len(),
    })
}

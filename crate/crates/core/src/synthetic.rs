//! Planted skip-pattern corpus for desk-scale experiments.
//!
//! Every item has a short fixed list of successors. Walks follow those
//! successors, but with probability `skip_prob` a random distractor is placed
//! between an item and its successor, so the influential predecessor sits two
//! steps back.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::types::{Interaction, ItemId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub successors: usize,
    pub skip_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 2000,
            items: 200,
            successors: 2,
            skip_prob: 0.3,
            min_len: 10,
            max_len: 40,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items < 2 {
            return Err(Error::config("synthetic corpus needs users and at least 2 items"));
        }
        if self.successors == 0 || self.successors >= self.items {
            return Err(Error::config("successors must be in 1..items"));
        }
        if !(0.0..=1.0).contains(&self.skip_prob) {
            return Err(Error::config("skip_prob must be in [0, 1]"));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::config("need 2 <= min_len <= max_len"));
        }
        Ok(())
    }
}

/// The planted transition structure, exposed so tests can check a trained
/// model against it.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// `successors[i - 1]` lists the successors of item `i`.
    pub successors: Vec<Vec<ItemId>>,
}

impl Chain {
    pub fn of(&self, item: ItemId) -> &[ItemId] {
        &self.successors[item.index() - 1]
    }
}

pub fn planted_chain(config: &SyntheticConfig) -> Result<Chain> {
    config.validate()?;
    let mut rng = substream(config.seed, Purpose::Synthetic, u64::MAX);
    let n = config.items as u32;
    let successors = (1..=n)
        .map(|item| {
            let picks = rand::seq::index::sample(&mut rng, config.items - 1, config.successors);
            picks
                .into_iter()
                .map(|p| {
                    // skip over `item` itself
                    let id = p as u32 + 1;
                    ItemId(if id >= item { id + 1 } else { id })
                })
                .collect()
        })
        .collect();
    Ok(Chain { successors })
}

/// Interactions with dense ids: users `1..=users`, items `1..=items`, and
/// strictly increasing timestamps within each user.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<Interaction>> {
    let chain = planted_chain(config)?;
    let n = config.items as u32;
    let mut out = Vec::new();
    for u in 1..=config.users as u32 {
        let mut rng = substream(config.seed, Purpose::Synthetic, u as u64);
        let len = rng.gen_range(config.min_len..=config.max_len);
        let mut items = Vec::with_capacity(len);
        let mut current = ItemId(rng.gen_range(1..=n));
        items.push(current);
        while items.len() < len {
            if rng.gen_bool(config.skip_prob) && items.len() + 1 < len {
                items.push(ItemId(rng.gen_range(1..=n)));
            }
            let next = chain.of(current);
            current = next[rng.gen_range(0..next.len())];
            items.push(current);
        }
        out.extend(items.into_iter().enumerate().map(|(t, item)| Interaction {
            user: UserId(u),
            item,
            timestamp: t as i64,
        }));
    }
    Ok(out)
}

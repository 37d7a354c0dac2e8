//! Training-sequence augmentation.
//!
//! Four strategies manipulate a sequence directly:
//!
//! - noise injection (NI): drop the first item, insert an item the user never
//!   interacted with at a random position;
//! - redundancy injection (RI): the same, but the inserted item is drawn from
//!   the sequence itself;
//! - item masking (IM): replace `k = max(1, floor(p * m))` random positions by
//!   the mask sentinel;
//! - synonym replacement (SR): swap one position for one of its `s` nearest
//!   neighbours in an item embedding space.
//!
//! Two select subsets of the original instead: subset split (SS) keeps
//! prefixes, sliding window (SW) keeps contiguous windows of a fixed length.
//!
//! Per-sequence functions return only the artificial sequences. The original
//! is always kept by [`augment_dataset`], so `n_aug = 1` means "no
//! augmentation" for every strategy.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{ItemEmbeddingTable, SynonymCache, SynonymSource};
use crate::error::{Error, Result};
use crate::preprocess::Sequences;
use crate::rng::{substream, Purpose};
use crate::types::{ItemId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "NONE", alias = "none")]
    None,
    #[serde(rename = "NI", alias = "ni")]
    NoiseInjection,
    #[serde(rename = "RI", alias = "ri")]
    RedundancyInjection,
    #[serde(rename = "IM", alias = "im")]
    ItemMasking,
    #[serde(rename = "SR", alias = "sr")]
    SynonymReplacement,
    #[serde(rename = "SS", alias = "ss")]
    SubsetSplit,
    #[serde(rename = "SW", alias = "sw")]
    SlidingWindow,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::None,
        Strategy::NoiseInjection,
        Strategy::RedundancyInjection,
        Strategy::ItemMasking,
        Strategy::SynonymReplacement,
        Strategy::SubsetSplit,
        Strategy::SlidingWindow,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Strategy::None => "NONE",
            Strategy::NoiseInjection => "NI",
            Strategy::RedundancyInjection => "RI",
            Strategy::ItemMasking => "IM",
            Strategy::SynonymReplacement => "SR",
            Strategy::SubsetSplit => "SS",
            Strategy::SlidingWindow => "SW",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub strategy: Strategy,
    /// Training sequences per original: the original plus `n_aug - 1` artificial ones.
    pub n_aug: usize,
    /// Fraction of positions masked by IM.
    pub mask_p: Option<f64>,
    /// Neighbours per replaced position for SR.
    pub synonyms: Option<usize>,
    pub seed: u64,
}

impl AugmentationConfig {
    pub fn none(seed: u64) -> Self {
        AugmentationConfig {
            strategy: Strategy::None,
            n_aug: 1,
            mask_p: None,
            synonyms: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_aug == 0 {
            return Err(Error::config("n_aug must be >= 1"));
        }
        match self.strategy {
            Strategy::ItemMasking => match self.mask_p {
                Some(p) if p > 0.0 && p < 1.0 => {}
                Some(p) => return Err(Error::config(format!("mask ratio must lie in (0, 1), got {p}"))),
                None => return Err(Error::config("item masking requires a mask ratio")),
            },
            Strategy::SynonymReplacement => match self.synonyms {
                Some(s) if s >= 1 => {}
                _ => return Err(Error::config("synonym replacement requires a synonym count >= 1")),
            },
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Artificial(Strategy),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Artificial(s) => f.write_str(s.code()),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("original") {
            Ok(Provenance::Original)
        } else {
            s.parse().map(Provenance::Artificial)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedSequence {
    pub user: UserId,
    /// May contain [`ItemId::MASK`] (item masking only).
    pub items: Vec<ItemId>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugmentedTrainSet {
    /// Ordered by user id; per user the original comes first.
    pub sequences: Vec<AugmentedSequence>,
    /// Users whose sequence did not meet the strategy's preconditions and
    /// therefore contribute only their original.
    pub ineligible: Vec<UserId>,
}

impl AugmentedTrainSet {
    pub fn originals(train: &Sequences) -> Self {
        AugmentedTrainSet {
            sequences: train
                .values()
                .map(|s| AugmentedSequence {
                    user: s.user,
                    items: s.items.clone(),
                    provenance: Provenance::Original,
                })
                .collect(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn artificial_count(&self) -> usize {
        self.sequences
            .iter()
            .filter(|s| s.provenance != Provenance::Original)
            .count()
    }

    pub fn item_lists(&self) -> impl Iterator<Item = &[ItemId]> {
        self.sequences.iter().map(|s| s.items.as_slice())
    }

    /// CSV with header `user,items,provenance`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "items", "provenance"])?;
        for s in &self.sequences {
            let items: Vec<String> = s.items.iter().map(|i| i.0.to_string()).collect();
            w.write_record([s.user.0.to_string(), items.join(" "), s.provenance.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut sequences = Vec::new();
        for (idx, row) in r.records().enumerate() {
            let row = row?;
            let line = idx + 2;
            let bad = |what: &str| Error::parse(line, format!("invalid {what}"));
            if row.len() < 2 {
                return Err(bad("row"));
            }
            let user = UserId(row[0].trim().parse().map_err(|_| bad("user id"))?);
            let items = row[1]
                .split_whitespace()
                .map(|t| t.parse().map(ItemId).map_err(|_| bad("item id")))
                .collect::<Result<Vec<_>>>()?;
            let provenance = match row.get(2) {
                Some(p) => p.trim().parse()?,
                None => Provenance::Original,
            };
            sequences.push(AugmentedSequence {
                user,
                items,
                provenance,
            });
        }
        Ok(AugmentedTrainSet {
            sequences,
            ..Default::default()
        })
    }
}

/// Number of positions IM masks in a sequence of length `m`.
pub fn mask_count(p: f64, m: usize) -> usize {
    ((p * m as f64 + 1e-9).floor() as usize).max(1)
}

/// Window length SW uses so that a length-`m` sequence yields about `n_aug` windows.
pub fn window_len(m: usize, n_aug: usize) -> usize {
    (m + 1).saturating_sub(n_aug).max(2)
}

/// Uniform draw from `catalog \ exclude`.
fn draw_outside<R: Rng>(
    catalog: &[ItemId],
    exclude: &HashSet<ItemId>,
    outside: &mut Option<Vec<ItemId>>,
    rng: &mut R,
) -> ItemId {
    // Rejection sampling while the excluded share is small; an explicit
    // complement list otherwise. Both are uniform over the complement.
    if exclude.len() * 2 <= catalog.len() {
        loop {
            let cand = catalog[rng.gen_range(0..catalog.len())];
            if !exclude.contains(&cand) {
                return cand;
            }
        }
    }
    let pool = outside.get_or_insert_with(|| catalog.iter().copied().filter(|i| !exclude.contains(i)).collect());
    pool[rng.gen_range(0..pool.len())]
}

fn inject(seq: &[ItemId], item: ItemId, pos: usize) -> Vec<ItemId> {
    let mut out = Vec::with_capacity(seq.len());
    out.extend_from_slice(&seq[1..]);
    out.insert(pos, item);
    out
}

/// Noise injection. `catalog` must be sorted and free of duplicates.
///
/// Each artificial sequence drops the first item and inserts a uniform draw
/// from `catalog \ set(seq)` at a uniform position among the `m` slots of
/// the remaining `m - 1` items. Sequences shorter than 2 yield nothing.
pub fn augment_ni<R: Rng>(seq: &[ItemId], n_aug: usize, catalog: &[ItemId], rng: &mut R) -> Result<Vec<Vec<ItemId>>> {
    let m = seq.len();
    if m < 2 || n_aug <= 1 {
        return Ok(Vec::new());
    }
    let present: HashSet<ItemId> = seq.iter().copied().collect();
    if catalog.iter().all(|i| present.contains(i)) {
        return Err(Error::NoNegativeCandidates);
    }
    let mut outside = None;
    Ok((1..n_aug)
        .map(|_| {
            let item = draw_outside(catalog, &present, &mut outside, rng);
            let pos = rng.gen_range(0..m);
            inject(seq, item, pos)
        })
        .collect())
}

/// Redundancy injection: like [`augment_ni`] but the inserted item is drawn
/// uniformly from the distinct items of `seq`.
pub fn augment_ri<R: Rng>(seq: &[ItemId], n_aug: usize, rng: &mut R) -> Vec<Vec<ItemId>> {
    let m = seq.len();
    if m < 2 || n_aug <= 1 {
        return Vec::new();
    }
    let distinct: Vec<ItemId> = seq.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    (1..n_aug)
        .map(|_| {
            let item = distinct[rng.gen_range(0..distinct.len())];
            let pos = rng.gen_range(0..m);
            inject(seq, item, pos)
        })
        .collect()
}

/// Item masking: each artificial sequence has [`mask_count`] distinct
/// positions replaced by [`ItemId::MASK`].
pub fn augment_im<R: Rng>(seq: &[ItemId], n_aug: usize, p: f64, rng: &mut R) -> Vec<Vec<ItemId>> {
    let m = seq.len();
    if m < 2 || n_aug <= 1 {
        return Vec::new();
    }
    let k = mask_count(p, m).min(m - 1);
    (1..n_aug)
        .map(|_| {
            let mut out = seq.to_vec();
            for pos in index::sample(rng, m, k) {
                out[pos] = ItemId::MASK;
            }
            out
        })
        .collect()
}

/// Synonym replacement.
///
/// Picks `c = ceil((n_aug - 1) / s)` distinct positions and, for each, emits
/// one sequence per top-`s` neighbour of the item there, stopping after
/// `n_aug - 1` sequences. When `c > m` all `m` positions are drawn and then
/// revisited round-robin, which repeats variants.
pub fn augment_sr<R: Rng, S: SynonymSource + ?Sized>(
    seq: &[ItemId],
    n_aug: usize,
    s: usize,
    synonyms: &S,
    rng: &mut R,
) -> Result<Vec<Vec<ItemId>>> {
    let m = seq.len();
    if m == 0 || n_aug <= 1 {
        return Ok(Vec::new());
    }
    if s == 0 {
        return Err(Error::config("synonym count must be >= 1"));
    }
    let wanted = n_aug - 1;
    let rounds = wanted.div_ceil(s);
    let mut lists = Vec::with_capacity(rounds.min(m));
    for pos in index::sample(rng, m, rounds.min(m)) {
        lists.push((pos, synonyms.synonyms(seq[pos], s)?));
    }
    Ok((0..rounds)
        .flat_map(|r| {
            let (pos, neigh) = &lists[r % lists.len()];
            neigh.iter().map(move |&n| {
                let mut out = seq.to_vec();
                out[*pos] = n;
                out
            })
        })
        .take(wanted)
        .collect())
}

/// Subset split: prefixes of length `m - 1` down to `max(2, m - (n_aug - 1))`.
pub fn augment_ss(seq: &[ItemId], n_aug: usize) -> Vec<Vec<ItemId>> {
    let m = seq.len();
    if m < 3 || n_aug <= 1 {
        return Vec::new();
    }
    let shortest = (m - (n_aug - 1).min(m)).max(2);
    (shortest..m).rev().map(|len| seq[..len].to_vec()).collect()
}

/// Sliding window: every contiguous window of length [`window_len`]; nothing
/// when the window would be the whole sequence.
pub fn augment_sw(seq: &[ItemId], n_aug: usize) -> Vec<Vec<ItemId>> {
    let m = seq.len();
    if m < 3 {
        return Vec::new();
    }
    let len = window_len(m, n_aug);
    if len >= m {
        return Vec::new();
    }
    seq.windows(len).map(<[ItemId]>::to_vec).collect()
}

fn eligible(strategy: Strategy, m: usize) -> bool {
    match strategy {
        Strategy::None => true,
        Strategy::NoiseInjection | Strategy::RedundancyInjection | Strategy::ItemMasking => m >= 2,
        Strategy::SynonymReplacement => m >= 1,
        Strategy::SubsetSplit | Strategy::SlidingWindow => m >= 3,
    }
}

/// Applies `config` to every training sequence. `catalog` is the item
/// universe NI draws from; `embeddings` is required by SR only.
///
/// Each user draws from its own random stream, so the result does not depend
/// on iteration order and users are processed in parallel.
pub fn augment_dataset(
    train: &Sequences,
    catalog: &BTreeSet<ItemId>,
    config: &AugmentationConfig,
    embeddings: Option<&ItemEmbeddingTable>,
) -> Result<AugmentedTrainSet> {
    config.validate()?;
    if config.strategy == Strategy::None || config.n_aug == 1 {
        return Ok(AugmentedTrainSet::originals(train));
    }
    let cache = match (config.strategy, embeddings) {
        (Strategy::SynonymReplacement, Some(table)) => {
            let items: BTreeSet<ItemId> = train.values().flat_map(|s| s.items.iter().copied()).collect();
            for &item in &items {
                if !table.contains(item) {
                    return Err(Error::MissingEmbedding(item));
                }
            }
            Some(SynonymCache::build(table, items, config.synonyms.unwrap_or(1))?)
        }
        (Strategy::SynonymReplacement, None) => {
            return Err(Error::config("synonym replacement requires an embedding table"))
        }
        _ => None,
    };
    let catalog: Vec<ItemId> = catalog.iter().copied().collect();
    let n_aug = config.n_aug;

    let per_user: Vec<_> = train
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|seq| -> Result<(UserId, bool, Vec<Vec<ItemId>>)> {
            let items = &seq.items;
            if !eligible(config.strategy, items.len()) {
                return Ok((seq.user, false, Vec::new()));
            }
            let mut rng = substream(config.seed, Purpose::Augment, seq.user.0 as u64);
            let out = match config.strategy {
                Strategy::None => Ok(Vec::new()),
                Strategy::NoiseInjection => augment_ni(items, n_aug, &catalog, &mut rng),
                Strategy::RedundancyInjection => Ok(augment_ri(items, n_aug, &mut rng)),
                Strategy::ItemMasking => Ok(augment_im(items, n_aug, config.mask_p.unwrap_or(0.2), &mut rng)),
                Strategy::SynonymReplacement => {
                    let cache = cache.as_ref().expect("built above");
                    augment_sr(items, n_aug, config.synonyms.unwrap_or(1), cache, &mut rng)
                }
                Strategy::SubsetSplit => Ok(augment_ss(items, n_aug)),
                Strategy::SlidingWindow => Ok(augment_sw(items, n_aug)),
            }
            .map_err(|e| Error::ForUser {
                user: seq.user,
                source: Box::new(e),
            })?;
            Ok((seq.user, true, out))
        })
        .collect::<Result<_>>()?;

    let mut set = AugmentedTrainSet::default();
    for ((user, was_eligible, artificial), seq) in per_user.into_iter().zip(train.values()) {
        if !was_eligible {
            log::warn!(
                "user {user}: sequence of length {} is too short for {}",
                seq.len(),
                config.strategy
            );
            set.ineligible.push(user);
        }
        set.sequences.push(AugmentedSequence {
            user,
            items: seq.items.clone(),
            provenance: Provenance::Original,
        });
        set.sequences
            .extend(artificial.into_iter().map(|items| AugmentedSequence {
                user,
                items,
                provenance: Provenance::Artificial(config.strategy),
            }));
    }
    Ok(set)
}

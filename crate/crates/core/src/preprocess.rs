//! Per-user sequences, cold-start filtering, leave-one-out splitting and
//! training-fraction sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetStats;
use crate::rng::{substream, Purpose};
use crate::types::{Interaction, ItemId, UserId};

/// A user's items in ascending interaction time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

impl ItemSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub type Sequences = BTreeMap<UserId, ItemSequence>;

/// Groups interactions by user, ordered by timestamp. Equal timestamps keep
/// input order.
pub fn build_sequences(interactions: &[Interaction]) -> Sequences {
    let mut grouped: BTreeMap<UserId, Vec<(i64, ItemId)>> = BTreeMap::new();
    for it in interactions {
        grouped.entry(it.user).or_default().push((it.timestamp, it.item));
    }
    grouped
        .into_iter()
        .map(|(user, mut events)| {
            events.sort_by_key(|&(ts, _)| ts);
            let items = events.into_iter().map(|(_, item)| item).collect();
            (user, ItemSequence { user, items })
        })
        .collect()
}

/// Drops items with fewer than `threshold` occurrences, then users whose
/// remaining sequence is shorter than `threshold`. One pass, not iterated.
pub fn filter_cold_start(sequences: &Sequences, threshold: usize) -> Result<Sequences> {
    let mut freq: HashMap<ItemId, usize> = HashMap::new();
    for seq in sequences.values() {
        for &item in &seq.items {
            *freq.entry(item).or_default() += 1;
        }
    }
    let out: Sequences = sequences
        .iter()
        .filter_map(|(&user, seq)| {
            let items: Vec<ItemId> = seq.items.iter().copied().filter(|i| freq[i] >= threshold).collect();
            (items.len() >= threshold).then_some((user, ItemSequence { user, items }))
        })
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    Ok(out)
}

pub fn sequence_stats(sequences: &Sequences) -> Result<DatasetStats> {
    let items: BTreeSet<ItemId> = sequences.values().flat_map(|s| s.items.iter().copied()).collect();
    let interactions = sequences.values().map(ItemSequence::len).sum();
    DatasetStats::from_counts(sequences.len(), items.len(), interactions)
}

/// One user's leave-one-out split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train: Vec<ItemId>,
    pub valid: ItemId,
    pub test: ItemId,
}

impl UserSplit {
    /// `train ++ [valid] ++ [test]`.
    pub fn full_sequence(&self) -> Vec<ItemId> {
        let mut all = self.train.clone();
        all.push(self.valid);
        all.push(self.test);
        all
    }

    pub fn interacted(&self) -> BTreeSet<ItemId> {
        self.train.iter().copied().chain([self.valid, self.test]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub users: BTreeMap<UserId, UserSplit>,
    /// Union of every item in every part.
    pub catalog: BTreeSet<ItemId>,
}

impl SplitDataset {
    pub fn from_users(users: BTreeMap<UserId, UserSplit>) -> Self {
        let catalog = users.values().flat_map(|u| u.interacted()).collect();
        SplitDataset { users, catalog }
    }

    pub fn num_items(&self) -> usize {
        self.catalog.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn train_sequences(&self) -> Sequences {
        self.users
            .iter()
            .map(|(&user, split)| {
                (
                    user,
                    ItemSequence {
                        user,
                        items: split.train.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn valid_target(&self, user: UserId) -> Option<ItemId> {
        self.users.get(&user).map(|u| u.valid)
    }

    pub fn test_target(&self, user: UserId) -> Option<ItemId> {
        self.users.get(&user).map(|u| u.test)
    }
}

/// Last item for test, second to last for validation, the rest for training.
pub fn leave_one_out_split(sequences: &Sequences) -> Result<SplitDataset> {
    let mut users = BTreeMap::new();
    for (&user, seq) in sequences {
        let m = seq.len();
        if m < 3 {
            return Err(Error::SequenceTooShort { user, len: m });
        }
        users.insert(
            user,
            UserSplit {
                train: seq.items[..m - 2].to_vec(),
                valid: seq.items[m - 2],
                test: seq.items[m - 1],
            },
        );
    }
    if users.is_empty() {
        return Err(Error::Empty("no sequences to split"));
    }
    Ok(SplitDataset::from_users(users))
}

/// Number of users kept for `fraction`, rounding half up.
pub fn fraction_size(fraction: f64, num_users: usize) -> usize {
    // The epsilon absorbs representation error such as 0.1 * 6040 = 604.0000000000001
    // or 0.35 * 10 = 3.4999999999999996.
    (fraction * num_users as f64 + 0.5 + 1e-9).floor() as usize
}

/// Keeps a uniform random subset of `round(fraction * |U|)` users.
pub fn sample_fraction(split: &SplitDataset, fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(split.clone());
    }
    let n = split.users.len();
    let keep = fraction_size(fraction, n).min(n);
    if keep == 0 {
        return Err(Error::EmptySample { fraction });
    }
    let mut rng = substream(seed, Purpose::Fraction, 0);
    let chosen: BTreeSet<usize> = index::sample(&mut rng, n, keep).into_iter().collect();
    let users = split
        .users
        .iter()
        .enumerate()
        .filter(|(i, _)| chosen.contains(i))
        .map(|(_, (&u, s))| (u, s.clone()))
        .collect();
    Ok(SplitDataset::from_users(users))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub stats: DatasetStats,
    pub min_actions: usize,
    pub fraction: f64,
    pub seed: u64,
    pub num_split_users: usize,
    pub num_catalog_items: usize,
}

/// Writes `train.csv`, `valid.csv`, `test.csv` and `stats.json` into `dir`.
pub fn write_split_dir(dir: &Path, split: &SplitDataset, manifest: &SplitManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut train = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("train.csv"))?));
    train.write_record(["user", "items"])?;
    for (user, s) in &split.users {
        let items: Vec<String> = s.train.iter().map(|i| i.0.to_string()).collect();
        train.write_record([user.0.to_string(), items.join(" ")])?;
    }
    train.flush()?;
    for (name, pick) in [("valid.csv", true), ("test.csv", false)] {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?));
        w.write_record(["user", "item"])?;
        for (user, s) in &split.users {
            let item = if pick { s.valid } else { s.test };
            w.write_record([user.0.to_string(), item.0.to_string()])?;
        }
        w.flush()?;
    }
    let mut stats = BufWriter::new(File::create(dir.join("stats.json"))?);
    serde_json::to_writer_pretty(&mut stats, manifest)?;
    stats.write_all(b"\n")?;
    Ok(())
}

fn parse_id(raw: &str, path: &Path, line: usize) -> Result<u32> {
    raw.trim().parse::<u32>().map_err(|_| Error::Format {
        path: path.display().to_string(),
        message: format!("line {line}: invalid id `{raw}`"),
    })
}

/// Reads `user,space-separated-items` rows.
pub fn read_sequence_csv(path: &Path) -> Result<Sequences> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Sequences::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx + 2;
        let user = UserId(parse_id(&row[0], path, line)?);
        let items = row
            .get(1)
            .unwrap_or("")
            .split_whitespace()
            .map(|t| parse_id(t, path, line).map(ItemId))
            .collect::<Result<Vec<_>>>()?;
        out.insert(user, ItemSequence { user, items });
    }
    Ok(out)
}

fn read_targets(path: &Path) -> Result<BTreeMap<UserId, ItemId>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx + 2;
        out.insert(
            UserId(parse_id(&row[0], path, line)?),
            ItemId(parse_id(&row[1], path, line)?),
        );
    }
    Ok(out)
}

pub fn read_split_dir(dir: &Path) -> Result<SplitDataset> {
    let train = read_sequence_csv(&dir.join("train.csv"))?;
    let valid = read_targets(&dir.join("valid.csv"))?;
    let test = read_targets(&dir.join("test.csv"))?;
    let mut users = BTreeMap::new();
    for (user, seq) in train {
        let missing = |what: &str| Error::Format {
            path: dir.display().to_string(),
            message: format!("user {user} has no {what} target"),
        };
        let valid = *valid.get(&user).ok_or_else(|| missing("validation"))?;
        let test = *test.get(&user).ok_or_else(|| missing("test"))?;
        users.insert(
            user,
            UserSplit {
                train: seq.items,
                valid,
                test,
            },
        );
    }
    if users.is_empty() {
        return Err(Error::Empty("split directory holds no users"));
    }
    Ok(SplitDataset::from_users(users))
}

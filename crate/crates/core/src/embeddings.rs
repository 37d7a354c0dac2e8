//! Skip-gram item embeddings with negative sampling, and nearest-neighbour
//! ("synonym") lookup by cosine similarity.
//!
//! Training is single-threaded SGD so that a seed fully determines the table.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, sigmoid};
use crate::rng::{substream, Purpose};
use crate::types::ItemId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramHyper {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for SkipGramHyper {
    fn default() -> Self {
        SkipGramHyper {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_lr: 0.0001,
            seed: 42,
        }
    }
}

impl SkipGramHyper {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 {
            return Err(Error::config("skip-gram dim, window and negatives must be >= 1"));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.learning_rate) {
            return Err(Error::config("skip-gram needs 0 < min_lr <= learning_rate"));
        }
        Ok(())
    }
}

/// Dense vectors per item, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbeddingTable {
    dim: usize,
    items: Vec<ItemId>,
    rows: HashMap<ItemId, usize>,
    vectors: Vec<f64>,
    norms: Vec<f64>,
}

impl ItemEmbeddingTable {
    pub fn new(dim: usize, entries: Vec<(ItemId, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dim must be >= 1"));
        }
        let mut items = Vec::with_capacity(entries.len());
        let mut rows = HashMap::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for (item, v) in entries {
            if v.len() != dim {
                return Err(Error::config(format!(
                    "vector for item {item} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!("vector for item {item} is not finite")));
            }
            if rows.insert(item, items.len()).is_some() {
                return Err(Error::config(format!("item {item} appears twice")));
            }
            items.push(item);
            vectors.extend_from_slice(&v);
        }
        Ok(Self::from_parts(dim, items, vectors))
    }

    fn from_parts(dim: usize, items: Vec<ItemId>, vectors: Vec<f64>) -> Self {
        let rows = items.iter().enumerate().map(|(i, &item)| (item, i)).collect();
        let norms = vectors.chunks(dim).map(|v| dot(v, v).sqrt()).collect();
        ItemEmbeddingTable {
            dim,
            items,
            rows,
            vectors,
            norms,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in row order.
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.rows.contains_key(&item)
    }

    pub fn vector(&self, item: ItemId) -> Option<&[f64]> {
        self.rows
            .get(&item)
            .map(|&r| &self.vectors[r * self.dim..(r + 1) * self.dim])
    }

    /// Cosine similarity; 0 if either vector is zero.
    pub fn cosine(&self, a: ItemId, b: ItemId) -> Option<f64> {
        let (ra, rb) = (*self.rows.get(&a)?, *self.rows.get(&b)?);
        Some(self.cosine_rows(ra, rb))
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.vectors[r * self.dim..(r + 1) * self.dim]
    }

    fn cosine_rows(&self, ra: usize, rb: usize) -> f64 {
        let denom = self.norms[ra] * self.norms[rb];
        if denom == 0.0 {
            0.0
        } else {
            dot(self.row(ra), self.row(rb)) / denom
        }
    }

    /// Binary layout, little endian: `u32 dim, u32 count`, then per row
    /// `u32 item-id` followed by `dim` `f32` values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.items.len() as u32).to_le_bytes())?;
        for (r, item) in self.items.iter().enumerate() {
            out.write_all(&item.0.to_le_bytes())?;
            for &x in self.row(r) {
                out.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 4];
        let mut next = |input: &mut R| -> Result<[u8; 4]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let dim = u32::from_le_bytes(next(&mut input)?) as usize;
        let count = u32::from_le_bytes(next(&mut input)?) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let item = ItemId(u32::from_le_bytes(next(&mut input)?));
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(f32::from_le_bytes(next(&mut input)?) as f64);
            }
            entries.push((item, v));
        }
        Self::new(dim, entries)
    }

    /// `item,v0,v1,...` rows without a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for (r, item) in self.items.iter().enumerate() {
            let mut rec = vec![item.0.to_string()];
            rec.extend(self.row(r).iter().map(|x| format!("{x}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Anything that can answer "the `s` items most similar to `item`".
pub trait SynonymSource {
    fn synonyms(&self, item: ItemId, s: usize) -> Result<Vec<ItemId>>;
}

impl SynonymSource for ItemEmbeddingTable {
    fn synonyms(&self, item: ItemId, s: usize) -> Result<Vec<ItemId>> {
        top_synonyms(self, item, s)
    }
}

/// The `s` items with highest cosine similarity to `item`, self excluded,
/// ties broken by ascending item id.
pub fn top_synonyms(table: &ItemEmbeddingTable, item: ItemId, s: usize) -> Result<Vec<ItemId>> {
    let &query = table.rows.get(&item).ok_or(Error::MissingEmbedding(item))?;
    if s >= table.len() {
        return Err(Error::config(format!(
            "asked for {s} synonyms but the table holds only {} items",
            table.len()
        )));
    }
    let mut scored: Vec<(f64, ItemId)> = (0..table.len())
        .filter(|&r| r != query)
        .map(|r| (table.cosine_rows(query, r), table.items[r]))
        .collect();
    let order = |a: &(f64, ItemId), b: &(f64, ItemId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if s < scored.len() {
        scored.select_nth_unstable_by(s, order);
        scored.truncate(s);
    }
    scored.sort_by(order);
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Precomputed neighbour lists for a fixed set of items.
#[derive(Debug, Clone, Default)]
pub struct SynonymCache {
    s: usize,
    lists: HashMap<ItemId, Vec<ItemId>>,
}

impl SynonymCache {
    pub fn build<I: IntoIterator<Item = ItemId>>(table: &ItemEmbeddingTable, items: I, s: usize) -> Result<Self> {
        let mut lists = HashMap::new();
        for item in items {
            if let std::collections::hash_map::Entry::Vacant(e) = lists.entry(item) {
                e.insert(top_synonyms(table, item, s)?);
            }
        }
        Ok(SynonymCache { s, lists })
    }
}

impl SynonymSource for SynonymCache {
    fn synonyms(&self, item: ItemId, s: usize) -> Result<Vec<ItemId>> {
        let list = self.lists.get(&item).ok_or(Error::MissingEmbedding(item))?;
        if s > self.s {
            return Err(Error::config(format!(
                "cache holds {} synonyms per item, asked for {s}",
                self.s
            )));
        }
        Ok(list[..s].to_vec())
    }
}

/// Negative-sampling loss for one (center, context, negatives) group:
/// `-log σ(c·o) - Σ log σ(-c·n)`.
pub fn skipgram_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let pos = -log_sigmoid(dot(center, context));
    let neg: f64 = negatives.iter().map(|n| -log_sigmoid(-dot(center, n))).sum();
    pos + neg
}

/// Gradients of [`skipgram_loss`] with respect to the center, context and
/// each negative vector.
pub fn skipgram_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let g_pos = sigmoid(dot(center, context)) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|&o| g_pos * o).collect();
    let d_context = center.iter().map(|&c| g_pos * c).collect();
    let d_negs = negatives
        .iter()
        .map(|n| {
            let g = sigmoid(dot(center, n));
            for (dc, &x) in d_center.iter_mut().zip(n.iter()) {
                *dc += g * x;
            }
            center.iter().map(|&c| g * c).collect()
        })
        .collect();
    (d_center, d_context, d_negs)
}

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -log(1 + e^{-x}), evaluated without overflow.
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Mean loss per (center, context) pair, one entry per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkipGramReport {
    pub epoch_loss: Vec<f64>,
    pub pairs_per_epoch: usize,
}

pub fn train_skipgram<S: AsRef<[ItemId]>>(sequences: &[S], hyper: &SkipGramHyper) -> Result<ItemEmbeddingTable> {
    train_skipgram_with_report(sequences, hyper).map(|(table, _)| table)
}

pub fn train_skipgram_with_report<S: AsRef<[ItemId]>>(
    sequences: &[S],
    hyper: &SkipGramHyper,
) -> Result<(ItemEmbeddingTable, SkipGramReport)> {
    hyper.validate()?;
    if sequences.is_empty() {
        return Err(Error::Empty("skip-gram needs at least one sequence"));
    }

    let mut freq: BTreeMap<ItemId, u64> = BTreeMap::new();
    for seq in sequences {
        for &item in seq.as_ref() {
            if item.is_mask() {
                return Err(Error::SentinelInSequence);
            }
            *freq.entry(item).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::Empty("skip-gram sequences hold no items"));
    }
    let items: Vec<ItemId> = freq.keys().copied().collect();
    let rows: HashMap<ItemId, usize> = items.iter().enumerate().map(|(i, &it)| (it, i)).collect();
    let corpus: Vec<Vec<usize>> = sequences
        .iter()
        .map(|s| s.as_ref().iter().map(|i| rows[i]).collect())
        .collect();

    let dim = hyper.dim;
    let n = items.len();
    let mut rng = substream(hyper.seed, Purpose::Embedding, 0);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut output = vec![0.0; n * dim];

    let noise = WeightedIndex::new(freq.values().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::config(format!("noise distribution: {e}")))?;

    let pairs_per_epoch: usize = corpus
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|c| c.min(hyper.window) + (s.len() - 1 - c).min(hyper.window))
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * hyper.epochs).max(1) as f64;

    let mut report = SkipGramReport {
        epoch_loss: Vec::with_capacity(hyper.epochs),
        pairs_per_epoch,
    };
    let mut grad_center = vec![0.0; dim];
    let mut negs: Vec<usize> = Vec::with_capacity(hyper.negatives);
    let mut step = 0usize;

    for _ in 0..hyper.epochs {
        let mut epoch_loss = 0.0;
        for seq in &corpus {
            for (c, &center) in seq.iter().enumerate() {
                let lo = c.saturating_sub(hyper.window);
                let hi = (c + hyper.window).min(seq.len() - 1);
                for (o, &context) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                    if o == c {
                        continue;
                    }
                    let progress = step as f64 / total;
                    let lr = (hyper.learning_rate - (hyper.learning_rate - hyper.min_lr) * progress).max(hyper.min_lr);
                    step += 1;

                    negs.clear();
                    while negs.len() < hyper.negatives {
                        let draw = noise.sample(&mut rng);
                        if draw != context || n == 1 {
                            negs.push(draw);
                        }
                    }

                    grad_center.iter_mut().for_each(|g| *g = 0.0);
                    let cv = center * dim..(center + 1) * dim;
                    for (k, &target) in std::iter::once(&context).chain(negs.iter()).enumerate() {
                        let label = if k == 0 { 1.0 } else { 0.0 };
                        let ov = target * dim..(target + 1) * dim;
                        let score = dot(&input[cv.clone()], &output[ov.clone()]);
                        let sig = sigmoid(score);
                        epoch_loss -= if k == 0 {
                            log_sigmoid(score)
                        } else {
                            log_sigmoid(-score)
                        };
                        // d loss / d score = σ(score) - label
                        let g = sig - label;
                        for d in 0..dim {
                            grad_center[d] += g * output[ov.start + d];
                            output[ov.start + d] -= lr * g * input[cv.start + d];
                        }
                    }
                    for d in 0..dim {
                        input[cv.start + d] -= lr * grad_center[d];
                    }
                }
            }
        }
        report.epoch_loss.push(epoch_loss / pairs_per_epoch.max(1) as f64);
    }

    Ok((ItemEmbeddingTable::from_parts(dim, items, input), report))
}

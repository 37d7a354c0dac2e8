//! Next-item scorers.
//!
//! Three reference models share one contract: given a history and a list of
//! candidate items, return one finite score per candidate. Rankings sort by
//! descending score with ties going to the lower item id.
//!
//! - popularity: how often the item was a training target;
//! - markov: first-order transition counts from the last history item, with a
//!   small popularity backoff;
//! - embedding: mean-pooled input embeddings of the history dotted with an
//!   output embedding per item, trained with a pairwise logistic loss.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{dot, sigmoid};
use crate::rng::{substream, Purpose};
use crate::types::ItemId;

pub const DEFAULT_MAX_CONTEXT: usize = 50;
pub const MARKOV_BACKOFF: f64 = 0.01;

/// One supervised example: the items seen so far and the item that followed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainPair<'a> {
    pub context: &'a [ItemId],
    pub target: ItemId,
}

/// All training pairs of a set of sequences, stored without copying contexts.
///
/// Sentinels are removed from each sequence up front. Every remaining
/// position with at least one predecessor becomes a pair whose context is the
/// last `max_context` items before it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    sequences: Vec<Vec<ItemId>>,
    index: Vec<(u32, u32)>,
    max_context: usize,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn get(&self, i: usize) -> TrainPair<'_> {
        let (s, t) = self.index[i];
        let seq = &self.sequences[s as usize];
        let t = t as usize;
        TrainPair {
            context: &seq[t.saturating_sub(self.max_context)..t],
            target: seq[t],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TrainPair<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Largest item id appearing anywhere in the pairs.
    pub fn max_item(&self) -> Option<ItemId> {
        self.sequences.iter().flatten().copied().max()
    }

    /// SHA-256 over the sentinel-free training sequences.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.max_context as u64).to_le_bytes());
        for seq in &self.sequences {
            h.update((seq.len() as u64).to_le_bytes());
            for item in seq {
                h.update(item.0.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn extract_pairs<'a, I>(sequences: I, max_context: usize) -> PairSet
where
    I: IntoIterator<Item = &'a [ItemId]>,
{
    let max_context = max_context.max(1);
    let mut set = PairSet {
        max_context,
        ..Default::default()
    };
    for seq in sequences {
        let compact: Vec<ItemId> = seq.iter().copied().filter(|i| !i.is_mask()).collect();
        if compact.len() < 2 {
            continue;
        }
        let s = set.sequences.len() as u32;
        set.index.extend((1..compact.len()).map(|t| (s, t as u32)));
        set.sequences.push(compact);
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Popularity,
    Markov,
    Embedding,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Popularity => "popularity",
            ModelKind::Markov => "markov",
            ModelKind::Embedding => "embedding",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "popularity" => Ok(ModelKind::Popularity),
            "markov" => Ok(ModelKind::Markov),
            "embedding" => Ok(ModelKind::Embedding),
            _ => Err(Error::config(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Popularity {
    counts: Vec<u64>,
}

impl Popularity {
    fn count(&self, item: ItemId) -> u64 {
        self.counts.get(item.index()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Markov {
    popularity: Popularity,
    transitions: HashMap<(ItemId, ItemId), u64>,
    backoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingHyper {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub negatives_per_pair: usize,
    pub seed: u64,
}

impl Default for EmbeddingHyper {
    fn default() -> Self {
        EmbeddingHyper {
            dim: 32,
            epochs: 5,
            lr: 0.05,
            negatives_per_pair: 1,
            seed: 42,
        }
    }
}

/// Half-width of the uniform initialisation of both embedding tables.
pub const EMBEDDING_INIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingScorer {
    dim: usize,
    /// Row `i` belongs to item id `i`; row 0 (the sentinel) is unused.
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingScorer {
    fn rows(&self) -> usize {
        self.input.len() / self.dim
    }

    fn in_row(&self, item: ItemId) -> Option<&[f64]> {
        let i = item.index();
        (i < self.rows()).then(|| &self.input[i * self.dim..(i + 1) * self.dim])
    }

    fn out_row(&self, item: ItemId) -> Option<&[f64]> {
        let i = item.index();
        (i < self.rows()).then(|| &self.output[i * self.dim..(i + 1) * self.dim])
    }

    fn context_vector(&self, history: &[ItemId]) -> Option<Vec<f64>> {
        let mut c = vec![0.0; self.dim];
        let mut n = 0usize;
        for &item in history {
            if let Some(row) = self.in_row(item) {
                c.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        let inv = 1.0 / n as f64;
        c.iter_mut().for_each(|x| *x *= inv);
        Some(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Popularity(Popularity),
    Markov(Markov),
    Embedding(EmbeddingScorer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    /// Histories are cut to their last `max_context` non-sentinel items.
    pub max_context: usize,
    pub params: ModelParams,
}

impl ScorerModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Popularity(_) => ModelKind::Popularity,
            ModelParams::Markov(_) => ModelKind::Markov,
            ModelParams::Embedding(_) => ModelKind::Embedding,
        }
    }

    fn truncate(&self, history: &[ItemId]) -> Vec<ItemId> {
        let clean: Vec<ItemId> = history.iter().copied().filter(|i| !i.is_mask()).collect();
        let start = clean.len().saturating_sub(self.max_context);
        clean[start..].to_vec()
    }

    /// One score per candidate, in candidate order.
    pub fn score_all(&self, history: &[ItemId], candidates: &[ItemId]) -> Vec<f64> {
        let history = self.truncate(history);
        match &self.params {
            ModelParams::Popularity(p) => candidates.iter().map(|&i| p.count(i) as f64).collect(),
            ModelParams::Markov(m) => match history.last() {
                Some(&last) => candidates
                    .iter()
                    .map(|&i| {
                        let t = m.transitions.get(&(last, i)).copied().unwrap_or(0) as f64;
                        t + m.backoff * m.popularity.count(i) as f64
                    })
                    .collect(),
                None => candidates
                    .iter()
                    .map(|&i| m.backoff * m.popularity.count(i) as f64)
                    .collect(),
            },
            ModelParams::Embedding(e) => match e.context_vector(&history) {
                Some(c) => candidates
                    .iter()
                    .map(|&i| e.out_row(i).map_or(0.0, |v| dot(&c, v)))
                    .collect(),
                None => vec![0.0; candidates.len()],
            },
        }
    }

    pub fn score(&self, history: &[ItemId], item: ItemId) -> f64 {
        self.score_all(history, &[item])[0]
    }
}

/// Descending score, ties to the lower item id.
pub fn rank_order(a: &(ItemId, f64), b: &(ItemId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Scores `candidates` and returns them in ranking order.
pub fn score_candidates(model: &ScorerModel, history: &[ItemId], candidates: &[ItemId]) -> Vec<(ItemId, f64)> {
    let scores = model.score_all(history, candidates);
    let mut ranked: Vec<(ItemId, f64)> = candidates.iter().copied().zip(scores).collect();
    ranked.sort_by(rank_order);
    ranked
}

fn popularity_counts(pairs: &PairSet) -> Popularity {
    let mut counts = vec![0u64; pairs.max_item().map_or(0, |i| i.index() + 1)];
    for p in pairs.iter() {
        counts[p.target.index()] += 1;
    }
    Popularity { counts }
}

pub fn train_popularity(pairs: &PairSet) -> ScorerModel {
    ScorerModel {
        max_context: pairs.max_context(),
        params: ModelParams::Popularity(popularity_counts(pairs)),
    }
}

pub fn train_markov(pairs: &PairSet) -> Result<ScorerModel> {
    if pairs.is_empty() {
        return Err(Error::Empty("markov model needs at least one training pair"));
    }
    let mut transitions = HashMap::new();
    for p in pairs.iter() {
        let last = *p.context.last().expect("contexts are non-empty");
        *transitions.entry((last, p.target)).or_insert(0) += 1;
    }
    Ok(ScorerModel {
        max_context: pairs.max_context(),
        params: ModelParams::Markov(Markov {
            popularity: popularity_counts(pairs),
            transitions,
            backoff: MARKOV_BACKOFF,
        }),
    })
}

/// Pairwise logistic loss `-log σ(c·t - c·n)` where `c` is the mean of the
/// context input vectors.
pub fn pairwise_loss(context: &[&[f64]], target: &[f64], negative: &[f64]) -> f64 {
    let c = mean_rows(context);
    let x = dot(&c, target) - dot(&c, negative);
    softplus(-x)
}

/// Gradients of [`pairwise_loss`]: one per context row, then target, then negative.
pub fn pairwise_grad(context: &[&[f64]], target: &[f64], negative: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let c = mean_rows(context);
    let x = dot(&c, target) - dot(&c, negative);
    let g = sigmoid(-x);
    let d_target: Vec<f64> = c.iter().map(|&v| -g * v).collect();
    let d_negative: Vec<f64> = c.iter().map(|&v| g * v).collect();
    let share = 1.0 / context.len() as f64;
    let d_row: Vec<f64> = target.iter().zip(negative).map(|(t, n)| -g * (t - n) * share).collect();
    (vec![d_row; context.len()], d_target, d_negative)
}

fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut c = vec![0.0; dim];
    for r in rows {
        c.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / rows.len().max(1) as f64;
    c.iter_mut().for_each(|x| *x *= inv);
    c
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean pairwise loss per (pair, negative), one entry per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScorerReport {
    pub epoch_loss: Vec<f64>,
}

pub fn train_embedding_scorer(pairs: &PairSet, items: &[ItemId], hyper: &EmbeddingHyper) -> Result<ScorerModel> {
    train_embedding_scorer_with_report(pairs, items, hyper).map(|(m, _)| m)
}

/// Trains the embedding scorer. `items` is the item universe negatives are
/// drawn from; items appearing only in `pairs` are added to it.
pub fn train_embedding_scorer_with_report(
    pairs: &PairSet,
    items: &[ItemId],
    hyper: &EmbeddingHyper,
) -> Result<(ScorerModel, ScorerReport)> {
    if hyper.dim == 0 {
        return Err(Error::config("embedding scorer dim must be >= 1"));
    }
    if hyper.negatives_per_pair == 0 {
        return Err(Error::config("embedding scorer needs at least one negative per pair"));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("embedding scorer needs at least one training pair"));
    }
    let mut universe: Vec<ItemId> = items.iter().copied().filter(|i| !i.is_mask()).collect();
    universe.extend(pairs.sequences.iter().flatten().copied());
    universe.sort_unstable();
    universe.dedup();
    if universe.len() < 2 {
        return Err(Error::config("embedding scorer needs at least two items"));
    }

    let dim = hyper.dim;
    let rows = universe.last().expect("non-empty").index() + 1;
    let mut rng = substream(hyper.seed, Purpose::Scorer, 0);
    let init = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let mut v = vec![0.0; rows * dim];
        for item in &universe {
            for x in &mut v[item.index() * dim..(item.index() + 1) * dim] {
                *x = rng.gen_range(-EMBEDDING_INIT..EMBEDDING_INIT);
            }
        }
        v
    };
    let mut model = EmbeddingScorer {
        dim,
        input: init(&mut rng),
        output: init(&mut rng),
    };

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut c = vec![0.0; dim];
    let mut dc = vec![0.0; dim];
    let mut report = ScorerReport::default();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &p in &order {
            let pair = pairs.get(p);
            c.iter_mut().for_each(|x| *x = 0.0);
            for item in pair.context {
                let r = item.index() * dim;
                c.iter_mut().zip(&model.input[r..r + dim]).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / pair.context.len() as f64;
            c.iter_mut().for_each(|x| *x *= inv);
            dc.iter_mut().for_each(|x| *x = 0.0);

            let t = pair.target.index() * dim;
            for _ in 0..hyper.negatives_per_pair {
                let neg = loop {
                    let cand = universe[rng.gen_range(0..universe.len())];
                    if cand != pair.target {
                        break cand;
                    }
                };
                let n = neg.index() * dim;
                let x: f64 = (0..dim)
                    .map(|d| c[d] * (model.output[t + d] - model.output[n + d]))
                    .sum();
                loss += softplus(-x);
                let g = sigmoid(-x);
                for d in 0..dim {
                    let (vt, vn) = (model.output[t + d], model.output[n + d]);
                    dc[d] += g * (vt - vn);
                    model.output[t + d] += hyper.lr * g * c[d];
                    model.output[n + d] -= hyper.lr * g * c[d];
                }
            }
            let step = hyper.lr * inv;
            for item in pair.context {
                let r = item.index() * dim;
                model.input[r..r + dim]
                    .iter_mut()
                    .zip(&dc)
                    .for_each(|(w, g)| *w += step * g);
            }
        }
        report
            .epoch_loss
            .push(loss / (pairs.len() * hyper.negatives_per_pair) as f64);
    }

    Ok((
        ScorerModel {
            max_context: pairs.max_context(),
            params: ModelParams::Embedding(model),
        },
        report,
    ))
}

/// Mean pairwise loss of `model` over every pair with a fixed negative list.
pub fn embedding_batch_loss(model: &ScorerModel, pairs: &PairSet, negatives: &[ItemId]) -> Option<f64> {
    let ModelParams::Embedding(e) = &model.params else {
        return None;
    };
    let mut total = 0.0;
    let mut n = 0usize;
    for (pair, &neg) in pairs.iter().zip(negatives) {
        let ctx: Vec<&[f64]> = pair.context.iter().filter_map(|&i| e.in_row(i)).collect();
        let (Some(t), Some(j)) = (e.out_row(pair.target), e.out_row(neg)) else {
            continue;
        };
        if ctx.is_empty() {
            continue;
        }
        total += pairwise_loss(&ctx, t, j);
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

const MAGIC: &[u8; 4] = b"SQAM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

fn write_popularity<W: Write>(out: &mut Out<W>, p: &Popularity) -> Result<()> {
    out.u32(p.counts.len() as u32)?;
    p.counts.iter().try_for_each(|&c| out.u64(c))
}

fn read_popularity<R: Read>(input: &mut In<R>) -> Result<Popularity> {
    let n = input.u32()? as usize;
    let counts = (0..n).map(|_| input.u64()).collect::<Result<_>>()?;
    Ok(Popularity { counts })
}

fn bad_model(message: impl Into<String>) -> Error {
    Error::Format {
        path: "model".into(),
        message: message.into(),
    }
}

impl ScorerModel {
    /// Versioned little-endian blob: magic, version, kind, max context, then
    /// the kind-specific parameters.
    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut out = Out(out);
        out.0.write_all(MAGIC)?;
        out.u32(MODEL_FORMAT_VERSION)?;
        out.u32(self.max_context as u32)?;
        match &self.params {
            ModelParams::Popularity(p) => {
                out.u8(0)?;
                write_popularity(&mut out, p)?;
            }
            ModelParams::Markov(m) => {
                out.u8(1)?;
                write_popularity(&mut out, &m.popularity)?;
                out.f64(m.backoff)?;
                let mut edges: Vec<_> = m.transitions.iter().collect();
                edges.sort();
                out.u64(edges.len() as u64)?;
                for (&(a, b), &c) in edges {
                    out.u32(a.0)?;
                    out.u32(b.0)?;
                    out.u64(c)?;
                }
            }
            ModelParams::Embedding(e) => {
                out.u8(2)?;
                out.u32(e.dim as u32)?;
                out.u32(e.rows() as u32)?;
                for &x in e.input.iter().chain(&e.output) {
                    out.f64(x)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut input = In(input);
        if &input.bytes::<4>()? != MAGIC {
            return Err(bad_model("not a model file"));
        }
        let version = input.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(bad_model(format!("unsupported model format version {version}")));
        }
        let max_context = input.u32()? as usize;
        let params = match input.u8()? {
            0 => ModelParams::Popularity(read_popularity(&mut input)?),
            1 => {
                let popularity = read_popularity(&mut input)?;
                let backoff = input.f64()?;
                let n = input.u64()?;
                let mut transitions = HashMap::new();
                for _ in 0..n {
                    let (a, b) = (ItemId(input.u32()?), ItemId(input.u32()?));
                    transitions.insert((a, b), input.u64()?);
                }
                ModelParams::Markov(Markov {
                    popularity,
                    transitions,
                    backoff,
                })
            }
            2 => {
                let dim = input.u32()? as usize;
                let rows = input.u32()? as usize;
                if dim == 0 {
                    return Err(bad_model("embedding dim is zero"));
                }
                let mut read = || (0..rows * dim).map(|_| input.f64()).collect::<Result<Vec<_>>>();
                let in_rows = read()?;
                let out_rows = read()?;
                ModelParams::Embedding(EmbeddingScorer {
                    dim,
                    input: in_rows,
                    output: out_rows,
                })
            }
            k => return Err(bad_model(format!("unknown model kind tag {k}"))),
        };
        Ok(ScorerModel { max_context, params })
    }
}

/// JSON sidecar written next to a model blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    pub kind: ModelKind,
    pub max_context: usize,
    pub hyper: Option<EmbeddingHyper>,
    pub seed: Option<u64>,
    pub training_digest: String,
    pub training_pairs: usize,
    /// Hyperparameters are placeholders, not tuned values.
    pub hyper_defaults_are_stand_ins: bool,
}

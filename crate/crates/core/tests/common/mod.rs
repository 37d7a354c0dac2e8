//! Checks shared by the property tests and the acceptance target.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqaug::augment::{augment_im, augment_ni, augment_ri, augment_sr, augment_ss, augment_sw};
use seqaug::embeddings::{skipgram_grad, skipgram_loss, ItemEmbeddingTable};
use seqaug::recommender::{pairwise_grad, pairwise_loss};
use seqaug::ItemId;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn multiset(items: &[ItemId]) -> BTreeMap<ItemId, usize> {
    let mut m = BTreeMap::new();
    for &i in items {
        *m.entry(i).or_insert(0) += 1;
    }
    m
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Items added to `out` relative to `base`, with multiplicity.
fn added(base: &[ItemId], out: &[ItemId]) -> Vec<ItemId> {
    let b = multiset(base);
    let mut extra = Vec::new();
    for (i, c) in multiset(out) {
        for _ in b.get(&i).copied().unwrap_or(0)..c {
            extra.push(i);
        }
    }
    extra
}

/// Noise injection on `seq` with items drawn from `catalog`.
pub fn ni_law(seq: &[ItemId], n_aug: usize, catalog: &[ItemId], seed: u64) -> Check {
    let out = augment_ni(seq, n_aug, catalog, &mut rng(seed)).map_err(|e| e.to_string())?;
    ensure!(
        out.len() == n_aug - 1,
        "NI produced {} sequences, want {}",
        out.len(),
        n_aug - 1
    );
    let present: BTreeSet<ItemId> = seq.iter().copied().collect();
    for a in &out {
        ensure!(a.len() == seq.len(), "NI changed length {} -> {}", seq.len(), a.len());
        let extra = added(&seq[1..], a);
        ensure!(extra.len() == 1, "NI added {:?}", extra);
        ensure!(
            !present.contains(&extra[0]),
            "NI injected {} which is in the sequence",
            extra[0]
        );
        ensure!(
            catalog.contains(&extra[0]),
            "NI injected {} outside the catalog",
            extra[0]
        );
        let pos = a.iter().position(|i| *i == extra[0]).expect("added item is present");
        let kept: Vec<ItemId> = a
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != pos)
            .map(|(_, i)| *i)
            .collect();
        ensure!(kept[..] == seq[1..], "NI reordered the remaining items");
    }
    Ok(())
}

pub fn ri_law(seq: &[ItemId], n_aug: usize, seed: u64) -> Check {
    let out = augment_ri(seq, n_aug, &mut rng(seed));
    ensure!(
        out.len() == n_aug - 1,
        "RI produced {} sequences, want {}",
        out.len(),
        n_aug - 1
    );
    let present: BTreeSet<ItemId> = seq.iter().copied().collect();
    for a in &out {
        ensure!(a.len() == seq.len(), "RI changed length {} -> {}", seq.len(), a.len());
        let extra = added(&seq[1..], a);
        ensure!(extra.len() == 1, "RI added {:?}", extra);
        ensure!(
            present.contains(&extra[0]),
            "RI injected {} which is not in the sequence",
            extra[0]
        );
        ensure!(added(a, &seq[1..]).is_empty(), "RI lost an item");
    }
    Ok(())
}

pub fn im_law(seq: &[ItemId], n_aug: usize, p: f64, seed: u64) -> Check {
    let out = augment_im(seq, n_aug, p, &mut rng(seed));
    ensure!(
        out.len() == n_aug - 1,
        "IM produced {} sequences, want {}",
        out.len(),
        n_aug - 1
    );
    let m = seq.len();
    let k = ((p * m as f64).floor() as usize).max(1);
    for a in &out {
        ensure!(a.len() == m, "IM changed length");
        let masked = a.iter().filter(|i| i.is_mask()).count();
        ensure!(masked == k, "IM masked {masked}, want {k} (p={p}, m={m})");
        ensure!(
            a.iter().zip(seq).all(|(x, y)| x.is_mask() || x == y),
            "IM altered an unmasked position"
        );
    }
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `vectors[i]` belongs to item `i + 1`. Neighbour membership is verified by
/// an exhaustive cosine scan over the raw vectors.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn sr_law(seq: &[ItemId], n_aug: usize, s: usize, vectors: &[Vec<f64>], seed: u64) -> Check {
    let dim = vectors[0].len();
    let entries = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (ItemId(i as u32 + 1), v.clone()))
        .collect();
    let table = ItemEmbeddingTable::new(dim, entries).map_err(|e| e.to_string())?;
    let out = augment_sr(seq, n_aug, s, &table, &mut rng(seed)).map_err(|e| e.to_string())?;
    ensure!(
        out.len() == n_aug - 1,
        "SR produced {} sequences, want {}",
        out.len(),
        n_aug - 1
    );
    let mut per_position: HashMap<usize, usize> = HashMap::new();
    for a in &out {
        ensure!(a.len() == seq.len(), "SR changed length");
        let diffs: Vec<usize> = (0..seq.len()).filter(|&k| a[k] != seq[k]).collect();
        ensure!(diffs.len() == 1, "SR Hamming distance {}", diffs.len());
        let pos = diffs[0];
        *per_position.entry(pos).or_default() += 1;
        let query = &vectors[seq[pos].index() - 1];
        let mut sims: Vec<f64> = (1..=vectors.len() as u32)
            .filter(|&j| j != seq[pos].0)
            .map(|j| cosine(query, &vectors[j as usize - 1]))
            .collect();
        sims.sort_by(|x, y| y.total_cmp(x));
        let got = cosine(query, &vectors[a[pos].index() - 1]);
        ensure!(
            got >= sims[s - 1] - 1e-12,
            "SR replacement cosine {got} below top-{s} cutoff {}",
            sims[s - 1]
        );
    }
    let positions = (n_aug - 1).div_ceil(s).min(seq.len());
    ensure!(
        per_position.len() == positions,
        "SR touched {} positions, want {positions}",
        per_position.len()
    );
    Ok(())
}

pub fn ss_law(seq: &[ItemId], n_aug: usize) -> Check {
    let out = augment_ss(seq, n_aug);
    let m = seq.len();
    let expected = if m < 3 || n_aug == 1 { 0 } else { (m - 2).min(n_aug - 1) };
    ensure!(
        out.len() == expected,
        "SS produced {} prefixes, want {expected}",
        out.len()
    );
    for (k, a) in out.iter().enumerate() {
        ensure!(
            a.len() == m - 1 - k && a.len() >= 2,
            "SS prefix {k} has length {}",
            a.len()
        );
        ensure!(a[..] == seq[..a.len()], "SS output {k} is not a prefix");
    }
    ensure!(augment_ss(seq, n_aug) == out, "SS is not deterministic");
    Ok(())
}

pub fn sw_law(seq: &[ItemId], n_aug: usize) -> Check {
    let out = augment_sw(seq, n_aug);
    let m = seq.len();
    let l = (m as i64 - n_aug as i64 + 1).max(2) as usize;
    if m < 3 || l >= m {
        ensure!(out.is_empty(), "SW should emit nothing for m={m}, n_aug={n_aug}");
        return Ok(());
    }
    ensure!(
        out.len() == m - l + 1,
        "SW produced {} windows, want {}",
        out.len(),
        m - l + 1
    );
    for (start, a) in out.iter().enumerate() {
        ensure!(a[..] == seq[start..start + l], "SW window {start} is wrong");
    }
    ensure!(augment_sw(seq, n_aug) == out, "SW is not deterministic");
    Ok(())
}

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-5;

/// Relative error with a 1e-6 floor on the denominator so that gradients
/// near zero do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + GRAD_STEP;
            let up = f(&probe);
            probe[k] = orig - GRAD_STEP;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * GRAD_STEP)
        })
        .collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Largest relative error over `trials` random (center, context, negatives)
/// triples.
pub fn skipgram_grad_error(trials: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..trials {
        let dim = rng.gen_range(2..12);
        let k = rng.gen_range(1..4);
        let center = random_vec(&mut rng, dim);
        let context = random_vec(&mut rng, dim);
        let negs: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut rng, dim)).collect();
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let (d_center, d_context, d_negs) = skipgram_grad(&center, &context, &refs);
        max_err = max_err.max(worst(
            &d_center,
            &numeric_grad(&center, |c| skipgram_loss(c, &context, &refs)),
        ));
        max_err = max_err.max(worst(
            &d_context,
            &numeric_grad(&context, |o| skipgram_loss(&center, o, &refs)),
        ));
        for (j, neg) in negs.iter().enumerate() {
            let num = numeric_grad(neg, |n| {
                let mut r = refs.clone();
                r[j] = n;
                skipgram_loss(&center, &context, &r)
            });
            max_err = max_err.max(worst(&d_negs[j], &num));
        }
    }
    max_err
}

/// Largest relative error over `trials` random (context, target, negative)
/// triples of the pairwise ranking loss.
pub fn pairwise_grad_error(trials: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..trials {
        let dim = rng.gen_range(2..12);
        let n_ctx = rng.gen_range(1..5);
        let ctx: Vec<Vec<f64>> = (0..n_ctx).map(|_| random_vec(&mut rng, dim)).collect();
        let refs: Vec<&[f64]> = ctx.iter().map(Vec::as_slice).collect();
        let target = random_vec(&mut rng, dim);
        let negative = random_vec(&mut rng, dim);
        let (d_ctx, d_t, d_n) = pairwise_grad(&refs, &target, &negative);
        max_err = max_err.max(worst(
            &d_t,
            &numeric_grad(&target, |t| pairwise_loss(&refs, t, &negative)),
        ));
        max_err = max_err.max(worst(
            &d_n,
            &numeric_grad(&negative, |n| pairwise_loss(&refs, &target, n)),
        ));
        for (r, row) in ctx.iter().enumerate() {
            let num = numeric_grad(row, |x| {
                let mut rr = refs.clone();
                rr[r] = x;
                pairwise_loss(&rr, &target, &negative)
            });
            max_err = max_err.max(worst(&d_ctx[r], &num));
        }
    }
    max_err
}

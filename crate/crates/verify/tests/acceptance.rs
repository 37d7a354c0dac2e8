//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use seqaug::augment::{augment_dataset, AugmentationConfig, Provenance, Strategy as Aug};
use seqaug::embeddings::ItemEmbeddingTable;
use seqaug::evaluation::{hr_at_k, ndcg_at_k};
use seqaug::ingest::{parse_interactions, Format};
use seqaug::preprocess::{build_sequences, filter_cold_start, sequence_stats, ItemSequence, Sequences};
use seqaug::recommender::ModelKind;
use seqaug::runner::{run_grid, write_outputs, DatasetSource, ExperimentGrid, ResultCell};
use seqaug::synthetic::SyntheticConfig;
use seqaug::{ItemId, UserId};

// Pinned tolerances and sizes.
const ML1M_USERS: usize = 6040;
const ML1M_ITEMS: usize = 3416;
const ML1M_INTERACTIONS: usize = 999_611;
const ML1M_AVG_LEN: f64 = 165.50;
const ML1M_SPARSITY: f64 = 95.16;
const RATIO_TOL: f64 = 0.01;
const ML1M_BUDGET: Duration = Duration::from_secs(30);
const METRIC_TOL: f64 = 1e-12;
const PROPERTY_CASES: u32 = 1000;
const GRAD_TRIALS: usize = 100;
const REPETITIONS: u64 = 5;
const SEEDS_PER_RUN: u64 = 5;
const MIN_POSITIVE_REPS: usize = 4;
const MAX_INVERSIONS: usize = 1;
const SWEEP: [usize; 4] = [2, 5, 10, 15];
const EFFECT_BUDGET: Duration = Duration::from_secs(600);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn ml1m_path() -> PathBuf {
    std::env::var_os("SEQAUG_ML1M_RATINGS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-1m/ratings.dat"))
}

fn criterion_1() -> Outcome {
    let path = ml1m_path();
    let start = Instant::now();
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) => {
            return Outcome::new(
                false,
                format!(
                    "cannot open {} ({e}); set SEQAUG_ML1M_RATINGS to the MovieLens-1M ratings.dat",
                    path.display()
                ),
            )
        }
    };
    let stats = parse_interactions(BufReader::new(file), Format::MovielensDat)
        .and_then(|p| filter_cold_start(&build_sequences(&p.interactions), 5))
        .and_then(|s| sequence_stats(&s));
    let elapsed = start.elapsed();
    match stats {
        Err(e) => Outcome::new(false, format!("pipeline error: {e}")),
        Ok(s) => {
            let pass = s.num_users == ML1M_USERS
                && s.num_items == ML1M_ITEMS
                && s.num_interactions == ML1M_INTERACTIONS
                && (s.avg_sequence_length - ML1M_AVG_LEN).abs() <= RATIO_TOL
                && (s.sparsity_percent - ML1M_SPARSITY).abs() <= RATIO_TOL
                && elapsed < ML1M_BUDGET;
            Outcome::new(
                pass,
                format!(
                    "users {} items {} interactions {} avg {:.2} sparsity {:.2} in {:.1}s",
                    s.num_users,
                    s.num_items,
                    s.num_interactions,
                    s.avg_sequence_length,
                    s.sparsity_percent,
                    elapsed.as_secs_f64()
                ),
            )
        }
    }
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut hr_ok = true;
    for rank in 1..=101usize {
        let brute = if rank <= 10 {
            1.0 / ((rank + 1) as f64).ln() * std::f64::consts::LN_2
        } else {
            0.0
        };
        worst = worst.max((ndcg_at_k(rank, 10) - brute).abs());
        hr_ok &= hr_at_k(rank, 10) == if rank <= 10 { 1.0 } else { 0.0 };
    }
    Outcome::new(
        worst <= METRIC_TOL && hr_ok,
        format!("max |ndcg - brute force| = {worst:.1e} over ranks 1..=101"),
    )
}

fn seq_gen(max_item: u32, min_len: usize, max_len: usize) -> impl Strategy<Value = Vec<ItemId>> {
    prop::collection::vec((1..=max_item).prop_map(ItemId), min_len..=max_len)
}

fn criterion_3() -> Outcome {
    let mk = || {
        TestRunner::new(Config {
            cases: PROPERTY_CASES,
            failure_persistence: None,
            ..Config::default()
        })
    };
    let fail = TestCaseError::fail;
    let catalog: Vec<ItemId> = (1..=60).map(ItemId).collect();
    let results = [
        (
            "NI",
            mk().run(&(seq_gen(40, 2, 30), 1usize..16, any::<u64>()), |(s, n, seed)| {
                common::ni_law(&s, n, &catalog, seed).map_err(fail)
            })
            .map_err(|e| e.to_string()),
        ),
        (
            "RI",
            mk().run(&(seq_gen(15, 2, 30), 1usize..16, any::<u64>()), |(s, n, seed)| {
                common::ri_law(&s, n, seed).map_err(fail)
            })
            .map_err(|e| e.to_string()),
        ),
        (
            "IM",
            mk().run(
                &(seq_gen(50, 2, 40), 1usize..16, 0.01f64..0.99, any::<u64>()),
                |(s, n, p, seed)| common::im_law(&s, n, p, seed).map_err(fail),
            )
            .map_err(|e| e.to_string()),
        ),
        (
            "SR",
            mk().run(
                &(
                    seq_gen(30, 1, 20),
                    2usize..16,
                    1usize..5,
                    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 30),
                    any::<u64>(),
                ),
                |(s, n, k, v, seed)| common::sr_law(&s, n, k, &v, seed).map_err(fail),
            )
            .map_err(|e| e.to_string()),
        ),
        (
            "SS",
            mk().run(&(seq_gen(50, 1, 40), 1usize..20), |(s, n)| {
                common::ss_law(&s, n).map_err(fail)
            })
            .map_err(|e| e.to_string()),
        ),
        (
            "SW",
            mk().run(&(seq_gen(50, 1, 40), 1usize..20), |(s, n)| {
                common::sw_law(&s, n).map_err(fail)
            })
            .map_err(|e| e.to_string()),
        ),
    ];
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    Outcome::new(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{PROPERTY_CASES} cases each for NI, RI, IM, SR, SS, SW, no failures")
        } else {
            failed.join("; ")
        },
    )
}

fn criterion_4() -> Outcome {
    let train: Sequences = (1..=50u32)
        .map(|u| {
            let len = 8 + (u as usize % 12);
            let items = (0..len).map(|k| ItemId((u * 7 + k as u32 * 13) % 150 + 1)).collect();
            (UserId(u), ItemSequence { user: UserId(u), items })
        })
        .collect();
    let catalog: BTreeSet<ItemId> = (1..=200).map(ItemId).collect();
    let vectors: Vec<(ItemId, Vec<f64>)> = (1..=200u32)
        .map(|i| {
            (
                ItemId(i),
                vec![(i as f64).sin(), (i as f64 * 0.37).cos(), (i as f64 * 1.3).sin()],
            )
        })
        .collect();
    let table = ItemEmbeddingTable::new(3, vectors).expect("table");
    let mut notes = Vec::new();
    let mut pass = true;
    for strategy in [
        Aug::NoiseInjection,
        Aug::RedundancyInjection,
        Aug::ItemMasking,
        Aug::SynonymReplacement,
    ] {
        let config = AugmentationConfig {
            strategy,
            n_aug: 10,
            mask_p: Some(0.2),
            synonyms: Some(3),
            seed: 17,
        };
        let set = match augment_dataset(&train, &catalog, &config, Some(&table)) {
            Ok(s) => s,
            Err(e) => return Outcome::new(false, format!("{strategy}: {e}")),
        };
        let mut per_user: BTreeMap<UserId, Vec<&[ItemId]>> = BTreeMap::new();
        for s in &set.sequences {
            if s.provenance != Provenance::Original {
                per_user.entry(s.user).or_default().push(&s.items);
            }
        }
        let all_nine = per_user.len() == train.len() && per_user.values().all(|v| v.len() == 9);
        pass &= all_nine;
        if strategy == Aug::SynonymReplacement {
            // 3 positions x 3 variants for every user
            let fan_out_ok = per_user.iter().all(|(u, outs)| {
                let orig = &train[u].items;
                let mut by_pos: BTreeMap<usize, usize> = BTreeMap::new();
                for o in outs {
                    let diffs: Vec<usize> = (0..orig.len()).filter(|&k| o[k] != orig[k]).collect();
                    if diffs.len() != 1 {
                        return false;
                    }
                    *by_pos.entry(diffs[0]).or_default() += 1;
                }
                by_pos.len() == 3 && by_pos.values().all(|&c| c == 3)
            });
            pass &= fan_out_ok;
            notes.push(format!("SR 3x3 fan-out {}", if fan_out_ok { "ok" } else { "wrong" }));
        }
        notes.push(format!(
            "{strategy} {}",
            if all_nine { "9/user" } else { "count mismatch" }
        ));
    }
    Outcome::new(pass, notes.join(", "))
}

fn criterion_5() -> Outcome {
    let sg = common::skipgram_grad_error(GRAD_TRIALS, 11);
    let pw = common::pairwise_grad_error(GRAD_TRIALS, 12);
    Outcome::new(
        sg <= common::GRAD_REL_TOL && pw <= common::GRAD_REL_TOL,
        format!("max rel err skip-gram {sg:.1e}, pairwise {pw:.1e} ({GRAD_TRIALS} trials each)"),
    )
}

fn criterion_6() -> Outcome {
    let mut grid = ExperimentGrid::new(DatasetSource::Synthetic(SyntheticConfig {
        users: 300,
        items: 150,
        ..SyntheticConfig::default()
    }));
    grid.fractions = vec![0.5, 1.0];
    grid.n_aug_values = vec![3];
    grid.seeds = vec![1, 2];
    grid.model.embedding.dim = 16;
    grid.model.embedding.epochs = 2;
    grid.skipgram.dim = 16;
    grid.skipgram.epochs = 1;
    let dirs = [
        tempfile::tempdir().expect("tempdir"),
        tempfile::tempdir().expect("tempdir"),
    ];
    for (dir, workers) in dirs.iter().zip([1, 3]) {
        let outcome = match run_grid(&grid, workers) {
            Ok(o) => o,
            Err(e) => return Outcome::new(false, format!("grid failed: {e}")),
        };
        if let Err(e) = write_outputs(dir.path(), &outcome) {
            return Outcome::new(false, format!("write failed: {e}"));
        }
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("cells.csv")).unwrap_or_default();
    let (a, b) = (read(&dirs[0]), read(&dirs[1]));
    let cells = a.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    Outcome::new(
        !a.is_empty() && a == b,
        format!(
            "cells.csv with 1 vs 3 workers: {} bytes, {cells} cells, identical = {}",
            a.len(),
            a == b
        ),
    )
}

/// One repetition of the synthetic experiment.
struct Repetition {
    low: Vec<ResultCell>,
    full: Vec<ResultCell>,
}

impl Repetition {
    fn cell(cells: &[ResultCell], strategy: Aug, n_aug: usize) -> &ResultCell {
        cells
            .iter()
            .find(|c| c.strategy == strategy && c.n_aug == n_aug)
            .unwrap_or_else(|| panic!("missing cell {strategy} n_aug={n_aug}"))
    }
}

fn synthetic_grid(rep: u64) -> ExperimentGrid {
    let mut grid = ExperimentGrid::new(DatasetSource::Synthetic(SyntheticConfig {
        seed: 100 + rep,
        ..SyntheticConfig::default()
    }));
    grid.model.kind = ModelKind::Embedding;
    grid.seeds = (0..SEEDS_PER_RUN).map(|i| 1000 * rep + i).collect();
    grid
}

fn run_repetitions() -> Result<(Vec<Repetition>, Duration), String> {
    let start = Instant::now();
    let mut reps = Vec::new();
    for rep in 0..REPETITIONS {
        let mut low = synthetic_grid(rep);
        low.fractions = vec![0.1];
        low.strategies = vec![Aug::NoiseInjection, Aug::RedundancyInjection];
        low.n_aug_values = SWEEP.to_vec();
        let mut full = synthetic_grid(rep);
        full.fractions = vec![1.0];
        full.strategies = vec![Aug::NoiseInjection];
        full.n_aug_values = vec![10];
        let low = run_grid(&low, 0).map_err(|e| e.to_string())?;
        let full = run_grid(&full, 0).map_err(|e| e.to_string())?;
        if !low.failures.is_empty() || !full.failures.is_empty() {
            return Err(format!("failed cells: {:?} {:?}", low.failures, full.failures));
        }
        reps.push(Repetition {
            low: low.cells,
            full: full.cells,
        });
    }
    Ok((reps, start.elapsed()))
}

fn criterion_7(reps: &[Repetition], elapsed: Duration) -> Outcome {
    let mut all_at_least_base = true;
    let mut positive = 0;
    let mut parts = Vec::new();
    for r in reps {
        let base = Repetition::cell(&r.low, Aug::None, 10).mean_ndcg;
        let ni = Repetition::cell(&r.low, Aug::NoiseInjection, 10);
        let ri = Repetition::cell(&r.low, Aug::RedundancyInjection, 10);
        all_at_least_base &= ni.mean_ndcg >= base && ri.mean_ndcg >= base;
        if ni.improvement_pct_vs_baseline > 0.0 {
            positive += 1;
        }
        parts.push(format!("{:.4}/{:.4}/{:.4}", base, ni.mean_ndcg, ri.mean_ndcg));
    }
    Outcome::new(
        all_at_least_base && positive >= MIN_POSITIVE_REPS && elapsed < EFFECT_BUDGET,
        format!(
            "NONE/NI/RI NDCG@10 at 10%: {}; NI positive in {positive}/{} reps; {:.0}s",
            parts.join(" "),
            reps.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(reps: &[Repetition]) -> Outcome {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in reps {
        let low = Repetition::cell(&r.low, Aug::NoiseInjection, 10).improvement_pct_vs_baseline;
        let full = Repetition::cell(&r.full, Aug::NoiseInjection, 10).improvement_pct_vs_baseline;
        if full < low {
            ok += 1;
        }
        parts.push(format!("{low:+.1}%->{full:+.1}%"));
    }
    Outcome::new(
        ok >= MIN_POSITIVE_REPS,
        format!(
            "NI improvement 10% -> 100%: {}; smaller in {ok}/{} reps",
            parts.join(" "),
            reps.len()
        ),
    )
}

fn criterion_9(reps: &[Repetition]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in reps {
        let series: Vec<f64> = SWEEP
            .iter()
            .map(|&n| Repetition::cell(&r.low, Aug::NoiseInjection, n).mean_ndcg)
            .collect();
        let inversions = series.windows(2).filter(|w| w[1] < w[0]).count();
        pass &= inversions <= MAX_INVERSIONS;
        parts.push(format!(
            "[{}] inv {inversions}",
            series.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
        ));
    }
    Outcome::new(pass, format!("NI NDCG@10 over n_aug {SWEEP:?}: {}", parts.join(" ")))
}

fn report(id: u32, name: &str, outcome: &Outcome) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id} {name}: {}", outcome.detail);
}

fn main() {
    let mut results = vec![
        (1, "MovieLens-1M dataset statistics", criterion_1()),
        (2, "HR/NDCG metric oracle", criterion_2()),
        (3, "augmentation invariants", criterion_3()),
        (4, "augmentation bookkeeping", criterion_4()),
        (5, "gradient checks", criterion_5()),
        (6, "grid determinism", criterion_6()),
    ];
    for (id, name, outcome) in &results {
        report(*id, name, outcome);
    }
    match run_repetitions() {
        Ok((reps, elapsed)) => {
            results.push((7, "direction of effect", criterion_7(&reps, elapsed)));
            results.push((8, "saturation trend", criterion_8(&reps)));
            results.push((9, "n_aug monotonicity", criterion_9(&reps)));
        }
        Err(e) => {
            for (id, name) in [
                (7, "direction of effect"),
                (8, "saturation trend"),
                (9, "n_aug monotonicity"),
            ] {
                results.push((
                    id,
                    name,
                    Outcome::new(false, format!("synthetic experiment failed: {e}")),
                ));
            }
        }
    }
    for (id, name, outcome) in &results[6..] {
        report(*id, name, outcome);
    }
    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

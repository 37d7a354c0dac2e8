//! Experiment grid: fractions x strategies x augmentation sizes x seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentationConfig, Strategy};
use crate::embeddings::{train_skipgram, ItemEmbeddingTable, SkipGramHyper};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_seeds, evaluate, EvalReport, Mode};
use crate::ingest::{parse_interactions, Format};
use crate::preprocess::{build_sequences, filter_cold_start, leave_one_out_split, sample_fraction, SplitDataset};
use crate::recommender::{
    extract_pairs, train_embedding_scorer, train_markov, train_popularity, EmbeddingHyper, ModelKind, ScorerModel,
    DEFAULT_MAX_CONTEXT,
};
use crate::synthetic::{generate, SyntheticConfig};
use crate::types::ItemId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    File { path: PathBuf, format: Format },
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub max_context: usize,
    /// Used by the embedding scorer; its seed is replaced by the run seed.
    pub embedding: EmbeddingHyper,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Embedding,
            max_context: DEFAULT_MAX_CONTEXT,
            embedding: EmbeddingHyper::default(),
        }
    }
}

fn default_min_actions() -> usize {
    5
}
fn default_fractions() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0]
}
fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_n_aug() -> Vec<usize> {
    vec![10]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_mask_p() -> f64 {
    0.2
}
fn default_synonyms() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub dataset: DatasetSource,
    #[serde(default = "default_min_actions")]
    pub min_actions: usize,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_n_aug")]
    pub n_aug_values: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "default_mask_p")]
    pub mask_p: f64,
    #[serde(default = "default_synonyms")]
    pub synonyms: usize,
    /// SR embeddings; the seed is replaced by the run seed.
    #[serde(default)]
    pub skipgram: SkipGramHyper,
}

impl ExperimentGrid {
    pub fn new(dataset: DatasetSource) -> Self {
        ExperimentGrid {
            dataset,
            min_actions: default_min_actions(),
            fractions: default_fractions(),
            strategies: default_strategies(),
            n_aug_values: default_n_aug(),
            seeds: default_seeds(),
            model: ModelSpec::default(),
            mask_p: default_mask_p(),
            synonyms: default_synonyms(),
            skipgram: SkipGramHyper::default(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let grid: ExperimentGrid = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.n_aug_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("grid needs at least one fraction, n_aug value and seed"));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::config(format!("fraction must lie in (0, 1], got {f}")));
        }
        if self.n_aug_values.contains(&0) {
            return Err(Error::config("n_aug must be >= 1"));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        if self.model.max_context == 0 {
            return Err(Error::config("max_context must be >= 1"));
        }
        Ok(())
    }

    /// Strategies in run order: NONE first, then the rest as listed, without
    /// duplicates.
    pub fn strategy_order(&self) -> Vec<Strategy> {
        let mut out = vec![Strategy::None];
        for &s in &self.strategies {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    fn fractions_dedup(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &f in &self.fractions {
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }

    fn n_aug_dedup(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for &n in &self.n_aug_values {
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }
}

/// Loads, filters and splits the grid's dataset.
pub fn prepare_split(source: &DatasetSource, min_actions: usize) -> Result<SplitDataset> {
    let interactions = match source {
        DatasetSource::File { path, format } => {
            let file =
                File::open(path).map_err(|e| Error::config(format!("cannot open dataset {}: {e}", path.display())))?;
            parse_interactions(BufReader::new(file), *format)?.interactions
        }
        DatasetSource::Synthetic(cfg) => generate(cfg)?,
    };
    let sequences = filter_cold_start(&build_sequences(&interactions), min_actions)?;
    leave_one_out_split(&sequences)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultCell {
    pub fraction: f64,
    pub strategy: Strategy,
    pub n_aug: usize,
    pub mean_ndcg: f64,
    pub mean_hr: f64,
    pub std_ndcg: f64,
    pub std_hr: f64,
    pub n_seeds: usize,
    pub improvement_pct_vs_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub fraction: f64,
    pub strategy: Strategy,
    pub n_aug: usize,
    pub reason: String,
}

/// What one (fraction, strategy, n_aug, seed) run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub users: usize,
    pub catalog_items: usize,
    pub train_sequences: usize,
    pub artificial_sequences: usize,
    pub ineligible_users: usize,
    pub training_pairs: usize,
    pub hr_at_10: f64,
    pub ndcg_at_10: f64,
    pub skipped_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLog {
    pub fraction: f64,
    pub strategy: Strategy,
    pub n_aug: usize,
    pub runs: Vec<RunLog>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridOutcome {
    pub cells: Vec<ResultCell>,
    pub failures: Vec<FailedCell>,
    pub logs: Vec<CellLog>,
}

pub fn improvement_pct(ndcg: f64, baseline: f64) -> f64 {
    100.0 * (ndcg - baseline) / baseline
}

fn train_model(spec: &ModelSpec, seqs: &[&[ItemId]], catalog: &[ItemId], seed: u64) -> Result<(ScorerModel, usize)> {
    let pairs = extract_pairs(seqs.iter().copied(), spec.max_context);
    let model = match spec.kind {
        ModelKind::Popularity => train_popularity(&pairs),
        ModelKind::Markov => train_markov(&pairs)?,
        ModelKind::Embedding => {
            let hyper = EmbeddingHyper { seed, ..spec.embedding };
            train_embedding_scorer(&pairs, catalog, &hyper)?
        }
    };
    Ok((model, pairs.len()))
}

/// One seed of one cell: augment, train, evaluate in test mode.
pub fn run_once(
    grid: &ExperimentGrid,
    split: &SplitDataset,
    strategy: Strategy,
    n_aug: usize,
    seed: u64,
    embeddings: Option<&ItemEmbeddingTable>,
) -> Result<(EvalReport, RunLog)> {
    let train = split.train_sequences();
    let config = AugmentationConfig {
        strategy,
        n_aug: if strategy == Strategy::None { 1 } else { n_aug },
        mask_p: Some(grid.mask_p),
        synonyms: Some(grid.synonyms),
        seed,
    };
    let augmented = augment_dataset(&train, &split.catalog, &config, embeddings)?;
    let catalog: Vec<ItemId> = split.catalog.iter().copied().collect();
    let seqs: Vec<&[ItemId]> = augmented.item_lists().collect();
    let (model, training_pairs) = train_model(&grid.model, &seqs, &catalog, seed)?;
    let report = evaluate(&model, split, Mode::Test, seed)?;
    let log = RunLog {
        seed,
        users: split.num_users(),
        catalog_items: split.num_items(),
        train_sequences: augmented.len(),
        artificial_sequences: augmented.artificial_count(),
        ineligible_users: augmented.ineligible.len(),
        training_pairs,
        hr_at_10: report.hr_at_10,
        ndcg_at_10: report.ndcg_at_10,
        skipped_users: report.skipped_users,
    };
    Ok((report, log))
}

fn sr_embeddings(grid: &ExperimentGrid, split: &SplitDataset, seed: u64) -> Result<ItemEmbeddingTable> {
    let train = split.train_sequences();
    let seqs: Vec<&[ItemId]> = train.values().map(|s| s.items.as_slice()).collect();
    train_skipgram(&seqs, &SkipGramHyper { seed, ..grid.skipgram })
}

type Job = (usize, Strategy, usize, usize);
type RunResult = Result<(EvalReport, RunLog)>;

/// Runs every cell of `grid` on a pool of `workers` threads (0 = rayon's
/// default). Output order and content depend only on the grid.
pub fn run_grid(grid: &ExperimentGrid, workers: usize) -> Result<GridOutcome> {
    grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| run_grid_inner(grid))
}

fn run_grid_inner(grid: &ExperimentGrid) -> Result<GridOutcome> {
    let base = prepare_split(&grid.dataset, grid.min_actions)?;
    let fractions = grid.fractions_dedup();
    let strategies = grid.strategy_order();
    let n_augs = grid.n_aug_dedup();
    let seeds = &grid.seeds;

    // subsets per (fraction, seed)
    let subsets: Vec<Vec<Result<SplitDataset>>> = fractions
        .par_iter()
        .map(|&f| seeds.par_iter().map(|&s| sample_fraction(&base, f, s)).collect())
        .collect();

    let wants_sr = strategies.contains(&Strategy::SynonymReplacement);
    let embeddings: Vec<Vec<Option<Result<ItemEmbeddingTable>>>> = subsets
        .par_iter()
        .map(|per_seed| {
            per_seed
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(split, &s)| match (wants_sr, split) {
                    (true, Ok(split)) => Some(sr_embeddings(grid, split, s)),
                    _ => None,
                })
                .collect()
        })
        .collect();

    // NONE does not depend on n_aug, so it runs once per fraction
    let mut jobs: Vec<Job> = Vec::new();
    for fi in 0..fractions.len() {
        for &st in &strategies {
            let sizes: &[usize] = if st == Strategy::None { &n_augs[..1] } else { &n_augs };
            for &n in sizes {
                for si in 0..seeds.len() {
                    jobs.push((fi, st, n, si));
                }
            }
        }
    }

    let results: Vec<Result<(EvalReport, RunLog)>> = jobs
        .par_iter()
        .map(|&(fi, st, n, si)| {
            let split = subsets[fi][si].as_ref().map_err(|e| Error::config(e.to_string()))?;
            let emb = match &embeddings[fi][si] {
                Some(Ok(t)) => Some(t),
                Some(Err(e)) if st == Strategy::SynonymReplacement => {
                    return Err(Error::config(format!("embedding training failed: {e}")))
                }
                _ => None,
            };
            run_once(grid, split, st, n, seeds[si], emb)
        })
        .collect();

    let mut by_key: BTreeMap<(usize, Strategy, usize), Vec<&RunResult>> = BTreeMap::new();
    for (job, res) in jobs.iter().zip(&results) {
        by_key.entry((job.0, job.1, job.2)).or_default().push(res);
    }

    let mut outcome = GridOutcome::default();
    for (fi, &fraction) in fractions.iter().enumerate() {
        let base_runs = &by_key[&(fi, Strategy::None, n_augs[0])];
        let baseline = summarize(base_runs);
        for &st in &strategies {
            for &n in &n_augs {
                let (agg, logs, error) = if st == Strategy::None {
                    baseline.clone()
                } else {
                    summarize(&by_key[&(fi, st, n)])
                };
                let mut error = error;
                let mut cell = None;
                if let Some(agg) = agg {
                    match (&baseline.0, st) {
                        (_, Strategy::None) => cell = Some((agg, 0.0)),
                        (Some(b), _) if b.mean_ndcg > 0.0 => {
                            cell = Some((agg, improvement_pct(agg.mean_ndcg, b.mean_ndcg)))
                        }
                        (Some(_), _) => error = Some("baseline NDCG@10 is zero".to_string()),
                        (None, _) => error = Some("baseline cell failed".to_string()),
                    }
                }
                match cell {
                    Some((agg, imp)) => outcome.cells.push(ResultCell {
                        fraction,
                        strategy: st,
                        n_aug: n,
                        mean_ndcg: agg.mean_ndcg,
                        mean_hr: agg.mean_hr,
                        std_ndcg: agg.std_ndcg,
                        std_hr: agg.std_hr,
                        n_seeds: agg.n_seeds,
                        improvement_pct_vs_baseline: imp,
                    }),
                    None => {
                        let reason = error.clone().unwrap_or_else(|| "unknown failure".to_string());
                        log::warn!("cell fraction={fraction} strategy={st} n_aug={n} failed: {reason}");
                        outcome.failures.push(FailedCell {
                            fraction,
                            strategy: st,
                            n_aug: n,
                            reason,
                        });
                    }
                }
                outcome.logs.push(CellLog {
                    fraction,
                    strategy: st,
                    n_aug: n,
                    runs: logs,
                    error,
                });
            }
        }
    }
    Ok(outcome)
}

type Summary = (Option<crate::evaluation::AggregateReport>, Vec<RunLog>, Option<String>);

fn summarize(runs: &[&Result<(EvalReport, RunLog)>]) -> Summary {
    let mut reports = Vec::new();
    let mut logs = Vec::new();
    for r in runs {
        match r {
            Ok((rep, log)) => {
                reports.push(rep.clone());
                logs.push(log.clone());
            }
            Err(e) => return (None, logs, Some(e.to_string())),
        }
    }
    match aggregate_seeds(&reports) {
        Ok(agg) => (Some(agg), logs, None),
        Err(e) => (None, logs, Some(e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub fraction: f64,
    pub strategy: Strategy,
    pub n_aug: usize,
    pub baseline_ndcg: f64,
    pub mean_ndcg: f64,
    pub improvement_pct_vs_baseline: f64,
}

/// Per fraction, the cell with the highest mean NDCG@10. Ties go to the
/// lexicographically first strategy code, then the smaller n_aug.
pub fn best_strategy_table(cells: &[ResultCell]) -> Result<Vec<BestRow>> {
    if cells.is_empty() {
        return Err(Error::Empty("no cells"));
    }
    let mut fractions: Vec<f64> = Vec::new();
    for c in cells {
        if !fractions.contains(&c.fraction) {
            fractions.push(c.fraction);
        }
    }
    fractions
        .into_iter()
        .map(|f| {
            let group: Vec<&ResultCell> = cells.iter().filter(|c| c.fraction == f).collect();
            let base = group
                .iter()
                .find(|c| c.strategy == Strategy::None)
                .ok_or(Error::MissingBaseline(f))?;
            let best = group
                .iter()
                .copied()
                .min_by(|a, b| {
                    b.mean_ndcg
                        .total_cmp(&a.mean_ndcg)
                        .then_with(|| a.strategy.code().cmp(b.strategy.code()))
                        .then_with(|| a.n_aug.cmp(&b.n_aug))
                })
                .expect("group is non-empty");
            Ok(BestRow {
                fraction: f,
                strategy: best.strategy,
                n_aug: best.n_aug,
                baseline_ndcg: base.mean_ndcg,
                mean_ndcg: best.mean_ndcg,
                improvement_pct_vs_baseline: improvement_pct(best.mean_ndcg, base.mean_ndcg),
            })
        })
        .collect()
}

pub fn format_metric(x: f64) -> String {
    format!("{x:.4}")
}

pub fn format_pct(x: f64) -> String {
    format!("{x:+.1}%")
}

fn format_fraction(f: f64) -> String {
    format!("{:.0}%", f * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "markdown-table" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::config(format!("unknown report format `{s}`"))),
        }
    }
}

pub fn render_report(cells: &[ResultCell], format: ReportFormat) -> Result<String> {
    if cells.is_empty() {
        return Err(Error::Empty("no cells to report"));
    }
    Ok(match format {
        ReportFormat::Csv => {
            let mut out =
                String::from("fraction,strategy,n_aug,mean_ndcg,mean_hr,std_ndcg,std_hr,n_seeds,improvement_pct\n");
            for c in cells {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{:+.1}",
                    c.fraction,
                    c.strategy,
                    c.n_aug,
                    format_metric(c.mean_ndcg),
                    format_metric(c.mean_hr),
                    format_metric(c.std_ndcg),
                    format_metric(c.std_hr),
                    c.n_seeds,
                    c.improvement_pct_vs_baseline
                );
            }
            out
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(cells)?;
            s.push('\n');
            s
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| Fraction | Strategy | N_aug | NDCG@10 | HR@10 | Improvement |\n");
            out.push_str("|---|---|---:|---:|---:|---:|\n");
            for c in cells {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    format_fraction(c.fraction),
                    c.strategy,
                    c.n_aug,
                    format_metric(c.mean_ndcg),
                    format_metric(c.mean_hr),
                    format_pct(c.improvement_pct_vs_baseline)
                );
            }
            out
        }
    })
}

pub fn emit_report(cells: &[ResultCell], format: ReportFormat, path: &Path) -> Result<()> {
    let text = render_report(cells, format)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn render_best_table(rows: &[BestRow]) -> String {
    let mut out = String::from("| Fraction | Baseline NDCG@10 | Best | N_aug | NDCG@10 | Improvement |\n");
    out.push_str("|---|---:|---|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            format_fraction(r.fraction),
            format_metric(r.baseline_ndcg),
            r.strategy,
            r.n_aug,
            format_metric(r.mean_ndcg),
            format_pct(r.improvement_pct_vs_baseline)
        );
    }
    out
}

/// `(fraction, improvement)` series per strategy and n_aug, baseline excluded.
pub fn plot_series(cells: &[ResultCell]) -> String {
    let mut sorted: Vec<&ResultCell> = cells.iter().filter(|c| c.strategy != Strategy::None).collect();
    sorted.sort_by(|a, b| {
        a.strategy
            .cmp(&b.strategy)
            .then(a.n_aug.cmp(&b.n_aug))
            .then(a.fraction.total_cmp(&b.fraction))
    });
    let mut out = String::from("strategy,n_aug,fraction,improvement_pct\n");
    for c in sorted {
        let _ = writeln!(
            out,
            "{},{},{},{:.1}",
            c.strategy, c.n_aug, c.fraction, c.improvement_pct_vs_baseline
        );
    }
    out
}

/// Writes `cells.csv`, `cells.json`, `best.md`, `failures.json` and one log
/// per cell under `logs/`.
pub fn write_outputs(dir: &Path, outcome: &GridOutcome) -> Result<()> {
    fs::create_dir_all(dir.join("logs"))?;
    if outcome.cells.is_empty() {
        return Err(Error::Empty("every cell failed"));
    }
    emit_report(&outcome.cells, ReportFormat::Csv, &dir.join("cells.csv"))?;
    emit_report(&outcome.cells, ReportFormat::Json, &dir.join("cells.json"))?;
    let mut best = String::from("# Best strategy per fraction (NDCG@10)\n\n");
    match best_strategy_table(&outcome.cells) {
        Ok(rows) => best.push_str(&render_best_table(&rows)),
        Err(e) => {
            let _ = writeln!(best, "unavailable: {e}");
        }
    }
    best.push_str("\n# All cells\n\n");
    best.push_str(&render_report(&outcome.cells, ReportFormat::Markdown)?);
    fs::write(dir.join("best.md"), best)?;
    let mut failures = serde_json::to_string_pretty(&outcome.failures)?;
    failures.push('\n');
    fs::write(dir.join("failures.json"), failures)?;
    for log in &outcome.logs {
        let name = format!("f{}_{}_n{}.json", log.fraction, log.strategy, log.n_aug);
        let mut f = File::create(dir.join("logs").join(name))?;
        serde_json::to_writer_pretty(&mut f, log)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_cells(path: &Path) -> Result<Vec<ResultCell>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(fraction: f64, strategy: Strategy, ndcg: f64, base: f64) -> ResultCell {
        ResultCell {
            fraction,
            strategy,
            n_aug: 10,
            mean_ndcg: ndcg,
            mean_hr: ndcg * 1.5,
            std_ndcg: 0.0,
            std_hr: 0.0,
            n_seeds: 5,
            improvement_pct_vs_baseline: improvement_pct(ndcg, base),
        }
    }

    #[test]
    fn improvement_formula() {
        assert_eq!(format_pct(improvement_pct(0.2350, 0.1830)), "+28.4%");
        assert_eq!(format_pct(28.44), "+28.4%");
        assert_eq!(format_metric(0.23504), "0.2350");
        assert_eq!(format_pct(-16.44), "-16.4%");
    }

    #[test]
    fn best_picks_max_and_breaks_ties_by_code() {
        let cells = vec![
            cell(0.1, Strategy::None, 0.2, 0.2),
            cell(0.1, Strategy::SlidingWindow, 0.3, 0.2),
            cell(0.1, Strategy::NoiseInjection, 0.3, 0.2),
            cell(0.5, Strategy::None, 0.4, 0.4),
            cell(0.5, Strategy::RedundancyInjection, 0.35, 0.4),
        ];
        let rows = best_strategy_table(&cells).unwrap();
        assert_eq!(rows[0].strategy, Strategy::NoiseInjection);
        assert!((rows[0].improvement_pct_vs_baseline - 50.0).abs() < 1e-9);
        assert_eq!(rows[1].strategy, Strategy::None);
        assert!(rows[1].improvement_pct_vs_baseline <= 0.0);
    }

    #[test]
    fn best_needs_baseline() {
        let cells = vec![cell(0.1, Strategy::NoiseInjection, 0.3, 0.2)];
        assert!(matches!(best_strategy_table(&cells), Err(Error::MissingBaseline(_))));
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(render_report(&[], ReportFormat::Csv).is_err());
    }

    #[test]
    fn csv_rendering() {
        let text = render_report(&[cell(0.1, Strategy::None, 0.23504, 0.23504)], ReportFormat::Csv).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0.1,NONE,10,0.2350,0.3526,0.0000,0.0000,5,+0.0"
        );
    }

    #[test]
    fn grid_json_defaults() {
        let grid: ExperimentGrid =
            serde_json::from_str(r#"{"dataset":{"file":{"path":"r.dat","format":"dat"}}}"#).unwrap();
        assert_eq!(grid.fractions, vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0]);
        assert_eq!(grid.strategy_order().len(), 7);
        assert_eq!(grid.seeds.len(), 5);
        assert_eq!(grid.model.kind, ModelKind::Embedding);
        grid.validate().unwrap();
    }

    #[test]
    fn baseline_is_always_first() {
        let mut grid = ExperimentGrid::new(DatasetSource::Synthetic(SyntheticConfig::default()));
        grid.strategies = vec![
            Strategy::SlidingWindow,
            Strategy::NoiseInjection,
            Strategy::SlidingWindow,
        ];
        assert_eq!(
            grid.strategy_order(),
            vec![Strategy::None, Strategy::SlidingWindow, Strategy::NoiseInjection]
        );
        grid.seeds = vec![1, 1];
        assert!(grid.validate().is_err());
    }

    fn tiny_grid() -> ExperimentGrid {
        let mut grid = ExperimentGrid::new(DatasetSource::Synthetic(SyntheticConfig {
            users: 120,
            items: 150,
            ..SyntheticConfig::default()
        }));
        grid.fractions = vec![0.5, 1.0];
        grid.seeds = vec![1, 2];
        grid.n_aug_values = vec![3];
        grid.model.kind = ModelKind::Markov;
        grid.skipgram.epochs = 1;
        grid.skipgram.dim = 8;
        grid
    }

    #[test]
    fn small_grid_counts() {
        let grid = tiny_grid();
        let out = run_grid(&grid, 2).unwrap();
        assert_eq!(out.cells.len() + out.failures.len(), 2 * 7);
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        for c in out.cells.iter().filter(|c| c.strategy == Strategy::None) {
            assert_eq!(c.improvement_pct_vs_baseline, 0.0);
        }
    }

    #[test]
    fn none_only_grid_has_zero_improvements() {
        let mut grid = tiny_grid();
        grid.strategies = vec![Strategy::None];
        let out = run_grid(&grid, 1).unwrap();
        assert_eq!(out.cells.len(), 2);
        assert!(out.cells.iter().all(|c| c.improvement_pct_vs_baseline == 0.0));
    }

    #[test]
    fn failing_cell_is_recorded() {
        let mut grid = tiny_grid();
        grid.strategies = vec![Strategy::ItemMasking];
        grid.mask_p = 1.5;
        let out = run_grid(&grid, 1).unwrap();
        assert_eq!(out.failures.len(), 2);
        assert!(out.failures[0].reason.contains("mask"));
        assert_eq!(out.cells.len(), 2);
    }
}

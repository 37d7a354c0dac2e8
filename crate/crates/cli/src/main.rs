use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use seqaug::augment::{augment_dataset, AugmentationConfig, AugmentedTrainSet, Strategy};
use seqaug::embeddings::{train_skipgram, ItemEmbeddingTable, SkipGramHyper};
use seqaug::evaluation::{evaluate, Mode};
use seqaug::ingest::{dataset_stats, parse_interactions, read_table, write_table, Format};
use seqaug::preprocess::{
    build_sequences, filter_cold_start, leave_one_out_split, read_split_dir, sample_fraction, sequence_stats,
    write_split_dir, SplitManifest,
};
use seqaug::recommender::{
    extract_pairs, train_embedding_scorer, train_markov, train_popularity, EmbeddingHyper, ModelKind, ModelMetadata,
    ScorerModel, DEFAULT_MAX_CONTEXT, MODEL_FORMAT_VERSION,
};
use seqaug::runner::{plot_series, read_cells, run_grid, write_outputs, ExperimentGrid};
use seqaug::synthetic::{generate, SyntheticConfig};
use seqaug::ItemId;

#[derive(Parser)]
#[command(
    name = "seqaug",
    version,
    about = "Sequence augmentation experiments for next-item recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw interactions into a canonical `user,item,timestamp` table.
    Ingest(IngestArgs),
    /// Cold-start filter, leave-one-out split and optional user sampling.
    Preprocess(PreprocessArgs),
    /// Train skip-gram item embeddings on a split's training sequences.
    Embed(EmbedArgs),
    /// Generate artificial training sequences.
    Augment(AugmentArgs),
    /// Train a next-item scorer.
    Train(TrainArgs),
    /// Rank held-out items against 100 sampled negatives.
    Eval(EvalArgs),
    /// Run an experiment grid.
    Run(RunArgs),
    /// Emit (fraction, improvement) series from a grid's cells.json.
    Plotdata(PlotArgs),
    /// Write a synthetic skip-pattern interaction table.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    format: Format,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Id-map sidecar; defaults to `<output>.idmap.json`.
    #[arg(long)]
    id_map: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long, default_value_t = 5)]
    min_actions: usize,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Canonical table written by `ingest`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.0001)]
    min_lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Split directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also export the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = 10)]
    n_aug: usize,
    #[arg(long)]
    mask_p: Option<f64>,
    #[arg(long)]
    synonyms: Option<usize>,
    /// Embedding table written by `embed` (SR only).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Split directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: ModelKind,
    /// Augmented training set written by `augment`.
    #[arg(long)]
    input: PathBuf,
    /// JSON embedding-scorer hyperparameters; unset fields take defaults.
    #[arg(long)]
    hyper: Option<PathBuf>,
    /// Overrides the seed in `--hyper`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_CONTEXT)]
    max_context: usize,
    /// Split directory whose catalog defines the embedding scorer's items.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value = "test")]
    mode: Mode,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Include every user's rank in the report.
    #[arg(long)]
    per_user_ranks: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// `cells.json` from a grid run.
    #[arg(long)]
    cells: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, default_value_t = 0.3)]
    skip_prob: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, value)?;
    lock.write_all(b"\n")?;
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let parsed = parse_interactions(open(&args.input)?, args.format)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let mut out = create(&args.output)?;
    write_table(&mut out, &parsed.interactions)?;
    out.flush()?;
    let map_path = args.id_map.unwrap_or_else(|| sidecar(&args.output, ".idmap.json"));
    let mut maps = create(&map_path)?;
    parsed.id_maps.write_json(&mut maps)?;
    maps.flush()?;
    log::info!("{} interactions -> {}", parsed.records(), args.output.display());
    print_json(&dataset_stats(&parsed.interactions)?)
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let table = read_table(open(&args.input)?)?;
    let sequences = filter_cold_start(&build_sequences(&table), args.min_actions)?;
    let stats = sequence_stats(&sequences)?;
    let split = sample_fraction(&leave_one_out_split(&sequences)?, args.fraction, args.seed)?;
    let manifest = SplitManifest {
        stats,
        min_actions: args.min_actions,
        fraction: args.fraction,
        seed: args.seed,
        num_split_users: split.num_users(),
        num_catalog_items: split.num_items(),
    };
    write_split_dir(&args.output, &split, &manifest)?;
    print_json(&manifest)
}

fn embed(args: EmbedArgs) -> Result<()> {
    let split = read_split_dir(&args.input)?;
    let hyper = SkipGramHyper {
        dim: args.dim,
        window: args.window,
        negatives: args.negatives,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        min_lr: args.min_lr,
        seed: args.seed,
    };
    let seqs: Vec<Vec<ItemId>> = split.users.values().map(|s| s.train.clone()).collect();
    let table = train_skipgram(&seqs, &hyper)?;
    let mut out = create(&args.output)?;
    table.write_binary(&mut out)?;
    out.flush()?;
    if let Some(path) = args.csv {
        let mut out = create(&path)?;
        table.write_csv(&mut out)?;
        out.flush()?;
    }
    log::info!(
        "{} items x {} dims -> {}",
        table.len(),
        table.dim(),
        args.output.display()
    );
    Ok(())
}

fn augment(args: AugmentArgs) -> Result<()> {
    let split = read_split_dir(&args.input)?;
    let config = AugmentationConfig {
        strategy: args.strategy,
        n_aug: args.n_aug,
        mask_p: args.mask_p.or((args.strategy == Strategy::ItemMasking).then_some(0.2)),
        synonyms: args
            .synonyms
            .or((args.strategy == Strategy::SynonymReplacement).then_some(3)),
        seed: args.seed,
    };
    let table = match &args.embeddings {
        Some(path) => Some(ItemEmbeddingTable::read_binary(open(path)?)?),
        None if args.strategy == Strategy::SynonymReplacement => bail!("SR needs --embeddings"),
        None => None,
    };
    let set = augment_dataset(&split.train_sequences(), &split.catalog, &config, table.as_ref())?;
    if !set.ineligible.is_empty() {
        log::warn!("{} users too short for {}", set.ineligible.len(), args.strategy);
    }
    let mut out = create(&args.output)?;
    set.write_csv(&mut out)?;
    out.flush()?;
    log::info!(
        "{} sequences ({} artificial) -> {}",
        set.len(),
        set.artificial_count(),
        args.output.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let set = AugmentedTrainSet::read_csv(open(&args.input)?)?;
    let pairs = extract_pairs(set.item_lists(), args.max_context);
    let mut hyper: EmbeddingHyper = match &args.hyper {
        Some(path) => serde_json::from_reader(open(path)?).with_context(|| format!("reading {}", path.display()))?,
        None => EmbeddingHyper::default(),
    };
    if let Some(seed) = args.seed {
        hyper.seed = seed;
    }
    let model: ScorerModel = match args.model {
        ModelKind::Popularity => train_popularity(&pairs),
        ModelKind::Markov => train_markov(&pairs)?,
        ModelKind::Embedding => {
            let catalog: Vec<ItemId> = match &args.split {
                Some(dir) => read_split_dir(dir)?.catalog.into_iter().collect(),
                None => Vec::new(),
            };
            train_embedding_scorer(&pairs, &catalog, &hyper)?
        }
    };
    let mut out = create(&args.output)?;
    model.write_binary(&mut out)?;
    out.flush()?;
    let embedding = args.model == ModelKind::Embedding;
    let meta = ModelMetadata {
        format_version: MODEL_FORMAT_VERSION,
        kind: args.model,
        max_context: args.max_context,
        hyper: embedding.then_some(hyper),
        seed: embedding.then_some(hyper.seed),
        training_digest: pairs.digest(),
        training_pairs: pairs.len(),
        hyper_defaults_are_stand_ins: embedding && args.hyper.is_none(),
    };
    write_json(&sidecar(&args.output, ".meta.json"), &meta)
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = ScorerModel::read_binary(open(&args.model)?)?;
    let split = read_split_dir(&args.split)?;
    let report = evaluate(&model, &split, args.mode, args.seed)?;
    let mut value = serde_json::to_value(&report)?;
    if !args.per_user_ranks {
        if let Some(obj) = value.as_object_mut() {
            obj.remove("per_user_ranks");
        }
    }
    match &args.output {
        Some(path) => write_json(path, &value)?,
        None => print_json(&value)?,
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let grid = ExperimentGrid::from_json_file(&args.config)?;
    let outcome = run_grid(&grid, args.workers)?;
    write_outputs(&args.out, &outcome)?;
    for f in &outcome.failures {
        log::warn!(
            "failed cell {} {} n_aug={}: {}",
            f.fraction,
            f.strategy,
            f.n_aug,
            f.reason
        );
    }
    println!(
        "{} cells, {} failed -> {}",
        outcome.cells.len(),
        outcome.failures.len(),
        args.out.display()
    );
    Ok(())
}

fn plotdata(args: PlotArgs) -> Result<()> {
    let text = plot_series(&read_cells(&args.cells)?);
    match &args.output {
        Some(path) => {
            let mut out = create(path)?;
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        users: args.users,
        items: args.items,
        skip_prob: args.skip_prob,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let mut out = create(&args.output)?;
    write_table(&mut out, &generate(&config)?)?;
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Embed(a) => embed(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Plotdata(a) => plotdata(a),
        Command::Synth(a) => synth(a),
    }
}

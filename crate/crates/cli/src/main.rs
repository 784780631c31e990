use std::collections::HashSet;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sftype::eval::CurveSettings;
use sftype::select::scenario_budget;
use sftype::synth::{generate, SynthConfig};
use sftype::translate::{translate_corpus, DEFAULT_TOP_K};
use sftype::{
    evaluate, fuse_standardized, learning_curve, load_documents, load_labels, load_table,
    rank_for_annotation, tune_weights, FeaturizedStream, FoldMode, FusionWeights, LabelStore,
    OovPolicy, RelevanceRule, ScoreMatrix, SelectionStrategy, SfTypeInventory, StreamConfig,
    StreamModel, TrainConfig,
};
use sftype_service::{Session, SessionConfig};

#[derive(Parser)]
#[command(name = "sftype", version, about = "SF-type classification for tokenized speech documents")]
struct Cli {
    /// SF type inventory (JSON list); the built-in 11 types when omitted.
    #[arg(long, global = true)]
    inventory: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, labels, inventory and translation table.
    Synth(SynthArgs),
    /// Add a stream made by translating another stream.
    Translate(TranslateArgs),
    /// Fit a vocabulary and write TF-IDF features for one stream.
    Featurize(FeaturizeArgs),
    /// Train one-vs-rest classifiers for one stream.
    Train(TrainArgs),
    /// Score every document with a trained stream model.
    Score(ScoreArgs),
    /// Standardize and combine per-stream score matrices.
    Fuse(FuseArgs),
    /// Grid-search fusion weights on a dev label set.
    TuneWeights(TuneArgs),
    /// Pick unlabeled documents for annotation.
    Select(SelectArgs),
    /// Average precision per type and for relevance.
    Evaluate(EvaluateArgs),
    /// Cross-validated AP as a function of training-label count.
    LearningCurve(CurveArgs),
    /// Run the HTTP annotation service.
    Serve(ServeArgs),
}

/// `ID[:N[:MIN_DF]]`, e.g. `asr:2` for bigrams over stream `asr`.
#[derive(Clone, Debug)]
struct StreamSpec(StreamConfig);

impl FromStr for StreamSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = s.split(':');
        let id = parts.next().filter(|p| !p.is_empty()).ok_or("empty stream id")?;
        let mut config = StreamConfig::unigram(id);
        if let Some(n) = parts.next() {
            config.n = n.parse().map_err(|_| format!("bad n-gram order {n:?}"))?;
        }
        if let Some(m) = parts.next() {
            config.min_df = m.parse().map_err(|_| format!("bad min_df {m:?}"))?;
        }
        if parts.next().is_some() {
            return Err(format!("expected ID[:N[:MIN_DF]], got {s:?}"));
        }
        Ok(StreamSpec(config))
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Full generator config as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oov {
    Drop,
    Passthrough,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, value_enum, default_value = "drop")]
    oov: Oov,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    stream: StreamSpec,
    /// Vocabulary JSON.
    #[arg(long)]
    vocab: PathBuf,
    /// Features as JSONL, one `{doc_id, indices, values}` per document.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight hinge steps by inverse class frequency.
    #[arg(long)]
    balance_classes: bool,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            epochs: self.epochs,
            seed: self.seed,
            balance_classes: self.balance_classes,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    stream: StreamSpec,
    #[command(flatten)]
    train: TrainOpts,
    /// Model directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Score matrices, one per stream.
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    /// Weights JSON; uniform when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    /// Dev labels; only these documents are used.
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Labels collected so far; their documents are excluded.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    budget: Option<usize>,
    /// Named budget: il5 or il6.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = "per_type_top")]
    strategy: SelectionStrategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batch JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Repeat for multi-stream fusion.
    #[arg(long = "stream", required = true)]
    streams: Vec<StreamSpec>,
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Keep stories within one fold.
    #[arg(long)]
    by_story: bool,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long)]
    corpus: PathBuf,
    /// Append-only label log; created if missing.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth used to auto-answer batches.
    #[arg(long)]
    oracle_labels: Option<PathBuf>,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let inventory = match &cli.inventory {
        Some(p) => SfTypeInventory::load(p)?,
        None => SfTypeInventory::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Translate(a) => translate(a),
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train(a, &inventory),
        Command::Score(a) => score(a, &inventory),
        Command::Fuse(a) => fuse(a),
        Command::TuneWeights(a) => tune(a, &inventory),
        Command::Select(a) => select(a, &inventory),
        Command::Evaluate(a) => eval(a, &inventory),
        Command::LearningCurve(a) => curve(a, &inventory),
        Command::Serve(a) => serve(a, cli.inventory.is_some().then_some(inventory)),
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(d) = a.docs {
        config.docs = d;
    }
    if let Some(v) = a.vocab {
        config.vocab_size = v;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let out = generate(&config)?;
    out.write_dir(&a.out)?;
    eprintln!(
        "wrote {} documents and {} labels to {}",
        out.corpus.len(),
        out.labels.len(),
        a.out.display()
    );
    Ok(())
}

fn translate(a: TranslateArgs) -> Result<()> {
    ensure!(a.k >= 1, "--k must be at least 1");
    let mut corpus = load_documents(&a.corpus)?;
    let table = load_table(&a.table)?;
    let oov = match a.oov {
        Oov::Drop => OovPolicy::Drop,
        Oov::Passthrough => OovPolicy::Passthrough,
    };
    translate_corpus(&mut corpus, &table, &a.from, &a.to, a.k, oov);
    corpus.save(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct FeatureLine<'a> {
    doc_id: &'a str,
    indices: &'a [usize],
    values: &'a [f64],
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let corpus = load_documents(&a.corpus)?;
    let stream = FeaturizedStream::build(&corpus, &a.stream.0)?;
    stream.vocab.save(&a.vocab)?;
    if let Some(path) = &a.features {
        let mut text = String::new();
        for (id, x) in stream.doc_ids.iter().zip(&stream.features) {
            text += &serde_json::to_string(&FeatureLine {
                doc_id: id,
                indices: x.indices(),
                values: x.values(),
            })?;
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("vocabulary: {} terms", stream.vocab.len());
    Ok(())
}

fn train(a: TrainArgs, inventory: &SfTypeInventory) -> Result<()> {
    let corpus = load_documents(&a.corpus)?;
    let labels = load_labels(&a.labels, inventory)?;
    let stream = FeaturizedStream::build(&corpus, &a.stream.0)?;
    let model = stream.train(&labels, inventory, &a.train.config())?;
    model.save(&a.out)?;
    for m in model.models.iter().filter(|m| m.degenerate) {
        eprintln!("warning: {} has {} positives and {} negatives", m.sf_type, m.positives, m.negatives);
    }
    Ok(())
}

fn score(a: ScoreArgs, inventory: &SfTypeInventory) -> Result<()> {
    let corpus = load_documents(&a.corpus)?;
    let model = StreamModel::load(&a.model, inventory)?;
    model.score_corpus(&corpus)?.save(&a.out)?;
    Ok(())
}

fn load_matrices(paths: &[PathBuf]) -> Result<Vec<ScoreMatrix>> {
    paths
        .iter()
        .map(|p| ScoreMatrix::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn fuse(a: FuseArgs) -> Result<()> {
    let matrices = load_matrices(&a.scores)?;
    let weights = a.weights.as_ref().map(FusionWeights::load).transpose()?;
    fuse_standardized(&matrices, weights.as_ref())?.save(&a.out)?;
    Ok(())
}

fn tune(a: TuneArgs, inventory: &SfTypeInventory) -> Result<()> {
    let matrices = load_matrices(&a.scores)?;
    let dev = load_labels(&a.dev, inventory)?;
    let standardized: Vec<ScoreMatrix> = matrices.iter().map(sftype::standardize).collect();
    let weights = tune_weights(&standardized, &dev, a.step)?;
    weights.save(&a.out)?;
    for (tag, w) in weights.iter() {
        eprintln!("{tag}\t{w}");
    }
    Ok(())
}

fn select(a: SelectArgs, inventory: &SfTypeInventory) -> Result<()> {
    let scores = ScoreMatrix::load(&a.scores)?;
    let budget = match (&a.scenario, a.budget) {
        (Some(name), _) => scenario_budget(name).with_context(|| format!("unknown scenario {name}"))?,
        (None, Some(b)) => b,
        (None, None) => bail!("--budget or --scenario is required"),
    };
    ensure!(budget > 0, "budget must be positive");
    let labeled: HashSet<String> = match &a.labels {
        Some(p) => load_labels(p, inventory)?.doc_ids().map(str::to_string).collect(),
        None => HashSet::new(),
    };
    let batch = rank_for_annotation(&scores, &labeled, budget, a.strategy, a.seed);
    write_json(a.out.as_deref(), &batch)
}

fn eval(a: EvaluateArgs, inventory: &SfTypeInventory) -> Result<()> {
    let scores = ScoreMatrix::load(&a.scores)?;
    let truth = load_labels(&a.truth, inventory)?;
    let report = evaluate(&scores, &truth, RelevanceRule::MaxScore)?;
    match &a.out {
        Some(p) => {
            report.save(p)?;
            if let Some(m) = report.mean_type_ap {
                eprintln!("mean SF-type AP {m:.4}");
            }
            if let Some(r) = report.relevance_ap {
                eprintln!("relevance AP {r:.4}");
            }
            Ok(())
        }
        None => write_json(None, &report),
    }
}

fn curve(a: CurveArgs, inventory: &SfTypeInventory) -> Result<()> {
    let corpus = load_documents(&a.corpus)?;
    let truth = load_labels(&a.truth, inventory)?;
    let streams: Vec<StreamConfig> = a.streams.into_iter().map(|s| s.0).collect();
    let settings = CurveSettings {
        folds: a.folds,
        label_grid: a.grid,
        seeds: a.seeds,
        fold_mode: if a.by_story { FoldMode::Story } else { FoldMode::Document },
        fusion: a.weights.as_ref().map(FusionWeights::load).transpose()?,
    };
    let curve = learning_curve(&corpus, &truth, inventory, &streams, &a.train.config(), &settings)?;
    curve.save(&a.out, a.csv.as_deref())?;
    for p in &curve.points {
        eprintln!("{}\t{:.4}\t± {:.4}", p.num_labels, p.mean_type_ap, p.stderr);
    }
    Ok(())
}

fn serve(a: ServeArgs, inventory: Option<SfTypeInventory>) -> Result<()> {
    let config = match &a.config {
        Some(p) => SessionConfig::load(p)?,
        None => SessionConfig::default(),
    };
    let inventory = match (inventory, &config.inventory) {
        (Some(inv), _) => inv,
        (None, Some(p)) => SfTypeInventory::load(p)?,
        (None, None) => SfTypeInventory::default(),
    };
    let corpus = load_documents(&a.corpus)?;
    let oracle: Option<LabelStore> = a
        .oracle_labels
        .as_ref()
        .map(|p| load_labels(p, &inventory))
        .transpose()?;
    let session = Session::open(corpus, inventory, config, &a.labels, oracle)?;
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(sftype_service::serve(addr, Arc::new(session)))?;
    Ok(())
}


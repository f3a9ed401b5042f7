//! `sgir` command-line tool: corpus generation, training, embedding, querying,
//! evaluation and the HTTP service.

pub mod server;
pub mod service;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use sgir_core::coco::load_coco_annotations;
use sgir_core::graph::{build_corpus, class_frequencies, read_corpus, write_corpus, ClassVocabulary, GraphBuildConfig};
use sgir_core::retrieval::{
    build_database, partition_classes, read_database, write_database, EmbeddingDatabase, EvaluationReport, QueryMode,
};
use sgir_core::synth::{generate_synthetic_corpus, VocabSpec};
use sgir_core::trainer::{train_with, Checkpoint, TrainConfig, TrainStatus};
use sgir_core::SceneGraph;

use service::{ApiQueryRequest, ApiQueryResponse, QueryService};

#[derive(Debug, Parser)]
#[command(name = "sgir", version, about = "Scene-graph embedding retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic long-tailed scene-graph corpus.
    Synth(SynthArgs),
    /// Convert COCO-style box annotations into a scene-graph corpus.
    BuildGraphs(BuildGraphsArgs),
    /// Train the layout model and write a checkpoint.
    Train(TrainArgs),
    /// Embed every triplet of a corpus into a database file.
    Embed(EmbedArgs),
    /// Rank database records for one query.
    Query(QueryArgs),
    /// Leave-one-out recall@k evaluation of a database.
    Eval(EvalArgs),
    /// Serve the JSON API over a database.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GraphRules {
    /// Drop boxes smaller than this fraction of the image.
    #[arg(long, default_value_t = GraphBuildConfig::default().min_area)]
    min_area: f64,
    #[arg(long, default_value_t = GraphBuildConfig::default().max_objects)]
    max_objects: usize,
    #[arg(long, default_value_t = GraphBuildConfig::default().max_triplets)]
    max_triplets: usize,
}

impl GraphRules {
    fn config(&self, seed: u64) -> GraphBuildConfig {
        GraphBuildConfig { min_area: self.min_area, max_objects: self.max_objects, max_triplets: self.max_triplets, seed }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = VocabSpec::default().n_classes)]
    classes: usize,
    #[arg(long, default_value_t = VocabSpec::default().zipf_exponent)]
    zipf: f64,
    /// Corpora with the same layout seed share per-class layout priors.
    #[arg(long, default_value_t = VocabSpec::default().layout_seed)]
    layout_seed: u64,
    #[command(flatten)]
    rules: GraphRules,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Debug, Args)]
struct BuildGraphsArgs {
    #[arg(long)]
    coco: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    rules: GraphRules,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// TOML or JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Train without the triplet mask and superbox losses.
    #[arg(long)]
    no_triplet: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the training report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    subject: Option<String>,
    #[arg(long)]
    predicate: Option<String>,
    #[arg(long)]
    object: Option<String>,
    /// Use a stored record as the query (it is excluded from the results).
    #[arg(long, conflicts_with_all = ["subject", "predicate", "object"])]
    record: Option<u64>,
    /// One of s, o, p, s+o, s+p+o; inferred from the given labels when omitted.
    #[arg(long)]
    mode: Option<QueryMode>,
    #[arg(short = 'k', long = "k", default_value_t = 10)]
    k: usize,
    /// Print the API response JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Comma-separated modes, or `all`.
    #[arg(long, default_value = "s+o")]
    mode: String,
    #[arg(long = "k", value_delimiter = ',', default_values_t = [1, 25, 50, 100])]
    k: Vec<usize>,
    #[arg(long, default_value_t = sgir_core::retrieval::HEAD_FRACTION)]
    head_fraction: f64,
    /// Evaluate seeded random vectors with the same labels instead.
    #[arg(long)]
    random_baseline: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Corpus the database was embedded from; supplies record geometry.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

/// Runs the tool with stdout as output. Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock())
}

/// Exit codes: 0 success, 1 usage error, 2 runtime error.
pub fn run_with<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SGIR_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> anyhow::Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::BuildGraphs(a) => build_graphs(a, out),
        Command::Train(a) => train(a, out),
        Command::Embed(a) => embed(a, out),
        Command::Query(a) => query(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Serve(a) => serve(a),
    }
}

pub fn load_vocab(path: &Path) -> anyhow::Result<ClassVocabulary> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("reading vocabulary {}", path.display()))
}

pub fn load_corpus(path: &Path) -> anyhow::Result<Vec<SceneGraph>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_corpus(BufReader::new(f)).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn load_database(path: &Path) -> anyhow::Result<EmbeddingDatabase> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_database(BufReader::new(f)).with_context(|| format!("reading database {}", path.display()))
}

fn write_outputs(graphs: &[SceneGraph], vocab: &ClassVocabulary, out: &Path, vocab_path: &Path) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_corpus(&mut w, graphs)?;
    w.flush()?;
    std::fs::write(vocab_path, serde_json::to_vec_pretty(vocab)?)?;
    Ok(())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let spec = VocabSpec {
        n_classes: a.classes,
        zipf_exponent: a.zipf,
        layout_seed: a.layout_seed,
        max_objects: a.rules.max_objects.max(2),
        ..VocabSpec::default()
    };
    if a.classes == 0 || a.scenes == 0 {
        bail!("--classes and --scenes must be positive");
    }
    let records = generate_synthetic_corpus(a.seed, a.scenes, &spec);
    let graphs = build_corpus(&records, &a.rules.config(a.seed))?;
    let vocab = class_frequencies(&graphs, spec.class_names())?;
    write_outputs(&graphs, &vocab, &a.out, &a.vocab)?;
    let triplets: usize = graphs.iter().map(|g| g.triplets().len()).sum();
    writeln!(out, "{} graphs, {triplets} triplets, {} classes", graphs.len(), vocab.len())?;
    Ok(())
}

fn build_graphs(a: BuildGraphsArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let data = load_coco_annotations(&a.coco).with_context(|| format!("loading {}", a.coco.display()))?;
    let graphs = build_corpus(&data.records, &a.rules.config(a.seed))?;
    let vocab = class_frequencies(&graphs, data.vocabulary.names().to_vec())?;
    write_outputs(&graphs, &vocab, &a.out, &a.vocab)?;
    writeln!(out, "{} of {} images kept as graphs", graphs.len(), data.records.len())?;
    Ok(())
}

fn load_train_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    Ok(cfg)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let corpus = load_corpus(&a.corpus)?;
    let mut cfg = match &a.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    cfg.model.num_classes = vocab.len();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if a.no_triplet {
        cfg.triplet_supervision = false;
    }
    cfg.validate()?;

    let outcome = train_with::<f64>(&corpus, &cfg)?;
    outcome.checkpoint(&cfg).save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.report {
        std::fs::write(p, serde_json::to_vec_pretty(&outcome.report)?)?;
    }
    write!(out, "{}", outcome.report.to_table())?;
    if let TrainStatus::Diverged { epoch, step } = outcome.status {
        bail!("training diverged at epoch {epoch}, step {step}; last good parameters saved");
    }
    Ok(())
}

fn embed(a: EmbedArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    if ckpt.model.num_classes != vocab.len() {
        bail!("checkpoint has {} classes but the vocabulary {}", ckpt.model.num_classes, vocab.len());
    }
    let corpus = load_corpus(&a.corpus)?;
    let db = build_database(&ckpt, &corpus, vocab.hash64())?;
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    write_database(&mut w, &db)?;
    w.flush()?;
    writeln!(out, "{} records", db.len())?;
    Ok(())
}

/// Tab-separated result rows under a header line.
pub fn format_results(resp: &ApiQueryResponse) -> String {
    let mut s = String::from("rank\trecord_id\timage_id\tsubject\tpredicate\tobject\tdistance\tsimilarity\n");
    for r in &resp.results {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.rank, r.record_id, r.image_id, r.labels.subject, r.labels.predicate, r.labels.object, r.distance, r.similarity
        ));
    }
    s
}

fn query(a: QueryArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let service = QueryService::new(load_database(&a.db)?, load_vocab(&a.vocab)?)?;
    let resp = match a.record {
        Some(id) => service.query_record(id, a.mode.unwrap_or(QueryMode::SPO), a.k)?,
        None => {
            let inferred = QueryMode::from_parts(a.subject.is_some(), a.predicate.is_some(), a.object.is_some());
            let mode = a.mode.or(inferred).context("give --mode or a label combination matching one")?;
            let req = ApiQueryRequest { subject: a.subject, predicate: a.predicate, object: a.object, mode, k: a.k };
            service.query(&req)?
        }
    };
    if a.json {
        serde_json::to_writer_pretty(&mut *out, &resp)?;
        writeln!(out)?;
    } else {
        write!(out, "{}", format_results(&resp))?;
    }
    Ok(())
}

fn parse_modes(s: &str) -> anyhow::Result<Vec<QueryMode>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(QueryMode::ALL.to_vec());
    }
    s.split(',').map(|m| m.parse::<QueryMode>().map_err(anyhow::Error::from)).collect()
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let mut db = load_database(&a.db)?;
    if db.vocab_hash() != vocab.hash64() {
        bail!("vocabulary does not match the database");
    }
    if let Some(seed) = a.random_baseline {
        db = db.with_random_vectors(seed);
    }
    let split = partition_classes(&vocab, a.head_fraction);
    let modes = parse_modes(&a.mode)?;
    let reports = modes
        .iter()
        .map(|&m| EvaluationReport::run(&db, m, &a.k, &split))
        .collect::<Result<Vec<_>, _>>()?;
    if let [one] = reports.as_slice() {
        serde_json::to_writer_pretty(&mut *out, one)?;
    } else {
        serde_json::to_writer_pretty(&mut *out, &reports)?;
    }
    writeln!(out)?;
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let service = QueryService::new(load_database(&a.db)?, load_vocab(&a.vocab)?)?.with_corpus(load_corpus(&a.corpus)?)?;
    let addr = std::net::SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(server::serve(Arc::new(service), addr))
}

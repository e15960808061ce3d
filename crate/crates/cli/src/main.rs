use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use croqs_core::backend::{BackendLocator, MockBackend, MockConfig, RecordingBackend, Sampling};
use croqs_core::benchmark::Benchmark;
use croqs_core::eval::{emit_report, evaluate_suggestions, EvalConfig, ReportFormat};
use croqs_core::orchestrator::{read_records, write_records, Method, PromptTemplate, Suggester};
use croqs_core::synthetic::{planted, random_suggestions, SyntheticConfig};
use croqs_core::{
    kmeans_partition, search, Backend, Capability, Client, EmbeddingStore, PrototypeKind,
    StoreFormat,
};
use croqs_server::ServerConfig;

#[derive(Parser)]
#[command(
    name = "croqs",
    version,
    about = "Cross-modal query suggestion engine and evaluation harness"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a benchmark file and print its statistics.
    Validate(ValidateArgs),
    /// Generate one suggestion per benchmark cluster.
    Suggest(SuggestArgs),
    /// Score suggestion files against a benchmark.
    Eval(EvalArgs),
    /// Search, cluster and suggest for a single query.
    Explore(ExploreArgs),
    /// Run the exploration HTTP service.
    Serve(ServeArgs),
    /// Write a planted benchmark, its store and a matching mock backend.
    Synth(SynthArgs),
    /// Serve a mock backend over the model protocol.
    MockSidecar(MockSidecarArgs),
}

#[derive(Args)]
struct StoreArgs {
    /// Embedding store (`.bin` binary or `.jsonl`).
    #[arg(long)]
    embeddings: PathBuf,
    /// Override the store format instead of guessing from the extension.
    #[arg(long)]
    embeddings_format: Option<StoreFormat>,
}

impl StoreArgs {
    fn load(&self) -> Result<EmbeddingStore> {
        let format = self
            .embeddings_format
            .unwrap_or_else(|| StoreFormat::from_path(&self.embeddings));
        let store = EmbeddingStore::load(&self.embeddings, format)
            .with_context(|| format!("loading {}", self.embeddings.display()))?;
        tracing::info!(
            images = store.len(),
            dimension = store.dimension(),
            "store loaded"
        );
        Ok(store)
    }
}

#[derive(Args)]
struct BackendArgs {
    /// `http://host:port`, `mock` or `mock:<config.json>`; defaults to
    /// $CROQS_BACKEND_URL.
    #[arg(long)]
    backend: Option<String>,
    /// Seed sent with every generation request.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Maximum in-flight backend requests.
    #[arg(long, default_value_t = croqs_core::backend::DEFAULT_CONCURRENCY)]
    concurrency: usize,
    /// Record every backend request and response to this JSONL file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

struct Connected {
    client: Client,
    recorder: Option<Arc<RecordingBackend<Arc<dyn Backend>>>>,
    transcript: Option<PathBuf>,
}

impl Connected {
    fn finish(&self) -> Result<()> {
        if let (Some(rec), Some(path)) = (&self.recorder, &self.transcript) {
            rec.write_jsonl(path)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

impl BackendArgs {
    fn connect(&self, dimension: usize, required: &[Capability]) -> Result<Connected> {
        let locator = BackendLocator::resolve(self.backend.as_deref())?;
        let raw = locator.open(dimension)?;
        let (backend, recorder): (Arc<dyn Backend>, _) = if self.transcript.is_some() {
            let rec = Arc::new(RecordingBackend::new(raw));
            (rec.clone(), Some(rec))
        } else {
            (raw, None)
        };
        let client = Client::connect(backend, required)?
            .with_dimension(dimension)
            .with_concurrency(self.concurrency)
            .with_sampling(Sampling {
                seed: self.seed,
                temperature: self.temperature,
            });
        Ok(Connected {
            client,
            recorder,
            transcript: self.transcript.clone(),
        })
    }
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Read a release-style file through the tolerant adapter.
    #[arg(long)]
    release: bool,
    /// Also check that every image id is present in this store.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Write the validated benchmark in canonical form.
    #[arg(long)]
    write: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Clipcap,
    Decap,
    Groupcap,
    Identity,
    Human,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Centroid,
    Representative,
}

impl From<KindArg> for PrototypeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Centroid => PrototypeKind::Centroid,
            KindArg::Representative => PrototypeKind::Representative,
        }
    }
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Prototype for clipcap/decap.
    #[arg(long, value_enum, default_value = "centroid")]
    prototype: KindArg,
    /// Condition captions on the initial query.
    #[arg(long)]
    query_aware: bool,
    /// Name the method is reported under; defaults to the method name.
    #[arg(long)]
    label: Option<String>,
    /// Images captioned per cluster by groupcap.
    #[arg(long, default_value_t = croqs_core::prototype::DEFAULT_GROUPCAP_IMAGES)]
    images: usize,
    #[arg(long, default_value_t = croqs_core::orchestrator::DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
    /// GroupCap prompt template with {q0}, {captions} and {examples}.
    #[arg(long)]
    prompt_template: Option<PathBuf>,
    /// JSON array of few-shot examples for the template.
    #[arg(long, requires = "prompt_template")]
    prompt_examples: Option<PathBuf>,
}

impl MethodArgs {
    fn build(&self) -> Result<(String, Method)> {
        let method = match self.method {
            MethodArg::Clipcap | MethodArg::Decap => Method::PrototypeCaption {
                kind: self.prototype.into(),
                query_aware: self.query_aware,
            },
            MethodArg::Groupcap => {
                let template = match &self.prompt_template {
                    Some(p) => PromptTemplate::load(p, self.prompt_examples.as_deref())
                        .with_context(|| format!("loading {}", p.display()))?,
                    None => PromptTemplate::default(),
                };
                Method::GroupCap {
                    images: self.images,
                    template,
                    max_tokens: self.max_tokens,
                }
            }
            MethodArg::Identity => Method::Identity,
            MethodArg::Human => Method::Human,
        };
        let label = self.label.clone().unwrap_or_else(|| {
            let base = self
                .method
                .to_possible_value()
                .expect("no skipped variants")
                .get_name()
                .to_string();
            if self.query_aware && matches!(method, Method::PrototypeCaption { .. }) {
                format!("{base}_q0")
            } else {
                base
            }
        });
        Ok((label, method))
    }

    fn required(&self) -> &'static [Capability] {
        match self.method {
            MethodArg::Clipcap | MethodArg::Decap => &[Capability::CaptionVector],
            MethodArg::Groupcap => &[Capability::CaptionVector, Capability::Complete],
            MethodArg::Identity | MethodArg::Human => &[],
        }
    }
}

#[derive(Args)]
struct SuggestArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Output JSONL of suggestion records.
    #[arg(long)]
    out: PathBuf,
    /// Write clusters that failed to this JSONL file.
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Suggestion JSONL files; each method label becomes one report row.
    #[arg(long, required = true, num_args = 1..)]
    suggestions: Vec<PathBuf>,
    /// Full evaluation as JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the summary table (`.md` or `.csv`).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Initial result set size.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = croqs_core::metrics::DEFAULT_REPR_CUTOFF)]
    repr_cutoff: usize,
    #[arg(long, default_value_t = croqs_core::metrics::DEFAULT_MAP_CUTOFF)]
    map_cutoff: usize,
    #[arg(long, default_value_t = croqs_core::metrics::DEFAULT_NDCG_RANK)]
    ndcg_rank: usize,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    query: String,
    /// Result set size.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Number of clusters.
    #[arg(long, default_value_t = croqs_core::clustering::DEFAULT_CLUSTER_COUNT)]
    m: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the configured listen address.
    #[arg(long)]
    listen: Option<SocketAddr>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    queries: usize,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, default_value_t = 70)]
    distractors: usize,
    #[arg(long, default_value_t = 64)]
    dimension: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write random suggestions generated with this seed.
    #[arg(long)]
    random_seed: Option<u64>,
}

#[derive(Args)]
struct MockSidecarArgs {
    /// Mock backend config (JSON).
    #[arg(long)]
    mock: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8090")]
    listen: SocketAddr,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("CROQS_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn load_benchmark(path: &Path, release: bool) -> Result<Benchmark> {
    let bench = if release {
        Benchmark::load_release(path)
    } else {
        Benchmark::load(path)
    };
    bench.with_context(|| format!("loading {}", path.display()))
}

fn validate(args: ValidateArgs) -> Result<()> {
    let bench = load_benchmark(&args.dataset, args.release)?;
    bench.validate()?;
    let stats = bench.stats();
    println!("{}", serde_json::to_string_pretty(&stats)?);
    if let Some(path) = &args.embeddings {
        let store = EmbeddingStore::load(path, StoreFormat::from_path(path))?;
        let missing = bench.validate_against_store(&store);
        if !missing.is_empty() {
            bail!(
                "{} image reference(s) missing from {}, first `{}`",
                missing.len(),
                path.display(),
                missing[0]
            );
        }
    }
    if let Some(out) = &args.write {
        bench.save(out)?;
    }
    Ok(())
}

fn suggest(args: SuggestArgs) -> Result<()> {
    let bench = load_benchmark(&args.dataset, false)?;
    bench.validate()?;
    let store = args.store.load()?;
    let (label, method) = args.method.build()?;
    let connected = if method.needs_backend() {
        Some(
            args.backend
                .connect(store.dimension(), args.method.required())?,
        )
    } else {
        None
    };
    let suggester = Suggester::new(label, method, &store, connected.as_ref().map(|c| &c.client))?;
    let outcome = suggester.suggest_benchmark(&bench);
    write_records(&args.out, &outcome.records)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.failures {
        let mut text = String::new();
        for f in &outcome.failures {
            text.push_str(&serde_json::to_string(f)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
    }
    if let Some(c) = &connected {
        c.finish()?;
    }
    eprintln!(
        "{} suggestion(s) written to {}, {} failure(s)",
        outcome.records.len(),
        args.out.display(),
        outcome.failures.len()
    );
    for f in &outcome.failures {
        eprintln!("  {}/{}: {}", f.query_id, f.cluster_id, f.error);
    }
    if !outcome.failures.is_empty() {
        bail!("{} cluster(s) failed", outcome.failures.len());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let bench = load_benchmark(&args.dataset, false)?;
    bench.validate()?;
    let store = args.store.load()?;
    let mut records = Vec::new();
    for p in &args.suggestions {
        records.extend(read_records(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let connected = args
        .backend
        .connect(store.dimension(), &[Capability::EmbedText])?;
    let config = EvalConfig {
        n: args.n,
        repr_cutoff: args.repr_cutoff,
        map_cutoff: args.map_cutoff,
        ndcg_rank: args.ndcg_rank,
    };
    let evaluation = evaluate_suggestions(&bench, &store, &records, &connected.client, &config)?;
    connected.finish()?;
    if !evaluation.forced_inclusions.is_empty() {
        eprintln!(
            "{} cluster member(s) were outside the top-{} result set and were force-included",
            evaluation.forced_inclusions.len(),
            config.n
        );
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&evaluation)? + "\n")
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(t) = &args.table {
        std::fs::write(
            t,
            emit_report(&evaluation.reports, ReportFormat::from_path(t)),
        )?;
    }
    print!(
        "{}",
        emit_report(&evaluation.reports, ReportFormat::Markdown)
    );
    Ok(())
}

fn explore(args: ExploreArgs) -> Result<()> {
    let store = args.store.load()?;
    let (label, method) = args.method.build()?;
    let mut required = vec![Capability::EmbedText];
    required.extend_from_slice(args.method.required());
    let connected = args.backend.connect(store.dimension(), &required)?;
    let q = connected
        .client
        .embed_text(std::slice::from_ref(&args.query))?;
    let results = search(&store, q[0].as_slice(), args.k)?;
    let partition = kmeans_partition(&results, &store, args.m, args.backend.seed)?;
    let suggester = Suggester::new(label, method, &store, Some(&connected.client))?;
    let outcome = suggester.suggest_all("explore", &args.query, &partition);
    connected.finish()?;
    println!("{} results for {:?}", results.len(), args.query);
    for c in &partition.clusters {
        let line = match outcome.records.iter().find(|r| r.cluster_id == c.id) {
            Some(r) => r.q_hat.clone(),
            None => {
                let f = outcome.failures.iter().find(|f| f.cluster_id == c.id);
                format!("(failed: {})", f.map_or("unknown", |f| f.error.as_str()))
            }
        };
        let preview: Vec<&str> = c.image_ids.iter().take(5).map(String::as_str).collect();
        println!(
            "{} [{} images: {}] {}",
            c.id,
            c.len(),
            preview.join(", "),
            line
        );
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        queries: args.queries,
        clusters_per_query: args.clusters,
        points_per_cluster: args.points,
        distractors_per_query: args.distractors,
        dimension: args.dimension,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    if config.dimension < config.queries * (config.clusters_per_query + 1) + 2 {
        bail!("--dimension is too small for the requested queries and clusters");
    }
    let s = planted(&config);
    std::fs::create_dir_all(&args.out)?;
    s.store
        .save(args.out.join("store.bin"), StoreFormat::Binary)?;
    s.benchmark.save(args.out.join("benchmark.json"))?;
    s.mock.to_config().save(args.out.join("mock.json"))?;
    write_records(args.out.join("oracle.jsonl"), &s.oracle)?;
    if let Some(seed) = args.random_seed {
        write_records(
            args.out.join("random.jsonl"),
            &random_suggestions(&s.benchmark, seed),
        )?;
    }
    println!(
        "wrote {} images, {} queries, {} clusters to {}",
        s.store.len(),
        s.benchmark.queries.len(),
        s.oracle.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli.command) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Suggest(a) => suggest(a),
        Command::Eval(a) => eval(a),
        Command::Explore(a) => explore(a),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => {
            let mut config = ServerConfig::load(&a.config)?;
            if let Some(l) = a.listen {
                config.listen = l;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(croqs_server::serve(config))
                .map_err(anyhow::Error::msg)
        }
        Command::MockSidecar(a) => {
            let cfg = MockConfig::load(&a.mock).map_err(anyhow::Error::msg)?;
            let mock = MockBackend::from_config(cfg).map_err(anyhow::Error::msg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(croqs_server::serve_backend(Arc::new(mock), a.listen))
                .map_err(anyhow::Error::msg)
        }
    }
}

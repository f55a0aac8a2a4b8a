use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use casematch::dates::DateExtractor;
use casematch::embedding::DateKernel;
use casematch::engine::{
    cluster_groups, BaselineModel, BaselineScorer, Emit, Engine, ModelScorer, PairScorer, PairVerdict,
    RunRecord, ScanOptions, Strategy, StreamConfig, DEFAULT_BATCH_SIZE,
};
use casematch::eval::{assemble_table, CountrySummary, PrecisionRunSummary};
use casematch::external::PrefixWhitelist;
use casematch::frequency::{FrequencyTables, DEFAULT_MIN_COUNTRY_SUPPORT};
use casematch::report::{load_corpus, Corpus, ExclusionFilter, Ontology, PairKind};
use casematch::review::{annotations_to_labelled, read_annotations, ReviewSession};
use casematch::svm::{ClassifierModel, IndexedPair, LabelledPair, ModelKind, TrainConfig};
use casematch::synth::{generate, holdout_split, GroundTruth, SynthConfig, TruthPair};
use casematch::workflow::{
    evaluate_against_truth, fit_baseline, fit_params, index_pairs, pair_kind_of, train_kind, truth_to_labelled,
    DEFAULT_INDEPENDENCE_PAIRS, DEFAULT_INDEPENDENCE_SEED, DEFAULT_SPLIT_RATIOS, DESK_NEGATIVE_RATIO,
    DESK_SAMPLE_CAP,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "casematch", version, about = "Duplicate detection for case safety reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with planted duplicates
    Synth(SynthArgs),
    /// Build frequency tables from a corpus
    Stats(StatsArgs),
    /// Fit a drug, vaccine or baseline model
    Train(TrainArgs),
    /// Classify report pairs
    Scan {
        #[command(subcommand)]
        mode: ScanMode,
    },
    /// Group suspected pairs into duplicate groups
    Cluster(ClusterArgs),
    /// Compute evaluation metrics and tables
    Eval {
        #[command(subcommand)]
        mode: EvalMode,
    },
    /// Serve the review API for a precision run
    Serve(ServeArgs),
    /// Merge an annotation log into the training set and refit a model
    Retrain(RetrainArgs),
}

#[derive(Args, Debug, Serialize)]
struct CorpusArgs {
    /// Corpus in JSON Lines
    #[arg(long)]
    corpus: PathBuf,
    /// Substance and preferred-term dictionary
    #[arg(long)]
    ontology: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Generator configuration (JSON); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured generator seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured corpus size
    #[arg(long)]
    reports: Option<usize>,
    /// Output directory for corpus.jsonl, ontology.json, truth.jsonl and synth_config.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    input: CorpusArgs,
    /// Countries with fewer reports use the global tables
    #[arg(long, default_value_t = DEFAULT_MIN_COUNTRY_SUPPORT)]
    min_country_support: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TrainTarget {
    Drug,
    Vaccine,
    Baseline,
}

#[derive(Args, Debug, Serialize)]
struct LabelArgs {
    /// Ground-truth pairs (JSON Lines) used as labels
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Labelled pairs (JSON Lines)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Use only the training part of a seeded hold-out split of the truth
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    target: TrainTarget,
    #[command(flatten)]
    input: CorpusArgs,
    /// Frequency tables from `stats`
    #[arg(long)]
    tables: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
    /// Seed of the negative sample
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random negative pairs per labelled positive
    #[arg(long, default_value_t = DESK_NEGATIVE_RATIO)]
    negative_ratio: f64,
    /// Cap on sampled negatives per labelled positive
    #[arg(long, default_value_t = DESK_SAMPLE_CAP)]
    sample_cap: usize,
    /// Soft-margin penalty
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Decision threshold on the classifier margin
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Seed of the random pairs behind the date-difference histogram
    #[arg(long, default_value_t = DEFAULT_INDEPENDENCE_SEED)]
    independence_seed: u64,
    /// Random pairs behind the date-difference histogram
    #[arg(long, default_value_t = DEFAULT_INDEPENDENCE_PAIRS)]
    independence_pairs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    #[command(flatten)]
    input: CorpusArgs,
    /// Frequency tables from `stats`
    #[arg(long)]
    tables: PathBuf,
    /// Drug classifier; needs --vaccine-model
    #[arg(long, requires = "vaccine_model", conflicts_with = "baseline_model")]
    drug_model: Option<PathBuf>,
    /// Vaccine classifier; needs --drug-model
    #[arg(long, requires = "drug_model")]
    vaccine_model: Option<PathBuf>,
    /// Baseline comparator instead of the classifiers
    #[arg(long)]
    baseline_model: Option<PathBuf>,
    /// Force the externally-indicated feature to zero
    #[arg(long)]
    mask_external: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EmitArg {
    All,
    NonBlocked,
    Suspected,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StrategyArg {
    Indexed,
    AllPairs,
}

#[derive(Subcommand, Debug)]
enum ScanMode {
    /// Evaluate every pair of the corpus or of one country
    Exhaustive(ExhaustiveArgs),
    /// Precision run over a seeded random-pair stream
    Stream(StreamArgs),
}

#[derive(Args, Debug, Serialize)]
struct ExhaustiveArgs {
    #[command(flatten)]
    models: ModelArgs,
    /// Restrict the scan to reports from one country
    #[arg(long)]
    country: Option<String>,
    /// Which verdicts to write
    #[arg(long, value_enum, default_value_t = EmitArg::Suspected)]
    emit: EmitArg,
    /// Candidate generation strategy
    #[arg(long, value_enum, default_value_t = StrategyArg::Indexed)]
    strategy: StrategyArg,
    /// Verdicts in JSON Lines
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct StreamArgs {
    #[command(flatten)]
    models: ModelArgs,
    /// Stop after this many distinct suspected pairs
    #[arg(long)]
    stop_at: usize,
    /// Seed of the random-pair stream
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pairs drawn per batch
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: u64,
    /// Give up after consuming this many pairs
    #[arg(long)]
    max_pairs: Option<u64>,
    /// Run record (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SuspectedArgs {
    /// Verdicts from an exhaustive scan
    #[arg(long, conflicts_with = "run", required_unless_present = "run")]
    verdicts: Option<PathBuf>,
    /// Run record from a stream scan
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ClusterArgs {
    #[command(flatten)]
    suspected: SuspectedArgs,
    /// Corpus size; taken from the run record when omitted
    #[arg(long)]
    n_reports: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum EvalMode {
    /// Precision and recall of suspected pairs against ground truth
    Truth(EvalTruthArgs),
    /// Precision and country tables from summary counts
    Table(EvalTableArgs),
}

#[derive(Args, Debug, Serialize)]
struct EvalTruthArgs {
    #[arg(long)]
    truth: PathBuf,
    #[command(flatten)]
    suspected: SuspectedArgs,
    /// Measure recall only on the held-out part of this seeded split
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct EvalTableArgs {
    /// JSON object with `runs` and `countries` arrays
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    #[command(flatten)]
    input: CorpusArgs,
    /// Precision run record whose suspected pairs form the review queue
    #[arg(long)]
    run: PathBuf,
    /// Annotation log (JSON Lines), replayed at start and appended to
    #[arg(long)]
    log: PathBuf,
    /// Annotator whose label wins on disagreement
    #[arg(long)]
    authoritative: Option<String>,
    /// Listen address
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum RetrainTarget {
    Drug,
    Vaccine,
}

#[derive(Args, Debug, Serialize)]
struct RetrainArgs {
    target: RetrainTarget,
    /// Model being refitted; its parameters and training settings are reused
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    authoritative: Option<String>,
    #[command(flatten)]
    input: CorpusArgs,
    /// Frequency tables from `stats`
    #[arg(long)]
    tables: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Errors from malformed invocations rather than bad data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn print_config(command: &str, args: &impl Serialize) -> anyhow::Result<()> {
    eprintln!("effective config [{command}]: {}", serde_json::to_string(args)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.chain().find_map(|c| c.downcast_ref::<casematch::Error>()) {
        Some(err) if !err.is_data_error() => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Scan { mode: ScanMode::Exhaustive(a) } => scan_exhaustive(a),
        Command::Scan { mode: ScanMode::Stream(a) } => scan_stream(a),
        Command::Cluster(a) => cluster(a),
        Command::Eval { mode: EvalMode::Truth(a) } => eval_truth(a),
        Command::Eval { mode: EvalMode::Table(a) } => eval_table(a),
        Command::Serve(a) => serve(a),
        Command::Retrain(a) => retrain(a),
    }
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.reports {
        cfg.n_reports = n;
    }
    print_config("synth", &cfg)?;
    let out = generate(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    out.corpus.save(a.out.join("corpus.jsonl"))?;
    out.ontology.save(a.out.join("ontology.json"))?;
    out.truth.save(a.out.join("truth.jsonl"))?;
    cfg.save(a.out.join("synth_config.json"))?;
    println!(
        "{}",
        serde_json::json!({
            "reports": out.corpus.len(),
            "truth_pairs": out.truth.pairs.len(),
            "duplicates": out.truth.duplicates().count(),
            "out": a.out,
        })
    );
    Ok(())
}

fn load_inputs(c: &CorpusArgs) -> anyhow::Result<(Ontology, Corpus)> {
    let ontology = Ontology::load(&c.ontology)?;
    let corpus = load_corpus(&c.corpus, &ontology, &ExclusionFilter::default())?;
    Ok((ontology, corpus))
}

fn stats(a: StatsArgs) -> anyhow::Result<()> {
    print_config("stats", &a)?;
    let (ontology, corpus) = load_inputs(&a.input)?;
    let tables = FrequencyTables::build(&corpus, &ontology, a.min_country_support)?;
    tables.save(&a.out)?;
    let own: Vec<&String> = tables
        .country_reports()
        .keys()
        .filter(|c| tables.has_country_tables(c))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "reports": tables.total_reports(),
            "countries": tables.country_reports(),
            "country_tables": own,
            "out": a.out,
        })
    );
    Ok(())
}

fn prepare(input: &CorpusArgs, tables_path: &Path) -> anyhow::Result<(Corpus, FrequencyTables, Engine)> {
    let (_, corpus) = load_inputs(input)?;
    let tables = FrequencyTables::load(tables_path)?;
    let engine = Engine::prepare(&corpus, &tables, &DateExtractor::default(), &DateKernel::default())?;
    Ok((corpus, tables, engine))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| casematch::Error::MalformedLine {
            line: n + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

fn training_truth(truth: &GroundTruth, split_seed: Option<u64>) -> anyhow::Result<Vec<TruthPair>> {
    Ok(match split_seed {
        Some(seed) => holdout_split(truth, DEFAULT_SPLIT_RATIOS, seed)?.train,
        None => truth.pairs.clone(),
    })
}

fn base_labels(l: &LabelArgs) -> anyhow::Result<Vec<LabelledPair>> {
    let mut out = Vec::new();
    if let Some(p) = &l.truth {
        out.extend(truth_to_labelled(&training_truth(&GroundTruth::load(p)?, l.split_seed)?));
    } else if l.split_seed.is_some() {
        return Err(usage("--split-seed needs --truth"));
    }
    if let Some(p) = &l.labels {
        out.extend(read_jsonl::<LabelledPair>(p)?);
    }
    Ok(out)
}

fn usable_pairs(engine: &Engine, labelled: &[LabelledPair]) -> anyhow::Result<Vec<IndexedPair>> {
    let (usable, blocked) = index_pairs(engine, labelled)?;
    if !blocked.is_empty() {
        eprintln!("{} labelled pairs fail blocking and are skipped", blocked.len());
    }
    Ok(usable)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    print_config("train", &a)?;
    let labelled = base_labels(&a.labels)?;
    if labelled.is_empty() {
        return Err(usage("no labels given; pass --truth and/or --labels"));
    }
    let (_, tables, engine) = prepare(&a.input, &a.tables)?;
    let pairs = usable_pairs(&engine, &labelled)?;
    let params = fit_params(&engine, a.independence_seed, a.independence_pairs)?;
    let kind = match a.target {
        TrainTarget::Drug => ModelKind::Drug,
        TrainTarget::Vaccine => ModelKind::Vaccine,
        TrainTarget::Baseline => {
            let model = fit_baseline(&engine, &tables, &params, &pairs)?;
            model.save(&a.out)?;
            println!(
                "{}",
                serde_json::json!({"model": "baseline", "threshold": model.threshold, "duplicates_used": model.duplicates_used, "out": a.out})
            );
            return Ok(());
        }
    };
    let cfg = TrainConfig {
        negative_ratio: a.negative_ratio,
        sample_cap: a.sample_cap,
        seed: a.seed,
        c: a.c,
        threshold: a.threshold,
        ..TrainConfig::new(kind)
    };
    let model = train_kind(&engine, &tables, &PrefixWhitelist::default(), &params, &pairs, &cfg)?;
    model.save(&a.out)?;
    print_model_summary(&model, &a.out);
    Ok(())
}

fn print_model_summary(model: &ClassifierModel, out: &Path) {
    println!(
        "{}",
        serde_json::json!({
            "model": model.id(),
            "weights": model.feature_names.iter().zip(&model.weights).map(|(n, w)| (n.clone(), *w)).collect::<HashMap<_, _>>(),
            "intercept": model.intercept,
            "metadata": model.metadata,
            "out": out,
        })
    );
}

struct Models {
    drug: Option<ClassifierModel>,
    vaccine: Option<ClassifierModel>,
    baseline: Option<BaselineModel>,
}

fn load_models(m: &ModelArgs) -> anyhow::Result<Models> {
    let models = Models {
        drug: m.drug_model.as_ref().map(ClassifierModel::load).transpose()?,
        vaccine: m.vaccine_model.as_ref().map(ClassifierModel::load).transpose()?,
        baseline: m.baseline_model.as_ref().map(BaselineModel::load).transpose()?,
    };
    if models.baseline.is_none() && models.drug.is_none() {
        return Err(usage("pass --drug-model and --vaccine-model, or --baseline-model"));
    }
    if models.baseline.is_some() && m.mask_external {
        return Err(usage("--mask-external applies to the linear models only"));
    }
    Ok(models)
}

fn scorer<'a>(
    models: &'a Models,
    tables: &'a FrequencyTables,
    whitelist: &'a PrefixWhitelist,
    mask_external: bool,
) -> anyhow::Result<Box<dyn PairScorer + 'a>> {
    if let Some(model) = &models.baseline {
        return Ok(Box::new(BaselineScorer { model, tables }));
    }
    let (Some(drug), Some(vaccine)) = (&models.drug, &models.vaccine) else {
        return Err(usage("both --drug-model and --vaccine-model are required"));
    };
    let mut s = ModelScorer::new(drug, vaccine, tables, whitelist)?;
    s.mask_external = mask_external;
    Ok(Box::new(s))
}

fn scan_exhaustive(a: ExhaustiveArgs) -> anyhow::Result<()> {
    print_config("scan exhaustive", &a)?;
    let models = load_models(&a.models)?;
    let (_, tables, engine) = prepare(&a.models.input, &a.models.tables)?;
    let whitelist = PrefixWhitelist::default();
    let scorer = scorer(&models, &tables, &whitelist, a.models.mask_external)?;
    let subset = match &a.country {
        Some(c) => engine.country_subset(c),
        None => engine.all(),
    };
    let opts = ScanOptions {
        emit: match a.emit {
            EmitArg::All => Emit::All,
            EmitArg::NonBlocked => Emit::NonBlocked,
            EmitArg::Suspected => Emit::Suspected,
        },
        strategy: match a.strategy {
            StrategyArg::Indexed => Strategy::Indexed,
            StrategyArg::AllPairs => Strategy::AllPairs,
        },
    };
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    let started = std::time::Instant::now();
    let stats = engine.scan_exhaustive(&subset, scorer.as_ref(), opts, |v| {
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n").map_err(|e| casematch::Error::io(&a.out, e))
    })?;
    w.flush()?;
    let secs = started.elapsed().as_secs_f64();
    println!(
        "{}",
        serde_json::json!({
            "model": scorer.model_id(),
            "reports": subset.len(),
            "stats": stats,
            "seconds": secs,
            "pairs_per_second": stats.pairs as f64 / secs.max(1e-9),
            "out": a.out,
        })
    );
    Ok(())
}

fn scan_stream(a: StreamArgs) -> anyhow::Result<()> {
    print_config("scan stream", &a)?;
    let models = load_models(&a.models)?;
    let (_, tables, engine) = prepare(&a.models.input, &a.models.tables)?;
    let whitelist = PrefixWhitelist::default();
    let scorer = scorer(&models, &tables, &whitelist, a.models.mask_external)?;
    let stream = StreamConfig {
        seed: a.seed,
        batch_size: a.batch_size,
        max_pairs: a.max_pairs,
    };
    let record = engine.precision_run(stream, scorer.as_ref(), a.stop_at)?;
    record.save(&a.out)?;
    if !record.complete {
        eprintln!(
            "stream ended after {} pairs with {} of {} suspected pairs",
            record.pairs_consumed,
            record.suspected.len(),
            record.stop_at
        );
    }
    println!(
        "{}",
        serde_json::json!({
            "model": record.model_id,
            "suspected": record.suspected.len(),
            "pairs_consumed": record.pairs_consumed,
            "batches": record.batches,
            "complete": record.complete,
            "out": a.out,
        })
    );
    Ok(())
}

struct SuspectedSet {
    pairs: Vec<(String, String)>,
    run: Option<RunRecord>,
}

fn load_suspected(s: &SuspectedArgs) -> anyhow::Result<SuspectedSet> {
    if let Some(p) = &s.run {
        let run = RunRecord::load(p)?;
        let pairs = run.suspected.iter().map(|p| (p.id_a.clone(), p.id_b.clone())).collect();
        return Ok(SuspectedSet { pairs, run: Some(run) });
    }
    let p = s.verdicts.as_ref().ok_or_else(|| usage("pass --verdicts or --run"))?;
    let pairs = read_jsonl::<PairVerdict>(p)?
        .into_iter()
        .filter(|v| v.suspected)
        .map(|v| (v.id_a, v.id_b))
        .collect();
    Ok(SuspectedSet { pairs, run: None })
}

fn cluster(a: ClusterArgs) -> anyhow::Result<()> {
    print_config("cluster", &a)?;
    let s = load_suspected(&a.suspected)?;
    let n = a
        .n_reports
        .or(s.run.as_ref().map(|r| r.n_reports))
        .ok_or_else(|| usage("--n-reports is required with --verdicts"))?;
    let clustering = cluster_groups(&s.pairs, n);
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &clustering)?;
    println!(
        "{}",
        serde_json::json!({"groups": clustering.groups.len(), "remaining": clustering.remaining, "out": a.out})
    );
    Ok(())
}

fn eval_truth(a: EvalTruthArgs) -> anyhow::Result<()> {
    print_config("eval truth", &a)?;
    let truth = GroundTruth::load(&a.truth)?;
    let s = load_suspected(&a.suspected)?;
    let recall_over = match a.split_seed {
        Some(seed) => {
            let split = holdout_split(&truth, DEFAULT_SPLIT_RATIOS, seed)?;
            split.validation.into_iter().chain(split.test).collect()
        }
        None => truth.pairs.clone(),
    };
    let ev = evaluate_against_truth(&s.pairs, &truth, &recall_over);
    println!("{}", serde_json::to_string_pretty(&ev)?);
    Ok(())
}

#[derive(Deserialize)]
struct TableInput {
    #[serde(default)]
    runs: Vec<PrecisionRunSummary>,
    #[serde(default)]
    countries: Vec<CountrySummary>,
}

fn eval_table(a: EvalTableArgs) -> anyhow::Result<()> {
    print_config("eval table", &a)?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let input: TableInput = serde_json::from_str(&text).map_err(casematch::Error::from)?;
    let report = assemble_table(&input.runs, &input.countries)?;
    print!("{}", report.to_text());
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    print_config("serve", &a)?;
    let (_, corpus) = load_inputs(&a.input)?;
    let run = RunRecord::load(&a.run)?;
    let session = ReviewSession::new(run, corpus, DateExtractor::default())?
        .with_log(&a.log)?
        .with_authoritative(a.authoritative.clone());
    let app = casematch_cli::service::router(session);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        println!("review service listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}

fn retrain(a: RetrainArgs) -> anyhow::Result<()> {
    print_config("retrain", &a)?;
    let previous = ClassifierModel::load(&a.model)?;
    let kind = match a.target {
        RetrainTarget::Drug => ModelKind::Drug,
        RetrainTarget::Vaccine => ModelKind::Vaccine,
    };
    if previous.kind != kind {
        return Err(usage(format!("{} is a {:?} model", a.model.display(), previous.kind)));
    }
    let annotations = read_annotations(&a.annotations)?;
    let from_log = annotations_to_labelled(&annotations, a.authoritative.as_deref());
    let (_, tables, engine) = prepare(&a.input, &a.tables)?;

    let mut merged: Vec<LabelledPair> = Vec::new();
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    let key = |p: &LabelledPair| {
        if p.id_a <= p.id_b {
            (p.id_a.clone(), p.id_b.clone())
        } else {
            (p.id_b.clone(), p.id_a.clone())
        }
    };
    for p in base_labels(&a.labels)?.into_iter().chain(from_log.iter().cloned()) {
        match slot.get(&key(&p)) {
            Some(&i) => merged[i] = p,
            None => {
                slot.insert(key(&p), merged.len());
                merged.push(p);
            }
        }
    }
    let pairs = usable_pairs(&engine, &merged)?;
    let wanted = match kind {
        ModelKind::Drug => PairKind::DrugPair,
        ModelKind::Vaccine => PairKind::VaccinePair,
    };
    let annotated: std::collections::HashSet<(String, String)> = from_log.iter().map(key).collect();
    let added = pairs
        .iter()
        .filter(|p| pair_kind_of(&engine, p) == wanted)
        .filter(|p| {
            let (x, y) = (&engine.reports()[p.a].id, &engine.reports()[p.b].id);
            annotated.contains(&if x <= y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) })
        })
        .count();
    let cfg = TrainConfig {
        negative_ratio: previous.metadata.negative_ratio,
        sample_cap: previous.metadata.sample_cap,
        seed: previous.metadata.seed,
        c: previous.c,
        threshold: previous.threshold,
        tolerance: previous.metadata.solver_tolerance,
        ..TrainConfig::new(kind)
    };
    let whitelist = PrefixWhitelist::default();
    let mut model = train_kind(&engine, &tables, &whitelist, &previous.hitmiss_params, &pairs, &cfg)?;
    model.metadata.annotation_pairs_added = added;
    model
        .metadata
        .notes
        .push(format!("retrained from {} with {added} annotated pairs", previous.id()));
    if added == 0 {
        eprintln!("annotation log contributed no usable {wanted:?} pairs");
    }
    model.save(&a.out)?;
    print_model_summary(&model, &a.out);
    Ok(())
}

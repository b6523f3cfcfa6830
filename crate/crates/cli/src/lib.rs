//! The `dormant` command line: one subcommand per pipeline stage, a one-shot
//! `experiment`, ranking, and the moderation service.

pub mod manifest;
pub mod ranking;

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use dormant_core::eval::{RankedEntry, RankedList};
use dormant_core::experiment::{run_experiment, split_seed, train_seed, Benchmark, EvaluationReport, ExperimentConfig};
use dormant_core::graph::CoAppearanceGraph;
use dormant_core::ingest::{parse_articles, parse_labels, prune_dataset, Dataset, ParseOptions, RejectedLine, Window};
use dormant_core::models::{ModelBundle, ModelSpec};
use dormant_core::synthgen::generate;
use dormant_service::{Engine, EngineConfig, ServeOptions};

use manifest::{Recorder, RunManifest};
use ranking::{rank_rows, write_ranking, RankRow};

#[derive(Debug, Parser)]
#[command(name = "dormant", version, about = "Rank dormant spammer accounts from forum co-appearance data")]
pub struct Cli {
    /// Master seed. Also seeds the synthetic generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with experiment, split, prune, synth and train settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Make the first malformed input record fatal.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Social {
    On,
    Off,
    Both,
}

impl Social {
    fn sets(self) -> Vec<bool> {
        match self {
            Social::On => vec![true],
            Social::Off => vec![false],
            Social::Both => vec![false, true],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelList(pub Vec<ModelSpec>);

fn parse_models(s: &str) -> Result<ModelList, String> {
    match ModelSpec::parse_list(s) {
        Ok(list) if !list.is_empty() => Ok(ModelList(list)),
        Ok(_) => Err(format!("empty model list; available: {}", ModelSpec::NAMES.join(", "))),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_model(s: &str) -> Result<ModelSpec, String> {
    s.parse().map_err(|e: dormant_core::Error| e.to_string())
}

fn parse_window(s: &str) -> Result<Window, String> {
    let (a, b) = s.split_once("..").ok_or("expected START..END")?;
    let day = |d: &str| NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| format!("{d:?}: {e}"));
    Window::new(day(a)?, day(b)?).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct DatasetArg {
    /// Dataset container written by `ingest` or `prune`.
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Comma-separated models, e.g. `gbt,tagcn:3`.
    #[arg(long, value_parser = parse_models)]
    pub models: Option<ModelList>,
    #[arg(long, value_enum)]
    pub social: Option<Social>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["synth", "articles"])))]
pub struct ExperimentArgs {
    /// Generate the synthetic benchmark instead of reading files.
    #[arg(long)]
    pub synth: bool,
    #[arg(long, requires = "labels")]
    pub articles: Option<PathBuf>,
    #[arg(long, requires = "articles")]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic forum: articles, labels and ground truth.
    Synth,
    /// Validate article and label files into a dataset container.
    Ingest {
        #[arg(long)]
        articles: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Observation window `START..END` in days, inclusive. Defaults to the span of the data.
        #[arg(long, value_parser = parse_window)]
        window: Option<Window>,
    },
    /// Drop low-engagement articles and cap commentors.
    Prune {
        #[command(flatten)]
        input: DatasetArg,
        #[arg(long)]
        min_comments: Option<usize>,
        #[arg(long)]
        min_spammers: Option<usize>,
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Export the co-appearance graph.
    Graph(DatasetArg),
    /// Write the feature matrix computed on the first split.
    Featurize {
        #[command(flatten)]
        input: DatasetArg,
        #[arg(long, value_enum, default_value = "on")]
        social: Toggle,
    },
    /// Fit one model on the first split and save it.
    Train {
        #[command(flatten)]
        input: DatasetArg,
        #[arg(long, value_parser = parse_model, default_value = "tagcn:3")]
        model: ModelSpec,
        #[arg(long, value_enum, default_value = "on")]
        social: Toggle,
    },
    /// Run repeated splits on a dataset container and write the report.
    Evaluate {
        #[command(flatten)]
        input: DatasetArg,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Synthesize or ingest, prune and evaluate in one go.
    Experiment(ExperimentArgs),
    /// Score every account with a saved model and write the top of the ranking.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: DatasetArg,
        #[arg(long, default_value_t = 100)]
        top: usize,
    },
    /// Serve the ranking and verdict API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Dataset container, or a directory holding `pruned.json` or `dataset.json`.
        #[arg(long)]
        data: PathBuf,
        /// Model bundle (default `model.json` next to the dataset).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "100,200,300,400")]
        k_grid: Vec<usize>,
        /// Require `Authorization: Bearer <token>` on API calls.
        #[arg(long)]
        token: Option<String>,
        /// Directory of static files served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Rerun the command recorded in a manifest into `--out` and compare hashes.
    Replay { manifest: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Prune { .. } => "prune",
            Command::Graph(_) => "graph",
            Command::Featurize { .. } => "featurize",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Experiment(_) => "experiment",
            Command::Rank { .. } => "rank",
            Command::Serve { .. } => "serve",
            Command::Replay { .. } => "replay",
        }
    }
}

/// Errors that should exit with status 2, like clap's own usage errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn main_with(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv = strip_out(&args[1..]);
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    }
}

fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
        config.synth.seed = s;
    }
    Ok(config)
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let mut config = load_config(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let name = cli.command.name();
    match cli.command {
        Command::Synth => {
            config.synth.validate()?;
            let mut rec = Recorder::new(&out, name, argv)?;
            let forum = generate(&config.synth)?;
            forum.write_files(&out)?;
            for f in ["articles.jsonl", "labels.jsonl", "truth.tsv"] {
                rec.output(f);
            }
            log::info!(
                "{} articles, {} accounts, {} spammers",
                forum.articles.len(),
                forum.truth.len(),
                forum.labels.spammers().count()
            );
            finish(rec, &config)
        }
        Command::Ingest {
            articles,
            labels,
            window,
        } => {
            let mut rec = Recorder::new(&out, name, argv)?;
            rec.input(&articles);
            rec.input(&labels);
            let dataset = ingest(&articles, &labels, window, cli.strict, Some(&mut rec))?;
            write_container(&dataset, &rec.output("dataset.json"))?;
            finish(rec, &config)
        }
        Command::Prune {
            input,
            min_comments,
            min_spammers,
            cap,
        } => {
            let mut rec = Recorder::new(&out, name, argv)?;
            let dataset = read_dataset(&input.dataset, &mut rec)?;
            let prune = &mut config.prune;
            prune.min_comments = min_comments.unwrap_or(prune.min_comments);
            prune.min_spammers = min_spammers.unwrap_or(prune.min_spammers);
            prune.cap = cap.unwrap_or(prune.cap);
            let articles: Vec<_> = dataset.articles().iter().map(|a| a.article.clone()).collect();
            let pruned = prune_dataset(&articles, dataset.labels(), prune, dataset.window())?;
            log::info!(
                "kept {} of {} articles, {} accounts, {} spammers",
                pruned.articles().len(),
                articles.len(),
                pruned.accounts().len(),
                pruned.spammer_count()
            );
            write_container(&pruned, &rec.output("pruned.json"))?;
            finish(rec, &config)
        }
        Command::Graph(input) => {
            let mut rec = Recorder::new(&out, name, argv)?;
            let dataset = read_dataset(&input.dataset, &mut rec)?;
            let graph = CoAppearanceGraph::build(&dataset);
            let mut w = BufWriter::new(File::create(rec.output("edges.txt"))?);
            graph.write_edge_list(&mut w)?;
            w.flush()?;
            let mut w = BufWriter::new(File::create(rec.output("nodes.txt"))?);
            graph.write_node_manifest(&mut w)?;
            w.flush()?;
            log::info!("{} nodes, {} edges", graph.node_count(), graph.edge_count());
            finish(rec, &config)
        }
        Command::Featurize { input, social } => {
            let mut rec = Recorder::new(&out, name, argv)?;
            let bench = Benchmark::new(read_dataset(&input.dataset, &mut rec)?)?;
            let social = social == Toggle::On;
            config.social = vec![social];
            let split = bench.split(config.split, split_seed(config.seed, 0))?;
            let features = bench.features(social, &split)?;
            let mut w = BufWriter::new(File::create(rec.output("features.csv"))?);
            features.write_csv(&mut w, false)?;
            w.flush()?;
            write_split(&bench, &split, &rec.output("split.tsv"))?;
            finish(rec, &config)
        }
        Command::Train { input, model, social } => {
            let mut rec = Recorder::new(&out, name, argv)?;
            let bench = Benchmark::new(read_dataset(&input.dataset, &mut rec)?)?;
            let social = social == Toggle::On;
            config.models = vec![model];
            config.social = vec![social];
            let split = bench.split(config.split, split_seed(config.seed, 0))?;
            let mut train = config.train.clone();
            train.seed = train_seed(config.seed, 0);
            let (bundle, scores) = bench.train_bundle(model, &train, social, &split)?;
            let mut w = BufWriter::new(File::create(rec.output("model.json"))?);
            bundle.write(&mut w)?;
            w.flush()?;
            let entries = (0..bench.len())
                .map(|i| RankedEntry {
                    account: bench.index.accounts()[i].clone(),
                    score: scores[i],
                    label: Some(bench.labels[i]),
                    group: Some(bench.groups()[i]),
                })
                .collect();
            let mut w = BufWriter::new(File::create(rec.output("scores.tsv"))?);
            RankedList::new(entries).write_tsv(&mut w)?;
            w.flush()?;
            log::info!("trained {model} on {} accounts", split.train.len());
            finish(rec, &config)
        }
        Command::Evaluate { input, eval } => {
            let mut rec = Recorder::new(&out, name, argv)?;
            let bench = Benchmark::new(read_dataset(&input.dataset, &mut rec)?)?;
            apply_eval_args(&mut config, &eval);
            evaluate(&bench, &config, &mut rec)?;
            finish(rec, &config)
        }
        Command::Experiment(args) => {
            let mut rec = Recorder::new(&out, name, argv)?;
            apply_eval_args(&mut config, &args.eval);
            let dataset = if args.synth {
                config.synth.validate()?;
                generate(&config.synth)?.prune(&config.prune)?
            } else {
                let (articles, labels) = (args.articles.unwrap(), args.labels.unwrap());
                rec.input(&articles);
                rec.input(&labels);
                let raw = ingest(&articles, &labels, None, cli.strict, None)?;
                let articles: Vec<_> = raw.articles().iter().map(|a| a.article.clone()).collect();
                prune_dataset(&articles, raw.labels(), &config.prune, raw.window())?
            };
            evaluate(&Benchmark::new(dataset)?, &config, &mut rec)?;
            finish(rec, &config)
        }
        Command::Rank {
            checkpoint,
            input,
            top,
        } => {
            let mut rec = Recorder::new(&out, name, argv)?;
            rec.input(&checkpoint);
            let bundle = read_bundle(&checkpoint)?;
            let bench = Benchmark::new(read_dataset(&input.dataset, &mut rec)?)?;
            let rows = rank(&bench, &bundle)?;
            if top > rows.len() {
                log::warn!("top {top} exceeds {} accounts; writing all of them", rows.len());
            }
            let mut w = BufWriter::new(File::create(rec.output("ranking.tsv"))?);
            write_ranking(&mut w, &rows[..top.min(rows.len())])?;
            w.flush()?;
            config.models = vec![bundle.classifier.spec];
            config.social = vec![bundle.include_social];
            finish(rec, &config)
        }
        Command::Serve {
            port,
            data,
            checkpoint,
            k_grid,
            token,
            static_dir,
        } => {
            if k_grid.is_empty() || k_grid.contains(&0) {
                return Err(usage("--k-grid needs positive values"));
            }
            let dataset_path = if data.is_dir() {
                ["pruned.json", "dataset.json"]
                    .iter()
                    .map(|f| data.join(f))
                    .find(|p| p.exists())
                    .with_context(|| format!("no pruned.json or dataset.json in {}", data.display()))?
            } else {
                data.clone()
            };
            let checkpoint = checkpoint.unwrap_or_else(|| dataset_path.with_file_name("model.json"));
            let bundle = read_bundle(&checkpoint)?;
            let bench = Benchmark::new(read_container(&dataset_path)?)?;
            check_compatible(&bench, &bundle)?;
            let state_dir = cli.out.unwrap_or_else(|| dataset_path.with_file_name("state"));
            let engine = Engine::open(
                Arc::new(bench),
                bundle,
                EngineConfig {
                    state_dir,
                    k_grid,
                    checkpoint: checkpoint.display().to_string(),
                },
            )?;
            let options = ServeOptions { token, static_dir };
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(dormant_service::serve(Arc::new(engine), options, addr))?;
            Ok(())
        }
        Command::Replay { manifest } => {
            let Some(out) = cli.out else {
                return Err(usage("replay needs --out for the fresh outputs"));
            };
            replay(&manifest, &out)
        }
    }
}

fn finish(rec: Recorder, config: &ExperimentConfig) -> Result<()> {
    let out = rec.out.clone();
    let m = rec.finish(config)?;
    log::info!("wrote {} files to {} (run {})", m.outputs.len(), out.display(), &m.hash[..12]);
    Ok(())
}

fn replay(path: &Path, out: &Path) -> Result<()> {
    let recorded = RunManifest::read(path)?;
    if matches!(recorded.command.as_str(), "serve" | "replay") {
        return Err(usage(format!("{} runs are not replayable", recorded.command)));
    }
    let mut args = vec!["dormant".to_string()];
    args.extend(recorded.argv.iter().cloned());
    args.push("--out".into());
    args.push(out.display().to_string());
    let cli = Cli::try_parse_from(&args).map_err(|e| usage(e.to_string()))?;
    run(cli, recorded.argv.clone())?;
    let fresh = RunManifest::read(&out.join(RunManifest::file_name(&recorded.command)))?;
    if fresh.hash != recorded.hash {
        let differing: Vec<&str> = recorded
            .outputs
            .iter()
            .filter(|f| !fresh.outputs.contains(f))
            .map(|f| f.path.as_str())
            .collect();
        bail!("rerun hash {} differs from {}; outputs: {:?}", fresh.hash, recorded.hash, differing);
    }
    println!("reproduced {}", recorded.hash);
    Ok(())
}

fn apply_eval_args(config: &mut ExperimentConfig, eval: &EvalArgs) {
    if let Some(m) = &eval.models {
        config.models = m.0.clone();
    }
    if let Some(s) = eval.social {
        config.social = s.sets();
    }
    if let Some(r) = eval.repeats {
        config.repeats = r;
    }
}

fn ingest(
    articles: &Path,
    labels: &Path,
    window: Option<Window>,
    strict: bool,
    rec: Option<&mut Recorder>,
) -> Result<Dataset> {
    let options = ParseOptions { window, strict };
    let open = |p: &Path| -> Result<BufReader<File>> {
        Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
    };
    let parsed = parse_articles(open(articles)?, &options).with_context(|| articles.display().to_string())?;
    let parsed_labels = parse_labels(open(labels)?, strict).with_context(|| labels.display().to_string())?;
    let report = |file: &Path, rejected: &[RejectedLine]| {
        for r in rejected.iter().take(20) {
            log::warn!("{}:{}: {}", file.display(), r.line, r.reason);
        }
        if rejected.len() > 20 {
            log::warn!("{}: {} more rejected lines", file.display(), rejected.len() - 20);
        }
    };
    report(articles, &parsed.rejected);
    report(labels, &parsed_labels.rejected);
    if let Some(rec) = rec {
        let mut w = BufWriter::new(File::create(rec.output("rejects.tsv"))?);
        writeln!(w, "file\tline\treason")?;
        for (file, rejected) in [("articles", &parsed.rejected), ("labels", &parsed_labels.rejected)] {
            for r in rejected {
                writeln!(w, "{file}\t{}\t{}", r.line, r.reason.replace(['\t', '\n'], " "))?;
            }
        }
        w.flush()?;
    }
    let window = match window {
        Some(w) => w,
        None => Window::covering(&parsed.articles).context("no valid articles to infer a window from")?,
    };
    let dataset = Dataset::from_articles(parsed.articles, parsed_labels.labels, window)?;
    log::info!(
        "{} articles, {} accounts, {} spammers",
        dataset.articles().len(),
        dataset.accounts().len(),
        dataset.spammer_count()
    );
    Ok(dataset)
}

fn read_container(path: &Path) -> Result<Dataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Dataset::read_container(BufReader::new(f)).with_context(|| path.display().to_string())
}

fn read_dataset(path: &Path, rec: &mut Recorder) -> Result<Dataset> {
    rec.input(path);
    read_container(path)
}

fn write_container(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    dataset.write_container(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_bundle(path: &Path) -> Result<ModelBundle> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ModelBundle::read(BufReader::new(f)).with_context(|| path.display().to_string())
}

fn write_split(bench: &Benchmark, split: &dormant_core::eval::Split, path: &Path) -> Result<()> {
    let mut part = vec![""; bench.len()];
    for (name, rows) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for &r in rows {
            part[r] = name;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "account\tsplit")?;
    for (a, p) in bench.index.accounts().iter().zip(part) {
        writeln!(w, "{a}\t{p}")?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(bench: &Benchmark, config: &ExperimentConfig, rec: &mut Recorder) -> Result<EvaluationReport> {
    let report = run_experiment(bench, config)?;
    let mut w = BufWriter::new(File::create(rec.output("report.json"))?);
    report.write_json(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(rec.output("auprc.tsv"))?);
    report.write_auprc_table(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(rec.output("f1.tsv"))?);
    report.write_f1_table(&mut w)?;
    w.flush()?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    for row in &report.rows {
        for c in &row.auprc {
            if c.cell.defined() < c.cell.runs.len() {
                log::warn!(
                    "{} social={} AUPRC {} undefined in {} of {} repeats",
                    row.model,
                    row.social,
                    c.slice,
                    c.cell.runs.len() - c.cell.defined(),
                    c.cell.runs.len()
                );
            }
        }
    }
    Ok(report)
}

fn check_compatible(bench: &Benchmark, bundle: &ModelBundle) -> Result<()> {
    let missing: Vec<&String> = bundle
        .train_accounts
        .iter()
        .chain(&bundle.training_spammers)
        .filter(|a| bench.index.position(a).is_none())
        .collect();
    if let Some(first) = missing.first() {
        bail!(
            "checkpoint does not match the dataset: {} training accounts missing (first {first:?})",
            missing.len()
        );
    }
    Ok(())
}

/// Scores every account with `bundle`, suspect values taken from its training spammers.
pub fn rank(bench: &Benchmark, bundle: &ModelBundle) -> Result<Vec<RankRow>> {
    check_compatible(bench, bundle)?;
    let known: HashSet<String> = bundle.training_spammers.iter().cloned().collect();
    let scored = bench.score_bundle(bundle, &known)?;
    let rows = (0..bench.len())
        .map(|i| RankRow {
            rank: 0,
            account: bench.index.accounts()[i].clone(),
            score: scored.scores[i],
            suspect_value: scored.suspect[i].value,
            group: bench.groups()[i],
        })
        .collect();
    Ok(rank_rows(rows))
}

//! Command-line front end. Every command reads an [`ExperimentConfig`],
//! writes its artifacts plus a `<artifact>.cfg` echo of the effective
//! configuration, and maps failures to exit codes 1 (usage), 2 (data) and
//! 3 (numeric).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::corpus::{gen_cipher_dataset, load_documents, load_qrels, load_queries, Corpus, Split};
use crate::embeddings::{
    apply_alignment, iterative_procrustes, load_alignment, load_embeddings, load_lexicon, AlignmentMap, Lexicon,
};
use crate::evaluation::{evaluate, find_best_cutoff};
use crate::rankers::TextResources;
use crate::retrieval::{build_index, load_index, load_translation_table, search, SearchMode};
use crate::run::load_run;
use crate::training::{ensemble, load_checkpoint, rerank, train, RerankInputs};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "biclir", version, about = "Cross-lingual retrieval with bilingual neural reranking")]
pub struct Cli {
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cipher-language dataset into a directory.
    GenSynth(GenSynthArgs),
    /// Build an inverted index over one side of a document collection.
    Index(IndexArgs),
    /// First-stage retrieval (ql, dbqt or psq) into a TREC run.
    Search(SearchArgs),
    /// Align target embeddings into the source space by iterative Procrustes.
    Align(AlignArgs),
    /// Train a reranker with dev-MAP model selection.
    Train(TrainArgs),
    /// Rerank a first-stage run with a checkpoint.
    Rerank(RerankArgs),
    /// Evaluate a run against qrels.
    Eval(EvalArgs),
    /// Rerank with several checkpoints and average their scores.
    Ensemble(EnsembleArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// `original` or `translated`.
    #[arg(long)]
    pub side: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// `ql`, `dbqt` or `psq`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Seed lexicon (source<TAB>target).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub test_lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelInputs {
    #[arg(long)]
    pub docs: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub alignment: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub train_run: Option<PathBuf>,
    #[arg(long)]
    pub dev_run: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RerankArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Document collection (its size enters AQWV).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Run whose best AQWV cutoff is applied (e.g. the dev run).
    #[arg(long)]
    pub tune_run: Option<PathBuf>,
    /// JSON-lines report to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Comma-separated checkpoint paths.
    #[arg(long)]
    pub checkpoints: Option<String>,
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn put(cfg: &mut ExperimentConfig, key: &str, v: &Option<PathBuf>) -> Result<()> {
    match v {
        Some(p) => cfg.set(key, &p.to_string_lossy()),
        None => Ok(()),
    }
}

fn put_str(cfg: &mut ExperimentConfig, key: &str, v: &Option<String>) -> Result<()> {
    match v {
        Some(s) => cfg.set(key, s),
        None => Ok(()),
    }
}

impl ModelInputs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        put(cfg, "paths.docs", &self.docs)?;
        put(cfg, "paths.queries", &self.queries)?;
        put(cfg, "paths.source_embeddings", &self.source)?;
        put(cfg, "paths.target_embeddings", &self.target)?;
        put(cfg, "paths.alignment", &self.alignment)
    }
}

impl Command {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        match self {
            Command::GenSynth(a) => put(cfg, "paths.out", &a.out),
            Command::Index(a) => {
                put(cfg, "paths.docs", &a.docs)?;
                put_str(cfg, "retrieval.side", &a.side)?;
                put(cfg, "paths.out", &a.out)
            }
            Command::Search(a) => {
                put(cfg, "paths.index", &a.index)?;
                put(cfg, "paths.queries", &a.queries)?;
                put_str(cfg, "retrieval.mode", &a.mode)?;
                put(cfg, "paths.lexicon", &a.lexicon)?;
                put(cfg, "paths.translation_table", &a.table)?;
                put(cfg, "paths.out", &a.out)
            }
            Command::Align(a) => {
                put(cfg, "paths.source_embeddings", &a.source)?;
                put(cfg, "paths.target_embeddings", &a.target)?;
                put(cfg, "paths.lexicon", &a.lexicon)?;
                put(cfg, "paths.test_lexicon", &a.test_lexicon)?;
                put(cfg, "paths.out", &a.out)
            }
            Command::Train(a) => {
                a.inputs.apply(cfg)?;
                put(cfg, "paths.qrels", &a.qrels)?;
                put(cfg, "paths.train_run", &a.train_run)?;
                put(cfg, "paths.dev_run", &a.dev_run)?;
                put(cfg, "paths.out", &a.out)
            }
            Command::Rerank(a) => {
                a.inputs.apply(cfg)?;
                put(cfg, "paths.checkpoint", &a.checkpoint)?;
                put(cfg, "paths.run", &a.run)?;
                put(cfg, "paths.out", &a.out)
            }
            Command::Eval(a) => {
                put(cfg, "paths.run", &a.run)?;
                put(cfg, "paths.qrels", &a.qrels)?;
                put(cfg, "paths.docs", &a.docs)?;
                put(cfg, "paths.tune_run", &a.tune_run)?;
                put(cfg, "paths.out", &a.out)
            }
            Command::Ensemble(a) => {
                a.inputs.apply(cfg)?;
                put_str(cfg, "paths.checkpoints", &a.checkpoints)?;
                put(cfg, "paths.run", &a.run)?;
                put(cfg, "paths.out", &a.out)
            }
        }
    }
}

/// Resolves the effective configuration: defaults, then the config file,
/// then command flags, then `--seed` and `--set` overrides.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cli.command.apply(&mut cfg)?;
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.seed()?;
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes an artifact and its configuration echo.
fn write_artifact(cfg: &ExperimentConfig, path: &Path, contents: &str) -> Result<()> {
    write(path, contents)?;
    write(&sidecar(path), &cfg.to_text())
}

fn load_resources(cfg: &ExperimentConfig, docs: &Corpus) -> Result<TextResources> {
    let source = load_embeddings(cfg.input("paths.source_embeddings")?)?;
    let target = load_embeddings(cfg.input("paths.target_embeddings")?)?;
    let map = match cfg.opt_input("paths.alignment")? {
        Some(p) => load_alignment(p)?,
        None => AlignmentMap::identity(target.dim()),
    };
    TextResources::new(docs, source, apply_alignment(&map, &target)?)
}

fn gen_synth(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.path("paths.out")?;
    let mut ds = gen_cipher_dataset(&cfg.synth()?)?;
    if let Some(cs) = cfg.parsed_opt::<u64>("synth.cipher_seed")? {
        ds = ds.recipher(cs, cfg.require("synth.target_lang")?)?;
    }
    let frac: f64 = cfg.parsed("synth.seed_lexicon_fraction")?;
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Usage(format!("synth.seed_lexicon_fraction {frac} outside [0, 1]")));
    }
    let mut pairs = ds.lexicon.pairs.clone();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed()? ^ 0x5eed));
    let cut = (pairs.len() as f64 * frac).round() as usize;
    let (seed_lex, test_lex) = pairs.split_at(cut);

    let file = |name: &str| out.join(name);
    write(&file("docs.jsonl"), &ds.target_docs.to_jsonl())?;
    write(&file("queries.jsonl"), &ds.queries.to_jsonl())?;
    for (split, name) in [(Split::Train, "train"), (Split::Dev, "dev"), (Split::Test, "test")] {
        write(&file(&format!("queries.{name}.jsonl")), &ds.split_queries(split).to_jsonl())?;
    }
    write(&file("qrels.txt"), &ds.qrels.to_trec())?;
    write(&file("source.vec"), &ds.source_embeddings.to_vec_format())?;
    write(&file("target.vec"), &ds.target_embeddings.to_vec_format())?;
    write(&file("lexicon.tsv"), &ds.lexicon.to_tsv())?;
    write(&file("lexicon.seed.tsv"), &Lexicon::new(seed_lex.to_vec()).to_tsv())?;
    write(&file("lexicon.test.tsv"), &Lexicon::new(test_lex.to_vec()).to_tsv())?;
    write(&file("synth.cfg"), &cfg.to_text())?;
    println!(
        "wrote {} documents, {} queries to {}",
        ds.target_docs.len(),
        ds.queries.len(),
        out.display()
    );
    Ok(())
}

fn index(cfg: &ExperimentConfig) -> Result<()> {
    let docs = load_documents(cfg.input("paths.docs")?)?;
    let idx = build_index(&docs, cfg.side()?)?;
    write_artifact(cfg, &cfg.path("paths.out")?, &idx.to_json())?;
    println!("indexed {} documents ({} side)", idx.n_docs(), idx.side);
    Ok(())
}

fn search_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let idx = load_index(cfg.input("paths.index")?)?;
    let queries = load_queries(cfg.input("paths.queries")?)?;
    let mode = match cfg.require("retrieval.mode")? {
        "ql" => SearchMode::Ql,
        "dbqt" => SearchMode::Dbqt(load_lexicon(cfg.input("paths.lexicon")?)?.as_dictionary()),
        "psq" => SearchMode::Psq(load_translation_table(cfg.input("paths.translation_table")?)?),
        other => return Err(Error::Usage(format!("unknown retrieval mode {other:?} (ql|dbqt|psq)"))),
    };
    let run = search(&idx, &queries, &mode, cfg.parsed("retrieval.k")?, cfg.parsed("retrieval.mu")?)?;
    write_artifact(cfg, &cfg.path("paths.out")?, &run.to_trec(&mode.tag(idx.side)))?;
    println!("searched {} queries", run.len());
    Ok(())
}

fn align(cfg: &ExperimentConfig) -> Result<()> {
    let source = load_embeddings(cfg.input("paths.source_embeddings")?)?;
    let target = load_embeddings(cfg.input("paths.target_embeddings")?)?;
    let seed = load_lexicon(cfg.input("paths.lexicon")?)?;
    let test = cfg.opt_input("paths.test_lexicon")?.map(load_lexicon).transpose()?;
    let (mut map, report) = iterative_procrustes(&source, &target, &seed, test.as_ref(), &cfg.refinement()?)?;
    map.source_lang = cfg.get("align.source_lang").unwrap_or_default().to_string();
    map.target_lang = cfg.get("align.target_lang").unwrap_or_default().to_string();
    let out = cfg.path("paths.out")?;
    write_artifact(cfg, &out, &map.to_json())?;
    let mut report_path = out.as_os_str().to_owned();
    report_path.push(".report.json");
    let mut text = serde_json::to_string(&report).expect("report serializes");
    text.push('\n');
    write(Path::new(&report_path), &text)?;
    for (round, acc) in report.accuracy.iter().enumerate() {
        println!("round={} accuracy={acc}", round + 1);
    }
    println!(
        "selected_round={} orthogonality_error={:e}",
        report.selected_round,
        map.orthogonality_error()
    );
    Ok(())
}

struct ModelData {
    docs: Corpus,
    queries: Corpus,
    resources: TextResources,
}

fn model_data(cfg: &ExperimentConfig) -> Result<ModelData> {
    let docs = load_documents(cfg.input("paths.docs")?)?;
    let queries = load_queries(cfg.input("paths.queries")?)?;
    let resources = load_resources(cfg, &docs)?;
    Ok(ModelData { docs, queries, resources })
}

impl ModelData {
    fn inputs(&self, cfg: &ExperimentConfig) -> Result<RerankInputs<'_>> {
        Ok(RerankInputs {
            docs: &self.docs,
            queries: &self.queries,
            resources: &self.resources,
            channel: cfg.feature_channel()?,
        })
    }
}

fn train_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let data = model_data(cfg)?;
    let qrels = load_qrels(cfg.input("paths.qrels")?)?;
    let train_run = load_run(cfg.input("paths.train_run")?)?;
    let dev_run = load_run(cfg.input("paths.dev_run")?)?;
    let outcome = train(&cfg.ranker()?, &cfg.train()?, &data.inputs(cfg)?, &train_run, &dev_run, &qrels)?;
    let out = cfg.path("paths.out")?;
    write_artifact(cfg, &out, &outcome.checkpoint.to_json())?;
    let mut log = format!("epoch=0 train_loss={}\n", outcome.initial_loss);
    for e in &outcome.epochs {
        log.push_str(&format!(
            "epoch={} batch_loss={} train_loss={} dev_map={}\n",
            e.epoch, e.batch_loss, e.train_loss, e.dev_map
        ));
    }
    let mut log_path = out.as_os_str().to_owned();
    log_path.push(".log");
    write(Path::new(&log_path), &log)?;
    print!("{log}");
    println!("selected_epoch={} dev_map={}", outcome.checkpoint.meta.epoch, outcome.checkpoint.meta.dev_map);
    Ok(())
}

fn rerank_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let ck = load_checkpoint(cfg.input("paths.checkpoint")?)?;
    let data = model_data(cfg)?;
    let run = load_run(cfg.input("paths.run")?)?;
    let out = rerank(&ck, &run, &data.inputs(cfg)?)?;
    write_artifact(cfg, &cfg.path("paths.out")?, &out.to_trec(&format!("biclir-{}", ck.arch)))?;
    println!("reranked {} queries", out.len());
    Ok(())
}

fn ensemble_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let paths: Vec<PathBuf> = cfg
        .require("paths.checkpoints")?
        .split(',')
        .map(|s| PathBuf::from(s.trim()))
        .collect();
    let checkpoints = paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
            load_checkpoint(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = model_data(cfg)?;
    let run = load_run(cfg.input("paths.run")?)?;
    let out = ensemble(&checkpoints, &run, &data.inputs(cfg)?)?;
    write_artifact(cfg, &cfg.path("paths.out")?, &out.to_trec("biclir-ensemble"))?;
    println!("ensembled {} checkpoints over {} queries", checkpoints.len(), out.len());
    Ok(())
}

fn eval_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let run = load_run(cfg.input("paths.run")?)?;
    let qrels = load_qrels(cfg.input("paths.qrels")?)?;
    let n_docs = load_documents(cfg.input("paths.docs")?)?.len();
    let mut eval_cfg = cfg.eval()?;
    if eval_cfg.aqwv_threshold.is_none() {
        if let Some(p) = cfg.opt_input("paths.tune_run")? {
            let tune = load_run(p)?;
            let (t, v) = find_best_cutoff(&tune, &qrels.subset(tune.query_ids()), n_docs, eval_cfg.beta);
            info!("aqwv cutoff {t} (tuning-run aqwv {v})");
            eval_cfg.aqwv_threshold = Some(t);
        } else {
            info!("no tuning run: searching the aqwv cutoff on the evaluated run");
        }
    }
    let report = evaluate(&run, &qrels.subset(run.query_ids()), n_docs, &eval_cfg)?;
    if let Some(out) = cfg.opt_path("paths.out") {
        write_artifact(cfg, &out, &report.to_jsonl())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::GenSynth(_) => gen_synth(&cfg),
        Command::Index(_) => index(&cfg),
        Command::Search(_) => search_cmd(&cfg),
        Command::Align(_) => align(&cfg),
        Command::Train(_) => train_cmd(&cfg),
        Command::Rerank(_) => rerank_cmd(&cfg),
        Command::Eval(_) => eval_cmd(&cfg),
        Command::Ensemble(_) => ensemble_cmd(&cfg),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

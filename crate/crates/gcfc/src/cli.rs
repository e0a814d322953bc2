//! `gcfc` subcommands.
//!
//! Every subcommand resolves and validates its configuration before doing
//! anything else, then writes the resolved configuration to
//! `<out>/config.toml`. Failures are logged to stderr and to
//! `<out>/error.log`. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 failure while running.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gcfc_core::ablation::{assemble, plan, run_cell, SeedResult, Splits, Study};
use gcfc_core::corpus::Corpus;
use gcfc_core::graph::{build_graph, EdgeTypeTable};
use gcfc_core::trainer::{evaluate_corpus, shape_of, train_with};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{resolve, RunConfig};
use crate::corpus_io::write_corpus;
use crate::error::{Error, Result};
use crate::report::{ablation_csv, history_csv, write_json, write_text, MetricsReport};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const ERROR_LOG: &str = "error.log";

#[derive(Debug, Parser)]
#[command(
    name = "gcfc",
    version,
    about = "Multimodal emotion recognition in conversation with GraphCFC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file with [data], [model], [train], [ablate] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.width=32`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured corpus (synthetic unless data.corpus is set) as JSONL.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `--set data.seed=N`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the configured data and evaluate the best checkpoint on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `--set train.seed=N`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a split of the configured data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train` (checkpoint.gcfc)
        #[arg(long)]
        checkpoint: PathBuf,
        /// `train`, `valid`, `test` or `all`.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run an ablation study and write its table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// modality_subsets, gatmlp_components, subspace_losses, embeddings,
        /// skip_vs_depth, window_sweep or three_emotion.
        #[arg(long)]
        study: String,
        /// Worker threads for independent cells (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Dump the typed graph of one dialogue as JSONL.
    InspectGraph {
        #[command(flatten)]
        common: Common,
        /// Dialogue id, or its index in the corpus.
        #[arg(long, default_value = "0")]
        dialogue: String,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. }
            | Command::InspectGraph { common, .. } => common,
        }
    }
}

/// Run the CLI on `args` (including the program name) and return the exit
/// code. `env_seed` is the value of `GCFC_SEED`, if any.
pub fn run(args: impl IntoIterator<Item = OsString>, env_seed: Option<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let out = cli.command.common().out.clone();
    match dispatch(cli.command, env_seed.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            let logged = fs::create_dir_all(&out).and_then(|_| fs::write(out.join(ERROR_LOG), format!("{e}\n")));
            if let Err(io) = logged {
                log::error!("could not write {}: {io}", out.join(ERROR_LOG).display());
            }
            e.exit_code()
        }
    }
}

fn prepare(common: &Common, extra: Vec<String>, env_seed: Option<&str>) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    let config = resolve(common.config.as_deref(), &overrides, env_seed)?;
    fs::create_dir_all(&common.out).map_err(|e| Error::write(&common.out, e))?;
    write_text(&common.out.join(CONFIG_SNAPSHOT), &config.to_toml())?;
    Ok(config)
}

fn dispatch(command: Command, env_seed: Option<&str>) -> Result<()> {
    match command {
        Command::GenData { common, seed } => {
            let extra = seed.map(|s| format!("data.seed={s}")).into_iter().collect();
            let config = prepare(&common, extra, env_seed)?;
            let corpus = config.data.load()?;
            let path = common.out.join("corpus.jsonl");
            write_corpus(&path, &corpus)?;
            log::info!(
                "wrote {} dialogues ({} utterances) to {}",
                corpus.dialogues.len(),
                corpus.utterance_count(),
                path.display()
            );
            Ok(())
        }
        Command::Train { common, seed } => {
            let extra = seed.map(|s| format!("train.seed={s}")).into_iter().collect();
            let config = prepare(&common, extra, env_seed)?;
            train_command(&config, &common.out)
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let split = SplitChoice::parse(&split)?;
            let config = prepare(&common, Vec::new(), env_seed)?;
            eval_command(&config, &checkpoint, split, &common.out)
        }
        Command::Ablate { common, study, jobs } => {
            let study: Study = study.parse()?;
            if jobs == Some(0) {
                return Err(Error::Config("--jobs must be positive".into()));
            }
            let config = prepare(&common, Vec::new(), env_seed)?;
            ablate_command(&config, study, jobs, &common.out)
        }
        Command::InspectGraph { common, dialogue } => {
            let config = prepare(&common, Vec::new(), env_seed)?;
            inspect_command(&config, &dialogue, &common.out)
        }
    }
}

fn load_splits(config: &RunConfig) -> Result<(Corpus, Splits)> {
    let corpus = config.data.load()?;
    let splits = config.data.split(&corpus)?;
    Ok((corpus, splits))
}

fn train_command(config: &RunConfig, out: &Path) -> Result<()> {
    let (corpus, splits) = load_splits(config)?;
    let shape = shape_of(&corpus);
    let tc = config.train_config();
    log::info!(
        "training on {} dialogues, validating on {}, testing on {}",
        splits.train.dialogues.len(),
        splits.valid.dialogues.len(),
        splits.test.dialogues.len()
    );
    let outcome = train_with(&tc, shape, &splits.train.dialogues, &splits.valid.dialogues, &mut |r| {
        log::info!(
            "epoch {:>3}  loss {:.5}  valid acc {:.4}  valid wF1 {:.4}",
            r.epoch,
            r.train_loss,
            r.valid_accuracy,
            r.valid_weighted_f1
        )
    })?;
    checkpoint::save(
        &out.join("checkpoint.gcfc"),
        &outcome.model,
        &outcome.params,
        &corpus.header.labels,
    )?;
    write_json(&out.join("history.json"), &outcome.history)?;
    write_text(&out.join("history.csv"), &history_csv(&outcome.history))?;
    if !splits.test.dialogues.is_empty() {
        let metrics = evaluate_corpus(&outcome.model, &outcome.params, &splits.test, tc.batch_size)?;
        let report = MetricsReport::new(&metrics, &corpus.header.labels);
        write_json(&out.join("test_metrics.json"), &report)?;
        write_text(&out.join("test_metrics.csv"), &report.csv())?;
        log::info!(
            "best epoch {}: test accuracy {:.4}, weighted F1 {:.4}",
            outcome.history.best_epoch,
            report.accuracy,
            report.weighted_f1
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum SplitChoice {
    Train,
    Valid,
    Test,
    All,
}

impl SplitChoice {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitChoice::Train),
            "valid" => Ok(SplitChoice::Valid),
            "test" => Ok(SplitChoice::Test),
            "all" => Ok(SplitChoice::All),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (expected train, valid, test or all)"
            ))),
        }
    }
}

fn eval_command(config: &RunConfig, ckpt: &Path, split: SplitChoice, out: &Path) -> Result<()> {
    let restored = checkpoint::load(ckpt)?;
    let corpus = config.data.load()?;
    if corpus.header.labels != restored.labels {
        return Err(Error::Config(format!(
            "corpus labels [{}] differ from the checkpoint's [{}]",
            corpus.header.labels.join(", "),
            restored.labels.join(", ")
        )));
    }
    let data = match split {
        SplitChoice::All => corpus,
        _ => {
            let s = config.data.split(&corpus)?;
            match split {
                SplitChoice::Train => s.train,
                SplitChoice::Valid => s.valid,
                _ => s.test,
            }
        }
    };
    let metrics = evaluate_corpus(&restored.model, &restored.params, &data, config.train.batch_size)?;
    let report = MetricsReport::new(&metrics, &restored.labels);
    write_json(&out.join("metrics.json"), &report)?;
    write_text(&out.join("metrics.csv"), &report.csv())?;
    log::info!(
        "{} utterances: accuracy {:.4}, weighted F1 {:.4}",
        report.utterances,
        report.accuracy,
        report.weighted_f1
    );
    Ok(())
}

fn ablate_command(config: &RunConfig, study: Study, jobs: Option<usize>, out: &Path) -> Result<()> {
    let (_, splits) = load_splits(config)?;
    let base = config.train_config();
    let options = &config.ablate;
    let cells = plan(study, &base, options)?;
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| options.seeds.iter().map(move |&s| (c, s)))
        .collect();
    log::info!("{study}: {} cells x {} seeds", cells.len(), options.seeds.len());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<SeedResult>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, seed)| {
                let r = run_cell(&cells[c], &splits, seed)?;
                log::info!(
                    "{} seed {seed}: test accuracy {:.4}, weighted F1 {:.4}",
                    cells[c].label,
                    r.test_accuracy,
                    r.test_weighted_f1
                );
                Ok(r)
            })
            .collect()
    });
    let mut grouped: Vec<Vec<SeedResult>> = vec![Vec::new(); cells.len()];
    for (&(c, _), r) in tasks.iter().zip(results) {
        grouped[c].push(r?);
    }
    let report = assemble(study, &options.seeds, &cells, grouped)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_json(&out.join("ablation.json"), &report)?;
    write_text(&out.join("ablation.csv"), &ablation_csv(&report))?;
    Ok(())
}

#[derive(Serialize)]
struct GraphSummary<'a> {
    dialogue: &'a str,
    utterances: usize,
    slots: Vec<&'static str>,
    window: [usize; 2],
    direction: gcfc_core::graph::DirectionMode,
    intra_edges: usize,
    inter_edges: usize,
    edge_types: usize,
}

#[derive(Serialize)]
struct EdgeLine {
    src: [usize; 2],
    dst: [usize; 2],
    type_id: usize,
    relation: String,
}

fn inspect_command(config: &RunConfig, selector: &str, out: &Path) -> Result<()> {
    let corpus = config.data.load()?;
    let dialogue = corpus
        .dialogues
        .iter()
        .find(|d| d.id == selector)
        .or_else(|| selector.parse::<usize>().ok().and_then(|i| corpus.dialogues.get(i)))
        .ok_or_else(|| Error::Config(format!("no dialogue with id or index '{selector}'")))?;
    let model = &config.model;
    let slots = model.modalities.fusion_order();
    let table = EdgeTypeTable::new(corpus.max_speakers(), slots.len())?;
    let graph = build_graph(
        &dialogue.speaker_ids(),
        slots.len(),
        model.window,
        model.direction,
        &table,
    )?;
    let summary = GraphSummary {
        dialogue: &dialogue.id,
        utterances: graph.utterances,
        slots: slots.iter().map(|m| m.tag()).collect(),
        window: [model.window.past, model.window.future],
        direction: model.direction,
        intra_edges: graph.intra_edges(),
        inter_edges: graph.inter_edges(),
        edge_types: table.len(),
    };
    let mut text = serde_json::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    for e in &graph.edges {
        let line = EdgeLine {
            src: [e.src.utterance, e.src.slot],
            dst: [e.dst.utterance, e.dst.slot],
            type_id: e.type_id,
            relation: table.describe(e.type_id).unwrap_or_default(),
        };
        text += &serde_json::to_string(&line).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
    }
    write_text(&out.join("graph.jsonl"), &text)
}

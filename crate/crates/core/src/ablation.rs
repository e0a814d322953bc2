//! Study protocols: toggled configurations trained over shared seeds.
//!
//! A study expands into a [`plan`] of cells. Each `(cell, seed)` pair is an
//! independent training run ([`run_cell`]), so callers may execute them in
//! any order or in parallel; [`assemble`] reduces the results in plan order.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{coarsen_labels, Corpus, LabelScheme};
use crate::error::{Error, Result};
use crate::graph::Window;
use crate::paircc::ModalitySet;
use crate::trainer::{evaluate_corpus, shape_of, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    ModalitySubsets,
    GatmlpComponents,
    SubspaceLosses,
    Embeddings,
    SkipVsDepth,
    WindowSweep,
    ThreeEmotion,
}

impl Study {
    pub const ALL: [Study; 7] = [
        Study::ModalitySubsets,
        Study::GatmlpComponents,
        Study::SubspaceLosses,
        Study::Embeddings,
        Study::SkipVsDepth,
        Study::WindowSweep,
        Study::ThreeEmotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::ModalitySubsets => "modality_subsets",
            Study::GatmlpComponents => "gatmlp_components",
            Study::SubspaceLosses => "subspace_losses",
            Study::Embeddings => "embeddings",
            Study::SkipVsDepth => "skip_vs_depth",
            Study::WindowSweep => "window_sweep",
            Study::ThreeEmotion => "three_emotion",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Study::ALL.iter().map(|st| st.name()).collect();
            Error::Config(format!("unknown study '{s}' (expected one of {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationOptions {
    pub seeds: Vec<u64>,
    /// Layers per stage compared by `skip_vs_depth`.
    pub depths: Vec<usize>,
    /// Largest `j = k` of `window_sweep`, which steps by 2 from 0.
    pub window_max: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            seeds: vec![0, 1, 2],
            depths: vec![1, 2, 4, 6, 8],
            window_max: 40,
        }
    }
}

/// One configuration of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub config: TrainConfig,
    /// Relabel every split onto the coarse classes before training.
    pub coarsen: bool,
}

/// The training/validation/test corpora a study runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub classes: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub valid_weighted_f1: f64,
    pub test_accuracy: f64,
    pub test_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub classes: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub valid_weighted_f1: f64,
    pub runs: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub study: Study,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

fn cell(label: impl Into<String>, base: &TrainConfig, edit: impl FnOnce(&mut TrainConfig)) -> Cell {
    let mut config = base.clone();
    edit(&mut config);
    Cell {
        label: label.into(),
        config,
        coarsen: false,
    }
}

fn toggle_grid(base: &TrainConfig, names: [&str; 2], set: impl Fn(&mut TrainConfig, bool, bool)) -> Vec<Cell> {
    [(true, true), (true, false), (false, true), (false, false)]
        .into_iter()
        .map(|(x, y)| {
            let label = match (x, y) {
                (true, true) => "full".to_string(),
                (true, false) => format!("w/o {}", names[1]),
                (false, true) => format!("w/o {}", names[0]),
                (false, false) => format!("w/o {} & {}", names[0], names[1]),
            };
            cell(label, base, |c| set(c, x, y))
        })
        .collect()
}

fn depth_label(layers: usize, skip: bool) -> String {
    format!("L={layers} {}", if skip { "skip" } else { "no-skip" })
}

/// Cells of `study`, in report order.
pub fn plan(study: Study, base: &TrainConfig, options: &AblationOptions) -> Result<Vec<Cell>> {
    base.validate()?;
    let cells = match study {
        Study::ModalitySubsets => ModalitySet::SUBSETS
            .into_iter()
            .map(|m| cell(m.to_string(), base, |c| c.model.modalities = m))
            .collect(),
        Study::GatmlpComponents => toggle_grid(base, ["MultiGAT", "FeedForward"], |c, g, f| {
            c.model.use_multigat = g;
            c.model.use_feedforward = f;
        }),
        Study::SubspaceLosses => toggle_grid(base, ["L_shr", "L_sep"], |c, s, p| {
            c.model.shared_loss = s;
            c.model.separate_loss = p;
        }),
        Study::Embeddings => toggle_grid(base, ["speaker", "edge type"], |c, s, e| {
            c.model.speaker_embedding = s;
            c.model.edge_type_embedding = e;
        }),
        Study::SkipVsDepth => {
            if options.depths.is_empty() || options.depths.contains(&0) {
                return Err(Error::Config("ablation depths must be positive".into()));
            }
            options
                .depths
                .iter()
                .flat_map(|&layers| {
                    [true, false].map(|skip| {
                        cell(depth_label(layers, skip), base, |c| {
                            c.model.layers = layers;
                            c.model.skip_connection = skip;
                        })
                    })
                })
                .collect()
        }
        Study::WindowSweep => (0..=options.window_max)
            .step_by(2)
            .map(|w| cell(format!("({w},{w})"), base, |c| c.model.window = Window::new(w, w)))
            .collect(),
        Study::ThreeEmotion => vec![Cell {
            label: "three-class".into(),
            config: base.clone(),
            coarsen: true,
        }],
    };
    Ok(cells)
}

fn coarsened(corpus: &Corpus, scheme: &LabelScheme) -> Result<Corpus> {
    coarsen_labels(corpus, scheme)
}

/// Scheme that maps every label of `corpus` onto the coarse classes.
pub fn coarsening_scheme(corpus: &Corpus) -> Result<LabelScheme> {
    LabelScheme::detect(&corpus.header.labels).ok_or_else(|| {
        Error::Data(format!(
            "no built-in coarsening covers labels [{}]",
            corpus.header.labels.join(", ")
        ))
    })
}

/// Train and test one cell with one seed.
pub fn run_cell(cell: &Cell, splits: &Splits, seed: u64) -> Result<SeedResult> {
    let mut config = cell.config.clone();
    config.seed = seed;
    let owned;
    let data = if cell.coarsen {
        let scheme = coarsening_scheme(&splits.train)?;
        owned = Splits {
            train: coarsened(&splits.train, &scheme)?,
            valid: coarsened(&splits.valid, &scheme)?,
            test: coarsened(&splits.test, &scheme)?,
        };
        &owned
    } else {
        splits
    };
    let mut shape = shape_of(&data.train);
    shape.max_speakers = shape
        .max_speakers
        .max(data.valid.max_speakers())
        .max(data.test.max_speakers());
    let outcome = train(&config, shape, &data.train.dialogues, &data.valid.dialogues)?;
    let test = evaluate_corpus(&outcome.model, &outcome.params, &data.test, config.batch_size)?;
    let best = outcome.history.best();
    Ok(SeedResult {
        seed,
        classes: shape.classes,
        epochs_run: outcome.history.epochs.len(),
        best_epoch: outcome.history.best_epoch,
        valid_weighted_f1: best.valid_weighted_f1,
        test_accuracy: test.accuracy,
        test_weighted_f1: test.weighted_f1,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Reduce per-seed results into a report. `results[i]` holds the runs of
/// `cells[i]`, one per seed in `seeds` order.
pub fn assemble(study: Study, seeds: &[u64], cells: &[Cell], results: Vec<Vec<SeedResult>>) -> Result<AblationReport> {
    if cells.len() != results.len() {
        return Err(Error::contract(
            "assemble",
            format!("{} cells but {} result sets", cells.len(), results.len()),
        ));
    }
    let rows: Vec<ReportRow> = cells
        .iter()
        .zip(results)
        .map(|(c, runs)| ReportRow {
            label: c.label.clone(),
            classes: runs.first().map_or(0, |r| r.classes),
            accuracy: mean(runs.iter().map(|r| r.test_accuracy)),
            weighted_f1: mean(runs.iter().map(|r| r.test_weighted_f1)),
            valid_weighted_f1: mean(runs.iter().map(|r| r.valid_weighted_f1)),
            runs,
        })
        .collect();
    let mut warnings = Vec::new();
    if study == Study::SkipVsDepth {
        for pair in rows.chunks(2) {
            if let [with, without] = pair {
                if with.valid_weighted_f1 < without.valid_weighted_f1 {
                    warnings.push(format!(
                        "{}: validation weighted F1 with skip {:.4} is below without skip {:.4}",
                        with.label.trim_end_matches(" skip"),
                        with.valid_weighted_f1,
                        without.valid_weighted_f1
                    ));
                }
            }
        }
    }
    Ok(AblationReport {
        study,
        seeds: seeds.to_vec(),
        rows,
        warnings,
    })
}

/// Plan, run every cell for every seed sequentially, and assemble.
pub fn run_ablation(
    study: Study,
    base: &TrainConfig,
    splits: &Splits,
    options: &AblationOptions,
) -> Result<AblationReport> {
    if options.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let cells = plan(study, base, options)?;
    let results = cells
        .iter()
        .map(|c| options.seeds.iter().map(|&s| run_cell(c, splits, s)).collect())
        .collect::<Result<Vec<Vec<SeedResult>>>>()?;
    assemble(study, &options.seeds, &cells, results)
}

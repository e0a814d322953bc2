//! Training loop and evaluation.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::ForwardMode;
use crate::autodiff::{AdamW, AdamWConfig, ParamStore, Tape};
use crate::corpus::{Corpus, Dialogue};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Metrics};
use crate::paircc::{argmax_rows, AuxTerm, GraphCfc, ModelConfig, ModelShape};

/// Optimization settings plus the model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    /// Dialogues per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled AdamW decay.
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation weighted-F1
    /// improvement; 0 disables early stopping.
    pub patience: usize,
    /// Feed auxiliary losses into the objective as constants with frozen
    /// log-weights, which makes the run optimize the main loss alone.
    pub detach_auxiliary: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            seed: 0,
            patience: 15,
            detach_auxiliary: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "train.weight_decay {} must be finite and non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Total objective, averaged over training utterances.
    pub train_loss: f64,
    /// Main classification loss, averaged over training utterances.
    pub train_cls: f64,
    pub train_aux: Vec<(AuxTerm, f64)>,
    pub valid_accuracy: f64,
    pub valid_weighted_f1: f64,
    pub valid_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Result of [`train`]: the model, the best-validation parameters, and the
/// per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GraphCfc,
    pub params: ParamStore,
    pub history: History,
}

/// Model sizes implied by a corpus.
pub fn shape_of(corpus: &Corpus) -> ModelShape {
    ModelShape {
        classes: corpus.classes(),
        dims: corpus.header.dims,
        max_speakers: corpus.max_speakers(),
    }
}

fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

fn as_divergence(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            epoch,
            step,
            reason: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Train on `train`, selecting parameters by validation weighted F1.
pub fn train(config: &TrainConfig, shape: ModelShape, train: &[Dialogue], valid: &[Dialogue]) -> Result<TrainOutcome> {
    train_with(config, shape, train, valid, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    config: &TrainConfig,
    shape: ModelShape,
    train: &[Dialogue],
    valid: &[Dialogue],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let (model, mut store) = GraphCfc::build(&config.model, shape, config.seed)?;
    if config.detach_auxiliary {
        for &(_, id) in &model.log_weights {
            store.set_trainable(id, false);
        }
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &store,
    );
    let mut shuffle_rng = seeded_stream(config.seed, SHUFFLE_STREAM);
    let mut dropout_rng = seeded_stream(config.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let train_utterances: usize = train.iter().map(Dialogue::len).sum();

    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut cls_sum = 0.0;
        let mut aux_sum: Vec<(AuxTerm, f64)> = Vec::new();
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Dialogue> = chunk.iter().map(|&i| &train[i]).collect();
            let n: usize = batch.iter().map(|d| d.len()).sum();
            let mut tape = Tape::new();
            let mut mode = ForwardMode::train(config.model.dropout, &mut dropout_rng);
            let (total, components) = model
                .objective(&mut tape, &store, &batch, &mut mode, config.detach_auxiliary)
                .map_err(|e| as_divergence(e, epoch, step))?;
            let values = components.values(&tape, total);
            if !values.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    reason: "non-finite loss".to_string(),
                });
            }
            store.zero_grad();
            tape.backward_into(total, &mut store)
                .map_err(|e| as_divergence(e, epoch, step))?;
            opt.step(&mut store).map_err(|e| as_divergence(e, epoch, step))?;

            loss_sum += values.total * n as f64;
            cls_sum += values.cls * n as f64;
            if aux_sum.is_empty() {
                aux_sum = values.aux.iter().map(|&(t, _)| (t, 0.0)).collect();
            }
            for (acc, &(_, v)) in aux_sum.iter_mut().zip(&values.aux) {
                acc.1 += v * n as f64;
            }
        }
        let norm = train_utterances as f64;
        let metrics = if valid.is_empty() {
            None
        } else {
            let last_step = order.len().div_ceil(config.batch_size) - 1;
            Some(evaluate(&model, &store, valid, config.batch_size).map_err(|e| as_divergence(e, epoch, last_step))?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / norm,
            train_cls: cls_sum / norm,
            train_aux: aux_sum.into_iter().map(|(t, v)| (t, v / norm)).collect(),
            valid_accuracy: metrics.as_ref().map_or(0.0, |m| m.accuracy),
            valid_weighted_f1: metrics.as_ref().map_or(0.0, |m| m.weighted_f1),
            valid_macro_f1: metrics.as_ref().map_or(0.0, |m| m.macro_f1),
        };
        on_epoch(&record);
        let score = record.valid_weighted_f1;
        history.epochs.push(record);

        let improved = match &best {
            None => true,
            Some((b, _)) => valid.is_empty() || score > *b,
        };
        if improved {
            best = Some((score, store.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    let (_, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, params, history })
}

/// Predictions for `dialogues` in evaluation mode, batched
/// `batch_size` dialogues at a time; returns `(truth, predicted)` in
/// stacked utterance order.
pub fn predict_all(
    model: &GraphCfc,
    store: &ParamStore,
    dialogues: &[Dialogue],
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    for chunk in dialogues.chunks(batch_size.max(1)) {
        let batch: Vec<&Dialogue> = chunk.iter().collect();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, store, &batch, &mut ForwardMode::eval())?;
        predicted.extend(argmax_rows(tape.value(out.main)));
        truth.extend(batch.iter().flat_map(|d| d.labels()));
    }
    Ok((truth, predicted))
}

/// Confusion matrix and scores of `model` on `dialogues`.
pub fn evaluate(model: &GraphCfc, store: &ParamStore, dialogues: &[Dialogue], batch_size: usize) -> Result<Metrics> {
    let (truth, predicted) = predict_all(model, store, dialogues, batch_size)?;
    Ok(ConfusionMatrix::from_predictions(&truth, &predicted, model.shape.classes)?.metrics())
}

/// [`evaluate`] against a labelled corpus, checking its label count.
pub fn evaluate_corpus(model: &GraphCfc, store: &ParamStore, corpus: &Corpus, batch_size: usize) -> Result<Metrics> {
    if corpus.classes() != model.shape.classes {
        return Err(Error::Data(format!(
            "corpus has {} classes, model was trained with {}",
            corpus.classes(),
            model.shape.classes
        )));
    }
    evaluate(model, store, &corpus.dialogues, batch_size)
}

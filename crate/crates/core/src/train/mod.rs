//! Mini-batch training, evaluation and checkpointing for both schemes.

mod checkpoint;
mod metrics;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use metrics::{
    accuracy, eval_classification, eval_labeling, evaluate, f1_score, labeling_scores, Confusion,
    Metrics,
};

use crate::data::{BlankExample, Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, Scheme};
use crate::numcore::{Gradients, Tape};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    /// Maximum global gradient norm.
    pub clip: f64,
    /// `None` picks 10 epochs for labeling and 5 for classification.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    /// Evaluate on the validation split every this many epochs (and after the last).
    pub eval_every: usize,
    pub seed: u64,
    pub min_freq: usize,
    /// Decision threshold for labeling metrics.
    pub threshold: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            clip: 5.0,
            epochs: None,
            batch_size: 32,
            eval_every: 1,
            seed: 0,
            min_freq: 1,
            threshold: 0.5,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn epoch_budget(&self) -> usize {
        self.epochs.unwrap_or(match self.model.scheme {
            Scheme::Labeling => 10,
            Scheme::Classification => 5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epoch_budget() == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Invalid("batch size and eval cadence must be at least 1".into()));
        }
        if [self.clip, self.optimizer.lr].iter().any(|x| x.is_nan() || *x <= 0.0) {
            return Err(Error::Invalid("clip norm and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the metrics history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid: Option<Metrics>,
}

impl EpochRecord {
    pub fn write_jsonl<W: Write>(records: &[EpochRecord], w: &mut W) -> std::io::Result<()> {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergence {
    pub epoch: usize,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Best validation checkpoint, or the last good state if training diverged
    /// before any evaluation.
    pub best: Checkpoint,
    pub best_metric: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub diverged: Option<Divergence>,
}

impl FitOutcome {
    /// Turns a divergence into an error.
    pub fn into_result(self) -> Result<FitOutcome> {
        match self.diverged {
            Some(d) => Err(Error::Diverged {
                epoch: d.epoch,
                step: d.step as usize,
            }),
            None => Ok(self),
        }
    }
}

enum StepError {
    Diverged,
    Other(Error),
}

impl From<Error> for StepError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => StepError::Diverged,
            other => StepError::Other(other),
        }
    }
}

/// Per-run random streams, all derived from the configured seed.
struct Streams {
    init: ChaCha8Rng,
    shuffle: ChaCha8Rng,
    dropout: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffle = init.clone();
        shuffle.set_stream(1);
        let mut dropout = init.clone();
        dropout.set_stream(2);
        init.set_stream(0);
        Streams {
            init,
            shuffle,
            dropout,
        }
    }
}

/// Trains a freshly initialised model. `vocab` must come from the train split.
pub fn fit(cfg: &TrainConfig, vocab: &Vocabulary, train: &Corpus, valid: &Corpus) -> Result<FitOutcome> {
    fit_with(cfg, vocab, train, valid, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train: &Corpus,
    valid: &Corpus,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Empty("training or validation corpus"));
    }
    let train_ex = train.encode(vocab);
    let valid_ex = valid.encode(vocab);
    let mut streams = Streams::new(cfg.seed);
    let mut model = Model::init(cfg.model.clone(), vocab.len(), &mut streams.init)?;
    let mut adam = AdamState::new(cfg.optimizer, model.params());
    let mut grads = Gradients::zeros_like(model.params());
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    let epochs = cfg.epoch_budget();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut last_good = Checkpoint::from_model(cfg, vocab, &model, 0);

    for epoch in 1..=epochs {
        order.shuffle(&mut streams.shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let batch: Vec<&BlankExample> = batch.iter().map(|&i| &train_ex[i]).collect();
            match train_step(&mut model, &batch, &mut grads, &mut adam, cfg.clip, &mut streams.dropout) {
                Ok(loss) => epoch_loss += loss * batch.len() as f64,
                Err(StepError::Diverged) => {
                    return Ok(FitOutcome {
                        best_metric: best.as_ref().map(|b| b.0),
                        best: best.map(|b| b.1).unwrap_or(last_good),
                        history,
                        diverged: Some(Divergence { epoch, step }),
                    });
                }
                Err(StepError::Other(e)) => return Err(e),
            }
            step += 1;
        }

        let valid_metrics = if epoch % cfg.eval_every == 0 || epoch == epochs {
            match evaluate(&model, &valid_ex, cfg.threshold) {
                Ok(m) => Some(m),
                // finite weights whose activations overflow count as divergence too
                Err(Error::NonFinite(_)) => {
                    return Ok(FitOutcome {
                        best_metric: best.as_ref().map(|b| b.0),
                        best: best.map(|b| b.1).unwrap_or(last_good),
                        history,
                        diverged: Some(Divergence { epoch, step }),
                    });
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        if let Some(m) = &valid_metrics {
            let score = m.primary();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, Checkpoint::from_model(cfg, vocab, &model, step)));
            }
        }
        last_good = Checkpoint::from_model(cfg, vocab, &model, step);
        let record = EpochRecord {
            epoch,
            step,
            train_loss: epoch_loss / train_ex.len() as f64,
            valid: valid_metrics,
        };
        on_epoch(&record);
        history.push(record);
    }

    let (best_metric, best) = best.expect("the last epoch is always evaluated");
    Ok(FitOutcome {
        best,
        best_metric: Some(best_metric),
        history,
        diverged: None,
    })
}

/// Forward, backward, clip and Adam update over one mini-batch. Returns the
/// mean batch loss.
fn train_step(
    model: &mut Model,
    batch: &[&BlankExample],
    grads: &mut Gradients,
    adam: &mut AdamState,
    clip: f64,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<f64, StepError> {
    grads.zero();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let mut tape = Tape::new(model.params());
        let loss = model.loss_graph(&mut tape, ex, Some(&mut *rng as &mut dyn RngCore))?;
        total += tape.scalar(loss)?;
        tape.backward_into(loss, grads, scale)?;
    }
    if !total.is_finite() {
        return Err(StepError::Diverged);
    }
    clip_global_norm(grads, model.params(), clip)?;
    adam_step(model.params_mut(), grads, adam)?;
    if model.params().iter().any(|(_, _, a)| !a.is_finite()) {
        return Err(StepError::Diverged);
    }
    Ok(total * scale)
}

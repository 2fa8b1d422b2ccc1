use serde::{Deserialize, Serialize};

use crate::data::BlankExample;
use crate::error::Result;
use crate::models::{decode_labels, label_loss, one_hot, Model, Scheme};
use crate::numcore::argmax;

/// Evaluation summary. Labeling fills precision/recall/F1, classification
/// fills accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

impl Metrics {
    /// F1 for labeling metrics, accuracy otherwise.
    pub fn primary(&self) -> f64 {
        self.f1.or(self.accuracy).unwrap_or(0.0)
    }
}

/// Positive-class counts accumulated over every token of every sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Adds one sentence: `predicted` positions against its single gold position.
    pub fn add(&mut self, predicted: &[usize], gold: usize) {
        let hit = predicted.contains(&gold);
        self.tp += usize::from(hit);
        self.fp += predicted.len() - usize::from(hit);
        self.fn_ += usize::from(!hit);
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR/(P+R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall and F1 of per-sentence predicted sets against gold positions.
pub fn labeling_scores(predicted: &[Vec<usize>], gold: &[usize]) -> (f64, f64, f64) {
    let c = predicted
        .iter()
        .zip(gold)
        .fold(Confusion::default(), |mut c, (p, &g)| {
            c.add(p, g);
            c
        });
    (c.precision(), c.recall(), c.f1())
}

/// Fraction of sentences whose predicted position equals the gold one.
pub fn accuracy(predicted: &[usize], gold: &[usize]) -> f64 {
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    ratio(hits, gold.len())
}

/// Thresholded per-token evaluation of a labeling model.
pub fn eval_labeling(model: &Model, examples: &[BlankExample], threshold: f64) -> Result<Metrics> {
    let mut confusion = Confusion::default();
    let mut total = 0.0;
    for ex in examples {
        let out = model.label_forward(&ex.ids)?;
        total += label_loss(&out, &one_hot(ex.ids.len(), ex.blank)?)?;
        confusion.add(&decode_labels(&out, threshold), ex.blank);
    }
    Ok(Metrics {
        loss: mean(total, examples.len()),
        precision: Some(confusion.precision()),
        recall: Some(confusion.recall()),
        f1: Some(confusion.f1()),
        accuracy: None,
    })
}

/// Argmax-position accuracy. Works for either scheme; the loss is the
/// model's own training loss.
pub fn eval_classification(model: &Model, examples: &[BlankExample]) -> Result<Metrics> {
    let mut hits = 0;
    let mut total = 0.0;
    for ex in examples {
        let scores = model.scores(&ex.ids)?;
        total += match model.scheme() {
            Scheme::Classification => crate::numcore::nll(&scores, ex.blank)?,
            Scheme::Labeling => crate::numcore::bce_mean(&scores, ex.blank)?,
        };
        hits += usize::from(argmax(&scores) == Some(ex.blank));
    }
    Ok(Metrics {
        loss: mean(total, examples.len()),
        precision: None,
        recall: None,
        f1: None,
        accuracy: Some(ratio(hits, examples.len())),
    })
}

/// Evaluation matching the model's scheme.
pub fn evaluate(model: &Model, examples: &[BlankExample], threshold: f64) -> Result<Metrics> {
    match model.scheme() {
        Scheme::Labeling => eval_labeling(model, examples, threshold),
        Scheme::Classification => eval_classification(model, examples),
    }
}

fn mean(total: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

//! Trains a model to imitate the rarest-token teacher and reports test metrics.
//!
//! cargo run --release -p clozegen --example imitate -- [labeling|classification] [max|mean|last] [epochs]

use std::time::Instant;

use clozegen::data::{split_dataset, Corpus, Vocabulary, DEFAULT_RATIOS};
use clozegen::models::{ModelConfig, Scheme};
use clozegen::synth::{generate_teacher_corpus, TeacherConfig};
use clozegen::train::{evaluate, fit_with, TrainConfig};

fn main() -> clozegen::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scheme: Scheme = args.first().map(|s| s.parse()).transpose()?.unwrap_or_default();
    let pooling = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or_default();
    let epochs = args.get(2).map(|s| s.parse().expect("epoch count"));

    let corpus = generate_teacher_corpus(&TeacherConfig::default())?;
    let (train, valid, test) = split_dataset(&corpus.examples, DEFAULT_RATIOS, 7)?;
    let (train, valid, test) = (Corpus::new(None, train), Corpus::new(None, valid), Corpus::new(None, test));
    let vocab = Vocabulary::build(&train, 1)?;

    let cfg = TrainConfig {
        model: ModelConfig {
            scheme,
            embed_dim: 64,
            hidden_dim: 64,
            pooling,
            ..ModelConfig::default()
        },
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = fit_with(&cfg, &vocab, &train, &valid, |r| {
        eprintln!(
            "epoch {:>2}  train loss {:.4}  valid {:?}  ({:.0?})",
            r.epoch,
            r.train_loss,
            r.valid,
            start.elapsed()
        );
    })?;
    let model = outcome.best.model()?;
    let metrics = evaluate(&model, &test.encode(&vocab), cfg.threshold)?;
    println!("{}", serde_json::to_string(&metrics).expect("metrics serialise"));
    Ok(())
}

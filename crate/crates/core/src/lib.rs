//! Learned fill-in-the-blank question generation.
//!
//! Given a sentence, pick the token(s) a language-learning quiz should blank
//! out. Two trainable formulations are provided:
//!
//! * **sequence labeling**: a bidirectional LSTM scores every token with the
//!   probability that it is the blank ([`models::Model::label_forward`]);
//! * **sequence classification**: the same encoder feeds a content-based
//!   attention layer whose softmax ranges over the sentence positions, so
//!   the output dictionary grows with the input
//!   ([`models::Model::classify_forward`]).
//!
//! Everything runs on a small reverse-mode differentiation core
//! ([`numcore`]), trained with Adam and global-norm clipping ([`optim`]).
//! [`synth`] produces rule-labelled corpora for the models to imitate.
//!
//! ```
//! use clozegen::data::{split_dataset, Corpus, Vocabulary, DEFAULT_RATIOS};
//! use clozegen::models::{ModelConfig, Scheme};
//! use clozegen::synth::{generate_teacher_corpus, TeacherConfig};
//! use clozegen::train::{fit, TrainConfig};
//!
//! let corpus = generate_teacher_corpus(&TeacherConfig { count: 40, ..Default::default() })?;
//! let (train, valid, _test) = split_dataset(&corpus.examples, DEFAULT_RATIOS, 1)?;
//! let (train, valid) = (Corpus::new(None, train), Corpus::new(None, valid));
//! let vocab = Vocabulary::build(&train, 1)?;
//!
//! let cfg = TrainConfig {
//!     model: ModelConfig { scheme: Scheme::Classification, embed_dim: 8, hidden_dim: 8, ..Default::default() },
//!     epochs: Some(1),
//!     ..Default::default()
//! };
//! let outcome = fit(&cfg, &vocab, &train, &valid)?;
//! let model = outcome.best.model()?;
//! let ids = vocab.encode(&["w001", "w017", "w002"]);
//! assert!(model.predict_blank(&ids)? < 3);
//! # Ok::<(), clozegen::Error>(())
//! ```

pub mod data;
mod error;
pub mod models;
pub mod nn;
pub mod numcore;
pub mod optim;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tape.md")]
    mod tape {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/synth.md")]
    mod synth {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

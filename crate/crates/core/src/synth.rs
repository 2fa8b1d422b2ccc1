//! Rule-based teacher corpora.
//!
//! Sentences are drawn token by token from a Zipf distribution over a
//! synthetic vocabulary, then each sentence is labelled by a deterministic
//! blanking rule. Because the label is a function of the sentence and the
//! corpus-wide frequency table, a model can in principle imitate it exactly.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Example};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    #[default]
    Rarest,
    RarestContent,
    MarkerAdjacent,
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rarest" => Ok(RuleKind::Rarest),
            "rarest-content" => Ok(RuleKind::RarestContent),
            "marker-adjacent" => Ok(RuleKind::MarkerAdjacent),
            _ => Err(Error::UnknownVariant {
                kind: "teacher rule",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Rarest => "rarest",
            RuleKind::RarestContent => "rarest-content",
            RuleKind::MarkerAdjacent => "marker-adjacent",
        })
    }
}

/// A fully configured blanking rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TeacherRule {
    /// Lowest corpus frequency, leftmost on ties.
    Rarest,
    /// Like `Rarest`, ignoring stop words unless every token is one.
    RarestContent { stop_words: HashSet<String> },
    /// The token right after the first marker that has a successor, else `Rarest`.
    MarkerAdjacent { marker: String },
}

/// Position the teacher blanks in `tokens`. Tokens missing from `freq` count as 0.
pub fn teacher_blank_rule<S: AsRef<str>>(
    tokens: &[S],
    freq: &HashMap<String, u64>,
    rule: &TeacherRule,
) -> Result<usize> {
    if tokens.is_empty() {
        return Err(Error::Empty("teacher_blank_rule"));
    }
    let count = |t: &S| freq.get(t.as_ref()).copied().unwrap_or(0);
    let rarest_among = |candidates: &mut dyn Iterator<Item = usize>| {
        candidates.min_by_key(|&i| (count(&tokens[i]), i))
    };
    let rarest = || rarest_among(&mut (0..tokens.len())).expect("nonempty");
    Ok(match rule {
        TeacherRule::Rarest => rarest(),
        TeacherRule::RarestContent { stop_words } => {
            rarest_among(&mut (0..tokens.len()).filter(|&i| !stop_words.contains(tokens[i].as_ref())))
                .unwrap_or_else(rarest)
        }
        TeacherRule::MarkerAdjacent { marker } => (0..tokens.len() - 1)
            .find(|&i| tokens[i].as_ref() == marker)
            .map(|i| i + 1)
            .unwrap_or_else(rarest),
    })
}

/// Occurrence counts of every token in the corpus.
pub fn frequency_table(corpus: &Corpus) -> HashMap<String, u64> {
    let mut freq = HashMap::new();
    for ex in &corpus.examples {
        for t in &ex.tokens {
            *freq.entry(t.clone()).or_insert(0) += 1;
        }
    }
    freq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub count: usize,
    pub zipf_exponent: f64,
    pub rule: RuleKind,
    pub seed: u64,
    /// Stop list for `rarest-content`; empty means the ten most probable tokens.
    pub stop_words: Vec<String>,
    /// Marker for `marker-adjacent`; `None` means the third most probable token.
    pub marker: Option<String>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            vocab_size: 300,
            min_len: 5,
            max_len: 15,
            count: 5000,
            zipf_exponent: 1.1,
            rule: RuleKind::Rarest,
            seed: 7,
            stop_words: Vec::new(),
            marker: None,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Invalid(format!(
                "sentence length range [{}, {}] needs 2 <= min <= max",
                self.min_len, self.max_len
            )));
        }
        if self.vocab_size < 10 {
            return Err(Error::Invalid("synthetic vocabulary needs at least 10 tokens".into()));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Invalid("Zipf exponent must be positive".into()));
        }
        Ok(())
    }

    /// Surface form of the token with 1-based frequency rank `rank`.
    pub fn token(&self, rank: usize) -> String {
        let width = self.vocab_size.to_string().len();
        format!("w{rank:0width$}")
    }

    pub fn resolved_rule(&self) -> TeacherRule {
        match self.rule {
            RuleKind::Rarest => TeacherRule::Rarest,
            RuleKind::RarestContent => TeacherRule::RarestContent {
                stop_words: if self.stop_words.is_empty() {
                    (1..=10).map(|r| self.token(r)).collect()
                } else {
                    self.stop_words.iter().cloned().collect()
                },
            },
            RuleKind::MarkerAdjacent => TeacherRule::MarkerAdjacent {
                marker: self.marker.clone().unwrap_or_else(|| self.token(3)),
            },
        }
    }
}

/// Samples `cfg.count` sentences and labels each with the configured rule,
/// using the frequency table of the generated corpus itself.
pub fn generate_teacher_corpus(cfg: &TeacherConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(cfg.vocab_size as f64, cfg.zipf_exponent)
        .map_err(|e| Error::Invalid(format!("Zipf distribution: {e}")))?;
    let sentences: Vec<Vec<String>> = (0..cfg.count)
        .map(|_| {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            (0..len)
                .map(|_| cfg.token(zipf.sample(&mut rng) as usize))
                .collect()
        })
        .collect();

    let mut corpus = Corpus::new(
        None,
        sentences
            .into_iter()
            .map(|tokens| Example { tokens, blank: 0 })
            .collect(),
    );
    let freq = frequency_table(&corpus);
    let rule = cfg.resolved_rule();
    for ex in &mut corpus.examples {
        ex.blank = teacher_blank_rule(&ex.tokens, &freq, &rule)?;
    }
    Ok(corpus)
}

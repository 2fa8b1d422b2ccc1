//! The per-token labeler and the pointer-style position classifier.
//!
//! Both heads share an embedding table and a stack of bidirectional LSTM
//! layers. The labeler projects every encoder state to two logits and keeps
//! the positive-class probability; the classifier scores every state against
//! a pooled summary and normalises the scores over the sentence, so its
//! output dictionary is as long as the input.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{BlankExample, BLANK_ID};
use crate::error::{Error, Result};
use crate::nn::{self, AttentionParams, EncodedSequence, Linear, LstmParams, Pooling};
use crate::numcore::{argmax, bce_mean, nll, Array, NodeId, ParamId, ParameterStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Labeling,
    Classification,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeling" => Ok(Scheme::Labeling),
            "classification" => Ok(Scheme::Classification),
            _ => Err(Error::UnknownVariant {
                kind: "scheme",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Labeling => "labeling",
            Scheme::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub scheme: Scheme,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub pooling: Pooling,
    /// Rows of the attention mixing matrix; `None` means `2 * hidden_dim`.
    pub attn_dim: Option<usize>,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scheme: Scheme::Labeling,
            embed_dim: 300,
            hidden_dim: 300,
            layers: 2,
            dropout: 0.2,
            pooling: Pooling::Last,
            attn_dim: None,
            init_scale: 0.08,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Invalid("embedding and hidden sizes must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Invalid("at least one LSTM layer is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.attn_dim == Some(0) {
            return Err(Error::Invalid("attention size must be positive".into()));
        }
        Ok(())
    }

    pub fn attention_size(&self) -> usize {
        self.attn_dim.unwrap_or(2 * self.hidden_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Labeler(Linear),
    Classifier(AttentionParams),
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embedding: ParamId,
    layers: Vec<(LstmParams, LstmParams)>,
    head: Head,
}

impl Layout {
    fn register(config: &ModelConfig, vocab_size: usize, store: &mut ParameterStore) -> Result<Self> {
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let embedding = store.add("embedding", Array::zeros(&[vocab_size, e]))?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { e } else { 2 * h };
            let fw = LstmParams::register(store, &format!("lstm.{l}.fw"), input, h)?;
            let bw = LstmParams::register(store, &format!("lstm.{l}.bw"), input, h)?;
            layers.push((fw, bw));
        }
        let head = match config.scheme {
            Scheme::Labeling => Head::Labeler(Linear::register(store, "proj", 2 * h, 2)?),
            Scheme::Classification => Head::Classifier(AttentionParams::register(
                store,
                "attn",
                config.attention_size(),
                2 * h,
            )?),
        };
        Ok(Layout {
            embedding,
            layers,
            head,
        })
    }
}

/// Per-token positive-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelerOutput {
    pub probs: Vec<f64>,
}

/// Distribution over the positions of the input sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    pub dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    vocab_size: usize,
    params: ParameterStore,
    layout: Layout,
}

impl Model {
    /// A model with every parameter set to zero.
    pub fn zeros(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Invalid("vocabulary size must be positive".into()));
        }
        let mut params = ParameterStore::new();
        let layout = Layout::register(&config, vocab_size, &mut params)?;
        Ok(Model {
            config,
            vocab_size,
            params,
            layout,
        })
    }

    /// Uniform(-init_scale, init_scale) weights with forget-gate biases at 1.0.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config, vocab_size)?;
        model.params.init_uniform(model.config.init_scale, rng);
        for (fw, bw) in &model.layout.layers {
            fw.init_forget_bias(&mut model.params);
            bw.init_forget_bias(&mut model.params);
        }
        Ok(model)
    }

    /// Rebuilds a model around externally supplied parameters, which must
    /// match the names and shapes `config` implies.
    pub fn from_params(config: ModelConfig, vocab_size: usize, params: ParameterStore) -> Result<Self> {
        let mut model = Self::zeros(config, vocab_size)?;
        if params.len() != model.params.len() {
            return Err(Error::shape(
                "Model::from_params",
                format!("{} parameters, expected {}", params.len(), model.params.len()),
            ));
        }
        for ((_, name, want), (_, got_name, got)) in model.params.iter().zip(params.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::shape(
                    "Model::from_params",
                    format!("`{got_name}` {:?}, expected `{name}` {:?}", got.shape(), want.shape()),
                ));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn scheme(&self) -> Scheme {
        self.config.scheme
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    /// Attention parameters of a classification model.
    pub fn attention(&self) -> Option<AttentionParams> {
        match self.layout.head {
            Head::Classifier(a) => Some(a),
            Head::Labeler(_) => None,
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Empty("sentence"));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::UnknownId {
                id,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// Embedding, dropout, stacked biLSTM, dropout. `rng == None` disables dropout.
    pub fn encode(
        &self,
        tape: &mut Tape,
        ids: &[u32],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<EncodedSequence> {
        self.check_ids(ids)?;
        let p = self.config.dropout;
        let mut inputs = Vec::with_capacity(ids.len());
        for &id in ids {
            let e = tape.embed(self.layout.embedding, id as usize)?;
            inputs.push(nn::dropout_node(tape, e, p, reborrow(&mut rng))?);
        }
        let mut enc = None;
        for (fw, bw) in &self.layout.layers {
            let mut layer = nn::bilstm_encode(tape, &inputs, fw, bw)?;
            for s in &mut layer.states {
                *s = nn::dropout_node(tape, *s, p, reborrow(&mut rng))?;
            }
            inputs = layer.states.clone();
            enc = Some(layer);
        }
        Ok(enc.expect("at least one layer"))
    }

    /// Vector of per-token positive probabilities on the tape.
    pub fn label_graph(&self, tape: &mut Tape, ids: &[u32], rng: Option<&mut dyn RngCore>) -> Result<NodeId> {
        let Head::Labeler(proj) = self.layout.head else {
            return Err(Error::Invalid("label_forward needs a labeling model".into()));
        };
        let enc = self.encode(tape, ids, rng)?;
        let mut positives = Vec::with_capacity(enc.len());
        for &h in &enc.states {
            let logits = proj.forward(tape, h)?;
            let probs = tape.softmax(logits)?;
            positives.push(tape.slice(probs, 1, 1)?);
        }
        tape.concat(&positives)
    }

    /// Distribution over positions on the tape.
    pub fn classify_graph(&self, tape: &mut Tape, ids: &[u32], rng: Option<&mut dyn RngCore>) -> Result<NodeId> {
        let Head::Classifier(attn) = self.layout.head else {
            return Err(Error::Invalid("classify_forward needs a classification model".into()));
        };
        let enc = self.encode(tape, ids, rng)?;
        let summary = nn::pool(tape, &enc, self.config.pooling)?;
        nn::attend(tape, &enc, summary, &attn)
    }

    /// Scalar training loss for one example under this model's scheme.
    pub fn loss_graph(&self, tape: &mut Tape, ex: &BlankExample, rng: Option<&mut dyn RngCore>) -> Result<NodeId> {
        if ex.blank >= ex.ids.len() {
            return Err(Error::OutOfRange {
                index: ex.blank,
                len: ex.ids.len(),
            });
        }
        match self.config.scheme {
            Scheme::Labeling => {
                let probs = self.label_graph(tape, &ex.ids, rng)?;
                tape.bce_mean(probs, ex.blank)
            }
            Scheme::Classification => {
                let dist = self.classify_graph(tape, &ex.ids, rng)?;
                tape.nll(dist, ex.blank)
            }
        }
    }

    /// Inference-mode loss of one example.
    pub fn loss(&self, ex: &BlankExample) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let loss = self.loss_graph(&mut tape, ex, None)?;
        tape.scalar(loss)
    }

    pub fn label_forward(&self, ids: &[u32]) -> Result<LabelerOutput> {
        let mut tape = Tape::new(&self.params);
        let probs = self.label_graph(&mut tape, ids, None)?;
        Ok(LabelerOutput {
            probs: tape.value(probs).data().to_vec(),
        })
    }

    pub fn classify_forward(&self, ids: &[u32]) -> Result<ClassifierOutput> {
        let mut tape = Tape::new(&self.params);
        let dist = self.classify_graph(&mut tape, ids, None)?;
        Ok(ClassifierOutput {
            dist: tape.value(dist).data().to_vec(),
        })
    }

    /// Per-position blank scores: labeler probabilities or classifier distribution.
    pub fn scores(&self, ids: &[u32]) -> Result<Vec<f64>> {
        match self.config.scheme {
            Scheme::Labeling => Ok(self.label_forward(ids)?.probs),
            Scheme::Classification => Ok(self.classify_forward(ids)?.dist),
        }
    }

    /// Most likely blank position; ties go to the lowest index.
    pub fn predict_blank(&self, ids: &[u32]) -> Result<usize> {
        Ok(argmax(&self.scores(ids)?).expect("nonempty sentence"))
    }
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// One-hot target of length `len` with its positive at `blank`.
pub fn one_hot(len: usize, blank: usize) -> Result<Vec<f64>> {
    if blank >= len {
        return Err(Error::OutOfRange { index: blank, len });
    }
    let mut v = vec![0.0; len];
    v[blank] = 1.0;
    Ok(v)
}

/// Mean per-token binary cross-entropy against a one-hot target.
pub fn label_loss(output: &LabelerOutput, gold: &[f64]) -> Result<f64> {
    if gold.len() != output.probs.len() {
        return Err(Error::shape(
            "label_loss",
            format!("{} probabilities against {} labels", output.probs.len(), gold.len()),
        ));
    }
    if gold.iter().any(|&g| g != 0.0 && g != 1.0) {
        return Err(Error::Invalid("gold labels must be 0 or 1".into()));
    }
    let positives: Vec<usize> = (0..gold.len()).filter(|&i| gold[i] == 1.0).collect();
    match positives.as_slice() {
        [c] => bce_mean(&output.probs, *c),
        _ => Err(Error::Invalid(format!(
            "expected exactly one gold positive, found {}",
            positives.len()
        ))),
    }
}

/// Negative log-likelihood of the gold position.
pub fn classify_loss(output: &ClassifierOutput, gold: usize) -> Result<f64> {
    nll(&output.dist, gold)
}

/// Mean loss over a batch of sentences.
pub fn batch_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("batch_loss"));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Positions whose probability is strictly above `threshold`, ascending.
pub fn decode_labels(output: &LabelerOutput, threshold: f64) -> Vec<usize> {
    output
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// One pass of multi-blank generation: the sentence fed in and the position chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlankPass {
    pub input: Vec<u32>,
    pub chosen: usize,
}

/// Picks `k` distinct positions one pass at a time, replacing each chosen
/// token with the blank sentinel before the next pass.
pub fn generate_multi_blank(model: &Model, ids: &[u32], k: usize) -> Result<Vec<usize>> {
    Ok(generate_multi_blank_traced(model, ids, k)?
        .into_iter()
        .map(|p| p.chosen)
        .collect())
}

pub fn generate_multi_blank_traced(model: &Model, ids: &[u32], k: usize) -> Result<Vec<BlankPass>> {
    let open = ids.iter().filter(|&&id| id != BLANK_ID).count();
    if k == 0 || k > open {
        return Err(Error::Invalid(format!(
            "k = {k} must be between 1 and the {open} unblanked tokens"
        )));
    }
    let mut current = ids.to_vec();
    let mut passes = Vec::with_capacity(k);
    for _ in 0..k {
        let scores = model.scores(&current)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in scores.iter().enumerate() {
            if current[i] == BLANK_ID {
                continue;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (chosen, _) = best.expect("an open position remains");
        passes.push(BlankPass {
            input: current.clone(),
            chosen,
        });
        current[chosen] = BLANK_ID;
    }
    Ok(passes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(scheme: Scheme) -> ModelConfig {
        ModelConfig {
            scheme,
            embed_dim: 4,
            hidden_dim: 3,
            layers: 2,
            dropout: 0.2,
            ..ModelConfig::default()
        }
    }

    fn random(scheme: Scheme, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = tiny(scheme);
        cfg.init_scale = 0.5;
        Model::init(cfg, 12, &mut rng).unwrap()
    }

    #[test]
    fn zero_labeler_is_indifferent() {
        let m = Model::zeros(tiny(Scheme::Labeling), 10).unwrap();
        let out = m.label_forward(&[3, 4, 5, 6]).unwrap();
        assert_eq!(out.probs, vec![0.5; 4]);
        let loss = label_loss(&out, &one_hot(4, 1).unwrap()).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(m.predict_blank(&[3, 4, 5, 6]).unwrap(), 0);
    }

    #[test]
    fn single_token_shapes() {
        let lab = random(Scheme::Labeling, 1);
        let p = lab.label_forward(&[7]).unwrap().probs;
        assert_eq!(p.len(), 1);
        assert!(p[0] > 0.0 && p[0] < 1.0);
        let cls = random(Scheme::Classification, 1);
        assert_eq!(cls.classify_forward(&[7]).unwrap().dist, vec![1.0]);
    }

    #[test]
    fn zero_attention_classifier_is_uniform() {
        let mut m = random(Scheme::Classification, 2);
        let attn = m.attention().unwrap();
        m.params_mut().get_mut(attn.w).fill(0.0);
        let out = m.classify_forward(&[3, 4, 5, 6, 7]).unwrap();
        for p in &out.dist {
            assert!((p - 0.2).abs() < 1e-15);
        }
        assert!((classify_loss(&out, 3).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_vocabulary_ids() {
        let m = random(Scheme::Labeling, 3);
        assert!(matches!(
            m.label_forward(&[3, 12]),
            Err(Error::UnknownId { id: 12, size: 12 })
        ));
        assert!(matches!(m.label_forward(&[]), Err(Error::Empty(_))));
        assert!(m.classify_forward(&[3]).is_err());
    }

    #[test]
    fn label_loss_validates_gold() {
        let out = LabelerOutput {
            probs: vec![0.2, 0.7, 0.4],
        };
        assert!(label_loss(&out, &[0.0, 0.0, 0.0]).is_err());
        assert!(label_loss(&out, &[1.0, 1.0, 0.0]).is_err());
        assert!(label_loss(&out, &[0.0, 1.0]).is_err());
        let exact = LabelerOutput {
            probs: vec![0.0, 1.0, 0.0],
        };
        assert!(label_loss(&exact, &[0.0, 1.0, 0.0]).unwrap() < 1e-9);
    }

    #[test]
    fn classify_loss_cases() {
        let certain = ClassifierOutput {
            dist: vec![0.0, 1.0, 0.0],
        };
        assert_eq!(classify_loss(&certain, 1).unwrap(), 0.0);
        assert!(classify_loss(&certain, 3).is_err());
    }

    #[test]
    fn decode_threshold_is_strict() {
        let out = LabelerOutput {
            probs: vec![0.9, 0.1, 0.6],
        };
        assert_eq!(decode_labels(&out, 0.5), vec![0, 2]);
        let flat = LabelerOutput { probs: vec![0.5; 3] };
        assert!(decode_labels(&flat, 0.5).is_empty());
    }

    #[test]
    fn multi_blank_single_and_exhaustive() {
        let m = random(Scheme::Labeling, 4);
        let ids = [3, 4, 5, 6, 7];
        assert_eq!(
            generate_multi_blank(&m, &ids, 1).unwrap(),
            vec![m.predict_blank(&ids).unwrap()]
        );
        let mut all = generate_multi_blank(&m, &ids, 5).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(generate_multi_blank(&m, &ids, 0).is_err());
        assert!(generate_multi_blank(&m, &ids, 6).is_err());
    }

    #[test]
    fn second_pass_sees_one_sentinel() {
        let m = random(Scheme::Classification, 5);
        let passes = generate_multi_blank_traced(&m, &[3, 4, 5, 6, 7], 2).unwrap();
        assert_eq!(passes.len(), 2);
        assert_ne!(passes[0].chosen, passes[1].chosen);
        assert!(!passes[0].input.contains(&BLANK_ID));
        let sentinels = passes[1].input.iter().filter(|&&i| i == BLANK_ID).count();
        assert_eq!(sentinels, 1);
        assert_eq!(passes[1].input[passes[0].chosen], BLANK_ID);
    }

    #[test]
    fn inference_is_repeatable() {
        let m = random(Scheme::Classification, 6);
        let a = m.classify_forward(&[3, 9, 4, 11]).unwrap();
        let b = m.classify_forward(&[3, 9, 4, 11]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn from_params_checks_layout() {
        let lab = random(Scheme::Labeling, 7);
        let cls = random(Scheme::Classification, 7);
        assert!(Model::from_params(tiny(Scheme::Labeling), 12, lab.params().clone()).is_ok());
        assert!(Model::from_params(tiny(Scheme::Labeling), 12, cls.params().clone()).is_err());
        assert!(Model::from_params(tiny(Scheme::Labeling), 13, lab.params().clone()).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(Scheme::Labeling);
        c.layers = 0;
        assert!(Model::zeros(c.clone(), 5).is_err());
        c.layers = 1;
        c.dropout = 1.0;
        assert!(Model::zeros(c, 5).is_err());
        assert!("tagging".parse::<Scheme>().is_err());
        let d = ModelConfig::default();
        assert_eq!((d.embed_dim, d.hidden_dim, d.layers, d.dropout), (300, 300, 2, 0.2));
    }
}

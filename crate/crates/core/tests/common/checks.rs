//! Criterion checks shared by the focused test files and the acceptance runner.
//! Each returns whether it held plus a one-line summary of what was measured.

use std::collections::HashSet;

use clozegen::data::{split_dataset, BlankExample, Corpus, Vocabulary, BLANK_ID, DEFAULT_RATIOS};
use clozegen::models::{
    classify_loss, generate_multi_blank_traced, label_loss, one_hot, ClassifierOutput, LabelerOutput, Model, Scheme,
};
use clozegen::nn::{attend, bilstm_encode, lstm_cell, AttentionParams, EncodedSequence, LstmParams, Pooling};
use clozegen::numcore::{Array, ParameterStore, Tape};
use clozegen::synth::{generate_teacher_corpus, TeacherConfig};
use clozegen::train::{eval_classification, eval_labeling, fit, Checkpoint, TrainConfig};
use rand::Rng;

use super::*;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }

    pub fn assert(&self) {
        assert!(self.pass, "{}", self.detail);
    }
}

pub const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
/// Below this magnitude gradients are compared absolutely.
const GRAD_FLOOR: f64 = 1e-3;

/// Largest relative disagreement between the tape gradient and central
/// differences over every scalar parameter of `model` for one example.
pub fn max_gradient_error(model: &Model, ex: &BlankExample) -> f64 {
    let mut tape = Tape::new(model.params());
    let loss = model.loss_graph(&mut tape, ex, None).unwrap();
    let analytic = tape.backward(loss).unwrap();

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for k in 0..model.params().get(id).len() {
            let orig = probe.params().get(id).data()[k];
            probe.params_mut().get_mut(id).data_mut()[k] = orig + GRAD_STEP;
            let up = probe.loss(ex).unwrap();
            probe.params_mut().get_mut(id).data_mut()[k] = orig - GRAD_STEP;
            let down = probe.loss(ex).unwrap();
            probe.params_mut().get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let a = analytic.get(id).data()[k];
            let scale = a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Both schemes, every pooling mode, one and two layers, lengths 1 to 4, E=H in {3, 5}.
pub fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut seed = 0;
    for scheme in [Scheme::Labeling, Scheme::Classification] {
        let poolings: &[Pooling] = match scheme {
            Scheme::Labeling => &[Pooling::Last],
            Scheme::Classification => &[Pooling::Last, Pooling::Max, Pooling::Mean],
        };
        for &pooling in poolings {
            for layers in [1, 2] {
                for dim in [3, 5] {
                    for len in [1, 2, 4] {
                        seed += 1;
                        let model = toy_model(toy_config(scheme, layers, dim, pooling), 9, 0.5, seed);
                        let mut r = rng(seed);
                        let ex = BlankExample {
                            ids: random_ids(&mut r, len, 9),
                            blank: r.random_range(0..len),
                        };
                        worst = worst.max(max_gradient_error(&model, &ex));
                        cases += 1;
                    }
                }
            }
        }
    }
    Outcome::new(
        worst <= GRAD_TOL,
        format!("{cases} model configurations, worst relative error {worst:.2e} (tolerance {GRAD_TOL:.0e})"),
    )
}

pub const FORWARD_TOL: f64 = 1e-10;

fn constant_inputs(tape: &mut Tape, xs: &[Vec<f64>]) -> Vec<clozegen::numcore::NodeId> {
    xs.iter().map(|x| tape.constant(Array::vector(x.clone())).unwrap()).collect()
}

/// Worst deviation of each primitive from its scalar reference over `n` random instances.
pub fn forward_oracles(n: usize) -> Outcome {
    let mut worst = [0.0f64; 7];
    for i in 0..n as u64 {
        let mut r = rng(1000 + i);
        let e = r.random_range(1..7);
        let h = r.random_range(1..7);
        let len = r.random_range(1..9);

        // lstm_cell, with and without an explicit previous state
        let mut store = ParameterStore::new();
        let cell = LstmParams::register(&mut store, "cell", e, h).unwrap();
        store.init_uniform(1.0, &mut r);
        let x = random_vec(&mut r, e, 2.0);
        let hp = random_vec(&mut r, h, 1.0);
        let cp = random_vec(&mut r, h, 2.0);
        let mut tape = Tape::new(&store);
        let xn = tape.constant(Array::vector(x.clone())).unwrap();
        let hn = tape.constant(Array::vector(hp.clone())).unwrap();
        let cn = tape.constant(Array::vector(cp.clone())).unwrap();
        let (h1, c1) = lstm_cell(&mut tape, &cell, xn, Some((hn, cn))).unwrap();
        let (h0, c0) = lstm_cell(&mut tape, &cell, xn, None).unwrap();
        let w = |name: &str| store.get(store.id(name).unwrap()).data().to_vec();
        let (rh, rc) = ref_lstm_cell(&w("cell.w_ih"), &w("cell.w_hh"), &w("cell.bias"), &x, &hp, &cp);
        let (zh, zc) = ref_lstm_cell(&w("cell.w_ih"), &w("cell.w_hh"), &w("cell.bias"), &x, &vec![0.0; h], &vec![0.0; h]);
        worst[0] = worst[0]
            .max(max_abs_diff(tape.value(h1).data(), &rh))
            .max(max_abs_diff(tape.value(c1).data(), &rc))
            .max(max_abs_diff(tape.value(h0).data(), &zh))
            .max(max_abs_diff(tape.value(c0).data(), &zc));

        // bilstm_encode
        let mut store = ParameterStore::new();
        let fw = LstmParams::register(&mut store, "enc.fw", e, h).unwrap();
        let bw = LstmParams::register(&mut store, "enc.bw", e, h).unwrap();
        store.init_uniform(1.0, &mut r);
        let xs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut r, e, 2.0)).collect();
        let mut tape = Tape::new(&store);
        let inputs = constant_inputs(&mut tape, &xs);
        let enc = bilstm_encode(&mut tape, &inputs, &fw, &bw).unwrap();
        let expected = ref_bilstm(&store, "enc", &xs, h);
        for (got, want) in enc.values(&tape).iter().zip(&expected) {
            worst[1] = worst[1].max(max_abs_diff(got, want));
        }

        // attend over arbitrary states and summary
        let d = 2 * h;
        let a = r.random_range(1..9);
        let mut store = ParameterStore::new();
        let attn = AttentionParams::register(&mut store, "attn", a, d).unwrap();
        store.init_uniform(1.0, &mut r);
        let states: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let summary = random_vec(&mut r, d, 1.0);
        let mut tape = Tape::new(&store);
        let nodes = constant_inputs(&mut tape, &states);
        let enc = EncodedSequence {
            states: nodes,
            forward: Vec::new(),
            backward: Vec::new(),
        };
        let s = tape.constant(Array::vector(summary.clone())).unwrap();
        let dist = attend(&mut tape, &enc, s, &attn).unwrap();
        let want = ref_attend(&w_of(&store, "attn.w"), &w_of(&store, "attn.v"), &states, &summary);
        worst[2] = worst[2].max(max_abs_diff(tape.value(dist).data(), &want));

        // losses on arbitrary probabilities
        let probs: Vec<f64> = (0..len).map(|_| r.random_range(0.001..0.999)).collect();
        let blank = r.random_range(0..len);
        let gold = one_hot(len, blank).unwrap();
        let got = label_loss(&LabelerOutput { probs: probs.clone() }, &gold).unwrap();
        worst[3] = worst[3].max((got - ref_bce(&probs, &gold)).abs());
        let logits = random_vec(&mut r, len, 4.0);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let dist: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
        let got = classify_loss(&ClassifierOutput { dist: dist.clone() }, blank).unwrap();
        worst[4] = worst[4].max((got - (-(dist[blank].ln()))).abs());

        // whole models
        let layers = r.random_range(1..3);
        let pooling = [Pooling::Last, Pooling::Max, Pooling::Mean][i as usize % 3];
        let ids = random_ids(&mut r, len, 12);
        let labeler = toy_model(toy_config(Scheme::Labeling, layers, e, pooling), 12, 0.7, i);
        let got = labeler.label_forward(&ids).unwrap().probs;
        worst[5] = worst[5].max(max_abs_diff(&got, &ref_label_probs(&labeler, &ids)));
        let classifier = toy_model(toy_config(Scheme::Classification, layers, e, pooling), 12, 0.7, i);
        let got = classifier.classify_forward(&ids).unwrap().dist;
        worst[6] = worst[6].max(max_abs_diff(&got, &ref_classify_dist(&classifier, &ids)));
    }
    let names = ["lstm_cell", "bilstm_encode", "attend", "label_loss", "classify_loss", "labeler", "classifier"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(
        worst.iter().all(|&w| w <= FORWARD_TOL),
        format!("{n} instances each, worst |diff|: {detail}"),
    )
}

fn w_of(store: &ParameterStore, name: &str) -> Vec<f64> {
    store.get(store.id(name).unwrap()).data().to_vec()
}

/// Random tiny models on random sentences; the oracle recounts from raw scores.
pub fn metric_oracles(sets: usize) -> Outcome {
    let mut mismatches = 0;
    let mut blank_predictions = 0;
    for i in 0..sets as u64 {
        let mut r = rng(50_000 + i);
        let n = r.random_range(1..7);
        let examples: Vec<BlankExample> = (0..n)
            .map(|_| {
                let len = r.random_range(1..8);
                BlankExample {
                    ids: random_ids(&mut r, len, 10),
                    blank: r.random_range(0..len),
                }
            })
            .collect();
        let threshold = [0.5, 0.3, 0.7][i as usize % 3];

        // Large weights push probabilities to both sides of the threshold.
        let labeler = toy_model(toy_config(Scheme::Labeling, 1, 2, Pooling::Last), 10, 3.0, i);
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for ex in &examples {
            let probs = labeler.label_forward(&ex.ids).unwrap().probs;
            for (pos, &p) in probs.iter().enumerate() {
                match (p > threshold, pos == ex.blank) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        blank_predictions += tp + fp;
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = tp as f64 / (tp + fn_) as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let m = eval_labeling(&labeler, &examples, threshold).unwrap();
        if m.precision != Some(precision) || m.recall != Some(recall) || m.f1 != Some(f1) {
            mismatches += 1;
        }

        let classifier = toy_model(toy_config(Scheme::Classification, 1, 2, Pooling::Last), 10, 3.0, i);
        let mut hits = 0;
        for ex in &examples {
            let dist = classifier.classify_forward(&ex.ids).unwrap().dist;
            let mut best = 0;
            for (pos, &p) in dist.iter().enumerate() {
                if p > dist[best] {
                    best = pos;
                }
            }
            hits += usize::from(best == ex.blank);
        }
        let m = eval_classification(&classifier, &examples).unwrap();
        if m.accuracy != Some(hits as f64 / n as f64) {
            mismatches += 1;
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{sets} random prediction sets ({blank_predictions} positive token predictions), {mismatches} mismatches"),
    )
}

/// Distribution shape, one-hot gold and multi-blank distinctness.
pub fn structural(sentences: usize, multi: usize) -> Outcome {
    let mut problems = Vec::new();
    let classifier = toy_model(toy_config(Scheme::Classification, 2, 4, Pooling::Mean), 20, 0.5, 3);
    let labeler = toy_model(toy_config(Scheme::Labeling, 2, 4, Pooling::Last), 20, 0.5, 4);
    let mut r = rng(77);
    let mut worst_sum: f64 = 0.0;
    let mut saw_single = false;
    for i in 0..sentences {
        let len = if i < 20 { 1 } else { r.random_range(1..16) };
        saw_single |= len == 1;
        let ids = random_ids(&mut r, len, 20);
        let dist = classifier.classify_forward(&ids).unwrap().dist;
        if dist.len() != len {
            problems.push(format!("classifier emitted {} outputs for length {len}", dist.len()));
        }
        worst_sum = worst_sum.max((dist.iter().sum::<f64>() - 1.0).abs());
        let blank = r.random_range(0..len);
        let gold = one_hot(len, blank).unwrap();
        if gold.len() != len || gold.iter().filter(|&&g| g == 1.0).count() != 1 || gold[blank] != 1.0 {
            problems.push(format!("gold vector {gold:?} is not one-hot at {blank}"));
        }
        let probs = labeler.label_forward(&ids).unwrap().probs;
        if probs.len() != len {
            problems.push(format!("labeler emitted {} outputs for length {len}", probs.len()));
        }
    }
    if worst_sum > 1e-6 {
        problems.push(format!("distribution sum off by {worst_sum:.1e}"));
    }
    if !saw_single {
        problems.push("no length-1 sentence sampled".into());
    }

    let mut passes = 0;
    for i in 0..multi {
        let len = r.random_range(1..12);
        let ids = random_ids(&mut r, len, 20);
        for model in [&classifier, &labeler] {
            for k in 1..=len {
                let trace = generate_multi_blank_traced(model, &ids, k).unwrap();
                let chosen: Vec<usize> = trace.iter().map(|p| p.chosen).collect();
                let distinct: HashSet<usize> = chosen.iter().copied().collect();
                let fresh = trace.iter().all(|p| p.input[p.chosen] != BLANK_ID);
                if chosen.len() != k || distinct.len() != k || chosen.iter().any(|&c| c >= len) || !fresh {
                    problems.push(format!("sentence {i}, k={k}: positions {chosen:?}"));
                }
                passes += k;
            }
        }
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{sentences} sentences (max |sum-1| {worst_sum:.1e}), {multi} sentences x all k ({passes} blank passes)"
            )
        } else {
            format!("{} violations, first: {}", problems.len(), problems[0])
        },
    )
}

fn small_corpus() -> (Vocabulary, Corpus, Corpus) {
    let corpus = generate_teacher_corpus(&TeacherConfig {
        count: 120,
        vocab_size: 40,
        ..TeacherConfig::default()
    })
    .unwrap();
    let (train, valid, _) = split_dataset(&corpus.examples, DEFAULT_RATIOS, 3).unwrap();
    let train = Corpus::new(None, train);
    let vocab = Vocabulary::build(&train, 1).unwrap();
    (vocab, train, Corpus::new(None, valid))
}

/// Two fixed-seed runs agree bit for bit; a saved checkpoint predicts bit for bit.
pub fn determinism_and_persistence() -> Outcome {
    let (vocab, train, valid) = small_corpus();
    let mut problems = Vec::new();
    let mut r = rng(5);
    let probes: Vec<Vec<u32>> = (0..100)
        .map(|_| {
            let len = r.random_range(1..16);
            random_ids(&mut r, len, vocab.len())
        })
        .collect();
    for scheme in [Scheme::Labeling, Scheme::Classification] {
        let cfg = TrainConfig {
            model: clozegen::models::ModelConfig {
                scheme,
                embed_dim: 6,
                hidden_dim: 6,
                ..Default::default()
            },
            epochs: Some(2),
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = fit(&cfg, &vocab, &train, &valid).unwrap();
        let b = fit(&cfg, &vocab, &train, &valid).unwrap();
        if a.history != b.history || a.best.to_bytes() != b.best.to_bytes() {
            problems.push(format!("{scheme}: repeated run differs"));
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        a.best.save(&path).unwrap();
        let before = a.best.model().unwrap();
        let after = Checkpoint::load(&path).unwrap().model().unwrap();
        for ids in &probes {
            let x = before.scores(ids).unwrap();
            let y = after.scores(ids).unwrap();
            if x.iter().map(|v| v.to_bits()).ne(y.iter().map(|v| v.to_bits())) {
                problems.push(format!("{scheme}: reloaded scores differ"));
                break;
            }
        }
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            "two schemes: repeated 2-epoch runs identical, 100 reloaded predictions bit-identical".into()
        } else {
            problems.join("; ")
        },
    )
}

pub const LOSS_TOL: f64 = 1e-9;

/// Zero-parameter labeler gives ln 2 per token; zero attention gives ln L.
pub fn loss_sanity() -> Outcome {
    let mut worst_label: f64 = 0.0;
    let mut worst_class: f64 = 0.0;
    let mut r = rng(9);
    let labeler = Model::zeros(toy_config(Scheme::Labeling, 2, 5, Pooling::Last), 30).unwrap();
    for pooling in [Pooling::Last, Pooling::Max, Pooling::Mean] {
        let mut classifier = toy_model(toy_config(Scheme::Classification, 2, 5, pooling), 30, 0.5, 2);
        for name in ["attn.w", "attn.v"] {
            let id = classifier.params().id(name).unwrap();
            classifier.params_mut().get_mut(id).fill(0.0);
        }
        for len in 1..=30 {
            let ids = random_ids(&mut r, len, 30);
            let ex = BlankExample {
                blank: r.random_range(0..len),
                ids,
            };
            worst_label = worst_label.max((labeler.loss(&ex).unwrap() - 2f64.ln()).abs());
            worst_class = worst_class.max((classifier.loss(&ex).unwrap() - (len as f64).ln()).abs());
        }
    }
    Outcome::new(
        worst_label <= LOSS_TOL && worst_class <= LOSS_TOL,
        format!("lengths 1..30: labeler |loss - ln 2| {worst_label:.1e}, classifier |loss - ln L| {worst_class:.1e}"),
    )
}

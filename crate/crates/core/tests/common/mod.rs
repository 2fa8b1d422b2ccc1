//! Shared fixtures and scalar reference implementations.
//!
//! The reference code below reads weights by parameter name and recomputes
//! everything with plain loops, sharing nothing with the tape.

#![allow(dead_code)]

pub mod checks;

use clozegen::models::{Model, ModelConfig, Scheme};
use clozegen::nn::Pooling;
use clozegen::numcore::ParameterStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toy_config(scheme: Scheme, layers: usize, dim: usize, pooling: Pooling) -> ModelConfig {
    ModelConfig {
        scheme,
        embed_dim: dim,
        hidden_dim: dim,
        layers,
        dropout: 0.0,
        pooling,
        attn_dim: None,
        init_scale: 0.08,
    }
}

/// A model with weights uniform in `±scale`, large enough to exercise saturation.
pub fn toy_model(cfg: ModelConfig, vocab: usize, scale: f64, seed: u64) -> Model {
    let mut r = rng(seed);
    let mut model = Model::init(cfg, vocab, &mut r).unwrap();
    model.params_mut().init_uniform(scale, &mut r);
    model
}

/// Ids drawn from the regular (non-reserved) range.
pub fn random_ids(r: &mut impl Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| r.random_range(3..vocab as u32)).collect()
}

pub fn random_vec(r: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-scale..scale)).collect()
}

fn weights<'a>(store: &'a ParameterStore, name: &str) -> &'a [f64] {
    store.get(store.id(name).unwrap_or_else(|| panic!("no parameter {name}"))).data()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    assert_eq!(w.len(), rows * cols);
    (0..rows)
        .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
        .collect()
}

/// One reference LSTM step with gate order i, f, g, o.
pub fn ref_lstm_cell(
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hs = h_prev.len();
    let a = matvec(w_ih, 4 * hs, x);
    let b = matvec(w_hh, 4 * hs, h_prev);
    let mut h = vec![0.0; hs];
    let mut c = vec![0.0; hs];
    for k in 0..hs {
        let z = |gate: usize| a[gate * hs + k] + b[gate * hs + k] + bias[gate * hs + k];
        let i = logistic(z(0));
        let f = logistic(z(1));
        let g = z(2).tanh();
        let o = logistic(z(3));
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * c[k].tanh();
    }
    (h, c)
}

/// Reference bidirectional pass; returns `[fw_t; bw_t]` per position.
pub fn ref_bilstm(store: &ParameterStore, prefix: &str, inputs: &[Vec<f64>], hidden: usize) -> Vec<Vec<f64>> {
    let run = |dir: &str, order: Vec<usize>| {
        let w_ih = weights(store, &format!("{prefix}.{dir}.w_ih"));
        let w_hh = weights(store, &format!("{prefix}.{dir}.w_hh"));
        let bias = weights(store, &format!("{prefix}.{dir}.bias"));
        let mut out = vec![Vec::new(); inputs.len()];
        let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
        for t in order {
            (h, c) = ref_lstm_cell(w_ih, w_hh, bias, &inputs[t], &h, &c);
            out[t] = h.clone();
        }
        out
    };
    let fw = run("fw", (0..inputs.len()).collect());
    let bw = run("bw", (0..inputs.len()).rev().collect());
    fw.into_iter().zip(bw).map(|(f, b)| [f, b].concat()).collect()
}

/// Reference encoder states of a model in inference mode.
pub fn ref_encode(model: &Model, ids: &[u32]) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let store = model.params();
    let emb = weights(store, "embedding");
    let e = cfg.embed_dim;
    let mut states: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| emb[id as usize * e..(id as usize + 1) * e].to_vec())
        .collect();
    for l in 0..cfg.layers {
        states = ref_bilstm(store, &format!("lstm.{l}"), &states, cfg.hidden_dim);
    }
    states
}

fn ref_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn ref_label_probs(model: &Model, ids: &[u32]) -> Vec<f64> {
    let store = model.params();
    let w = weights(store, "proj.w");
    let b = weights(store, "proj.b");
    ref_encode(model, ids)
        .iter()
        .map(|h| {
            let z = matvec(w, 2, h);
            ref_softmax(&[z[0] + b[0], z[1] + b[1]])[1]
        })
        .collect()
}

pub fn ref_pool(states: &[Vec<f64>], mode: Pooling) -> Vec<f64> {
    let d = states[0].len();
    match mode {
        Pooling::Last => states.last().unwrap().clone(),
        Pooling::Max => (0..d)
            .map(|k| states.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        Pooling::Mean => (0..d)
            .map(|k| states.iter().map(|s| s[k]).sum::<f64>() / states.len() as f64)
            .collect(),
    }
}

/// Reference `softmax_i(v · W [h_i; summary])`.
pub fn ref_attend(w: &[f64], v: &[f64], states: &[Vec<f64>], summary: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = states
        .iter()
        .map(|h| {
            let joined = [h.as_slice(), summary].concat();
            let mixed = matvec(w, v.len(), &joined);
            mixed.iter().zip(v).map(|(a, b)| a * b).sum()
        })
        .collect();
    ref_softmax(&scores)
}

pub fn ref_classify_dist(model: &Model, ids: &[u32]) -> Vec<f64> {
    let store = model.params();
    let states = ref_encode(model, ids);
    let summary = ref_pool(&states, model.config().pooling);
    ref_attend(weights(store, "attn.w"), weights(store, "attn.v"), &states, &summary)
}

/// `-(1/L) Σ [y ln p + (1-y) ln(1-p)]`.
pub fn ref_bce(probs: &[f64], gold: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(gold)
        .map(|(&p, &y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        .sum();
    -total / probs.len() as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

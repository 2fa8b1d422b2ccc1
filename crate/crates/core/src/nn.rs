//! Recurrent and attention building blocks recorded onto a [`Tape`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Array, NodeId, ParamId, ParameterStore, Tape};

/// Weights of one LSTM direction. Gate rows are stacked in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    /// Adds `{prefix}.w_ih` (4H×E), `{prefix}.w_hh` (4H×H) and `{prefix}.bias` (4H).
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        let g = 4 * hidden_size;
        Ok(LstmParams {
            w_ih: store.add(format!("{prefix}.w_ih"), Array::zeros(&[g, input_size]))?,
            w_hh: store.add(format!("{prefix}.w_hh"), Array::zeros(&[g, hidden_size]))?,
            bias: store.add(format!("{prefix}.bias"), Array::zeros(&[g]))?,
            input_size,
            hidden_size,
        })
    }

    /// Sets the forget-gate slice of the bias to 1.0.
    pub fn init_forget_bias(&self, store: &mut ParameterStore) {
        let h = self.hidden_size;
        store.get_mut(self.bias).data_mut()[h..2 * h].fill(1.0);
    }
}

/// Parameters of the content-based attention scorer `u_i = v · (W [h_i; summary])`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub w: ParamId,
    pub v: ParamId,
    pub attn_size: usize,
    pub state_size: usize,
}

impl AttentionParams {
    /// `state_size` is the width of one encoder state (2H); W is `attn_size × 2·state_size`.
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        attn_size: usize,
        state_size: usize,
    ) -> Result<Self> {
        if attn_size == 0 {
            return Err(Error::Invalid("attention size must be positive".into()));
        }
        Ok(AttentionParams {
            w: store.add(format!("{prefix}.w"), Array::zeros(&[attn_size, 2 * state_size]))?,
            v: store.add(format!("{prefix}.v"), Array::zeros(&[attn_size]))?,
            attn_size,
            state_size,
        })
    }
}

/// Affine map `W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register(store: &mut ParameterStore, prefix: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            w: store.add(format!("{prefix}.w"), Array::zeros(&[output, input]))?,
            b: store.add(format!("{prefix}.b"), Array::zeros(&[output]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let w = tape.param(self.w)?;
        let b = tape.param(self.b)?;
        let y = tape.matvec(w, x)?;
        tape.add(y, b)
    }
}

/// Per-token encoder states, each the concatenation `[forward; backward]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub states: Vec<NodeId>,
    pub forward: Vec<NodeId>,
    pub backward: Vec<NodeId>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn values(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|s| tape.value(*s).data().to_vec())
            .collect()
    }
}

/// One LSTM step. A `None` state means the zero initial state.
pub fn lstm_cell(
    tape: &mut Tape,
    p: &LstmParams,
    x: NodeId,
    state: Option<(NodeId, NodeId)>,
) -> Result<(NodeId, NodeId)> {
    let h = p.hidden_size;
    if tape.value(x).len() != p.input_size {
        return Err(Error::shape(
            "lstm_cell",
            format!("input of length {} for input size {}", tape.value(x).len(), p.input_size),
        ));
    }
    if let Some((hp, cp)) = state {
        if tape.value(hp).len() != h || tape.value(cp).len() != h {
            return Err(Error::shape("lstm_cell", "state length differs from hidden size"));
        }
    }
    let w_ih = tape.param(p.w_ih)?;
    let bias = tape.param(p.bias)?;
    let mut gates = tape.matvec(w_ih, x)?;
    gates = tape.add(gates, bias)?;
    if let Some((h_prev, _)) = state {
        let w_hh = tape.param(p.w_hh)?;
        let rec = tape.matvec(w_hh, h_prev)?;
        gates = tape.add(gates, rec)?;
    }
    let i = tape.slice(gates, 0, h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice(gates, h, h)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice(gates, 2 * h, h)?;
    let g = tape.tanh(g)?;
    let o = tape.slice(gates, 3 * h, h)?;
    let o = tape.sigmoid(o)?;

    let mut c = tape.mul(i, g)?;
    if let Some((_, c_prev)) = state {
        let kept = tape.mul(f, c_prev)?;
        c = tape.add(kept, c)?;
    }
    let squashed = tape.tanh(c)?;
    let h_new = tape.mul(o, squashed)?;
    Ok((h_new, c))
}

/// Runs `fw` left to right and `bw` right to left, both from zero state.
pub fn bilstm_encode(
    tape: &mut Tape,
    inputs: &[NodeId],
    fw: &LstmParams,
    bw: &LstmParams,
) -> Result<EncodedSequence> {
    if inputs.is_empty() {
        return Err(Error::Empty("bilstm_encode"));
    }
    let n = inputs.len();
    let mut forward = Vec::with_capacity(n);
    let mut state = None;
    for &x in inputs {
        let (h, c) = lstm_cell(tape, fw, x, state)?;
        forward.push(h);
        state = Some((h, c));
    }
    let mut backward = vec![forward[0]; n];
    let mut state = None;
    for (i, &x) in inputs.iter().enumerate().rev() {
        let (h, c) = lstm_cell(tape, bw, x, state)?;
        backward[i] = h;
        state = Some((h, c));
    }
    let states = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedSequence {
        states,
        forward,
        backward,
    })
}

/// How encoder states are summarised into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
    #[default]
    Last,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            "last" => Ok(Pooling::Last),
            _ => Err(Error::UnknownVariant {
                kind: "pooling mode",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
            Pooling::Last => "last",
        })
    }
}

pub fn pool(tape: &mut Tape, enc: &EncodedSequence, mode: Pooling) -> Result<NodeId> {
    if enc.is_empty() {
        return Err(Error::Empty("pool"));
    }
    match mode {
        Pooling::Max => tape.max_pool(&enc.states),
        Pooling::Mean => tape.mean_pool(&enc.states),
        Pooling::Last => Ok(*enc.states.last().expect("nonempty")),
    }
}

/// Unnormalised attention scores, one per encoder state.
pub fn attention_scores(
    tape: &mut Tape,
    enc: &EncodedSequence,
    summary: NodeId,
    p: &AttentionParams,
) -> Result<NodeId> {
    if enc.is_empty() {
        return Err(Error::Empty("attend"));
    }
    if tape.value(summary).len() != p.state_size {
        return Err(Error::shape(
            "attend",
            format!("summary of length {} for state size {}", tape.value(summary).len(), p.state_size),
        ));
    }
    let w = tape.param(p.w)?;
    let v = tape.param(p.v)?;
    let mut scores = Vec::with_capacity(enc.len());
    for &h in &enc.states {
        if tape.value(h).len() != p.state_size {
            return Err(Error::shape("attend", "encoder state width differs from attention"));
        }
        let joined = tape.concat(&[h, summary])?;
        let mixed = tape.matvec(w, joined)?;
        scores.push(tape.dot(v, mixed)?);
    }
    tape.concat(&scores)
}

/// Distribution over the positions of `enc`: `softmax(u)`.
pub fn attend(
    tape: &mut Tape,
    enc: &EncodedSequence,
    summary: NodeId,
    p: &AttentionParams,
) -> Result<NodeId> {
    let u = attention_scores(tape, enc, summary, p)?;
    tape.softmax(u)
}

fn check_drop(p_drop: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::Invalid(format!("drop probability {p_drop} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout mask: zeros with probability `p_drop`, `1/(1-p_drop)` otherwise.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p_drop: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_drop(p_drop)?;
    let keep = 1.0 / (1.0 - p_drop);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < p_drop { 0.0 } else { keep })
        .collect())
}

/// Dropout on a plain array. Identity unless `training` is set and `p_drop > 0`.
pub fn dropout<R: Rng + ?Sized>(x: &Array, p_drop: f64, training: bool, rng: &mut R) -> Result<Array> {
    check_drop(p_drop)?;
    if !training || p_drop == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), p_drop, rng)?;
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Array::new(x.shape().to_vec(), data)
}

/// Dropout recorded on the tape. `rng == None` means inference mode.
pub fn dropout_node(
    tape: &mut Tape,
    x: NodeId,
    p_drop: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<NodeId> {
    check_drop(p_drop)?;
    match rng {
        Some(rng) if p_drop > 0.0 => {
            let mask = dropout_mask(tape.value(x).len(), p_drop, rng)?;
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

//! Vanilla RNN: embedding lookup, `tanh` recurrence, softmax readout, and
//! full backpropagation through time.
//!
//! ```text
//! x_t = W_emb[token_t]
//! h_t = tanh(W_h h_{t-1} + W_x x_t + b_h)
//! y_t = softmax(W_s h_t + b_y)
//! ```
//!
//! When a sample carries one target per token the loss is the mean negative
//! log-likelihood over all steps; with a single target it applies at the final
//! step only (sequence classification).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::params::impl_param_set;
use crate::tensor::{softmax, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_emb: Mat,
    pub w_x: Mat,
    pub w_h: Mat,
    pub w_s: Mat,
    pub b_h: Vector,
    pub b_y: Vector,
    pub h0: Vector,
}

impl_param_set!(RnnParams {
    w_emb,
    w_x,
    w_h,
    w_s,
    b_h,
    b_y,
    h0
});

impl RnnParams {
    pub fn zeros(d: RnnDims) -> Self {
        RnnParams {
            w_emb: Mat::zeros(d.vocab, d.embed),
            w_x: Mat::zeros(d.hidden, d.embed),
            w_h: Mat::zeros(d.hidden, d.hidden),
            w_s: Mat::zeros(d.vocab, d.hidden),
            b_h: Vector::zeros(d.hidden),
            b_y: Vector::zeros(d.vocab),
            h0: Vector::zeros(d.hidden),
        }
    }

    /// Uniform fan-in scaled weights, zero biases and initial state.
    pub fn init<R: Rng + ?Sized>(d: RnnDims, rng: &mut R) -> Self {
        let in_scale = 1.0 / (d.embed as f64).sqrt();
        let h_scale = 1.0 / (d.hidden as f64).sqrt();
        RnnParams {
            w_emb: Mat::random(d.vocab, d.embed, 0.5, rng),
            w_x: Mat::random(d.hidden, d.embed, in_scale, rng),
            w_h: Mat::random(d.hidden, d.hidden, h_scale, rng),
            w_s: Mat::random(d.vocab, d.hidden, h_scale, rng),
            b_h: Vector::zeros(d.hidden),
            b_y: Vector::zeros(d.vocab),
            h0: Vector::zeros(d.hidden),
        }
    }

    pub fn dims(&self) -> RnnDims {
        RnnDims {
            vocab: self.w_emb.rows(),
            embed: self.w_emb.cols(),
            hidden: self.w_x.rows(),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dims();
        let ok = self.w_x.shape() == (d.hidden, d.embed)
            && self.w_h.shape() == (d.hidden, d.hidden)
            && self.w_s.shape() == (d.vocab, d.hidden)
            && self.b_h.len() == d.hidden
            && self.b_y.len() == d.vocab
            && self.h0.len() == d.hidden;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidShape(format!(
                "inconsistent RNN parameter shapes for {d:?}"
            )))
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub inputs: Vec<Vector>,
    pub hidden: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub loss: f64,
}

/// Weight of step `t`'s loss term, or `None` if that step is unsupervised.
fn step_target(s: &SequenceSample, t: usize) -> Option<(usize, f64)> {
    let len = s.len();
    if s.targets.len() == len {
        Some((s.targets[t], 1.0 / len as f64))
    } else if t + 1 == len {
        Some((s.targets[0], 1.0))
    } else {
        None
    }
}

pub(crate) fn check_sample(s: &SequenceSample, vocab: usize, classes: usize) -> Result<()> {
    if s.tokens.is_empty() {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    if s.targets.len() != 1 && s.targets.len() != s.tokens.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets for {} tokens",
            s.targets.len(),
            s.tokens.len()
        )));
    }
    if let Some(&t) = s.tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::InvalidInput(format!("token {t} outside vocabulary of {vocab}")));
    }
    if let Some(&t) = s.targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidInput(format!(
            "target {t} outside {classes} output classes"
        )));
    }
    Ok(())
}

pub fn rnn_forward(p: &RnnParams, s: &SequenceSample) -> Result<ForwardTrace> {
    p.check_shapes()?;
    let d = p.dims();
    check_sample(s, d.vocab, d.vocab)?;

    let len = s.len();
    let mut inputs = Vec::with_capacity(len);
    let mut hidden = Vec::with_capacity(len);
    let mut outputs = Vec::with_capacity(len);
    let mut loss = 0.0;
    let mut h_prev = p.h0.clone();
    for t in 0..len {
        let x = Vector::from(p.w_emb.row(s.tokens[t]).to_vec());
        let mut a = p.b_h.clone();
        p.w_h.mul_vec_acc(&h_prev, &mut a);
        p.w_x.mul_vec_acc(&x, &mut a);
        let h: Vector = a.iter().map(|v| v.tanh()).collect();
        let mut logits = p.b_y.clone();
        p.w_s.mul_vec_acc(&h, &mut logits);
        let y = softmax(&logits);
        if let Some((target, weight)) = step_target(s, t) {
            loss -= weight * y[target].ln();
        }
        inputs.push(x);
        h_prev = h.clone();
        hidden.push(h);
        outputs.push(y);
    }
    Ok(ForwardTrace {
        inputs,
        hidden,
        outputs,
        loss,
    })
}

pub fn rnn_backward(p: &RnnParams, s: &SequenceSample, tr: &ForwardTrace) -> Result<RnnParams> {
    let d = p.dims();
    let len = s.len();
    if tr.hidden.len() != len
        || tr.inputs.len() != len
        || tr.outputs.len() != len
        || tr.hidden.iter().any(|h| h.len() != d.hidden)
        || tr.outputs.iter().any(|y| y.len() != d.vocab)
    {
        return Err(Error::InvalidInput("trace does not match sample and parameters".into()));
    }

    let mut g = RnnParams::zeros(d);
    let mut dh_next = Vector::zeros(d.hidden);
    for t in (0..len).rev() {
        let h = &tr.hidden[t];
        let h_prev = if t == 0 { &p.h0 } else { &tr.hidden[t - 1] };
        let mut dh = dh_next;
        if let Some((target, weight)) = step_target(s, t) {
            let mut dlogits = tr.outputs[t].clone();
            dlogits[target] -= 1.0;
            for v in dlogits.iter_mut() {
                *v *= weight;
            }
            g.w_s.add_outer(&dlogits, h, 1.0);
            for (b, v) in g.b_y.iter_mut().zip(dlogits.iter()) {
                *b += v;
            }
            p.w_s.mul_t_vec_acc(&dlogits, &mut dh);
        }
        let da: Vector = dh.iter().zip(h.iter()).map(|(g, h)| g * (1.0 - h * h)).collect();
        g.w_h.add_outer(&da, h_prev, 1.0);
        g.w_x.add_outer(&da, &tr.inputs[t], 1.0);
        for (b, v) in g.b_h.iter_mut().zip(da.iter()) {
            *b += v;
        }
        p.w_x.mul_t_vec_acc(&da, g.w_emb.row_mut(s.tokens[t]));
        dh_next = p.w_h.mul_t_vec(&da);
    }
    g.h0 = dh_next;
    Ok(g)
}

/// Loss and gradient in one call.
pub fn rnn_loss_grad(p: &RnnParams, s: &SequenceSample) -> Result<(f64, RnnParams)> {
    let tr = rnn_forward(p, s)?;
    let g = rnn_backward(p, s, &tr)?;
    Ok((tr.loss, g))
}

/// Fraction of supervised steps whose argmax output misses the target.
pub fn rnn_error_rate(p: &RnnParams, s: &SequenceSample) -> Result<f64> {
    let tr = rnn_forward(p, s)?;
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (t, y) in tr.outputs.iter().enumerate() {
        if let Some((target, _)) = step_target(s, t) {
            total += 1;
            if argmax(y) != target {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / total as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

//! LSTM sequence classifier with a mean-pooled softmax head.
//!
//! ```text
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)        input gate
//! f_t = σ(W_f x_t + U_f h_{t-1} + b_f)        forget gate
//! c̃_t = tanh(W_c x_t + U_c h_{t-1} + b_c)     candidate cell
//! C_t = z_t ∗ c̃_t + f_t ∗ C_{t-1}
//! o_t = σ(W_o x_t + U_o h_{t-1} + b_o)        output gate
//! h_t = o_t ∗ tanh(C_t)
//! p   = softmax(W_cls · mean_t(h_t) + b_cls)
//! ```
//!
//! The importance base block for this model is `w_c`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::params::impl_param_set;
use crate::rnn::check_sample;
use crate::tensor::{sigmoid_scalar, softmax, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_emb: Mat,
    pub w_z: Mat,
    pub w_f: Mat,
    pub w_c: Mat,
    pub w_o: Mat,
    pub u_z: Mat,
    pub u_f: Mat,
    pub u_c: Mat,
    pub u_o: Mat,
    pub b_z: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
    pub w_cls: Mat,
    pub b_cls: Vector,
    pub h0: Vector,
    pub c0: Vector,
}

impl_param_set!(LstmParams {
    w_emb,
    w_z,
    w_f,
    w_c,
    w_o,
    u_z,
    u_f,
    u_c,
    u_o,
    b_z,
    b_f,
    b_c,
    b_o,
    w_cls,
    b_cls,
    h0,
    c0
});

/// Forget-gate bias at initialization.
pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmParams {
    pub fn zeros(d: LstmDims) -> Self {
        let wx = || Mat::zeros(d.hidden, d.embed);
        let uh = || Mat::zeros(d.hidden, d.hidden);
        let b = || Vector::zeros(d.hidden);
        LstmParams {
            w_emb: Mat::zeros(d.vocab, d.embed),
            w_z: wx(),
            w_f: wx(),
            w_c: wx(),
            w_o: wx(),
            u_z: uh(),
            u_f: uh(),
            u_c: uh(),
            u_o: uh(),
            b_z: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
            w_cls: Mat::zeros(d.classes, d.hidden),
            b_cls: Vector::zeros(d.classes),
            h0: b(),
            c0: b(),
        }
    }

    /// Uniform fan-in weights; biases zero except the forget gate.
    pub fn init<R: Rng + ?Sized>(d: LstmDims, rng: &mut R) -> Self {
        let xs = 1.0 / (d.embed as f64).sqrt();
        let hs = 1.0 / (d.hidden as f64).sqrt();
        let mut p = LstmParams::zeros(d);
        p.w_emb = Mat::random(d.vocab, d.embed, 0.5, rng);
        p.w_z = Mat::random(d.hidden, d.embed, xs, rng);
        p.w_f = Mat::random(d.hidden, d.embed, xs, rng);
        p.w_c = Mat::random(d.hidden, d.embed, xs, rng);
        p.w_o = Mat::random(d.hidden, d.embed, xs, rng);
        p.u_z = Mat::random(d.hidden, d.hidden, hs, rng);
        p.u_f = Mat::random(d.hidden, d.hidden, hs, rng);
        p.u_c = Mat::random(d.hidden, d.hidden, hs, rng);
        p.u_o = Mat::random(d.hidden, d.hidden, hs, rng);
        p.b_f = Vector::filled(d.hidden, FORGET_BIAS_INIT);
        p.w_cls = Mat::random(d.classes, d.hidden, hs, rng);
        p
    }

    pub fn dims(&self) -> LstmDims {
        LstmDims {
            vocab: self.w_emb.rows(),
            embed: self.w_emb.cols(),
            hidden: self.w_z.rows(),
            classes: self.w_cls.rows(),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dims();
        let wx = (d.hidden, d.embed);
        let uh = (d.hidden, d.hidden);
        let ok = [&self.w_z, &self.w_f, &self.w_c, &self.w_o]
            .iter()
            .all(|m| m.shape() == wx)
            && [&self.u_z, &self.u_f, &self.u_c, &self.u_o]
                .iter()
                .all(|m| m.shape() == uh)
            && [&self.b_z, &self.b_f, &self.b_c, &self.b_o, &self.h0, &self.c0]
                .iter()
                .all(|v| v.len() == d.hidden)
            && self.w_cls.cols() == d.hidden
            && self.b_cls.len() == d.classes;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidShape(format!(
                "inconsistent LSTM parameter shapes for {d:?}"
            )))
        }
    }
}

/// Per-step gate activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub x: Vector,
    pub z: Vector,
    pub f: Vector,
    pub c_tilde: Vector,
    pub c: Vector,
    pub o: Vector,
    pub h: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    pub steps: Vec<LstmStep>,
    pub pooled: Vector,
    pub probs: Vector,
    pub loss: f64,
}

fn label_of(s: &SequenceSample) -> Result<usize> {
    match s.targets.as_slice() {
        [label] => Ok(*label),
        _ => Err(Error::InvalidInput(
            "LSTM classifier needs exactly one label per sample".into(),
        )),
    }
}

fn gate(w: &Mat, u: &Mat, b: &Vector, x: &[f64], h: &[f64]) -> Vector {
    let mut a = b.clone();
    w.mul_vec_acc(x, &mut a);
    u.mul_vec_acc(h, &mut a);
    a
}

pub fn lstm_forward(p: &LstmParams, s: &SequenceSample) -> Result<LstmTrace> {
    p.check_shapes()?;
    let d = p.dims();
    check_sample(s, d.vocab, d.classes)?;
    let label = label_of(s)?;

    let mut steps: Vec<LstmStep> = Vec::with_capacity(s.len());
    let mut pooled = Vector::zeros(d.hidden);
    for &token in &s.tokens {
        let (h_prev, c_prev) = match steps.last() {
            Some(st) => (&st.h, &st.c),
            None => (&p.h0, &p.c0),
        };
        let x = Vector::from(p.w_emb.row(token).to_vec());
        let z: Vector = gate(&p.w_z, &p.u_z, &p.b_z, &x, h_prev)
            .iter()
            .map(|&a| sigmoid_scalar(a))
            .collect();
        let f: Vector = gate(&p.w_f, &p.u_f, &p.b_f, &x, h_prev)
            .iter()
            .map(|&a| sigmoid_scalar(a))
            .collect();
        let c_tilde: Vector = gate(&p.w_c, &p.u_c, &p.b_c, &x, h_prev)
            .iter()
            .map(|a| a.tanh())
            .collect();
        let o: Vector = gate(&p.w_o, &p.u_o, &p.b_o, &x, h_prev)
            .iter()
            .map(|&a| sigmoid_scalar(a))
            .collect();
        let c: Vector = (0..d.hidden).map(|j| z[j] * c_tilde[j] + f[j] * c_prev[j]).collect();
        let h: Vector = (0..d.hidden).map(|j| o[j] * c[j].tanh()).collect();
        debug_assert!(z
            .iter()
            .chain(f.iter())
            .chain(o.iter())
            .all(|g| (0.0..=1.0).contains(g)));
        debug_assert!(c_tilde.iter().all(|g| (-1.0..=1.0).contains(g)));
        for (acc, v) in pooled.iter_mut().zip(h.iter()) {
            *acc += v;
        }
        steps.push(LstmStep {
            x,
            z,
            f,
            c_tilde,
            c,
            o,
            h,
        });
    }
    let inv_len = 1.0 / s.len() as f64;
    for v in pooled.iter_mut() {
        *v *= inv_len;
    }
    let mut logits = p.b_cls.clone();
    p.w_cls.mul_vec_acc(&pooled, &mut logits);
    let probs = softmax(&logits);
    let loss = -probs[label].ln();
    Ok(LstmTrace {
        steps,
        pooled,
        probs,
        loss,
    })
}

pub fn lstm_backward(p: &LstmParams, s: &SequenceSample, tr: &LstmTrace) -> Result<LstmParams> {
    let d = p.dims();
    let label = label_of(s)?;
    if tr.steps.len() != s.len()
        || tr.probs.len() != d.classes
        || tr
            .steps
            .iter()
            .any(|st| st.h.len() != d.hidden || st.x.len() != d.embed)
    {
        return Err(Error::InvalidInput("trace does not match sample and parameters".into()));
    }

    let mut g = LstmParams::zeros(d);
    let mut dlogits = tr.probs.clone();
    dlogits[label] -= 1.0;
    g.w_cls.add_outer(&dlogits, &tr.pooled, 1.0);
    g.b_cls = dlogits.clone();
    let mut dpool = p.w_cls.mul_t_vec(&dlogits);
    let inv_len = 1.0 / s.len() as f64;
    for v in dpool.iter_mut() {
        *v *= inv_len;
    }

    let mut dh_next = Vector::zeros(d.hidden);
    let mut dc_next = Vector::zeros(d.hidden);
    for t in (0..s.len()).rev() {
        let st = &tr.steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (&p.h0, &p.c0)
        } else {
            (&tr.steps[t - 1].h, &tr.steps[t - 1].c)
        };
        let mut da_z = Vector::zeros(d.hidden);
        let mut da_f = Vector::zeros(d.hidden);
        let mut da_c = Vector::zeros(d.hidden);
        let mut da_o = Vector::zeros(d.hidden);
        let mut dc_prev = Vector::zeros(d.hidden);
        for j in 0..d.hidden {
            let dh = dpool[j] + dh_next[j];
            let tanh_c = st.c[j].tanh();
            let d_o = dh * tanh_c;
            let dc = dh * st.o[j] * (1.0 - tanh_c * tanh_c) + dc_next[j];
            let d_z = dc * st.c_tilde[j];
            let d_ct = dc * st.z[j];
            let d_f = dc * c_prev[j];
            dc_prev[j] = dc * st.f[j];
            da_z[j] = d_z * st.z[j] * (1.0 - st.z[j]);
            da_f[j] = d_f * st.f[j] * (1.0 - st.f[j]);
            da_c[j] = d_ct * (1.0 - st.c_tilde[j] * st.c_tilde[j]);
            da_o[j] = d_o * st.o[j] * (1.0 - st.o[j]);
        }

        let mut dh_prev = Vector::zeros(d.hidden);
        let dx = g.w_emb.row_mut(s.tokens[t]);
        for (da, w, u, gw, gu, gb) in [
            (&da_z, &p.w_z, &p.u_z, &mut g.w_z, &mut g.u_z, &mut g.b_z),
            (&da_f, &p.w_f, &p.u_f, &mut g.w_f, &mut g.u_f, &mut g.b_f),
            (&da_c, &p.w_c, &p.u_c, &mut g.w_c, &mut g.u_c, &mut g.b_c),
            (&da_o, &p.w_o, &p.u_o, &mut g.w_o, &mut g.u_o, &mut g.b_o),
        ] {
            gw.add_outer(da, &st.x, 1.0);
            gu.add_outer(da, h_prev, 1.0);
            for (b, v) in gb.iter_mut().zip(da.iter()) {
                *b += v;
            }
            w.mul_t_vec_acc(da, dx);
            u.mul_t_vec_acc(da, &mut dh_prev);
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    g.h0 = dh_next;
    g.c0 = dc_next;
    Ok(g)
}

pub fn lstm_loss_grad(p: &LstmParams, s: &SequenceSample) -> Result<(f64, LstmParams)> {
    let tr = lstm_forward(p, s)?;
    let g = lstm_backward(p, s, &tr)?;
    Ok((tr.loss, g))
}

pub fn lstm_error_rate(p: &LstmParams, s: &SequenceSample) -> Result<f64> {
    let tr = lstm_forward(p, s)?;
    let label = label_of(s)?;
    Ok(if crate::rnn::argmax(&tr.probs) == label {
        0.0
    } else {
        1.0
    })
}

//! RNN-RBM: a binary RBM whose visible and hidden biases are set per frame by
//! a `tanh` recurrence over the previous frames.
//!
//! ```text
//! b_v(t) = b_v + W_uv u_{t-1}
//! b_h(t) = b_h + W_uh u_{t-1}
//! u_t    = tanh(b_u + W_uu u_{t-1} + W_vu v_t)
//! ```
//!
//! Training uses CD-k. The negative-phase samples are treated as constants,
//! which makes the CD update the exact gradient of the free-energy gap
//! `mean_t [F_t(v_t) - F_t(ṽ_t)]` with `ṽ_t` frozen; [`cd_surrogate`] exposes
//! that quantity so the conditioning path can be checked numerically.
//!
//! Bernoulli draws use one `gen::<f64>()` per unit, hidden units first in index
//! order, then visible units; `unit = u < p`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::params::impl_param_set;
use crate::tensor::{sigmoid_scalar, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnRbmDims {
    pub visible: usize,
    pub hidden: usize,
    pub rnn_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnRbmParams {
    pub w: Mat,
    pub b_v: Vector,
    pub b_h: Vector,
    pub w_uv: Mat,
    pub w_uh: Mat,
    pub w_uu: Mat,
    pub w_vu: Mat,
    pub b_u: Vector,
    pub u0: Vector,
}

impl_param_set!(RnnRbmParams {
    w,
    b_v,
    b_h,
    w_uv,
    w_uh,
    w_uu,
    w_vu,
    b_u,
    u0
});

impl RnnRbmParams {
    pub fn zeros(d: RnnRbmDims) -> Self {
        RnnRbmParams {
            w: Mat::zeros(d.visible, d.hidden),
            b_v: Vector::zeros(d.visible),
            b_h: Vector::zeros(d.hidden),
            w_uv: Mat::zeros(d.visible, d.rnn_hidden),
            w_uh: Mat::zeros(d.hidden, d.rnn_hidden),
            w_uu: Mat::zeros(d.rnn_hidden, d.rnn_hidden),
            w_vu: Mat::zeros(d.rnn_hidden, d.visible),
            b_u: Vector::zeros(d.rnn_hidden),
            u0: Vector::zeros(d.rnn_hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(d: RnnRbmDims, rng: &mut R) -> Self {
        let mut p = RnnRbmParams::zeros(d);
        p.w = Mat::random(d.visible, d.hidden, 0.05, rng);
        let su = 1.0 / (d.rnn_hidden as f64).sqrt();
        p.w_uv = Mat::random(d.visible, d.rnn_hidden, 0.1 * su, rng);
        p.w_uh = Mat::random(d.hidden, d.rnn_hidden, 0.1 * su, rng);
        p.w_uu = Mat::random(d.rnn_hidden, d.rnn_hidden, su, rng);
        p.w_vu = Mat::random(d.rnn_hidden, d.visible, 1.0 / (d.visible as f64).sqrt(), rng);
        p
    }

    pub fn dims(&self) -> RnnRbmDims {
        RnnRbmDims {
            visible: self.w.rows(),
            hidden: self.w.cols(),
            rnn_hidden: self.w_uu.rows(),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dims();
        let ok = self.b_v.len() == d.visible
            && self.b_h.len() == d.hidden
            && self.w_uv.shape() == (d.visible, d.rnn_hidden)
            && self.w_uh.shape() == (d.hidden, d.rnn_hidden)
            && self.w_uu.shape() == (d.rnn_hidden, d.rnn_hidden)
            && self.w_vu.shape() == (d.rnn_hidden, d.visible)
            && self.b_u.len() == d.rnn_hidden
            && self.u0.len() == d.rnn_hidden;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidShape(format!(
                "inconsistent RNN-RBM parameter shapes for {d:?}"
            )))
        }
    }

    /// Whether `W_uv` and `W_uh` are zero, reducing the model to a static RBM.
    pub fn is_decoupled(&self) -> bool {
        [&self.w_uv, &self.w_uh]
            .iter()
            .all(|m| m.as_slice().iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsStep {
    pub h_sample: Vector,
    pub v_prob: Vector,
    pub v_sample: Vector,
}

pub(crate) fn bernoulli<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Vector {
    probs
        .iter()
        .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect()
}

/// Hidden activation probabilities `σ(Wᵀv + b_h)`.
pub fn hidden_probs(w: &Mat, bh: &[f64], v: &[f64]) -> Vector {
    let mut a = Vector::from(bh.to_vec());
    w.mul_t_vec_acc(v, &mut a);
    a.iter().map(|&x| sigmoid_scalar(x)).collect()
}

/// Visible activation probabilities `σ(W h + b_v)`.
pub fn visible_probs(w: &Mat, bv: &[f64], h: &[f64]) -> Vector {
    let mut a = Vector::from(bv.to_vec());
    w.mul_vec_acc(h, &mut a);
    a.iter().map(|&x| sigmoid_scalar(x)).collect()
}

/// One block-Gibbs sweep `v → h → v'`.
pub fn rbm_gibbs_step<R: Rng + ?Sized>(w: &Mat, bv: &[f64], bh: &[f64], v: &[f64], rng: &mut R) -> GibbsStep {
    let h_sample = bernoulli(&hidden_probs(w, bh, v), rng);
    let v_prob = visible_probs(w, bv, &h_sample);
    let v_sample = bernoulli(&v_prob, rng);
    GibbsStep {
        h_sample,
        v_prob,
        v_sample,
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// RBM free energy `F(v) = -b_vᵀv - Σ_j softplus(b_h + Wᵀv)_j`.
pub fn free_energy(w: &Mat, bv: &[f64], bh: &[f64], v: &[f64]) -> f64 {
    let mut a = Vector::from(bh.to_vec());
    w.mul_t_vec_acc(v, &mut a);
    -crate::tensor::dot(bv, v) - a.iter().map(|&x| softplus(x)).sum::<f64>()
}

const PROB_FLOOR: f64 = 1e-15;

fn binary_cross_entropy(v: &[f64], p: &[f64]) -> f64 {
    let sum: f64 = v
        .iter()
        .zip(p)
        .map(|(&vi, &pi)| {
            let pi = pi.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            -(vi * pi.ln() + (1.0 - vi) * (1.0 - pi).ln())
        })
        .sum();
    sum / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnRbmTrace {
    pub bv: Vec<Vector>,
    pub bh: Vec<Vector>,
    /// `u_0 ..= u_T`; entry `t` conditions frame `t`.
    pub states: Vec<Vector>,
    /// Chain-end samples `ṽ_t` (negative phase).
    pub negatives: Vec<Vector>,
    /// k-step reconstruction probabilities.
    pub recon: Vec<Vector>,
    /// Mean frame-wise binary cross-entropy of the reconstruction.
    pub cost: f64,
}

fn check_frames(p: &RnnRbmParams, s: &FrameSequence) -> Result<()> {
    p.check_shapes()?;
    if s.frames.is_empty() {
        return Err(Error::InvalidInput("empty frame sequence".into()));
    }
    let n_v = p.dims().visible;
    if let Some(f) = s.frames.iter().find(|f| f.len() != n_v) {
        return Err(Error::InvalidInput(format!(
            "frame width {} does not match {n_v} visible units",
            f.len()
        )));
    }
    Ok(())
}

/// Conditioning biases and recurrent states only; no sampling.
fn condition(p: &RnnRbmParams, s: &FrameSequence) -> (Vec<Vector>, Vec<Vector>, Vec<Vector>) {
    let mut bv = Vec::with_capacity(s.len());
    let mut bh = Vec::with_capacity(s.len());
    let mut states = Vec::with_capacity(s.len() + 1);
    states.push(p.u0.clone());
    for v in &s.frames {
        let u_prev = states.last().expect("u0 present");
        let mut bvt = p.b_v.clone();
        p.w_uv.mul_vec_acc(u_prev, &mut bvt);
        let mut bht = p.b_h.clone();
        p.w_uh.mul_vec_acc(u_prev, &mut bht);
        let mut a = p.b_u.clone();
        p.w_uu.mul_vec_acc(u_prev, &mut a);
        p.w_vu.mul_vec_acc(v, &mut a);
        let u: Vector = a.iter().map(|x| x.tanh()).collect();
        bv.push(bvt);
        bh.push(bht);
        states.push(u);
    }
    (bv, bh, states)
}

pub fn rnnrbm_forward<R: Rng + ?Sized>(
    p: &RnnRbmParams,
    s: &FrameSequence,
    k: usize,
    rng: &mut R,
) -> Result<RnnRbmTrace> {
    if k == 0 {
        return Err(Error::Config("CD step count must be at least 1".into()));
    }
    check_frames(p, s)?;
    let (bv, bh, states) = condition(p, s);
    let mut negatives = Vec::with_capacity(s.len());
    let mut recon = Vec::with_capacity(s.len());
    let mut cost = 0.0;
    for (t, v) in s.frames.iter().enumerate() {
        let mut chain = v.clone();
        let mut prob = Vector::zeros(v.len());
        for _ in 0..k {
            let step = rbm_gibbs_step(&p.w, &bv[t], &bh[t], &chain, rng);
            chain = step.v_sample;
            prob = step.v_prob;
        }
        cost += binary_cross_entropy(v, &prob);
        negatives.push(chain);
        recon.push(prob);
    }
    cost /= s.len() as f64;
    Ok(RnnRbmTrace {
        bv,
        bh,
        states,
        negatives,
        recon,
        cost,
    })
}

/// `mean_t [F_t(v_t) - F_t(ṽ_t)]` with the given frozen negatives.
pub fn cd_surrogate(p: &RnnRbmParams, s: &FrameSequence, negatives: &[Vector]) -> Result<f64> {
    check_frames(p, s)?;
    if negatives.len() != s.len() {
        return Err(Error::InvalidInput("one negative sample per frame required".into()));
    }
    let (bv, bh, _) = condition(p, s);
    let total: f64 = s
        .frames
        .iter()
        .enumerate()
        .map(|(t, v)| free_energy(&p.w, &bv[t], &bh[t], v) - free_energy(&p.w, &bv[t], &bh[t], &negatives[t]))
        .sum();
    Ok(total / s.len() as f64)
}

/// Exact gradient of [`cd_surrogate`] at the trace's negatives.
pub fn cd_surrogate_gradient(p: &RnnRbmParams, s: &FrameSequence, tr: &RnnRbmTrace) -> Result<RnnRbmParams> {
    let d = p.dims();
    let len = s.len();
    if tr.negatives.len() != len || tr.states.len() != len + 1 || tr.bh.len() != len || tr.bv.len() != len {
        return Err(Error::InvalidInput("trace does not match frame sequence".into()));
    }
    let scale = 1.0 / len as f64;
    let mut g = RnnRbmParams::zeros(d);
    let mut du: Vec<Vector> = vec![Vector::zeros(d.rnn_hidden); len + 1];
    for t in (0..len).rev() {
        let u_prev = &tr.states[t];
        let u_next = &tr.states[t + 1];
        let da: Vector = du[t + 1]
            .iter()
            .zip(u_next.iter())
            .map(|(g, u)| g * (1.0 - u * u))
            .collect();
        for (b, v) in g.b_u.iter_mut().zip(da.iter()) {
            *b += v;
        }
        g.w_uu.add_outer(&da, u_prev, 1.0);
        g.w_vu.add_outer(&da, &s.frames[t], 1.0);
        let mut du_prev = p.w_uu.mul_t_vec(&da);

        let v = &s.frames[t];
        let neg = &tr.negatives[t];
        let pos_h = hidden_probs(&p.w, &tr.bh[t], v);
        let neg_h = hidden_probs(&p.w, &tr.bh[t], neg);
        g.w.add_outer(v, &pos_h, -scale);
        g.w.add_outer(neg, &neg_h, scale);
        let dbv: Vector = v.iter().zip(neg.iter()).map(|(a, b)| -(a - b) * scale).collect();
        let dbh: Vector = pos_h.iter().zip(neg_h.iter()).map(|(a, b)| -(a - b) * scale).collect();
        for (b, x) in g.b_v.iter_mut().zip(dbv.iter()) {
            *b += x;
        }
        for (b, x) in g.b_h.iter_mut().zip(dbh.iter()) {
            *b += x;
        }
        g.w_uv.add_outer(&dbv, u_prev, 1.0);
        g.w_uh.add_outer(&dbh, u_prev, 1.0);
        p.w_uv.mul_t_vec_acc(&dbv, &mut du_prev);
        p.w_uh.mul_t_vec_acc(&dbh, &mut du_prev);
        for (acc, x) in du[t].iter_mut().zip(du_prev.iter()) {
            *acc += x;
        }
    }
    g.u0 = du[0].clone();
    Ok(g)
}

/// CD-k gradient for all parameters, with the trace that produced it.
pub fn rnnrbm_cd_gradient<R: Rng + ?Sized>(
    p: &RnnRbmParams,
    s: &FrameSequence,
    k: usize,
    rng: &mut R,
) -> Result<(RnnRbmTrace, RnnRbmParams)> {
    let tr = rnnrbm_forward(p, s, k, rng)?;
    let g = cd_surrogate_gradient(p, s, &tr)?;
    Ok((tr, g))
}

/// Fraction of visible units whose thresholded reconstruction is wrong.
pub fn reconstruction_error(s: &FrameSequence, tr: &RnnRbmTrace) -> f64 {
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (v, p) in s.frames.iter().zip(&tr.recon) {
        for (&vi, &pi) in v.iter().zip(p.iter()) {
            total += 1;
            if (pi > 0.5) != (vi > 0.5) {
                wrong += 1;
            }
        }
    }
    wrong as f64 / total.max(1) as f64
}

#![allow(dead_code)]

use gradmine::data::{FrameSequence, SequenceSample};
use gradmine::lstm::{lstm_forward, lstm_loss_grad, LstmDims, LstmParams};
use gradmine::rnn::{rnn_forward, rnn_loss_grad, RnnDims, RnnParams};
use gradmine::rnnrbm::{cd_surrogate, cd_surrogate_gradient, rnnrbm_forward, RnnRbmDims, RnnRbmParams};
use gradmine::tensor::{Mat, Vector};
use gradmine::{seed, ParamSet};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL: f64 = 1e-4;
pub const FD_ABS: f64 = 1e-7;

/// Add `delta` to the `k`-th flattened parameter.
pub fn nudge<P: ParamSet>(p: &mut P, k: usize, delta: f64) {
    let mut offset = 0;
    p.visit_mut(&mut |_, vals| {
        if (offset..offset + vals.len()).contains(&k) {
            vals[k - offset] += delta;
        }
        offset += vals.len();
    });
}

/// First failing coordinate as `(index, analytic, numeric)`.
pub type FdFailure = (usize, f64, f64);

/// First coordinate violating the mixed tolerance; `None` when all pass.
pub fn fd_check<P: ParamSet>(p: &P, grad: &P, loss: impl Fn(&P) -> f64) -> Option<FdFailure> {
    let analytic = grad.flatten();
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = p.clone();
        nudge(&mut plus, k, FD_STEP);
        let mut minus = p.clone();
        nudge(&mut minus, k, -FD_STEP);
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        if (a - numeric).abs() > FD_ABS + FD_REL * a.abs().max(numeric.abs()) {
            return Some((k, a, numeric));
        }
    }
    None
}

pub fn random_tokens(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}

pub const RNN_DIMS: RnnDims = RnnDims {
    vocab: 6,
    embed: 4,
    hidden: 5,
};

pub const LSTM_DIMS: LstmDims = LstmDims {
    vocab: 6,
    embed: 4,
    hidden: 5,
    classes: 3,
};

pub const RNNRBM_DIMS: RnnRbmDims = RnnRbmDims {
    visible: 4,
    hidden: 5,
    rnn_hidden: 5,
};

fn randomize<P: ParamSet>(p: &mut P, scale: f64, rng: &mut impl Rng) {
    p.visit_mut(&mut |_, vals| vals.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale)));
}

pub fn rnn_instance(seed: u64) -> (RnnParams, SequenceSample) {
    let mut rng = seed::rng_from(seed);
    let mut p = RnnParams::zeros(RNN_DIMS);
    randomize(&mut p, 0.8, &mut rng);
    let len = rng.gen_range(1..=4);
    let tokens = random_tokens(&mut rng, len, RNN_DIMS.vocab);
    let s = if seed.is_multiple_of(2) {
        SequenceSample::labelled(tokens, random_tokens(&mut rng, len, RNN_DIMS.vocab))
    } else {
        SequenceSample::classification(tokens, rng.gen_range(0..RNN_DIMS.vocab))
    };
    (p, s)
}

pub fn rnn_fd(seed: u64) -> Option<FdFailure> {
    let (p, s) = rnn_instance(seed);
    let (_, g) = rnn_loss_grad(&p, &s).unwrap();
    fd_check(&p, &g, |q| rnn_forward(q, &s).unwrap().loss)
}

pub fn lstm_instance(seed: u64) -> (LstmParams, SequenceSample) {
    let mut rng = seed::rng_from(seed);
    let mut p = LstmParams::zeros(LSTM_DIMS);
    randomize(&mut p, 0.8, &mut rng);
    let len = rng.gen_range(1..=4);
    let tokens = random_tokens(&mut rng, len, LSTM_DIMS.vocab);
    (
        p,
        SequenceSample::classification(tokens, rng.gen_range(0..LSTM_DIMS.classes)),
    )
}

pub fn lstm_fd(seed: u64) -> Option<FdFailure> {
    let (p, s) = lstm_instance(seed);
    let (_, g) = lstm_loss_grad(&p, &s).unwrap();
    fd_check(&p, &g, |q| lstm_forward(q, &s).unwrap().loss)
}

pub fn random_frames(rng: &mut impl Rng, len: usize, width: usize) -> FrameSequence {
    FrameSequence::new(
        (0..len)
            .map(|_| (0..width).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect())
            .collect(),
    )
}

/// Checks the surrogate gradient with the chain-end negatives held fixed, so
/// the conditioning path (`W_uv`, `W_uh`, `W_uu`, `W_vu`, `b_u`, `u_0`) is
/// differentiated exactly.
pub fn rnnrbm_fd(seed: u64) -> Option<FdFailure> {
    let mut rng = seed::rng_from(seed);
    let mut p = RnnRbmParams::zeros(RNNRBM_DIMS);
    randomize(&mut p, 0.8, &mut rng);
    let len = rng.gen_range(1..=4);
    let s = random_frames(&mut rng, len, RNNRBM_DIMS.visible);
    let tr = rnnrbm_forward(&p, &s, 1, &mut rng).unwrap();
    let g = cd_surrogate_gradient(&p, &s, &tr).unwrap();
    fd_check(&p, &g, |q| cd_surrogate(q, &s, &tr.negatives).unwrap())
}

/// Static binary RBM written with plain loops: one CD-1 step per frame on the
/// shared RNG stream, returning the mean negative log-likelihood gradient for `W`.
pub fn static_rbm_cd1_w(w: &Mat, bv: &[f64], bh: &[f64], frames: &[Vector], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let (nv, nh) = w.shape();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let h_given = |v: &[f64]| -> Vec<f64> {
        (0..nh)
            .map(|j| sig(bh[j] + (0..nv).map(|i| w.get(i, j) * v[i]).sum::<f64>()))
            .collect()
    };
    let mut grad = vec![vec![0.0; nh]; nv];
    let t = frames.len() as f64;
    for v in frames {
        let ph = h_given(v);
        let h: Vec<f64> = ph
            .iter()
            .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        let pv: Vec<f64> = (0..nv)
            .map(|i| sig(bv[i] + (0..nh).map(|j| w.get(i, j) * h[j]).sum::<f64>()))
            .collect();
        let neg: Vec<f64> = pv
            .iter()
            .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        let nh_prob = h_given(&neg);
        for i in 0..nv {
            for j in 0..nh {
                grad[i][j] += (neg[i] * nh_prob[j] - v[i] * ph[j]) / t;
            }
        }
    }
    grad
}

//! A uniform interface over the three model families so mining, training, and
//! analysis can be written once.

use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FrameSequence, SequenceSample};
use crate::error::{Error, Result};
use crate::lstm::{lstm_error_rate, lstm_forward, lstm_loss_grad, LstmDims, LstmParams};
use crate::params::ParamSet;
use crate::rnn::{check_sample, rnn_error_rate, rnn_forward, rnn_loss_grad, RnnDims, RnnParams};
use crate::rnnrbm::{reconstruction_error, rnnrbm_cd_gradient, rnnrbm_forward, RnnRbmDims, RnnRbmParams};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rnn,
    Lstm,
    RnnRbm,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(ModelKind::Rnn),
            "lstm" => Ok(ModelKind::Lstm),
            "rnnrbm" => Ok(ModelKind::RnnRbm),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Lstm => "lstm",
            ModelKind::RnnRbm => "rnnrbm",
        })
    }
}

pub trait Model: Send + Sync {
    type Params: ParamSet + Debug + Serialize + DeserializeOwned;
    type Sample: Send + Sync;

    fn kind(&self) -> ModelKind;

    /// Parameter block whose norm serves as the importance proxy.
    fn default_base(&self) -> &'static str;

    fn init(&self, rng: &mut Rng) -> Self::Params;

    /// The samples of `ds` this model can train on.
    fn samples<'a>(&self, ds: &'a Dataset) -> Result<&'a [Self::Sample]>;

    fn validate(&self, s: &Self::Sample) -> Result<()>;

    /// The RNG is only consumed by stochastic models.
    fn loss_and_grad(&self, p: &Self::Params, s: &Self::Sample, rng: &mut Rng) -> Result<(f64, Self::Params)>;

    fn loss(&self, p: &Self::Params, s: &Self::Sample, rng: &mut Rng) -> Result<f64>;

    fn error_rate(&self, p: &Self::Params, s: &Self::Sample, rng: &mut Rng) -> Result<f64>;
}

fn wrong_kind(model: ModelKind, ds: &Dataset) -> Error {
    Error::InvalidInput(format!("a {model} model cannot train on a {} dataset", ds.kind()))
}

/// Vanilla tanh RNN; output layer spans the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rnn {
    pub dims: RnnDims,
}

impl Model for Rnn {
    type Params = RnnParams;
    type Sample = SequenceSample;

    fn kind(&self) -> ModelKind {
        ModelKind::Rnn
    }

    fn default_base(&self) -> &'static str {
        "w_x"
    }

    fn init(&self, rng: &mut Rng) -> RnnParams {
        RnnParams::init(self.dims, rng)
    }

    fn samples<'a>(&self, ds: &'a Dataset) -> Result<&'a [SequenceSample]> {
        match ds {
            Dataset::SeqClass(s) | Dataset::SeqLabel(s) => Ok(s),
            _ => Err(wrong_kind(self.kind(), ds)),
        }
    }

    fn validate(&self, s: &SequenceSample) -> Result<()> {
        check_sample(s, self.dims.vocab, self.dims.vocab)
    }

    fn loss_and_grad(&self, p: &RnnParams, s: &SequenceSample, _rng: &mut Rng) -> Result<(f64, RnnParams)> {
        rnn_loss_grad(p, s)
    }

    fn loss(&self, p: &RnnParams, s: &SequenceSample, _rng: &mut Rng) -> Result<f64> {
        Ok(rnn_forward(p, s)?.loss)
    }

    fn error_rate(&self, p: &RnnParams, s: &SequenceSample, _rng: &mut Rng) -> Result<f64> {
        rnn_error_rate(p, s)
    }
}

/// LSTM classifier with a mean-pooled softmax head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub dims: LstmDims,
}

impl Model for Lstm {
    type Params = LstmParams;
    type Sample = SequenceSample;

    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
    }

    fn default_base(&self) -> &'static str {
        "w_c"
    }

    fn init(&self, rng: &mut Rng) -> LstmParams {
        LstmParams::init(self.dims, rng)
    }

    fn samples<'a>(&self, ds: &'a Dataset) -> Result<&'a [SequenceSample]> {
        match ds {
            Dataset::SeqClass(s) => Ok(s),
            _ => Err(wrong_kind(self.kind(), ds)),
        }
    }

    fn validate(&self, s: &SequenceSample) -> Result<()> {
        check_sample(s, self.dims.vocab, self.dims.classes)?;
        if s.targets.len() != 1 {
            return Err(Error::InvalidInput("LSTM samples need exactly one label".into()));
        }
        Ok(())
    }

    fn loss_and_grad(&self, p: &LstmParams, s: &SequenceSample, _rng: &mut Rng) -> Result<(f64, LstmParams)> {
        lstm_loss_grad(p, s)
    }

    fn loss(&self, p: &LstmParams, s: &SequenceSample, _rng: &mut Rng) -> Result<f64> {
        Ok(lstm_forward(p, s)?.loss)
    }

    fn error_rate(&self, p: &LstmParams, s: &SequenceSample, _rng: &mut Rng) -> Result<f64> {
        lstm_error_rate(p, s)
    }
}

/// RNN-RBM trained with CD-`k`. Loss is the reconstruction cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnnRbm {
    pub dims: RnnRbmDims,
    pub k: usize,
}

impl Model for RnnRbm {
    type Params = RnnRbmParams;
    type Sample = FrameSequence;

    fn kind(&self) -> ModelKind {
        ModelKind::RnnRbm
    }

    fn default_base(&self) -> &'static str {
        "w"
    }

    fn init(&self, rng: &mut Rng) -> RnnRbmParams {
        RnnRbmParams::init(self.dims, rng)
    }

    fn samples<'a>(&self, ds: &'a Dataset) -> Result<&'a [FrameSequence]> {
        match ds {
            Dataset::PianoRoll { seqs, .. } => Ok(seqs),
            _ => Err(wrong_kind(self.kind(), ds)),
        }
    }

    fn validate(&self, s: &FrameSequence) -> Result<()> {
        if s.is_empty() {
            return Err(Error::InvalidInput("empty frame sequence".into()));
        }
        if s.frames.iter().any(|f| f.len() != self.dims.visible) {
            return Err(Error::InvalidInput(format!(
                "frame width does not match {} visible units",
                self.dims.visible
            )));
        }
        Ok(())
    }

    fn loss_and_grad(&self, p: &RnnRbmParams, s: &FrameSequence, rng: &mut Rng) -> Result<(f64, RnnRbmParams)> {
        let (tr, g) = rnnrbm_cd_gradient(p, s, self.k, rng)?;
        Ok((tr.cost, g))
    }

    fn loss(&self, p: &RnnRbmParams, s: &FrameSequence, rng: &mut Rng) -> Result<f64> {
        Ok(rnnrbm_forward(p, s, self.k, rng)?.cost)
    }

    fn error_rate(&self, p: &RnnRbmParams, s: &FrameSequence, rng: &mut Rng) -> Result<f64> {
        let tr = rnnrbm_forward(p, s, self.k, rng)?;
        Ok(reconstruction_error(s, &tr))
    }
}

/// Check every sample, reporting the first bad index.
pub fn validate_all<M: Model>(model: &M, samples: &[M::Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        model
            .validate(s)
            .map_err(|e| Error::InvalidInput(format!("sample {i}: {e}")))?;
    }
    Ok(())
}

//! Importance-sampled SGD for recurrent networks.
//!
//! Each training sample gets a sampling probability proportional to how far a
//! privately trained copy of the model had to move to fit it. Training then
//! draws samples from that distribution and rescales each step so the
//! gradient estimate stays unbiased.
//!
//! Models: a vanilla RNN ([`rnn`]), an LSTM classifier ([`lstm`]), and an
//! RNN-RBM for binary frame sequences ([`rnnrbm`]), all behind [`Model`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod fim;
pub mod lstm;
pub mod model;
pub mod optimizer;
pub mod parallel;
pub mod params;
pub mod rnn;
pub mod rnnrbm;
pub mod sampling;
pub mod seed;
pub mod tensor;

pub use data::{Dataset, DatasetKind, FrameSequence, SequenceSample};
pub use error::{Error, Result};
pub use fim::{mine_importance, FimConfig, ImportanceTable};
pub use model::{Lstm, Model, ModelKind, Rnn, RnnRbm};
pub use optimizer::{train, MetricsLog, SamplerKind, TrainConfig};
pub use params::ParamSet;
pub use sampling::{build_alias, SamplingDistribution};
pub use tensor::{Mat, NormKind, Vector};

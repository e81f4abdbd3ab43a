//! Plain and importance-sampled SGD, the epoch loop, and per-epoch metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::gradient_variance;
use crate::error::{Error, Result};
use crate::fim::ImportanceTable;
use crate::model::{validate_all, Model};
use crate::parallel::map_indexed;
use crate::params::ParamSet;
use crate::sampling::{build_alias, SamplingDistribution};
use crate::seed::{self, streams};

/// RNN-RBM `(frames per chunk, step size)` settings.
pub const RNNRBM_PRESETS: [(usize, f64); 2] = [(50, 0.3), (100, 0.003)];

/// `w ← w − λg`.
pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, lr: f64) {
    params.add_scaled(-lr, grads);
}

/// `w ← w − λ/(N p_i) · g`, with the factor `1/(N p_i)` capped at `c_max`.
/// Returns the step size used.
///
/// When `N p_i` is within a few ulps of 1 the factor is taken as exactly 1,
/// so a uniform table reproduces [`sgd_step`] bit for bit.
pub fn is_sgd_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    lr: f64,
    n: usize,
    p_i: f64,
    c_max: Option<f64>,
) -> Result<f64> {
    if !(p_i > 0.0) || !p_i.is_finite() {
        return Err(Error::InvalidProbability(p_i));
    }
    let np = n as f64 * p_i;
    let mut factor = if (np - 1.0).abs() <= 4.0 * f64::EPSILON {
        1.0
    } else {
        1.0 / np
    };
    if let Some(c) = c_max {
        factor = factor.min(c);
    }
    let step = lr * factor;
    params.add_scaled(-step, grads);
    Ok(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    Importance,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "importance" | "is" => Ok(SamplerKind::Importance),
            other => Err(Error::Config(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub c_max: Option<f64>,
    /// Compute the exact gradient variance at each evaluation.
    pub track_grad_var: bool,
    /// Workers for evaluation passes; 0 uses the global pool.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 10,
            sampler: SamplerKind::Uniform,
            seed: 0,
            eval_every: 1,
            c_max: None,
            track_grad_var: false,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if let Some(c) = self.c_max {
            if !(c > 0.0) {
                return Err(Error::Config(format!("c_max must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub error_rate: f64,
    pub grad_var: Option<f64>,
    pub wall_ms: f64,
}

impl EpochRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.split == other.split
            && self.loss.to_bits() == other.loss.to_bits()
            && self.error_rate.to_bits() == other.error_rate.to_bits()
            && self.grad_var.map(f64::to_bits) == other.grad_var.map(f64::to_bits)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<EpochRecord>,
}

pub const CSV_HEADER: &str = "epoch,split,loss,error_rate,grad_var,wall_ms";

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl MetricsLog {
    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a EpochRecord> + 'a {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// First epoch whose `split` loss is at or below `target`.
    pub fn epochs_to_target(&self, split: &str, target: f64) -> Option<usize> {
        self.split(split).find(|r| r.loss <= target).map(|r| r.epoch)
    }

    pub fn loss_at(&self, split: &str, epoch: usize) -> Option<f64> {
        self.split(split).find(|r| r.epoch == epoch).map(|r| r.loss)
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &MetricsLog) -> bool {
        self.seed == other.seed
            && self.config_hash == other.config_hash
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_outcome(b))
    }

    pub fn csv_row(r: &EpochRecord) -> String {
        format!(
            "{},{},{},{},{},{}",
            r.epoch,
            r.split,
            fmt_f64(r.loss),
            fmt_f64(r.error_rate),
            r.grad_var.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.wall_ms)
        )
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", Self::csv_row(r))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parse records back from CSV; run metadata is not stored there.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<EpochRecord>> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        match header {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{CSV_HEADER}`"),
                })
            }
        }
        let mut out = Vec::new();
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: lineno, message };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
            out.push(EpochRecord {
                epoch: cols[0].parse().map_err(|e| err(format!("epoch: {e}")))?,
                split: cols[1].to_string(),
                loss: num(cols[2])?,
                error_rate: num(cols[3])?,
                grad_var: if cols[4].is_empty() { None } else { Some(num(cols[4])?) },
                wall_ms: num(cols[5])?,
            });
        }
        Ok(out)
    }

    pub fn load_csv(path: &Path) -> Result<Vec<EpochRecord>> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

/// Mean loss and error rate over `samples`, evaluated in parallel.
pub fn evaluate<M: Model>(
    model: &M,
    params: &M::Params,
    samples: &[M::Sample],
    seed: u64,
    workers: usize,
) -> Result<(f64, f64)> {
    let per = map_indexed(samples.len(), workers, |i| -> Result<(f64, f64)> {
        let mut rng = seed::stream_rng(seed, i as u64);
        let loss = model.loss(params, &samples[i], &mut rng)?;
        let err = model.error_rate(params, &samples[i], &mut rng)?;
        Ok((loss, err))
    });
    let n = samples.len() as f64;
    let (mut loss, mut err) = (0.0, 0.0);
    for r in per {
        let (l, e) = r?;
        loss += l;
        err += e;
    }
    Ok((loss / n, err / n))
}

/// Per-sample flattened gradients at `params`.
pub fn all_gradients<M: Model>(
    model: &M,
    params: &M::Params,
    samples: &[M::Sample],
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    map_indexed(samples.len(), workers, |i| {
        let mut rng = seed::stream_rng(seed, i as u64);
        model
            .loss_and_grad(params, &samples[i], &mut rng)
            .map(|(_, g)| g.flatten())
    })
    .into_iter()
    .collect()
}

/// Run `cfg.epochs × N` sampled single-sample steps.
///
/// The whole index sequence is drawn up front from the sampler stream; the
/// model stream feeds stochastic models only. Uniform runs go through the
/// same alias sampler with equal weights.
pub fn train<M: Model>(
    model: &M,
    samples: &[M::Sample],
    params0: &M::Params,
    cfg: &TrainConfig,
    importance: Option<&ImportanceTable>,
) -> Result<(M::Params, MetricsLog)> {
    cfg.validate()?;
    validate_all(model, samples)?;
    let n = samples.len();
    let dist: SamplingDistribution = match cfg.sampler {
        SamplerKind::Uniform => SamplingDistribution::uniform(n)?,
        SamplerKind::Importance => {
            let t = importance.ok_or_else(|| Error::Config("importance sampling needs an importance table".into()))?;
            if t.len() != n {
                return Err(Error::Config(format!(
                    "importance table has {} entries but the dataset has {n} samples",
                    t.len()
                )));
            }
            build_alias(&t.probs)?
        }
    };

    let mut log = MetricsLog {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        records: Vec::new(),
    };
    let mut params = params0.clone();
    if cfg.epochs == 0 {
        return Ok((params, log));
    }

    let mut sampler_rng = seed::stream_rng(cfg.seed, streams::SAMPLER);
    let mut model_rng = seed::stream_rng(cfg.seed, streams::MODEL);
    let eval_seed = seed::derive(cfg.seed, streams::EVAL);
    let order = dist.generate_sequence(cfg.epochs * n, &mut sampler_rng);

    for (e, chunk) in order.chunks(n).enumerate() {
        let epoch = e + 1;
        let start = Instant::now();
        for (step, &i) in chunk.iter().enumerate() {
            let (loss, g) = model.loss_and_grad(&params, &samples[i], &mut model_rng)?;
            if !loss.is_finite() || !g.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("sample {i}: loss {loss}, finite gradient: {}", g.is_finite()),
                });
            }
            match cfg.sampler {
                SamplerKind::Uniform => sgd_step(&mut params, &g, cfg.lr),
                SamplerKind::Importance => {
                    is_sgd_step(&mut params, &g, cfg.lr, n, dist.probs()[i], cfg.c_max)?;
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: n,
                detail: "parameters became non-finite".into(),
            });
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let epoch_seed = seed::derive(eval_seed, epoch as u64);
            let (loss, error_rate) = evaluate(model, &params, samples, epoch_seed, cfg.workers)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: n,
                    detail: format!("evaluation loss {loss}"),
                });
            }
            let grad_var = if cfg.track_grad_var {
                let grads = all_gradients(model, &params, samples, epoch_seed, cfg.workers)?;
                Some(gradient_variance(&grads, dist.probs())?)
            } else {
                None
            };
            log.records.push(EpochRecord {
                epoch,
                split: "train".into(),
                loss,
                error_rate,
                grad_var,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok((params, log))
}

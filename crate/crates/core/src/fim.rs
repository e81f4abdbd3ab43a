//! Per-sample importance mining.
//!
//! Every sample trains its own copy of the model from a shared initialization
//! with plain SGD until its loss reaches `epsilon`. The norm of the final base
//! block is the sample's importance proxy, and the sampling distribution is
//! proportional to it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_all, Model};
use crate::parallel::map_indexed;
use crate::params::{unknown_block, ParamSet};
use crate::sampling::{build_alias, SamplingDistribution};
use crate::seed;
use crate::tensor::{l2_norm, matrix_norm, NormKind};

/// Default whole-dataset training target; the mining tolerance sits two
/// orders of magnitude below it.
pub const DEFAULT_TARGET_LOSS: f64 = 0.3;
pub const DEFAULT_EPSILON: f64 = 1e-2 * DEFAULT_TARGET_LOSS;
pub const DEFAULT_T_MAX: usize = 5_000;
pub const DEFAULT_LR_FIM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimConfig {
    pub epsilon: f64,
    pub lr_fim: f64,
    pub t_max: usize,
    pub seed: u64,
    /// `None` picks the model's default base block.
    pub base_selector: Option<String>,
    pub norm_kind: NormKind,
    /// 0 uses the global pool.
    pub workers: usize,
    /// Keep per-step gradient sums and losses for each sample.
    pub record_steps: bool,
}

impl Default for FimConfig {
    fn default() -> Self {
        FimConfig {
            epsilon: DEFAULT_EPSILON,
            lr_fim: DEFAULT_LR_FIM,
            t_max: DEFAULT_T_MAX,
            seed: 0,
            base_selector: None,
            norm_kind: NormKind::Frobenius,
            workers: 0,
            record_steps: false,
        }
    }
}

impl FimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lr_fim > 0.0) || !self.lr_fim.is_finite() {
            return Err(Error::Config(format!("lr_fim must be positive, got {}", self.lr_fim)));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub model: String,
    pub base_selector: String,
    pub epsilon: f64,
    pub seed: u64,
    pub norm_kind: NormKind,
    pub norms: Vec<f64>,
    pub probs: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl ImportanceTable {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn non_converged(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    /// Whether every sample has the same probability.
    pub fn is_uniform(&self) -> bool {
        self.probs.iter().all(|&p| p == self.probs[0])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.probs.len();
        if n == 0 {
            return Err(Error::Validation("importance table is empty".into()));
        }
        if self.norms.len() != n || self.iterations.len() != n || self.converged.len() != n {
            return Err(Error::Validation("importance table columns differ in length".into()));
        }
        if let Some(p) = self.probs.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::Validation(format!("probability {p} is not strictly positive")));
        }
        if self.norms.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Validation("norms must be finite and non-negative".into()));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn distribution(&self) -> Result<SamplingDistribution> {
        build_alias(&self.probs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: ImportanceTable = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        t.validate()?;
        Ok(t)
    }
}

/// Running sums over the base block during one private run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    /// `Σ_t λ g(t)`, elementwise.
    pub step_sum: Vec<f64>,
    /// `Σ_t λ ‖g(t)‖`.
    pub norm_sum: f64,
    /// Loss before each step, plus the final loss.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PrivateRun<P> {
    pub params: P,
    pub iterations: usize,
    pub converged: bool,
    pub record: Option<StepRecord>,
}

/// Train one private copy of `init` on a single sample.
pub fn train_private<M: Model>(
    model: &M,
    init: &M::Params,
    sample: &M::Sample,
    base: &str,
    cfg: &FimConfig,
    rng: &mut seed::Rng,
) -> Result<PrivateRun<M::Params>> {
    let mut p = init.clone();
    let mut record = cfg.record_steps.then(|| StepRecord {
        step_sum: vec![0.0; init.block(base).map_or(0, |b| b.len())],
        ..Default::default()
    });
    let mut steps = 0;
    loop {
        let (loss, g) = model.loss_and_grad(&p, sample, rng)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                step: steps,
                detail: format!("private loss became {loss}"),
            });
        }
        if let Some(r) = record.as_mut() {
            r.losses.push(loss);
        }
        if loss <= cfg.epsilon {
            return Ok(PrivateRun {
                params: p,
                iterations: steps,
                converged: true,
                record,
            });
        }
        if steps >= cfg.t_max {
            return Ok(PrivateRun {
                params: p,
                iterations: steps,
                converged: false,
                record,
            });
        }
        if let Some(r) = record.as_mut() {
            let gb = g.block(base).ok_or_else(|| unknown_block(&g, base))?;
            for (s, gi) in r.step_sum.iter_mut().zip(&gb) {
                *s += cfg.lr_fim * gi;
            }
            r.norm_sum += cfg.lr_fim * l2_norm(&gb);
        }
        p.add_scaled(-cfg.lr_fim, &g);
        steps += 1;
    }
}

fn base_norm<P: ParamSet>(p: &P, base: &str, kind: NormKind) -> Result<f64> {
    match kind {
        NormKind::Frobenius => p.block(base).map(|b| l2_norm(&b)),
        NormKind::Spectral => p.block_matrix(base).map(|m| matrix_norm(&m, kind)),
    }
    .ok_or_else(|| unknown_block(p, base))
}

/// `p_i = (n_i + κ·mean) / Σ_j (n_j + κ·mean)`.
pub fn importance_probs(norms: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if norms.is_empty() {
        return Err(Error::DegenerateDistribution("no norms".into()));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Config(format!("smoothing must be non-negative, got {kappa}")));
    }
    if norms.iter().any(|n| !(*n >= 0.0) || !n.is_finite()) {
        return Err(Error::InvalidDistribution(
            "norms must be finite and non-negative".into(),
        ));
    }
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let shifted: Vec<f64> = norms.iter().map(|n| n + kappa * mean).collect();
    let total: f64 = shifted.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDistribution("all importance norms are zero".into()));
    }
    // Summation error would otherwise leave equal weights a few ulps off 1/N.
    let probs: Vec<f64> = if shifted.iter().all(|&s| s == shifted[0]) {
        vec![1.0 / norms.len() as f64; norms.len()]
    } else {
        shifted.iter().map(|s| s / total).collect()
    };
    if let Some(i) = probs.iter().position(|&p| p <= 0.0) {
        return Err(Error::DegenerateDistribution(format!(
            "sample {i} has zero importance; use smoothing to keep it reachable"
        )));
    }
    Ok(probs)
}

pub fn build_distribution(norms: &[f64], kappa: f64) -> Result<SamplingDistribution> {
    build_alias(&importance_probs(norms, kappa)?)
}

/// Mine importance for every sample. Results do not depend on `cfg.workers`.
pub fn mine_importance<M: Model>(
    model: &M,
    samples: &[M::Sample],
    init: &M::Params,
    cfg: &FimConfig,
) -> Result<ImportanceTable> {
    mine_with_runs(model, samples, init, cfg).map(|(t, _)| t)
}

/// Like [`mine_importance`], also returning each private run.
pub fn mine_with_runs<M: Model>(
    model: &M,
    samples: &[M::Sample],
    init: &M::Params,
    cfg: &FimConfig,
) -> Result<(ImportanceTable, Vec<PrivateRun<M::Params>>)> {
    cfg.validate()?;
    validate_all(model, samples)?;
    let base = cfg.base_selector.as_deref().unwrap_or(model.default_base());
    if init.block(base).is_none() {
        return Err(unknown_block(init, base));
    }

    let runs = map_indexed(samples.len(), cfg.workers, |i| {
        let mut rng = seed::stream_rng(cfg.seed, i as u64);
        train_private(model, init, &samples[i], base, cfg, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let norms = runs
        .iter()
        .map(|r| base_norm(&r.params, base, cfg.norm_kind))
        .collect::<Result<Vec<_>>>()?;
    let table = ImportanceTable {
        model: model.kind().to_string(),
        base_selector: base.to_string(),
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        norm_kind: cfg.norm_kind,
        probs: importance_probs(&norms, 0.0)?,
        norms,
        iterations: runs.iter().map(|r| r.iterations).collect(),
        converged: runs.iter().map(|r| r.converged).collect(),
    };
    Ok((table, runs))
}

/// Check `W_i = W_0 − Σ λg` within 1e-9 and `‖W_i‖ ≤ ‖W_0‖ + Σ λ‖g‖`.
pub fn history_sum_check(final_base: &[f64], init_base: &[f64], record: Option<&StepRecord>) -> Result<bool> {
    let r = record.ok_or_else(|| Error::Unsupported("mining ran without step recording".into()))?;
    if final_base.len() != init_base.len() || r.step_sum.len() != init_base.len() {
        return Err(Error::InvalidShape("base block lengths differ".into()));
    }
    let identity = final_base
        .iter()
        .zip(init_base)
        .zip(&r.step_sum)
        .all(|((w, w0), s)| (w - (w0 - s)).abs() <= 1e-9);
    let rhs = l2_norm(init_base) + r.norm_sum;
    // Rounding in the two norm evaluations only.
    let triangle = l2_norm(final_base) <= rhs * (1.0 + 4.0 * f64::EPSILON);
    Ok(identity && triangle)
}

/// Mean pairwise Frobenius distance between one block across private runs.
pub fn block_spread<P: ParamSet>(runs: &[PrivateRun<P>], block: &str) -> Result<f64> {
    let blocks = runs
        .iter()
        .map(|r| r.params.block(block).ok_or_else(|| unknown_block(&r.params, block)))
        .collect::<Result<Vec<_>>>()?;
    let n = blocks.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d: Vec<f64> = blocks[i].iter().zip(&blocks[j]).map(|(a, b)| a - b).collect();
            total += l2_norm(&d);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SequenceSample;
    use crate::model::Rnn;
    use crate::rnn::RnnDims;
    use proptest::prelude::*;

    fn rnn() -> Rnn {
        Rnn {
            dims: RnnDims {
                vocab: 6,
                embed: 3,
                hidden: 4,
            },
        }
    }

    fn samples() -> Vec<SequenceSample> {
        vec![
            SequenceSample::classification(vec![0, 2, 3], 1),
            SequenceSample::classification(vec![1, 4, 5, 5, 2], 0),
            SequenceSample::classification(vec![3], 2),
        ]
    }

    #[test]
    fn distribution_arithmetic() {
        let p = importance_probs(&[1.0, 2.0, 3.0], 0.0).unwrap();
        let want = [1.0 / 6.0, 1.0 / 3.0, 0.5];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn heavy_smoothing_tends_to_uniform() {
        let p = importance_probs(&[0.1, 5.0, 2.0, 9.0], 1e6).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-5));
    }

    #[test]
    fn zero_norms_need_smoothing() {
        assert!(matches!(
            importance_probs(&[0.0, 0.0, 1.0], 0.0),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(importance_probs(&[0.0, 0.0, 1.0], 0.1)
            .unwrap()
            .iter()
            .all(|&p| p > 0.0));
        assert!(importance_probs(&[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FimConfig {
            epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FimConfig {
            t_max: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FimConfig {
            lr_fim: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FimConfig::default().validate().is_ok());
    }

    #[test]
    fn identical_samples_share_importance() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(1));
        let s = vec![SequenceSample::classification(vec![0, 1, 2], 3); 4];
        let t = mine_importance(
            &m,
            &s,
            &init,
            &FimConfig {
                t_max: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(t.norms.iter().all(|&n| n == t.norms[0]));
        assert!(t.probs.iter().all(|&p| p == 0.25));
    }

    #[test]
    fn loose_epsilon_gives_the_init_norm() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(2));
        let cfg = FimConfig {
            epsilon: 1e9,
            ..Default::default()
        };
        let t = mine_importance(&m, &samples(), &init, &cfg).unwrap();
        let w0 = l2_norm(init.w_x.as_slice());
        assert!(t.norms.iter().all(|&n| n == w0));
        assert!(t.iterations.iter().all(|&i| i == 0));
        assert!(t.is_uniform());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(2));
        assert!(matches!(
            mine_importance(&m, &[], &init, &FimConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn unknown_selector_is_a_config_error() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(2));
        let cfg = FimConfig {
            base_selector: Some("w_q".into()),
            ..Default::default()
        };
        assert!(matches!(
            mine_importance(&m, &samples(), &init, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn t_max_caps_and_flags() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(3));
        let cfg = FimConfig {
            epsilon: 1e-12,
            t_max: 7,
            ..Default::default()
        };
        let t = mine_importance(&m, &samples(), &init, &cfg).unwrap();
        assert_eq!(t.iterations, vec![7, 7, 7]);
        assert_eq!(t.non_converged(), 3);
        t.validate().unwrap();
    }

    #[test]
    fn history_checks() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(4));
        let w0 = init.w_x.as_slice().to_vec();
        assert!(matches!(history_sum_check(&w0, &w0, None), Err(Error::Unsupported(_))));

        for t_max in [1, 100] {
            let cfg = FimConfig {
                epsilon: 1e-12,
                t_max,
                record_steps: true,
                ..Default::default()
            };
            let (_, runs) = mine_with_runs(&m, &samples(), &init, &cfg).unwrap();
            for r in &runs {
                let wf = r.params.w_x.as_slice();
                assert!(history_sum_check(wf, &w0, r.record.as_ref()).unwrap());
                if t_max == 1 {
                    let rec = r.record.as_ref().unwrap();
                    for ((w, a), s) in wf.iter().zip(&w0).zip(&rec.step_sum) {
                        assert_eq!(*w, a - s);
                    }
                }
            }
        }

        let zero_steps = StepRecord {
            step_sum: vec![0.0; w0.len()],
            ..Default::default()
        };
        assert!(history_sum_check(&w0, &w0, Some(&zero_steps)).unwrap());
    }

    #[test]
    fn private_loss_mostly_decreases() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(5));
        let cfg = FimConfig {
            t_max: 200,
            record_steps: true,
            ..Default::default()
        };
        let (_, runs) = mine_with_runs(&m, &samples(), &init, &cfg).unwrap();
        for r in runs {
            let l = r.record.unwrap().losses;
            let steps = l.len() - 1;
            let down = l.windows(2).filter(|w| w[1] <= w[0]).count();
            assert!(steps == 0 || down as f64 >= 0.9 * steps as f64, "{down}/{steps}");
        }
    }

    #[test]
    fn table_validation_and_round_trip() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(6));
        let t = mine_importance(
            &m,
            &samples(),
            &init,
            &FimConfig {
                t_max: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imp.json");
        t.save(&path).unwrap();
        assert_eq!(ImportanceTable::load(&path).unwrap(), t);

        let mut bad = t.clone();
        bad.probs[0] += 1e-6;
        bad.save(&path).unwrap();
        assert!(matches!(ImportanceTable::load(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn spread_of_identical_runs_is_zero() {
        let m = rnn();
        let init = m.init(&mut seed::rng_from(7));
        let s = vec![SequenceSample::classification(vec![2, 1], 0); 3];
        let (_, runs) = mine_with_runs(
            &m,
            &s,
            &init,
            &FimConfig {
                t_max: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(block_spread(&runs, "w_emb").unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn scaling_norms_keeps_probs(norms in prop::collection::vec(0.01f64..100.0, 1..40), e in -20i32..20) {
            let c = 2f64.powi(e);
            let scaled: Vec<f64> = norms.iter().map(|n| n * c).collect();
            prop_assert_eq!(importance_probs(&norms, 0.0).unwrap(), importance_probs(&scaled, 0.0).unwrap());
        }

        #[test]
        fn probs_form_a_distribution(norms in prop::collection::vec(0.0f64..100.0, 1..60), kappa in 0.0f64..5.0) {
            if let Ok(p) = importance_probs(&norms, kappa) {
                let s: f64 = p.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&x| x > 0.0));
            }
        }
    }
}

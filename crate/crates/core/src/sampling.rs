//! Weighted index sampling with Vose alias tables.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    probs: Vec<f64>,
    alias_prob: Vec<f64>,
    alias_idx: Vec<usize>,
}

impl SamplingDistribution {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        build_alias(&vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alias_prob(&self) -> &[f64] {
        &self.alias_prob
    }

    pub fn alias_idx(&self) -> &[usize] {
        &self.alias_idx
    }

    /// Probability mass of each index implied by the tables.
    pub fn reconstructed(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut mass: Vec<f64> = self.alias_prob.iter().map(|a| a / n).collect();
        for (j, (&a, &k)) in self.alias_prob.iter().zip(&self.alias_idx).enumerate() {
            if k != j {
                mass[k] += (1.0 - a) / n;
            }
        }
        mass
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.gen_range(0..self.len());
        if rng.gen::<f64>() < self.alias_prob[i] {
            i
        } else {
            self.alias_idx[i]
        }
    }

    /// `len` i.i.d. draws, materialized up front.
    pub fn generate_sequence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        (0..len).map(|_| self.draw(rng)).collect()
    }
}

/// Build alias tables. Inputs are renormalized, so they only need to sum to 1
/// within 1e-9.
pub fn build_alias(probs: &[f64]) -> Result<SamplingDistribution> {
    let n = probs.len();
    if n == 0 {
        return Err(Error::InvalidDistribution("empty distribution".into()));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "entry {bad} is not a non-negative number"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidDistribution("probabilities sum to zero".into()));
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}, not 1")));
    }

    // Equal weights get full cells directly; the generic pass could leave
    // cells at 1 - ulp and change the draw stream.
    if probs.iter().all(|&p| p == probs[0]) {
        return Ok(SamplingDistribution {
            probs: probs.to_vec(),
            alias_prob: vec![1.0; n],
            alias_idx: (0..n).collect(),
        });
    }

    let normalized: Vec<f64> = probs.iter().map(|p| p / sum).collect();
    let mut scaled: Vec<f64> = normalized.iter().map(|p| p * n as f64).collect();
    let mut alias_prob = vec![0.0; n];
    let mut alias_idx: Vec<usize> = (0..n).collect();
    let mut small: VecDeque<usize> = VecDeque::new();
    let mut large: VecDeque<usize> = VecDeque::new();
    for (i, &s) in scaled.iter().enumerate() {
        if s < 1.0 {
            small.push_back(i);
        } else {
            large.push_back(i);
        }
    }
    while let (Some(&l), Some(&g)) = (small.front(), large.front()) {
        small.pop_front();
        large.pop_front();
        alias_prob[l] = scaled[l];
        alias_idx[l] = g;
        scaled[g] = (scaled[g] + scaled[l]) - 1.0;
        if scaled[g] < 1.0 {
            small.push_back(g);
        } else {
            large.push_back(g);
        }
    }
    for i in large.into_iter().chain(small) {
        alias_prob[i] = 1.0;
        alias_idx[i] = i;
    }
    Ok(SamplingDistribution {
        probs: normalized,
        alias_prob,
        alias_idx,
    })
}

//! Group-relative and intra-trajectory advantages and the surrogate losses
//! built from them. Matrices are row-major `G × n`: one row per sampled
//! trajectory, one column per anchor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::RewardVector;

pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// The objective adds the divergence unweighted.
pub const DEFAULT_KL_COEF: f64 = 1.0;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvantageError {
    #[error("group of {0} trajectories is too small; need at least 2")]
    GroupTooSmall(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("reward at trajectory {g}, anchor {i} is {value}, not 0 or 1")]
    NonBinary { g: usize, i: usize, value: u8 },
    #[error("invalid coefficient {name} = {value}")]
    InvalidCoefficient { name: &'static str, value: f64 },
}

/// Binary rewards for one group of trajectories sampled for the same prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRewards {
    step: Vec<Vec<u8>>,
    #[serde(rename = "final")]
    final_rewards: Vec<u8>,
}

impl GroupRewards {
    pub fn new(step: Vec<Vec<u8>>, final_rewards: Vec<u8>) -> Result<Self, AdvantageError> {
        if step.len() != final_rewards.len() {
            return Err(AdvantageError::ShapeMismatch(format!(
                "{} step rows vs {} final rewards",
                step.len(),
                final_rewards.len()
            )));
        }
        let n = step.first().map_or(0, Vec::len);
        for (g, row) in step.iter().enumerate() {
            if row.len() != n {
                return Err(AdvantageError::ShapeMismatch(format!(
                    "row {g} has {} anchors, row 0 has {n}",
                    row.len()
                )));
            }
            if let Some((i, &value)) = row.iter().enumerate().find(|(_, &r)| r > 1) {
                return Err(AdvantageError::NonBinary { g, i, value });
            }
        }
        if let Some((g, &value)) = final_rewards.iter().enumerate().find(|(_, &r)| r > 1) {
            return Err(AdvantageError::NonBinary { g, i: n, value });
        }
        Ok(Self { step, final_rewards })
    }

    /// Rows of differing length are right-padded with zeros to the longest.
    pub fn ragged(mut step: Vec<Vec<u8>>, final_rewards: Vec<u8>) -> Result<Self, AdvantageError> {
        let n = step.iter().map(Vec::len).max().unwrap_or(0);
        for row in &mut step {
            row.resize(n, 0);
        }
        Self::new(step, final_rewards)
    }

    pub fn from_vectors(vectors: &[RewardVector]) -> Result<Self, AdvantageError> {
        Self::ragged(
            vectors.iter().map(|v| v.step.clone()).collect(),
            vectors.iter().map(|v| v.final_reward).collect(),
        )
    }

    pub fn g(&self) -> usize {
        self.step.len()
    }

    pub fn n(&self) -> usize {
        self.step.first().map_or(0, Vec::len)
    }

    pub fn step(&self) -> &[Vec<u8>] {
        &self.step
    }

    pub fn final_rewards(&self) -> &[u8] {
        &self.final_rewards
    }
}

/// Z-score with population standard deviation; `epsilon` is added to the
/// deviation. Constant inputs map to exact zeros.
pub fn zscore(values: &[f64], epsilon: f64) -> Result<Vec<f64>, AdvantageError> {
    if values.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AdvantageError::NonFinite("rewards"));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(vec![0.0; values.len()]);
    }
    let g = values.len() as f64;
    let mean = values.iter().sum::<f64>() / g;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g;
    let denom = var.sqrt() + epsilon;
    Ok(values.iter().map(|v| (v - mean) / denom).collect())
}

fn check_epsilon(epsilon: f64) -> Result<(), AdvantageError> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(AdvantageError::InvalidCoefficient {
            name: "epsilon",
            value: epsilon,
        })
    }
}

pub fn group_advantage(rewards: &GroupRewards, epsilon: f64) -> Result<Matrix, AdvantageError> {
    check_epsilon(epsilon)?;
    let g = rewards.g();
    if g < 2 {
        return Err(AdvantageError::GroupTooSmall(g));
    }
    let mut out = vec![vec![0.0; rewards.n()]; g];
    for i in 0..rewards.n() {
        let column: Vec<f64> = rewards.step.iter().map(|row| f64::from(row[i])).collect();
        for (row, z) in out.iter_mut().zip(zscore(&column, epsilon)?) {
            row[i] = z;
        }
    }
    Ok(out)
}

/// `r_i · (1 + mean(r_{i+1..n}))`, with the future term zero at the last anchor.
pub fn intra_advantage(rewards: &GroupRewards) -> Matrix {
    rewards.step.iter().map(|row| intra_row(row)).collect()
}

pub fn intra_row(row: &[u8]) -> Vec<f64> {
    let n = row.len();
    let mut out = vec![0.0; n];
    let mut future = 0u32;
    for i in (0..n).rev() {
        let later = n - 1 - i;
        let bonus = if later == 0 {
            0.0
        } else {
            f64::from(future) / later as f64
        };
        out[i] = f64::from(row[i]) * (1.0 + bonus);
        future += u32::from(row[i]);
    }
    out
}

pub fn combine(group: &Matrix, intra: &Matrix, lambda: f64) -> Result<Matrix, AdvantageError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(AdvantageError::InvalidCoefficient {
            name: "lambda",
            value: lambda,
        });
    }
    same_shape(group, intra, "group vs intra")?;
    Ok(group
        .iter()
        .zip(intra)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + lambda * y).collect())
        .collect())
}

pub fn final_advantage(final_rewards: &[u8], epsilon: f64) -> Result<Vec<f64>, AdvantageError> {
    check_epsilon(epsilon)?;
    let values: Vec<f64> = final_rewards.iter().map(|&r| f64::from(r)).collect();
    zscore(&values, epsilon)
}

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<(), AdvantageError> {
    let ok = a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
    if ok {
        Ok(())
    } else {
        Err(AdvantageError::ShapeMismatch(what.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageMatrix {
    pub group: Matrix,
    pub intra: Matrix,
    pub combined: Matrix,
    #[serde(rename = "final")]
    pub final_adv: Vec<f64>,
    pub lambda: f64,
    pub epsilon: f64,
}

pub fn compute(rewards: &GroupRewards, lambda: f64, epsilon: f64) -> Result<AdvantageMatrix, AdvantageError> {
    let group = group_advantage(rewards, epsilon)?;
    let intra = intra_advantage(rewards);
    let combined = combine(&group, &intra, lambda)?;
    let final_adv = final_advantage(&rewards.final_rewards, epsilon)?;
    Ok(AdvantageMatrix {
        group,
        intra,
        combined,
        final_adv,
        lambda,
        epsilon,
    })
}

/// Log-probabilities of the sampled trajectories under the current and the
/// sampling policy, per anchor step and per whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLogProbs {
    pub step_new: Matrix,
    pub step_old: Matrix,
    pub seq_new: Vec<f64>,
    pub seq_old: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KlTerm {
    /// Exact divergence, computed by the caller from full distributions.
    Exact(f64),
    /// Sample estimate: mean over sequences of `seq_new - seq_ref`.
    Estimator { seq_ref: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub l_step: f64,
    pub l_final: f64,
    pub kl: f64,
    pub total: f64,
}

/// `total = l_step + l_final + kl_coef · kl`.
pub fn surrogate_losses(
    adv: &AdvantageMatrix,
    logp: &PolicyLogProbs,
    kl: &KlTerm,
    kl_coef: f64,
) -> Result<Losses, AdvantageError> {
    let g = adv.combined.len();
    if g == 0 {
        return Err(AdvantageError::GroupTooSmall(0));
    }
    same_shape(&adv.combined, &logp.step_new, "advantages vs step_new")?;
    same_shape(&adv.combined, &logp.step_old, "advantages vs step_old")?;
    if logp.seq_new.len() != g || logp.seq_old.len() != g || adv.final_adv.len() != g {
        return Err(AdvantageError::ShapeMismatch("sequence log-probs vs group size".into()));
    }
    let finite = |m: &Matrix| m.iter().flatten().all(|v| v.is_finite());
    if !finite(&adv.combined) || !adv.final_adv.iter().all(|v| v.is_finite()) {
        return Err(AdvantageError::NonFinite("advantages"));
    }
    if !finite(&logp.step_new)
        || !finite(&logp.step_old)
        || !logp.seq_new.iter().chain(&logp.seq_old).all(|v| v.is_finite())
    {
        return Err(AdvantageError::NonFinite("log-probabilities"));
    }
    if !kl_coef.is_finite() {
        return Err(AdvantageError::NonFinite("kl_coef"));
    }

    let gf = g as f64;
    let mut step_sum = 0.0;
    for ((a_row, new_row), old_row) in adv.combined.iter().zip(&logp.step_new).zip(&logp.step_old) {
        for ((a, new), old) in a_row.iter().zip(new_row).zip(old_row) {
            step_sum += (new - old).exp() * a;
        }
    }
    let final_sum: f64 = adv
        .final_adv
        .iter()
        .zip(logp.seq_new.iter().zip(&logp.seq_old))
        .map(|(a, (new, old))| (new - old).exp() * a)
        .sum();
    let kl = match kl {
        KlTerm::Exact(v) => *v,
        KlTerm::Estimator { seq_ref } => {
            if seq_ref.len() != g {
                return Err(AdvantageError::ShapeMismatch("seq_ref vs group size".into()));
            }
            logp.seq_new.iter().zip(seq_ref).map(|(n, r)| n - r).sum::<f64>() / gf
        }
    };
    if !kl.is_finite() {
        return Err(AdvantageError::NonFinite("kl"));
    }
    let l_step = -step_sum / gf;
    let l_final = -final_sum / gf;
    Ok(Losses {
        l_step,
        l_final,
        kl,
        total: l_step + l_final + kl_coef * kl,
    })
}

/// `KL(p ‖ q)` for two categorical distributions given as probabilities.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

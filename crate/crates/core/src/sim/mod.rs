//! Tabular policy-gradient testbed for comparing terminal-only,
//! step-level and step-level-plus-shaping advantages.
//!
//! The environment is a chain of `n` anchors; at each anchor the policy picks
//! one of `vocab` choices, conditioned on the anchor index and on how many
//! earlier anchors it got right. All curve metrics are exact expectations
//! computed by dynamic programming over those states, not sample means.

mod plot;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{
    self, categorical_kl, AdvantageError, AdvantageMatrix, GroupRewards, KlTerm, Losses, Matrix,
    PolicyLogProbs,
};

pub use plot::{moving_average, plot_curves, PlotConfig};

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    pub n_anchors: usize,
    pub vocab: usize,
    pub correct_path: Vec<usize>,
    /// Final reward needs every anchor right; otherwise only the last one.
    pub answer_depends_on_trace: bool,
}

impl SyntheticEnv {
    pub fn new(
        vocab: usize,
        correct_path: Vec<usize>,
        answer_depends_on_trace: bool,
    ) -> Result<Self, SimError> {
        if vocab < 2 {
            return Err(SimError::InvalidEnv(format!("vocab must be >= 2, got {vocab}")));
        }
        if correct_path.is_empty() {
            return Err(SimError::InvalidEnv("need at least one anchor".into()));
        }
        if let Some(&c) = correct_path.iter().find(|&&c| c >= vocab) {
            return Err(SimError::InvalidEnv(format!("choice {c} outside vocab {vocab}")));
        }
        Ok(Self {
            n_anchors: correct_path.len(),
            vocab,
            correct_path,
            answer_depends_on_trace,
        })
    }

    /// Six anchors over eight choices; the answer needs the whole trace.
    pub fn hard() -> Self {
        Self::new(8, (0..6).map(|i| (3 * i + 1) % 8).collect(), true).expect("valid")
    }

    /// One anchor whose correctness is the answer.
    pub fn single(vocab: usize) -> Self {
        Self::new(vocab, vec![vocab - 1], false).expect("valid")
    }

    fn is_correct(&self, i: usize, a: usize) -> bool {
        self.correct_path[i] == a
    }
}

/// Softmax policy with one logit row per (anchor, prefix-correct count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n: usize,
    vocab: usize,
    logits: Vec<f64>,
    reference: Vec<f64>,
}

impl TabularPolicy {
    /// Uniform policy; the reference is a frozen copy.
    pub fn uniform(env: &SyntheticEnv) -> Self {
        let len = env.n_anchors * env.n_anchors * env.vocab;
        Self {
            n: env.n_anchors,
            vocab: env.vocab,
            logits: vec![0.0; len],
            reference: vec![0.0; len],
        }
    }

    /// Sets the logit of `env`'s correct choice to `logit` in every row.
    pub fn favoring_correct(env: &SyntheticEnv, logit: f64) -> Self {
        let mut p = Self::uniform(env);
        for i in 0..env.n_anchors {
            for k in 0..=i {
                let idx = p.index(i, k, env.correct_path[i]);
                p.logits[idx] = logit;
            }
        }
        p
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn reset_reference(&mut self) {
        self.reference = self.logits.clone();
    }

    fn row(&self, i: usize, k: usize) -> usize {
        (i * self.n + k) * self.vocab
    }

    fn index(&self, i: usize, k: usize, a: usize) -> usize {
        self.row(i, k) + a
    }

    pub fn probs(&self, i: usize, k: usize) -> Vec<f64> {
        softmax(&self.logits[self.row(i, k)..self.row(i, k) + self.vocab])
    }

    pub fn reference_probs(&self, i: usize, k: usize) -> Vec<f64> {
        softmax(&self.reference[self.row(i, k)..self.row(i, k) + self.vocab])
    }

    pub fn log_prob(&self, i: usize, k: usize, a: usize) -> f64 {
        log_softmax_at(&self.logits[self.row(i, k)..self.row(i, k) + self.vocab], a)
    }

    fn ref_log_prob(&self, i: usize, k: usize, a: usize) -> f64 {
        log_softmax_at(&self.reference[self.row(i, k)..self.row(i, k) + self.vocab], a)
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(row: &[f64], a: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row[a] - lse
}

/// One sampled group with everything needed to evaluate the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub rewards: GroupRewards,
    pub actions: Vec<Vec<usize>>,
    /// Prefix-correct count in effect when each action was taken.
    pub prefix_correct: Vec<Vec<usize>>,
    /// Log-probabilities under the sampling policy.
    pub step_logp: Matrix,
    pub step_logp_ref: Matrix,
}

impl Rollout {
    pub fn seq_logp(&self) -> Vec<f64> {
        self.step_logp.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn seq_logp_ref(&self) -> Vec<f64> {
        self.step_logp_ref.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn rollout<R: Rng>(
    policy: &TabularPolicy,
    env: &SyntheticEnv,
    g: usize,
    rng: &mut R,
) -> Result<Rollout, SimError> {
    if g < 2 {
        return Err(AdvantageError::GroupTooSmall(g).into());
    }
    let n = env.n_anchors;
    let mut step = Vec::with_capacity(g);
    let mut final_rewards = Vec::with_capacity(g);
    let mut actions = Vec::with_capacity(g);
    let mut prefix_correct = Vec::with_capacity(g);
    let mut step_logp = Vec::with_capacity(g);
    let mut step_logp_ref = Vec::with_capacity(g);
    for _ in 0..g {
        let mut k = 0;
        let (mut r, mut acts, mut ks, mut lp, mut lpr) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let probs = policy.probs(i, k);
            let a = sample(&probs, rng.gen::<f64>());
            ks.push(k);
            acts.push(a);
            lp.push(policy.log_prob(i, k, a));
            lpr.push(policy.ref_log_prob(i, k, a));
            let ok = env.is_correct(i, a);
            r.push(u8::from(ok));
            k += usize::from(ok);
        }
        let fin = if env.answer_depends_on_trace {
            k == n
        } else {
            r[n - 1] == 1
        };
        final_rewards.push(u8::from(fin));
        step.push(r);
        actions.push(acts);
        prefix_correct.push(ks);
        step_logp.push(lp);
        step_logp_ref.push(lpr);
    }
    Ok(Rollout {
        rewards: GroupRewards::new(step, final_rewards)?,
        actions,
        prefix_correct,
        step_logp,
        step_logp_ref,
    })
}

pub fn rollout_seeded(
    policy: &TabularPolicy,
    env: &SyntheticEnv,
    g: usize,
    seed: u64,
) -> Result<Rollout, SimError> {
    rollout(policy, env, g, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Terminal advantage only.
    Terminal,
    /// Group-relative step advantages without shaping (λ = 0).
    StepGroup,
    /// Group-relative step advantages plus λ-weighted shaping.
    Bilevel,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Terminal, Method::StepGroup, Method::Bilevel];

    pub fn name(self) -> &'static str {
        match self {
            Method::Terminal => "terminal",
            Method::StepGroup => "step_group",
            Method::Bilevel => "bilevel",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "terminal" => Ok(Method::Terminal),
            "step_group" | "step-group" | "step" => Ok(Method::StepGroup),
            "bilevel" | "bi-level" => Ok(Method::Bilevel),
            other => Err(format!("unknown method `{other}` (terminal, step_group, bilevel)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub steps: usize,
    pub lr: f64,
    /// Shaping weight; ignored (treated as 0) by `step_group`.
    pub lambda: f64,
    pub group: usize,
    pub kl_coef: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Bilevel,
            steps: 1500,
            lr: 0.05,
            lambda: advantage::DEFAULT_LAMBDA,
            group: 5,
            kl_coef: 0.01,
            epsilon: advantage::DEFAULT_EPSILON,
            seed: DEFAULT_SEEDS[0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.group < 2 {
            return bad(format!("group must be >= 2, got {}", self.group));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lambda", self.lambda),
            ("kl_coef", self.kl_coef),
            ("epsilon", self.epsilon),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    fn effective_lambda(&self) -> f64 {
        match self.method {
            Method::Bilevel => self.lambda,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub expected_final_reward: f64,
    /// Expected fraction of anchors predicted correctly.
    pub stepwise_accuracy: f64,
    /// Expected number of leading anchors predicted correctly.
    pub mean_traj_length: f64,
}

/// Exact expectations under the current policy.
pub fn exact_metrics(policy: &TabularPolicy, env: &SyntheticEnv) -> Metrics {
    let n = env.n_anchors;
    // dist[k] = P(prefix-correct count == k) before anchor i
    let mut dist = vec![0.0; n + 1];
    dist[0] = 1.0;
    let mut acc_sum = 0.0;
    let mut all_correct = 1.0;
    let mut length = 0.0;
    let mut last_correct = 0.0;
    for i in 0..n {
        let mut next = vec![0.0; n + 1];
        let mut p_correct_here = 0.0;
        for k in 0..=i {
            if dist[k] == 0.0 {
                continue;
            }
            let p = policy.probs(i, k)[env.correct_path[i]];
            p_correct_here += dist[k] * p;
            next[k + 1] += dist[k] * p;
            next[k] += dist[k] * (1.0 - p);
        }
        acc_sum += p_correct_here;
        // the leading run is still unbroken only from state k == i
        all_correct *= policy.probs(i, i)[env.correct_path[i]];
        length += all_correct;
        last_correct = p_correct_here;
        dist = next;
    }
    Metrics {
        expected_final_reward: if env.answer_depends_on_trace {
            all_correct
        } else {
            last_correct
        },
        stepwise_accuracy: acc_sum / n as f64,
        mean_traj_length: length,
    }
}

/// `KL(π_θ ‖ π_ref)` over whole trajectories, and its gradient.
///
/// With `V(s) = KL_s + Σ_a π(a|s) V(next(s, a))` the divergence is `V(start)`
/// and `∂V(start)/∂θ_s = d(s) · ∂_θs [KL_s + Σ_a π(a|s) V(next(s, a))]`,
/// where `d(s)` is the visitation probability of state `s`.
pub fn exact_kl(policy: &TabularPolicy, env: &SyntheticEnv) -> (f64, Vec<f64>) {
    let n = env.n_anchors;
    let v = env.vocab;
    // value[i][k], i in 0..=n
    let mut value = vec![vec![0.0; n + 1]; n + 1];
    for i in (0..n).rev() {
        for k in 0..=i {
            let p = policy.probs(i, k);
            let kl = categorical_kl(&p, &policy.reference_probs(i, k));
            let c = env.correct_path[i];
            value[i][k] = kl + p[c] * value[i + 1][k + 1] + (1.0 - p[c]) * value[i + 1][k];
        }
    }
    let mut grad = vec![0.0; policy.logits.len()];
    let mut dist = vec![0.0; n + 1];
    dist[0] = 1.0;
    for i in 0..n {
        let mut next = vec![0.0; n + 1];
        for k in 0..=i {
            let d = dist[k];
            let p = policy.probs(i, k);
            let q = policy.reference_probs(i, k);
            let c = env.correct_path[i];
            let kl = categorical_kl(&p, &q);
            let future = |a: usize| {
                if a == c {
                    value[i + 1][k + 1]
                } else {
                    value[i + 1][k]
                }
            };
            let mean_future: f64 = (0..v).map(|a| p[a] * future(a)).sum();
            for b in 0..v {
                let d_kl = if p[b] > 0.0 {
                    p[b] * ((p[b] / q[b]).ln() - kl)
                } else {
                    0.0
                };
                let d_future = p[b] * (future(b) - mean_future);
                grad[policy.index(i, k, b)] = d * (d_kl + d_future);
            }
            next[k + 1] += d * p[c];
            next[k] += d * (1.0 - p[c]);
        }
        dist = next;
    }
    (value[0][0], grad)
}

/// Advantages for a rollout under `cfg`; the terminal method has no step term.
pub fn advantages(rollout: &Rollout, cfg: &TrainConfig) -> Result<AdvantageMatrix, SimError> {
    let mut adv = advantage::compute(&rollout.rewards, cfg.effective_lambda(), cfg.epsilon)?;
    if cfg.method == Method::Terminal {
        for row in &mut adv.combined {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(adv)
}

/// Loss of `policy` on a fixed rollout and advantages, via the engine's
/// surrogate with exact KL.
pub fn surrogate(
    policy: &TabularPolicy,
    env: &SyntheticEnv,
    rollout: &Rollout,
    adv: &AdvantageMatrix,
    kl_coef: f64,
) -> Result<Losses, SimError> {
    let step_new: Matrix = rollout
        .actions
        .iter()
        .zip(&rollout.prefix_correct)
        .map(|(acts, ks)| {
            acts.iter()
                .zip(ks)
                .enumerate()
                .map(|(i, (&a, &k))| policy.log_prob(i, k, a))
                .collect()
        })
        .collect();
    let seq_new = step_new.iter().map(|r: &Vec<f64>| r.iter().sum()).collect();
    let logp = PolicyLogProbs {
        step_new,
        step_old: rollout.step_logp.clone(),
        seq_new,
        seq_old: rollout.seq_logp(),
    };
    let (kl, _) = exact_kl(policy, env);
    Ok(advantage::surrogate_losses(adv, &logp, &KlTerm::Exact(kl), kl_coef)?)
}

/// Analytic gradient of [`surrogate`]'s `total` with respect to the logits.
pub fn surrogate_gradient(
    policy: &TabularPolicy,
    env: &SyntheticEnv,
    rollout: &Rollout,
    adv: &AdvantageMatrix,
    kl_coef: f64,
) -> Vec<f64> {
    let g = rollout.actions.len() as f64;
    let (_, kl_grad) = exact_kl(policy, env);
    let mut grad: Vec<f64> = kl_grad.into_iter().map(|x| kl_coef * x).collect();
    let seq_old = rollout.seq_logp();
    for (row, (acts, ks)) in rollout.actions.iter().zip(&rollout.prefix_correct).enumerate() {
        let mut seq_new = 0.0;
        for (i, (&a, &k)) in acts.iter().zip(ks).enumerate() {
            seq_new += policy.log_prob(i, k, a);
        }
        let seq_weight = -(seq_new - seq_old[row]).exp() * adv.final_adv[row] / g;
        for (i, (&a, &k)) in acts.iter().zip(ks).enumerate() {
            let lp = policy.log_prob(i, k, a);
            let ratio = (lp - rollout.step_logp[row][i]).exp();
            let w = -ratio * adv.combined[row][i] / g + seq_weight;
            let p = policy.probs(i, k);
            for (b, pb) in p.iter().enumerate() {
                let indicator = if b == a { 1.0 } else { 0.0 };
                grad[policy.index(i, k, b)] += w * (indicator - pb);
            }
        }
    }
    grad
}

/// Disagreement between analytic and central finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// Over components whose larger magnitude is at least `1e-6`.
    pub max_relative: f64,
    pub max_absolute: f64,
    pub compared: usize,
}

pub fn gradient_check(
    policy: &TabularPolicy,
    env: &SyntheticEnv,
    rollout: &Rollout,
    adv: &AdvantageMatrix,
    kl_coef: f64,
    h: f64,
) -> Result<GradientCheck, SimError> {
    let analytic = surrogate_gradient(policy, env, rollout, adv, kl_coef);
    let mut out = GradientCheck {
        max_relative: 0.0,
        max_absolute: 0.0,
        compared: 0,
    };
    let mut probe = policy.clone();
    for (j, &exact) in analytic.iter().enumerate() {
        let base = probe.logits[j];
        probe.logits[j] = base + h;
        let up = surrogate(&probe, env, rollout, adv, kl_coef)?.total;
        probe.logits[j] = base - h;
        let down = surrogate(&probe, env, rollout, adv, kl_coef)?.total;
        probe.logits[j] = base;
        let numeric = (up - down) / (2.0 * h);
        let diff = (numeric - exact).abs();
        out.max_absolute = out.max_absolute.max(diff);
        let scale = exact.abs().max(numeric.abs());
        if scale >= 1e-6 {
            out.max_relative = out.max_relative.max(diff / scale);
            out.compared += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub expected_final_reward: f64,
    pub stepwise_accuracy: f64,
    pub mean_traj_length: f64,
    pub kl: f64,
    /// Mean final reward of the group sampled at this step.
    pub sampled_final_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub method: Method,
    pub seed: u64,
    pub lambda: f64,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn last(&self) -> &CurvePoint {
        self.points.last().expect("at least one step")
    }
}

/// One on-policy update per step, starting from the uniform policy.
/// Point `t` describes the policy after `t` updates.
pub fn train(env: &SyntheticEnv, cfg: &TrainConfig) -> Result<(Curve, TabularPolicy), SimError> {
    cfg.validate()?;
    let mut policy = TabularPolicy::uniform(env);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let ro = rollout(&policy, env, cfg.group, &mut rng)?;
        let adv = advantages(&ro, cfg)?;
        let grad = surrogate_gradient(&policy, env, &ro, &adv, cfg.kl_coef);
        if let Some(j) = grad.iter().position(|x| !x.is_finite()) {
            return Err(SimError::NonFinite {
                step,
                what: format!("gradient component {j}"),
            });
        }
        for (w, g) in policy.logits.iter_mut().zip(&grad) {
            *w -= cfg.lr * g;
        }
        let m = exact_metrics(&policy, env);
        let (kl, _) = exact_kl(&policy, env);
        if !(m.stepwise_accuracy.is_finite() && kl.is_finite()) {
            return Err(SimError::NonFinite {
                step,
                what: "metrics".into(),
            });
        }
        let fin = ro.rewards.final_rewards();
        points.push(CurvePoint {
            step,
            expected_final_reward: m.expected_final_reward,
            stepwise_accuracy: m.stepwise_accuracy,
            mean_traj_length: m.mean_traj_length,
            kl,
            sampled_final_reward: fin.iter().map(|&r| f64::from(r)).sum::<f64>() / fin.len() as f64,
        });
    }
    Ok((
        Curve {
            method: cfg.method,
            seed: cfg.seed,
            lambda: cfg.effective_lambda(),
            points,
        },
        policy,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_policy_earns_everything() {
        let env = SyntheticEnv::hard();
        let p = TabularPolicy::favoring_correct(&env, 1000.0);
        let ro = rollout_seeded(&p, &env, 5, 9).unwrap();
        assert!(ro.rewards.step().iter().flatten().all(|&r| r == 1));
        assert!(ro.rewards.final_rewards().iter().all(|&r| r == 1));
        let m = exact_metrics(&p, &env);
        assert_eq!(m.expected_final_reward, 1.0);
        assert_eq!(m.mean_traj_length, 6.0);
    }

    #[test]
    fn uniform_metrics_are_closed_form() {
        let env = SyntheticEnv::new(4, vec![0, 1, 2], true).unwrap();
        let p = TabularPolicy::uniform(&env);
        let m = exact_metrics(&p, &env);
        assert!((m.stepwise_accuracy - 0.25).abs() < 1e-12);
        assert!((m.expected_final_reward - 0.25f64.powi(3)).abs() < 1e-12);
        assert!((m.mean_traj_length - (0.25 + 0.0625 + 0.015625)).abs() < 1e-12);
        assert_eq!(exact_kl(&p, &env).0, 0.0);
    }

    #[test]
    fn env_validation() {
        assert!(SyntheticEnv::new(1, vec![0], true).is_err());
        assert!(SyntheticEnv::new(3, vec![3], true).is_err());
        assert!(SyntheticEnv::new(3, vec![], true).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("x".parse::<Method>().is_err());
    }
}

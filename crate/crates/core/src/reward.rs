//! Binary per-anchor rewards, the terminal reward and the budgeted total.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Parsed;
use crate::executor::{parse_trace, ExecError, Executor, ValueEq};
use crate::model::{ExecutionTrace, TaskInstance};

/// Which trace the anchors of an input-prediction response are checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// The trace of the ground-truth input.
    #[default]
    GtInput,
    /// A fresh trace of the input the response committed to.
    CommittedInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Total reward shared evenly by the anchors.
    pub r_internal_budget: f64,
    pub r_final: f64,
    pub input_task_trace_mode: TraceMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_internal_budget: 1.0,
            r_final: 1.0,
            input_task_trace_mode: TraceMode::GtInput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid reward config: {0}")]
pub struct RewardConfigError(String);

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        for (name, v) in [("r_internal_budget", self.r_internal_budget), ("r_final", self.r_final)] {
            if !v.is_finite() || v < 0.0 {
                return Err(RewardConfigError(format!("{name} must be finite and >= 0 (got {v})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub step: Vec<u8>,
    #[serde(rename = "final")]
    pub final_reward: u8,
    pub budgeted_total: f64,
}

impl RewardVector {
    pub fn new(step: Vec<u8>, final_reward: u8, cfg: &RewardConfig) -> Self {
        let n = step.len().max(1) as f64;
        let hits: u32 = step.iter().map(|&r| u32::from(r)).sum();
        let budgeted_total =
            f64::from(hits) / n * cfg.r_internal_budget + f64::from(final_reward) * cfg.r_final;
        Self {
            step,
            final_reward,
            budgeted_total,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            step: vec![0; n],
            final_reward: 0,
            budgeted_total: 0.0,
        }
    }
}

/// Positional comparison of trimmed print payloads against trace lines.
/// Missing predictions score 0; surplus ones are ignored.
pub fn step_rewards(predicted: &[String], trace: &ExecutionTrace) -> Vec<u8> {
    trace
        .lines()
        .enumerate()
        .map(|(i, line)| {
            predicted
                .get(i)
                .is_some_and(|p| p.trim() == line.trim())
                .into()
        })
        .collect()
}

pub fn score(
    parsed: &Parsed,
    trace: &ExecutionTrace,
    cfg: &RewardConfig,
    eq: &dyn ValueEq,
) -> RewardVector {
    let Some(t) = parsed.trajectory() else {
        return RewardVector::zero(trace.n());
    };
    let step = step_rewards(&t.predicted_states, trace);
    let final_reward = u8::from(eq.values_equal(&t.answer, &trace.final_value));
    RewardVector::new(step, final_reward, cfg)
}

/// Scores an input-prediction response. The terminal reward checks that the
/// committed input reproduces the observed output, not that it equals the
/// ground-truth input. Only a failure to trace the ground-truth input is an
/// error; anything wrong with the committed input lowers the score.
pub fn score_input_task(
    parsed: &Parsed,
    instance: &TaskInstance,
    cfg: &RewardConfig,
    executor: &Executor,
) -> Result<RewardVector, ExecError> {
    let gt_trace = executor.generate_trace(&instance.program, &instance.gt_input)?;
    let Some(t) = parsed.trajectory() else {
        return Ok(RewardVector::zero(gt_trace.n()));
    };
    let Some(committed) = t.committed_input.as_deref() else {
        return Ok(RewardVector::zero(gt_trace.n()));
    };
    if executor.canonical(committed).is_none() {
        return Ok(RewardVector::zero(gt_trace.n()));
    }
    let program = &instance.program;
    let run = executor.run(&program.origin_id, &program.source_text, &program.entry_name, committed);
    let final_reward = match &run {
        Ok(out) => u8::from(executor.values_equal(&out.return_repr, &instance.condition)),
        Err(_) => 0,
    };
    let step = match cfg.input_task_trace_mode {
        TraceMode::GtInput => step_rewards(&t.predicted_states, &gt_trace),
        TraceMode::CommittedInput => match run
            .ok()
            .and_then(|out| parse_trace(&out.stdout_lines, out.return_repr).ok())
        {
            Some(trace) => step_rewards(&t.predicted_states, &trace),
            None => vec![0; gt_trace.n()],
        },
    };
    Ok(RewardVector::new(step, final_reward, cfg))
}

//! Final trajectory rewards, group-relative advantages and batch statistics.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{complete_parsed, parse_verdict, Backend, BackendError, CallPolicy, ChatMessage};
use crate::prompt::{render_verifier_prompt, CriteriaSet, PromptContext, PromptError, TemplateSet};
use crate::rollout::{Status, TaskSpec, Trajectory};

/// A reward in {-1, 0, 1}. Serialized as the bare integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reward {
    Negative,
    Neutral,
    Positive,
}

impl Reward {
    pub fn value(self) -> i8 {
        match self {
            Reward::Negative => -1,
            Reward::Neutral => 0,
            Reward::Positive => 1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Reward::Negative),
            0 => Some(Reward::Neutral),
            1 => Some(Reward::Positive),
            _ => None,
        }
    }

    /// Accepts only exact integral values; `1.0` is fine, `0.5` is not.
    pub fn from_f64(v: f64) -> Option<Self> {
        if v == -1.0 {
            Some(Reward::Negative)
        } else if v == 0.0 {
            Some(Reward::Neutral)
        } else if v == 1.0 {
            Some(Reward::Positive)
        } else {
            None
        }
    }
}

impl Serialize for Reward {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Reward {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Reward::from_i64(v).ok_or_else(|| serde::de::Error::custom("reward out of {-1,0,1}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub trajectory_id: String,
    pub reward: Reward,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("aborted trajectories are not verified")]
    Aborted,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Scores a finished trajectory against criteria `0..=criteria_level`.
pub fn verify(
    trajectory: &Trajectory,
    task: &TaskSpec,
    criteria_level: u32,
    backend: &dyn Backend,
    templates: &TemplateSet,
    policy: &CallPolicy,
) -> Result<RewardRecord, VerifyError> {
    if trajectory.status == Status::Aborted {
        return Err(VerifyError::Aborted);
    }
    let criteria = CriteriaSet::new(templates, criteria_level)?;
    let ctx = PromptContext::new(task, &trajectory.events);
    let prompt = render_verifier_prompt(templates, &ctx, &criteria)?;
    let (reward, reasoning) = complete_parsed(backend, &[ChatMessage::user(prompt)], policy, parse_verdict)?;
    Ok(RewardRecord {
        trajectory_id: trajectory.task_id.clone(),
        reward,
        reasoning,
    })
}

/// Standard deviations at or below this produce all-zero advantages.
pub const ZERO_VARIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divide by M.
    #[default]
    Population,
    /// Divide by M - 1.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvantageError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("no valid trajectories in batch")]
    NoValidTrajectories,
}

pub fn group_advantages(rewards: &[f64]) -> Result<GroupAdvantages, AdvantageError> {
    group_advantages_with(rewards, StdMode::Population)
}

pub fn group_advantages_with(rewards: &[f64], mode: StdMode) -> Result<GroupAdvantages, AdvantageError> {
    let m = rewards.len();
    if m < 2 {
        return Err(AdvantageError::GroupTooSmall(m));
    }
    let mean = rewards.iter().sum::<f64>() / m as f64;
    let ss: f64 = rewards.iter().map(|r| (r - mean) * (r - mean)).sum();
    let denom = match mode {
        StdMode::Population => m as f64,
        StdMode::Sample => (m - 1) as f64,
    };
    let std = libm::sqrt(ss / denom);
    let advantages = if std <= ZERO_VARIANCE_TOLERANCE {
        alloc::vec![0.0; m]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub step_index: u64,
    pub valid_trajectories: usize,
    pub aborted: usize,
    pub mean_reward: f64,
    pub difficulty_used: u32,
}

/// Mean final reward over every valid trajectory in the batch. `groups`
/// holds the verified records of each task; aborted trajectories are only
/// counted.
pub fn batch_stats(
    step_index: u64,
    difficulty_used: u32,
    groups: &[Vec<RewardRecord>],
    aborted: usize,
) -> Result<BatchStats, AdvantageError> {
    let valid: usize = groups.iter().map(Vec::len).sum();
    if valid == 0 {
        return Err(AdvantageError::NoValidTrajectories);
    }
    let total: f64 = groups.iter().flatten().map(|r| f64::from(r.reward.value())).sum();
    Ok(BatchStats {
        step_index,
        valid_trajectories: valid,
        aborted,
        mean_reward: total / valid as f64,
        difficulty_used,
    })
}

/// Builds a record with a placeholder id, mainly for tests and tools.
pub fn record(id: &str, reward: Reward) -> RewardRecord {
    RewardRecord {
        trajectory_id: id.to_string(),
        reward,
        reasoning: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn reward_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Reward::Negative).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Reward>("1").unwrap(), Reward::Positive);
        assert!(serde_json::from_str::<Reward>("2").is_err());
        assert_eq!(Reward::from_f64(0.5), None);
        assert_eq!(Reward::from_f64(1.0), Some(Reward::Positive));
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0, 1.0, 1.0, 1.0]).unwrap().advantages, [0.0; 4]);
        let pair = group_advantages(&[1.0, -1.0]).unwrap();
        assert_eq!((pair.mean, pair.std), (0.0, 1.0));
        assert_eq!(pair.advantages, [1.0, -1.0]);
        let g = group_advantages(&[1.0, 0.0, -1.0, 0.0]).unwrap();
        assert!((g.std - libm::sqrt(0.5)).abs() < 1e-15);
        assert!((g.advantages[0] - core::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(group_advantages(&[1.0]), Err(AdvantageError::GroupTooSmall(1)));
    }

    #[test]
    fn sample_std_divides_by_m_minus_one() {
        let g = group_advantages_with(&[1.0, -1.0], StdMode::Sample).unwrap();
        assert!((g.std - libm::sqrt(2.0)).abs() < 1e-15);
    }

    #[test]
    fn batch_mean_examples() {
        let rec = |r| record("t", r);
        let s = batch_stats(0, 1, &[vec![rec(Reward::Positive); 2], vec![rec(Reward::Negative); 2]], 0).unwrap();
        assert_eq!(s.mean_reward, 0.0);
        let s = batch_stats(
            0,
            1,
            &[vec![rec(Reward::Positive), rec(Reward::Neutral), rec(Reward::Neutral), rec(Reward::Negative)]],
            0,
        )
        .unwrap();
        assert_eq!(s.mean_reward, 0.0);
        let s = batch_stats(3, 7, &[vec![rec(Reward::Positive); 4]], 4).unwrap();
        assert_eq!((s.mean_reward, s.aborted, s.valid_trajectories), (1.0, 4, 4));
        assert_eq!(batch_stats(0, 1, &[vec![]], 3), Err(AdvantageError::NoValidTrajectories));
    }
}

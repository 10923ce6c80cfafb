//! Adaptive difficulty: one scalar in `[1, 100]` from which every task aspect
//! is derived, nudged up or down after each batch according to mean reward.

use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MIN_DIFFICULTY: u32 = 1;
pub const MAX_DIFFICULTY: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyState {
    pub difficulty: u32,
    pub step_index: u64,
}

impl Default for DifficultyState {
    fn default() -> Self {
        Self {
            difficulty: MIN_DIFFICULTY,
            step_index: 0,
        }
    }
}

impl DifficultyState {
    pub fn new(difficulty: u32, step_index: u64) -> Result<Self, ConfigError> {
        if !(MIN_DIFFICULTY..=MAX_DIFFICULTY).contains(&difficulty) {
            return Err(ConfigError::DifficultyOutOfRange(difficulty));
        }
        Ok(Self {
            difficulty,
            step_index,
        })
    }
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectRange {
    pub lo: u32,
    pub hi: u32,
}

impl AspectRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }

    /// `lo + floor(difficulty * (hi - lo) / 100)`.
    pub fn derive(self, difficulty: u32) -> u32 {
        self.lo + difficulty * (self.hi - self.lo) / MAX_DIFFICULTY
    }

    pub fn contains(self, v: u32) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AspectRanges {
    pub num_tools: AspectRange,
    pub expected_calls: AspectRange,
    pub expected_turns: AspectRange,
    pub system_prompt: AspectRange,
    pub persona: AspectRange,
    pub ambiguity: AspectRange,
    pub criteria: AspectRange,
    pub max_user_turns: AspectRange,
    pub max_tool_turns: AspectRange,
    pub max_agent_turns: AspectRange,
}

impl Default for AspectRanges {
    fn default() -> Self {
        Self {
            num_tools: AspectRange::new(1, 10),
            expected_calls: AspectRange::new(1, 3),
            expected_turns: AspectRange::new(1, 2),
            system_prompt: AspectRange::new(0, 3),
            persona: AspectRange::new(0, 2),
            ambiguity: AspectRange::new(0, 2),
            criteria: AspectRange::new(0, 4),
            max_user_turns: AspectRange::new(1, 3),
            max_tool_turns: AspectRange::new(1, 3),
            max_agent_turns: AspectRange::new(1, 6),
        }
    }
}

/// Whether the soft-curriculum coin is flipped once per task or once per
/// randomizable aspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftMode {
    #[default]
    PerTask,
    PerAspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub delta: u32,
    pub eta_low: f64,
    pub eta_high: f64,
    pub soft_epsilon: f64,
    pub soft_mode: SoftMode,
    pub initial_difficulty: u32,
    pub ranges: AspectRanges,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            delta: 3,
            eta_low: 0.0,
            eta_high: 0.5,
            soft_epsilon: 0.5,
            soft_mode: SoftMode::PerTask,
            initial_difficulty: MIN_DIFFICULTY,
            ranges: AspectRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    ZeroDelta,
    Thresholds { eta_low: f64, eta_high: f64 },
    SoftEpsilon(f64),
    EmptyRange(&'static str),
    OutsideDomain { aspect: &'static str, max: u32 },
    DifficultyOutOfRange(u32),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::ZeroDelta => f.write_str("curriculum delta must be at least 1"),
            ConfigError::Thresholds { eta_low, eta_high } => {
                write!(f, "eta_low ({eta_low}) must be below eta_high ({eta_high})")
            }
            ConfigError::SoftEpsilon(e) => write!(f, "soft_epsilon {e} is not a probability"),
            ConfigError::EmptyRange(a) => write!(f, "range for '{a}' has lo > hi"),
            ConfigError::OutsideDomain { aspect, max } => {
                write!(f, "range for '{aspect}' must lie within 0..={max}")
            }
            ConfigError::DifficultyOutOfRange(d) => {
                write!(f, "difficulty {d} outside {MIN_DIFFICULTY}..={MAX_DIFFICULTY}")
            }
        }
    }
}

impl core::error::Error for ConfigError {}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.delta == 0 {
            return Err(ConfigError::ZeroDelta);
        }
        // also rejects NaN thresholds
        if self.eta_low.partial_cmp(&self.eta_high) != Some(core::cmp::Ordering::Less) {
            return Err(ConfigError::Thresholds {
                eta_low: self.eta_low,
                eta_high: self.eta_high,
            });
        }
        if !(0.0..=1.0).contains(&self.soft_epsilon) {
            return Err(ConfigError::SoftEpsilon(self.soft_epsilon));
        }
        if !(MIN_DIFFICULTY..=MAX_DIFFICULTY).contains(&self.initial_difficulty) {
            return Err(ConfigError::DifficultyOutOfRange(self.initial_difficulty));
        }
        let r = &self.ranges;
        let all = [
            ("num_tools", r.num_tools),
            ("expected_calls", r.expected_calls),
            ("expected_turns", r.expected_turns),
            ("system_prompt", r.system_prompt),
            ("persona", r.persona),
            ("ambiguity", r.ambiguity),
            ("criteria", r.criteria),
            ("max_user_turns", r.max_user_turns),
            ("max_tool_turns", r.max_tool_turns),
            ("max_agent_turns", r.max_agent_turns),
        ];
        for (name, range) in all {
            if range.lo > range.hi {
                return Err(ConfigError::EmptyRange(name));
            }
        }
        let enumerated = [
            ("system_prompt", r.system_prompt, 3),
            ("persona", r.persona, 2),
            ("ambiguity", r.ambiguity, 2),
            ("criteria", r.criteria, 4),
        ];
        for (aspect, range, max) in enumerated {
            if range.hi > max {
                return Err(ConfigError::OutsideDomain { aspect, max });
            }
        }
        for (aspect, range) in [
            ("num_tools", r.num_tools),
            ("max_user_turns", r.max_user_turns),
            ("max_agent_turns", r.max_agent_turns),
            ("expected_turns", r.expected_turns),
        ] {
            if range.lo == 0 {
                return Err(ConfigError::OutsideDomain { aspect, max: u32::MAX });
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> DifficultyState {
        DifficultyState {
            difficulty: self.initial_difficulty,
            step_index: 0,
        }
    }
}

/// Concrete per-task settings derived from the difficulty scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectLevels {
    pub num_tools: u32,
    pub expected_calls: u32,
    pub expected_turns: u32,
    pub system_prompt_level: u32,
    pub persona_level: u32,
    pub ambiguity_level: u32,
    pub criteria_level: u32,
    pub max_user_turns: u32,
    pub max_tool_turns: u32,
    pub max_agent_turns: u32,
}

impl AspectLevels {
    /// True when every field lies inside its configured range.
    pub fn within(&self, ranges: &AspectRanges) -> bool {
        ranges.num_tools.contains(self.num_tools)
            && ranges.expected_calls.contains(self.expected_calls)
            && ranges.expected_turns.contains(self.expected_turns)
            && ranges.system_prompt.contains(self.system_prompt_level)
            && ranges.persona.contains(self.persona_level)
            && ranges.ambiguity.contains(self.ambiguity_level)
            && ranges.criteria.contains(self.criteria_level)
            && ranges.max_user_turns.contains(self.max_user_turns)
            && ranges.max_tool_turns.contains(self.max_tool_turns)
            && ranges.max_agent_turns.contains(self.max_agent_turns)
    }

    /// Index into the three interaction-turn descriptions. Expected turns
    /// count from 1, descriptions from 0.
    pub fn turn_description_level(&self) -> u32 {
        self.expected_turns.saturating_sub(1).min(2)
    }
}

pub fn derive_levels(state: &DifficultyState, config: &CurriculumConfig) -> AspectLevels {
    let d = state.difficulty.clamp(MIN_DIFFICULTY, MAX_DIFFICULTY);
    let r = &config.ranges;
    AspectLevels {
        num_tools: r.num_tools.derive(d),
        expected_calls: r.expected_calls.derive(d),
        expected_turns: r.expected_turns.derive(d),
        system_prompt_level: r.system_prompt.derive(d),
        persona_level: r.persona.derive(d),
        ambiguity_level: r.ambiguity.derive(d),
        criteria_level: r.criteria.derive(d),
        max_user_turns: r.max_user_turns.derive(d),
        max_tool_turns: r.max_tool_turns.derive(d),
        max_agent_turns: r.max_agent_turns.derive(d),
    }
}

/// Moves difficulty by `delta` when mean reward is strictly above `eta_high`
/// or strictly below `eta_low`, clamps to `[1, 100]` and advances the step.
pub fn evolve(state: &DifficultyState, mean_reward: f64, config: &CurriculumConfig) -> DifficultyState {
    let d = i64::from(state.difficulty);
    let delta = i64::from(config.delta);
    let next = if mean_reward > config.eta_high {
        d + delta
    } else if mean_reward < config.eta_low {
        d - delta
    } else {
        d
    };
    DifficultyState {
        difficulty: next.clamp(i64::from(MIN_DIFFICULTY), i64::from(MAX_DIFFICULTY)) as u32,
        step_index: state.step_index + 1,
    }
}

/// Soft curriculum: with probability `soft_epsilon`, resample tool count,
/// expected calls, expected turns, persona and ambiguity uniformly from
/// `[range floor, derived value]`. Other aspects pass through.
///
/// Random draws per call, in order: one `gen_bool` (per task mode), then one
/// `gen_range` per randomized aspect in the order listed above. In per-aspect
/// mode each aspect does its own `gen_bool` followed by `gen_range` on success.
pub fn soft_sample<R: Rng + ?Sized>(
    levels: &AspectLevels,
    config: &CurriculumConfig,
    rng: &mut R,
) -> AspectLevels {
    let eps = config.soft_epsilon.clamp(0.0, 1.0);
    let r = &config.ranges;
    let mut out = *levels;
    match config.soft_mode {
        SoftMode::PerTask => {
            if !rng.gen_bool(eps) {
                return out;
            }
            out.num_tools = below(r.num_tools, levels.num_tools, rng);
            out.expected_calls = below(r.expected_calls, levels.expected_calls, rng);
            out.expected_turns = below(r.expected_turns, levels.expected_turns, rng);
            out.persona_level = below(r.persona, levels.persona_level, rng);
            out.ambiguity_level = below(r.ambiguity, levels.ambiguity_level, rng);
        }
        SoftMode::PerAspect => {
            let flip = |range: AspectRange, current: u32, rng: &mut R| {
                if rng.gen_bool(eps) {
                    below(range, current, rng)
                } else {
                    current
                }
            };
            out.num_tools = flip(r.num_tools, levels.num_tools, rng);
            out.expected_calls = flip(r.expected_calls, levels.expected_calls, rng);
            out.expected_turns = flip(r.expected_turns, levels.expected_turns, rng);
            out.persona_level = flip(r.persona, levels.persona_level, rng);
            out.ambiguity_level = flip(r.ambiguity, levels.ambiguity_level, rng);
        }
    }
    out
}

fn below<R: Rng + ?Sized>(range: AspectRange, current: u32, rng: &mut R) -> u32 {
    let hi = current.max(range.lo);
    rng.gen_range(range.lo..=hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn at(d: u32) -> AspectLevels {
        derive_levels(&DifficultyState::new(d, 0).unwrap(), &CurriculumConfig::default())
    }

    #[test]
    fn persona_bands_match_worked_example() {
        assert_eq!(at(49).persona_level, 0);
        assert_eq!(at(50).persona_level, 1);
        assert_eq!(at(99).persona_level, 1);
        assert_eq!(at(100).persona_level, 2);
    }

    #[test]
    fn lower_bound_tool_count() {
        assert_eq!(at(1).num_tools, 1);
        assert_eq!(at(100).num_tools, 10);
        assert_eq!(at(100).max_agent_turns, 6);
    }

    #[test]
    fn evolve_cases() {
        let cfg = CurriculumConfig::default();
        let s = |d| DifficultyState::new(d, 0).unwrap();
        assert_eq!(evolve(&s(10), 0.6, &cfg).difficulty, 13);
        assert_eq!(evolve(&s(10), -0.2, &cfg).difficulty, 7);
        assert_eq!(evolve(&s(10), 0.3, &cfg).difficulty, 10);
        assert_eq!(evolve(&s(99), 0.9, &cfg).difficulty, 100);
        assert_eq!(evolve(&s(2), -1.0, &cfg).difficulty, 1);
        // thresholds are strict
        assert_eq!(evolve(&s(10), 0.5, &cfg).difficulty, 10);
        assert_eq!(evolve(&s(10), 0.0, &cfg).difficulty, 10);
        assert_eq!(evolve(&s(10), 0.3, &cfg).step_index, 1);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let cfg = CurriculumConfig {
            soft_epsilon: 0.0,
            ..Default::default()
        };
        let lv = at(100);
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(soft_sample(&lv, &cfg, &mut rng), lv);
        }
    }

    #[test]
    fn singleton_range_stays_put() {
        let cfg = CurriculumConfig {
            soft_epsilon: 1.0,
            ..Default::default()
        };
        let lv = at(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = soft_sample(&lv, &cfg, &mut rng);
        assert_eq!(out.num_tools, 1);
        assert_eq!(out.persona_level, 0);
    }

    #[test]
    fn soft_sample_keeps_unlisted_aspects() {
        let cfg = CurriculumConfig {
            soft_epsilon: 1.0,
            soft_mode: SoftMode::PerAspect,
            ..Default::default()
        };
        let lv = at(80);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = soft_sample(&lv, &cfg, &mut rng);
            assert_eq!(out.system_prompt_level, lv.system_prompt_level);
            assert_eq!(out.criteria_level, lv.criteria_level);
            assert_eq!(out.max_user_turns, lv.max_user_turns);
            assert!(out.num_tools <= lv.num_tools);
        }
    }

    #[test]
    fn config_validation() {
        assert!(CurriculumConfig::default().validate().is_ok());
        let bad = CurriculumConfig {
            eta_low: 0.5,
            eta_high: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let mut bad = CurriculumConfig::default();
        bad.ranges.persona = AspectRange::new(0, 3);
        assert_eq!(
            bad.validate(),
            Err(ConfigError::OutsideDomain { aspect: "persona", max: 2 })
        );
        let bad = CurriculumConfig {
            delta: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::ZeroDelta));
        assert!(DifficultyState::new(0, 0).is_err());
        assert!(DifficultyState::new(101, 0).is_err());
    }
}

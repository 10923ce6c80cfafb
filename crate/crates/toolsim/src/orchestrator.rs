//! One training step: derive and soft-sample levels, sample tools, generate
//! tasks, roll out every group, verify, compute advantages and evolve the
//! difficulty.
//!
//! The step is split into [`prepare_step`], the rollouts, and
//! [`finalize_step`] so the session server can slot remote agents into the
//! middle while sharing every other stage with [`run_step`].

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use toolsim_core::backend::{Backend, Simulators};
use toolsim_core::curriculum::{derive_levels, evolve, soft_sample, AspectLevels, DifficultyState};
use toolsim_core::prompt::TemplateSet;
use toolsim_core::reward::{batch_stats, group_advantages_with, verify, BatchStats, GroupAdvantages, RewardRecord};
use toolsim_core::rollout::{
    chars_over_four, generate_task, Rollout, RolloutConfig, RolloutLimits, Status, TaskSpec, Trajectory,
};
use toolsim_core::tools::Repository;

use crate::backends::{build_backend, build_simulators, load_repository, load_templates};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pool::map_bounded;

/// Everything a step needs besides the difficulty state.
#[derive(Clone)]
pub struct Environment {
    pub config: RunConfig,
    pub repository: Arc<Repository>,
    pub templates: Arc<TemplateSet>,
    pub simulators: Simulators,
    /// Policy backend for self-contained runs.
    pub agent: Option<Arc<dyn Backend>>,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("run_id", &self.config.run_id)
            .field("tools", &self.repository.len())
            .finish_non_exhaustive()
    }
}

impl Environment {
    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let repository = Arc::new(load_repository(&config.repository)?);
        let templates = Arc::new(load_templates(config.templates_dir.as_deref())?);
        let simulators = build_simulators(&config.backends)?;
        let agent = config.backends.agent.as_ref().map(build_backend).transpose()?;
        Ok(Self { config, repository, templates, simulators, agent })
    }

    pub fn rollout_config(&self, levels: &AspectLevels) -> RolloutConfig {
        RolloutConfig {
            limits: RolloutLimits::from_levels(levels, self.config.max_token_estimate),
            simulator: self.config.simulator.clone(),
            action_retry_budget: self.config.action_retry_budget,
            token_counter: chars_over_four,
        }
    }

    pub fn initial_state(&self) -> DifficultyState {
        self.config.curriculum.initial_state()
    }
}

/// Seed for one task's sampling, mixed from the run seed, step and slot so
/// tasks are independent and reproducible regardless of thread timing.
pub fn task_seed(seed: u64, step: u64, index: usize) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn task_id(step: u64, index: usize) -> String {
    format!("s{step:05}-t{index:02}")
}

pub fn trajectory_id(task_id: &str, member: usize) -> String {
    format!("{task_id}-r{member}")
}

#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task_id: String,
    pub task: Arc<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub levels: AspectLevels,
    pub tools: Vec<String>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct PreparedStep {
    pub state: DifficultyState,
    pub derived: AspectLevels,
    pub tasks: Vec<PreparedTask>,
    pub failures: Vec<TaskFailure>,
}

/// Generates the step's tasks. Failed generations are recorded and the batch
/// shrinks accordingly.
pub fn prepare_step(env: &Environment, state: &DifficultyState) -> PreparedStep {
    let cfg = &env.config;
    let derived = derive_levels(state, &cfg.curriculum);
    let outcomes = map_bounded((0..cfg.batch_size).collect(), cfg.worker_cap(), |i| {
        let id = task_id(state.step_index, i);
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, state.step_index, i));
        let levels = soft_sample(&derived, &cfg.curriculum, &mut rng);
        let count = (levels.num_tools as usize).clamp(1, env.repository.len());
        let tools = env.repository.sample(count, &mut rng).expect("count clamped to repository size");
        let names: Vec<String> = tools.iter().map(|t| t.name.clone()).collect();
        match generate_task(&env.templates, tools, levels, env.simulators.task.as_ref(), &cfg.simulator) {
            Ok(task) => Ok(PreparedTask { task_id: id, task: Arc::new(task) }),
            Err(e) => {
                log::warn!("task {id}: generation failed: {e}");
                Err(TaskFailure { task_id: id, levels, tools: names, error: e.to_string() })
            }
        }
    });
    let mut tasks = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => tasks.push(t),
            Err(f) => failures.push(f),
        }
    }
    PreparedStep { state: *state, derived, tasks, failures }
}

/// A finished rollout plus the reason it was aborted, if it was.
pub type Finished = (Trajectory, Option<String>);

/// Runs a prepared rollout with `agent` choosing every action.
pub fn drive(mut rollout: Rollout, agent: &dyn Backend, env: &Environment) -> Finished {
    while !rollout.is_done() {
        match agent.complete(rollout.agent_messages(), &env.config.agent_params) {
            Ok(text) => {
                rollout
                    .apply_agent_output(&text, &env.simulators)
                    .expect("rollout is live inside the loop");
            }
            Err(e) => rollout.abort(format!("agent: {e}")),
        }
    }
    let reason = rollout.abort_reason().map(str::to_string);
    (rollout.into_trajectory().expect("rollout finished"), reason)
}

pub fn new_rollout(env: &Environment, task: &PreparedTask) -> Rollout {
    Rollout::new(
        task.task_id.clone(),
        task.task.clone(),
        env.templates.clone(),
        env.rollout_config(&task.task.levels),
    )
    // levels come from derived ranges and the builtin or validated templates
    .expect("agent opening renders for configured levels")
}

/// All `group_size` rollouts of every prepared task, bounded by the worker cap.
pub fn run_rollouts(env: &Environment, prepared: &PreparedStep, agent: &dyn Backend) -> Vec<Vec<Finished>> {
    let m = env.config.group_size;
    let jobs: Vec<(usize, usize)> = (0..prepared.tasks.len()).flat_map(|t| (0..m).map(move |r| (t, r))).collect();
    let mut flat = map_bounded(jobs, env.config.worker_cap(), |(t, _)| {
        drive(new_rollout(env, &prepared.tasks[t]), agent, env)
    })
    .into_iter();
    (0..prepared.tasks.len()).map(|_| flat.by_ref().take(m).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub trajectory: Trajectory,
    pub reward: Option<RewardRecord>,
    pub advantage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskArtifact {
    pub task_id: String,
    pub task: TaskSpec,
    pub trajectories: Vec<TrajectoryRecord>,
    /// Over valid members only; absent when fewer than two remain.
    pub advantages: Option<GroupAdvantages>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchArtifact {
    pub run_id: String,
    pub step_index: u64,
    pub difficulty_before: u32,
    pub difficulty_after: u32,
    pub derived_levels: AspectLevels,
    pub tasks: Vec<TaskArtifact>,
    pub failed_tasks: Vec<TaskFailure>,
    /// Absent when the step failed.
    pub stats: Option<BatchStats>,
    pub failed: bool,
}

impl BatchArtifact {
    pub fn next_state(&self) -> DifficultyState {
        DifficultyState { difficulty: self.difficulty_after, step_index: self.step_index + 1 }
    }

    pub fn trajectory_count(&self) -> usize {
        self.tasks.iter().map(|t| t.trajectories.len()).sum()
    }
}

/// Verifies, computes advantages and statistics, and evolves the difficulty.
/// `rollouts[i]` are the finished rollouts of `prepared.tasks[i]`.
pub fn finalize_step(env: &Environment, prepared: &PreparedStep, rollouts: Vec<Vec<Finished>>) -> BatchArtifact {
    let cfg = &env.config;
    assert_eq!(rollouts.len(), prepared.tasks.len(), "one rollout group per task");
    let jobs: Vec<(usize, usize, Finished)> = rollouts
        .into_iter()
        .enumerate()
        .flat_map(|(t, group)| group.into_iter().enumerate().map(move |(r, f)| (t, r, f)))
        .collect();
    let verified = map_bounded(jobs, cfg.worker_cap(), |(t, r, (mut traj, mut reason))| {
        let task = &prepared.tasks[t];
        let id = trajectory_id(&task.task_id, r);
        let mut reward = None;
        if traj.status != Status::Aborted {
            let level = task.task.levels.criteria_level;
            match verify(&traj, &task.task, level, env.simulators.verifier.as_ref(), &env.templates, &cfg.simulator) {
                Ok(mut rec) => {
                    rec.trajectory_id = id.clone();
                    reward = Some(rec);
                }
                Err(e) => {
                    log::warn!("{id}: verification failed: {e}");
                    traj.status = Status::Aborted;
                    reason = Some(format!("verifier: {e}"));
                }
            }
        }
        (t, TrajectoryRecord { id, trajectory: traj, reward, advantage: None, abort_reason: reason })
    });

    let mut tasks: Vec<TaskArtifact> = prepared
        .tasks
        .iter()
        .map(|p| TaskArtifact {
            task_id: p.task_id.clone(),
            task: (*p.task).clone(),
            trajectories: Vec::new(),
            advantages: None,
        })
        .collect();
    for (t, rec) in verified {
        tasks[t].trajectories.push(rec);
    }

    let mut aborted = 0;
    let mut record_groups = Vec::with_capacity(tasks.len());
    for task in &mut tasks {
        aborted += task.trajectories.iter().filter(|r| r.reward.is_none()).count();
        let valid: Vec<usize> = (0..task.trajectories.len()).filter(|&i| task.trajectories[i].reward.is_some()).collect();
        let records: Vec<RewardRecord> = valid.iter().filter_map(|&i| task.trajectories[i].reward.clone()).collect();
        if valid.len() >= 2 {
            let rewards: Vec<f64> = records.iter().map(|r| f64::from(r.reward.value())).collect();
            let g = group_advantages_with(&rewards, cfg.std_mode).expect("at least two rewards");
            for (&i, &a) in valid.iter().zip(&g.advantages) {
                task.trajectories[i].advantage = Some(a);
            }
            task.advantages = Some(g);
        }
        record_groups.push(records);
    }

    let before = prepared.state;
    let (stats, after) = match batch_stats(before.step_index, before.difficulty, &record_groups, aborted) {
        Ok(s) => {
            let next = evolve(&before, s.mean_reward, &cfg.curriculum);
            (Some(s), next.difficulty)
        }
        Err(e) => {
            log::warn!("step {}: {e}; difficulty unchanged", before.step_index);
            (None, before.difficulty)
        }
    };
    BatchArtifact {
        run_id: cfg.run_id.clone(),
        step_index: before.step_index,
        difficulty_before: before.difficulty,
        difficulty_after: after,
        derived_levels: prepared.derived,
        tasks,
        failed_tasks: prepared.failures.clone(),
        failed: stats.is_none(),
        stats,
    }
}

/// Self-contained step using the configured agent backend.
pub fn run_step(env: &Environment, state: &DifficultyState) -> Result<BatchArtifact> {
    let agent = env
        .agent
        .clone()
        .ok_or_else(|| Error::Config("self-contained runs need backends.agent".into()))?;
    let prepared = prepare_step(env, state);
    let rollouts = run_rollouts(env, &prepared, agent.as_ref());
    let artifact = finalize_step(env, &prepared, rollouts);
    log::info!(
        "step {}: difficulty {} -> {}, mean reward {}, {} trajectories, {} task failures",
        artifact.step_index,
        artifact.difficulty_before,
        artifact.difficulty_after,
        artifact.stats.as_ref().map_or("n/a".into(), |s| format!("{:.3}", s.mean_reward)),
        artifact.trajectory_count(),
        artifact.failed_tasks.len()
    );
    Ok(artifact)
}

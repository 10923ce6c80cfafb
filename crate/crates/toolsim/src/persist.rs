//! On-disk run layout:
//!
//! ```text
//! <out>/steps/step_00000.json         one BatchArtifact per step
//! <out>/trajectories/step_00000.jsonl one TrajectoryLine per trajectory
//! <out>/trace.jsonl                   one TraceEntry per completed step
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place. The
//! trace is written last, so a step counts as done only once it is in the
//! trace.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toolsim_core::curriculum::{AspectLevels, DifficultyState};
use toolsim_core::reward::Reward;
use toolsim_core::rollout::{Event, Status};

use crate::error::{Error, Result};
use crate::orchestrator::BatchArtifact;

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSummary {
    pub persona: String,
    pub intent: String,
    pub first_query: String,
    pub expected_calls: Vec<String>,
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryLine {
    pub schema_version: u32,
    pub run_id: String,
    pub step: u64,
    pub task_id: String,
    pub trajectory_id: String,
    pub difficulty: u32,
    pub levels: AspectLevels,
    pub tools: Vec<String>,
    pub task: TaskSummary,
    pub events: Vec<Event>,
    pub status: Status,
    pub final_reward: Option<Reward>,
    pub advantage: Option<f64>,
}

pub fn trajectory_lines(artifact: &BatchArtifact) -> Vec<TrajectoryLine> {
    let mut out = Vec::with_capacity(artifact.trajectory_count());
    for task in &artifact.tasks {
        for rec in &task.trajectories {
            out.push(TrajectoryLine {
                schema_version: TRAJECTORY_SCHEMA_VERSION,
                run_id: artifact.run_id.clone(),
                step: artifact.step_index,
                task_id: task.task_id.clone(),
                trajectory_id: rec.id.clone(),
                difficulty: artifact.difficulty_before,
                levels: task.task.levels,
                tools: task.task.tools.iter().map(|t| t.name.clone()).collect(),
                task: TaskSummary {
                    persona: task.task.persona.clone(),
                    intent: task.task.intent.clone(),
                    first_query: task.task.first_query.clone(),
                    expected_calls: task.task.expected_calls.clone(),
                },
                events: rec.trajectory.events.clone(),
                status: rec.trajectory.status,
                final_reward: rec.reward.as_ref().map(|r| r.reward),
                advantage: rec.advantage,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub step: u64,
    pub difficulty_before: u32,
    pub difficulty_after: u32,
    pub mean_reward: Option<f64>,
    pub valid: usize,
    pub aborted: usize,
    pub failed_tasks: usize,
    pub failed: bool,
}

impl TraceEntry {
    pub fn from_artifact(a: &BatchArtifact) -> Self {
        Self {
            step: a.step_index,
            difficulty_before: a.difficulty_before,
            difficulty_after: a.difficulty_after,
            mean_reward: a.stats.as_ref().map(|s| s.mean_reward),
            valid: a.stats.as_ref().map_or(0, |s| s.valid_trajectories),
            aborted: a.tasks.iter().flat_map(|t| &t.trajectories).filter(|r| r.reward.is_none()).count(),
            failed_tasks: a.failed_tasks.len(),
            failed: a.failed,
        }
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

impl RunStore {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        for sub in ["steps", "trajectories"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self { dir })
    }

    /// Opens an existing run directory without creating anything.
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn step_path(&self, step: u64) -> PathBuf {
        self.dir.join("steps").join(format!("step_{step:05}.json"))
    }

    pub fn trajectories_path(&self, step: u64) -> PathBuf {
        self.dir.join("trajectories").join(format!("step_{step:05}.jsonl"))
    }

    pub fn trace_path(&self) -> PathBuf {
        self.dir.join("trace.jsonl")
    }

    pub fn write_step(&self, artifact: &BatchArtifact) -> Result<()> {
        let step = artifact.step_index;
        let json = serde_json::to_vec_pretty(artifact).expect("artifact serializes");
        write_atomic(&self.step_path(step), &json)?;
        let mut lines = Vec::new();
        for line in trajectory_lines(artifact) {
            serde_json::to_writer(&mut lines, &line).expect("line serializes");
            lines.push(b'\n');
        }
        write_atomic(&self.trajectories_path(step), &lines)?;

        let mut trace: Vec<TraceEntry> = self.load_trace()?.into_iter().filter(|e| e.step < step).collect();
        trace.push(TraceEntry::from_artifact(artifact));
        let mut text = Vec::new();
        for e in &trace {
            serde_json::to_writer(&mut text, e).expect("trace entry serializes");
            text.push(b'\n');
        }
        write_atomic(&self.trace_path(), &text)
    }

    pub fn load_step(&self, step: u64) -> Result<BatchArtifact> {
        let path = self.step_path(step);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
    }

    pub fn load_trajectories(&self, step: u64) -> Result<Vec<TrajectoryLine>> {
        let path = self.trajectories_path(step);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(&path, format!("line {}: {e}", i + 1))))
            .collect()
    }

    /// Trace entries in step order; empty when the run has not started.
    pub fn load_trace(&self) -> Result<Vec<TraceEntry>> {
        let path = self.trace_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(&path, format!("line {}: {e}", i + 1))))
            .collect()
    }

    /// State to continue from: the last traced step's outcome, or `initial`.
    pub fn resume_state(&self, initial: DifficultyState) -> Result<DifficultyState> {
        Ok(self
            .load_trace()?
            .last()
            .map_or(initial, |e| DifficultyState { difficulty: e.difficulty_after, step_index: e.step + 1 }))
    }
}

/// `step,difficulty,mean_reward,aborted` with one row per traced step.
/// Failed steps leave `mean_reward` empty.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("step,difficulty,mean_reward,aborted\n");
    for e in trace {
        let mean = e.mean_reward.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", e.step, e.difficulty_before, mean, e.aborted));
    }
    out
}

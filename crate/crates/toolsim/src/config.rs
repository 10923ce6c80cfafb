//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toolsim_core::backend::{CallPolicy, CompletionParams, ScriptKeying};
use toolsim_core::curriculum::CurriculumConfig;
use toolsim_core::grpo::ObjectiveParams;
use toolsim_core::reward::StdMode;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// Tasks per step.
    pub batch_size: usize,
    /// Rollouts per task.
    pub group_size: usize,
    pub total_steps: u64,
    /// Concurrent rollouts; defaults to `batch_size`.
    pub worker_cap: Option<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Line-delimited tool repository.
    pub repository: PathBuf,
    /// Directory whose files replace the built-in templates of the same name.
    pub templates_dir: Option<PathBuf>,
    pub max_token_estimate: u64,
    /// Extra attempts the agent gets after an unparseable tool block.
    pub action_retry_budget: u32,
    pub agent_params: CompletionParams,
    pub simulator: CallPolicy,
    pub std_mode: StdMode,
    /// Handed to trainers; the environment itself never optimizes.
    pub objective: ObjectiveParams,
    pub curriculum: CurriculumConfig,
    pub backends: BackendsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            batch_size: 16,
            group_size: 8,
            total_steps: 200,
            worker_cap: None,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            repository: PathBuf::from("tools.jsonl"),
            templates_dir: None,
            max_token_estimate: 16_384,
            action_retry_budget: 2,
            agent_params: CompletionParams::default(),
            simulator: CallPolicy::default(),
            std_mode: StdMode::Population,
            objective: ObjectiveParams::default(),
            curriculum: CurriculumConfig::default(),
            backends: BackendsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    /// Policy endpoint for self-contained runs. Unused by the server, where
    /// the caller plays the agent.
    pub agent: Option<BackendConfig>,
    /// Shared endpoint for every simulator role without its own entry.
    pub simulator: BackendConfig,
    pub task: Option<BackendConfig>,
    pub tool: Option<BackendConfig>,
    pub user: Option<BackendConfig>,
    pub verifier: Option<BackendConfig>,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            agent: None,
            simulator: BackendConfig::Remote(RemoteConfig::default()),
            task: None,
            tool: None,
            user: None,
            verifier: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted {
        script: PathBuf,
        #[serde(default)]
        keying: ScriptKeying,
    },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    /// Extra attempts after transport failures, timeouts and rate limits.
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_ms: 120_000,
            max_retries: 2,
            backoff_ms: 500,
            max_in_flight: 16,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`, normally the config file's
    /// directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.repository);
        if let Some(d) = &mut self.templates_dir {
            fix(d);
        }
        let b = &mut self.backends;
        for slot in [&mut b.agent, &mut b.task, &mut b.tool, &mut b.user, &mut b.verifier] {
            if let Some(BackendConfig::Scripted { script, .. }) = slot {
                fix(script);
            }
        }
        if let BackendConfig::Scripted { script, .. } = &mut b.simulator {
            fix(script);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".into()));
        }
        if self.worker_cap == Some(0) {
            return Err(Error::Config("worker_cap must be at least 1".into()));
        }
        if self.agent_params.max_tokens < 1 || self.simulator.params.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if !(self.objective.clip_epsilon > 0.0 && self.objective.clip_epsilon < 1.0) || self.objective.kl_beta < 0.0 {
            return Err(Error::Config("objective needs 0 < clip_epsilon < 1 and kl_beta >= 0".into()));
        }
        self.curriculum.validate().map_err(Error::Curriculum)
    }

    pub fn worker_cap(&self) -> usize {
        self.worker_cap.unwrap_or(self.batch_size).max(1)
    }
}

//! Builds backends and loads tools and templates from config.

use std::path::Path;
use std::sync::Arc;

use toolsim_core::backend::{Backend, ScriptKeying, ScriptedBackend, Simulators};
use toolsim_core::prompt::{TemplateSet, TEMPLATE_FILES};
use toolsim_core::tools::Repository;

use crate::config::{BackendConfig, BackendsConfig};
use crate::error::{Error, Result};
use crate::remote::RemoteBackend;

pub fn load_repository(path: &Path) -> Result<Repository> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Repository::from_jsonl(&text).map_err(Error::Repository)
}

/// Script file: a JSON object mapping lookup key to response text.
pub fn load_script(path: &Path, keying: ScriptKeying) -> Result<ScriptedBackend> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScriptedBackend::from_json(&text, keying).map_err(|e| Error::parse(path, e))
}

/// Built-in templates with any same-named files from `dir` swapped in.
pub fn load_templates(dir: Option<&Path>) -> Result<TemplateSet> {
    let mut set = TemplateSet::builtin();
    if let Some(dir) = dir {
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                set.set_file(name, &text)?;
            }
        }
    }
    Ok(set)
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Arc<dyn Backend>> {
    Ok(match cfg {
        BackendConfig::Scripted { script, keying } => Arc::new(load_script(script, *keying)?),
        BackendConfig::Remote(remote) => Arc::new(RemoteBackend::new(remote)),
    })
}

/// Roles without their own entry share one instance of the simulator
/// backend, so they also share its in-flight cap.
pub fn build_simulators(cfg: &BackendsConfig) -> Result<Simulators> {
    let shared = build_backend(&cfg.simulator)?;
    let role = |c: &Option<BackendConfig>| -> Result<Arc<dyn Backend>> {
        match c {
            Some(c) => build_backend(c),
            None => Ok(shared.clone()),
        }
    };
    Ok(Simulators {
        task: role(&cfg.task)?,
        tool: role(&cfg.tool)?,
        user: role(&cfg.user)?,
        verifier: role(&cfg.verifier)?,
    })
}

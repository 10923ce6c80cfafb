#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use serde_json::json;
use toolsim_core::backend::{Backend, BackendError, ChatMessage, FnBackend, Simulators};
use toolsim_core::curriculum::{derive_levels, CurriculumConfig, DifficultyState};
use toolsim_core::prompt::TemplateSet;
use toolsim_core::rollout::{RolloutConfig, RolloutLimits, TaskSpec};
use toolsim_core::tools::{ParamKind, ParamSpec, ToolSpec};

pub fn tool(name: &str, category: &str) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: format!("{name} tool"),
        category: category.into(),
        parameters: vec![ParamSpec {
            name: "query".into(),
            kind: ParamKind::String,
            description: "input".into(),
            required: true,
        }],
    }
}

pub fn task(difficulty: u32) -> TaskSpec {
    let levels = derive_levels(&DifficultyState::new(difficulty, 0).unwrap(), &CurriculumConfig::default());
    TaskSpec {
        persona: "expert".into(),
        intent: "check the weather".into(),
        first_query: "Weather in Oslo?".into(),
        expected_calls: vec!["get_weather".into()],
        levels,
        tools: vec![tool("get_weather", "weather"), tool("get_time", "time")],
    }
}

pub fn templates() -> Arc<TemplateSet> {
    Arc::new(TemplateSet::builtin())
}

pub fn config(user: u32, tool: u32, agent: u32, tokens: u64) -> RolloutConfig {
    RolloutConfig::new(RolloutLimits {
        max_user_turns: user,
        max_tool_turns: tool,
        max_agent_turns: agent,
        max_token_estimate: tokens,
    })
}

/// Backend replaying `replies` in order, then repeating the last one.
pub fn sequence(replies: &[&str]) -> Arc<dyn Backend> {
    let replies: Vec<String> = replies.iter().map(|s| s.to_string()).collect();
    let next = Mutex::new(0usize);
    Arc::new(FnBackend(move |_: &[ChatMessage]| -> Result<String, BackendError> {
        let mut i = next.lock().unwrap();
        let out = replies[(*i).min(replies.len() - 1)].clone();
        *i += 1;
        Ok(out)
    }))
}

/// Simulators where the tool role and user role answer from separate lists.
pub fn sims(tool: Arc<dyn Backend>, user: Arc<dyn Backend>) -> Simulators {
    let unused = sequence(&["{}"]);
    Simulators {
        task: unused.clone(),
        tool,
        user,
        verifier: sequence(&[&json!({"reward": 1, "reasoning": "ok"}).to_string()]),
    }
}

pub fn call_text(names: &[&str]) -> String {
    let body: Vec<String> = names
        .iter()
        .map(|n| json!({"name": n, "arguments": {"query": "x"}}).to_string())
        .collect();
    format!("<think>plan</think><tool_call>\n{}\n</tool_call>", body.join("\n"))
}

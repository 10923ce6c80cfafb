//! Typed views of the JSON objects each simulator is asked to return.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};
use thiserror::Error;

use super::BackendError;
use crate::reward::Reward;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected a JSON object")]
    NotAnObject,
    #[error("missing field '{0}'")]
    Missing(&'static str),
    #[error("field '{field}' must be {expected}")]
    WrongType {
        field: &'static str,
        expected: &'static str,
    },
    #[error("field '{0}' must not be empty")]
    Empty(&'static str),
    #[error("reward out of {{-1,0,1}}: {0}")]
    RewardOutOfRange(String),
    #[error("expected_tool_calls names unknown tool '{0}'")]
    UnknownTool(String),
}

impl ParseError {
    pub fn into_backend(self) -> BackendError {
        BackendError::malformed(self.to_string())
    }
}

/// Task fields as produced by the task generator, before the orchestrator
/// attaches levels and tools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDraft {
    pub expected_calls: Vec<String>,
    pub intent: String,
    pub persona: String,
    pub first_query: String,
}

fn object(value: &Value) -> Result<&Map<String, Value>, ParseError> {
    value.as_object().ok_or(ParseError::NotAnObject)
}

fn string_field(obj: &Map<String, Value>, field: &'static str) -> Result<String, ParseError> {
    match obj.get(field) {
        None => Err(ParseError::Missing(field)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseError::WrongType {
            field,
            expected: "a string",
        }),
    }
}

fn reward_field(obj: &Map<String, Value>) -> Result<Reward, ParseError> {
    let v = obj.get("reward").ok_or(ParseError::Missing("reward"))?;
    let n = v.as_f64().ok_or(ParseError::WrongType {
        field: "reward",
        expected: "an integer in {-1,0,1}",
    })?;
    Reward::from_f64(n).ok_or_else(|| ParseError::RewardOutOfRange(v.to_string()))
}

/// Parses the task-generator output. Every expected tool call must name one of
/// `offered`.
pub fn parse_task(value: &Value, offered: &[&str]) -> Result<TaskDraft, ParseError> {
    let obj = object(value)?;
    let calls = match obj.get("expected_tool_calls") {
        None => return Err(ParseError::Missing("expected_tool_calls")),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str().map(str::to_string).ok_or(ParseError::WrongType {
                    field: "expected_tool_calls",
                    expected: "a list of tool names",
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => {
            return Err(ParseError::WrongType {
                field: "expected_tool_calls",
                expected: "a list of tool names",
            })
        }
    };
    let intent = string_field(obj, "user_intent")?;
    let persona = string_field(obj, "user_persona")?;
    let first_query = string_field(obj, "first_user_query")?;
    if first_query.trim().is_empty() {
        return Err(ParseError::Empty("first_user_query"));
    }
    if let Some(unknown) = calls.iter().find(|c| !offered.contains(&c.as_str())) {
        return Err(ParseError::UnknownTool(unknown.clone()));
    }
    Ok(TaskDraft {
        expected_calls: calls,
        intent,
        persona,
        first_query,
    })
}

/// `{result, reward}` from the tool simulator.
pub fn parse_tool_result(value: &Value) -> Result<(String, Reward), ParseError> {
    let obj = object(value)?;
    Ok((string_field(obj, "result")?, reward_field(obj)?))
}

/// `{response, reward}` from the user simulator. An empty response ends the
/// conversation.
pub fn parse_user(value: &Value) -> Result<(String, Reward), ParseError> {
    let obj = object(value)?;
    Ok((string_field(obj, "response")?, reward_field(obj)?))
}

/// `{reward, reasoning}` from the verifier.
pub fn parse_verdict(value: &Value) -> Result<(Reward, String), ParseError> {
    let obj = object(value)?;
    let reward = reward_field(obj)?;
    let reasoning = match obj.get("reasoning") {
        None => return Err(ParseError::Missing("reasoning")),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(ParseError::WrongType {
                field: "reasoning",
                expected: "a string",
            })
        }
    };
    Ok((reward, reasoning))
}

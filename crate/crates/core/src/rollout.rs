//! One simulated interaction: the agent acts, tool calls are answered by the
//! tool simulator, user-facing replies by the user simulator, until the user
//! ends the conversation or a limit is hit.
//!
//! [`Rollout`] is a step-wise state machine so the same logic serves both the
//! self-contained loop ([`run_rollout`]) and externally driven sessions where
//! the agent's text arrives over the wire.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{
    complete_parsed, parse_task, parse_tool_result, parse_user, strip_reasoning, Backend, BackendError,
    BackendErrorKind, CallPolicy, ChatMessage, CompletionParams, ParseError, Simulators, extract_json,
};
use crate::curriculum::AspectLevels;
use crate::prompt::{
    render_agent_opening, render_task_prompt, render_tool_call, render_tool_prompt, render_user_prompt,
    PromptContext, PromptError, TemplateSet,
};
use crate::reward::Reward;
use crate::tools::ToolSpec;

/// A generated task together with the tools and levels it was generated for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub persona: String,
    pub intent: String,
    pub first_query: String,
    pub expected_calls: Vec<String>,
    pub levels: AspectLevels,
    pub tools: Vec<ToolSpec>,
}

impl TaskSpec {
    pub fn tool_names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AgentText,
    AgentToolCall,
    ToolResult,
    UserMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_reward: Option<Reward>,
}

impl Event {
    pub fn user(content: impl Into<String>, sim_reward: Option<Reward>) -> Self {
        Self {
            kind: EventKind::UserMessage,
            content: content.into(),
            tool_name: None,
            sim_reward,
        }
    }

    pub fn agent_text(content: impl Into<String>) -> Self {
        Self {
            kind: EventKind::AgentText,
            content: content.into(),
            tool_name: None,
            sim_reward: None,
        }
    }

    pub fn tool_call(call: &ToolCall) -> Self {
        Self {
            kind: EventKind::AgentToolCall,
            content: render_tool_call(call),
            tool_name: Some(call.name.clone()),
            sim_reward: None,
        }
    }

    pub fn tool_result(name: &str, content: impl Into<String>, sim_reward: Reward) -> Self {
        Self {
            kind: EventKind::ToolResult,
            content: content.into(),
            tool_name: Some(name.to_string()),
            sim_reward: Some(sim_reward),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    CompletedByUserEnd,
    TurnLimit,
    LengthLimit,
    Aborted,
}

/// Turn counters. User turns exclude the opening query; tool turns count
/// simulated calls; agent turns count user-facing replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub user_turns: u32,
    pub tool_turns: u32,
    pub agent_turns: u32,
}

impl Counters {
    pub fn recount(events: &[Event]) -> Self {
        let count = |k| events.iter().filter(|e| e.kind == k).count() as u32;
        Self {
            user_turns: count(EventKind::UserMessage).saturating_sub(1),
            tool_turns: count(EventKind::AgentToolCall),
            agent_turns: count(EventKind::AgentText),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub events: Vec<Event>,
    pub status: Status,
    pub counters: Counters,
    pub token_estimate: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryViolation {
    #[error("trajectory must open with the user's first query")]
    MissingOpening,
    #[error("event {0}: tool_name must be present exactly on tool call and tool result events")]
    ToolName(usize),
    #[error("event {0}: sim_reward only allowed on tool results and user messages")]
    SimReward(usize),
    #[error("event {0}: tool call not immediately followed by its result")]
    UnpairedCall(usize),
    #[error("event {0}: tool result without a preceding call")]
    OrphanResult(usize),
    #[error("event {0}: consecutive user messages")]
    ConsecutiveUser(usize),
    #[error("counters {stored:?} differ from recount {recount:?}")]
    Counters { stored: Counters, recount: Counters },
}

impl Trajectory {
    /// Checks the structural invariants every finished trajectory satisfies.
    pub fn validate(&self) -> Result<(), TrajectoryViolation> {
        let ev = &self.events;
        match ev.first() {
            Some(e) if e.kind == EventKind::UserMessage => {}
            _ => return Err(TrajectoryViolation::MissingOpening),
        }
        for (i, e) in ev.iter().enumerate() {
            let named = matches!(e.kind, EventKind::AgentToolCall | EventKind::ToolResult);
            if named != e.tool_name.is_some() {
                return Err(TrajectoryViolation::ToolName(i));
            }
            let rewarded = matches!(e.kind, EventKind::ToolResult | EventKind::UserMessage);
            if e.sim_reward.is_some() && !rewarded {
                return Err(TrajectoryViolation::SimReward(i));
            }
            match e.kind {
                EventKind::AgentToolCall => match ev.get(i + 1) {
                    Some(next) if next.kind == EventKind::ToolResult && next.tool_name == e.tool_name => {}
                    _ => return Err(TrajectoryViolation::UnpairedCall(i)),
                },
                EventKind::ToolResult => {
                    if i == 0 || ev[i - 1].kind != EventKind::AgentToolCall {
                        return Err(TrajectoryViolation::OrphanResult(i));
                    }
                }
                EventKind::UserMessage => {
                    if i > 0 && ev[i - 1].kind == EventKind::UserMessage {
                        return Err(TrajectoryViolation::ConsecutiveUser(i));
                    }
                }
                EventKind::AgentText => {}
            }
        }
        let recount = Counters::recount(ev);
        if recount != self.counters {
            return Err(TrajectoryViolation::Counters {
                stored: self.counters,
                recount,
            });
        }
        Ok(())
    }

    /// Step-level rewards the simulators attached along the way. Recorded for
    /// analysis only.
    pub fn sim_rewards(&self) -> impl Iterator<Item = Reward> + '_ {
        self.events.iter().filter_map(|e| e.sim_reward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    ToolCalls(Vec<ToolCall>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("unterminated <tool_call> block")]
    Unterminated,
    #[error("tool call block contains no calls")]
    Empty,
    #[error("tool call block is not valid JSON: {0}")]
    Json(String),
    #[error("tool call {index}: {detail}")]
    InvalidCall { index: usize, detail: &'static str },
}

const CALL_OPEN: &str = "<tool_call>";
const CALL_CLOSE: &str = "</tool_call>";

fn parse_call(value: Value, index: usize) -> Result<ToolCall, ActionError> {
    let invalid = |detail| ActionError::InvalidCall { index, detail };
    let Value::Object(mut obj) = value else {
        return Err(invalid("not a JSON object"));
    };
    let name = match obj.remove("name") {
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        _ => return Err(invalid("missing or empty 'name'")),
    };
    let arguments = match obj.remove("arguments") {
        None | Some(Value::Null) => Value::Object(Default::default()),
        Some(v @ Value::Object(_)) => v,
        Some(Value::String(s)) => match serde_json::from_str::<Value>(&s) {
            Ok(v @ Value::Object(_)) => v,
            _ => return Err(invalid("'arguments' string is not a JSON object")),
        },
        Some(_) => return Err(invalid("'arguments' must be an object")),
    };
    Ok(ToolCall { name, arguments })
}

fn parse_block(body: &str, calls: &mut Vec<ToolCall>) -> Result<(), ActionError> {
    let mut rest = body;
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ',');
        if rest.is_empty() {
            return Ok(());
        }
        let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<Value>();
        let value = match stream.next() {
            Some(Ok(v)) => v,
            Some(Err(e)) => return Err(ActionError::Json(e.to_string())),
            None => return Ok(()),
        };
        let consumed = stream.byte_offset();
        match value {
            Value::Array(items) => {
                for item in items {
                    let i = calls.len();
                    calls.push(parse_call(item, i)?);
                }
            }
            other => {
                let i = calls.len();
                calls.push(parse_call(other, i)?);
            }
        }
        rest = &rest[consumed..];
    }
}

/// Splits agent output into tool calls or a user-facing reply. Reasoning
/// blocks are dropped in both cases.
pub fn classify_action(agent_text: &str) -> Result<AgentAction, ActionError> {
    let visible = strip_reasoning(agent_text);
    if !visible.contains(CALL_OPEN) {
        return Ok(AgentAction::Text(visible.trim().to_string()));
    }
    let mut calls = Vec::new();
    let mut rest = visible.as_str();
    while let Some(open) = rest.find(CALL_OPEN) {
        let after = &rest[open + CALL_OPEN.len()..];
        let close = after.find(CALL_CLOSE).ok_or(ActionError::Unterminated)?;
        parse_block(&after[..close], &mut calls)?;
        rest = &after[close + CALL_CLOSE.len()..];
    }
    if calls.is_empty() {
        return Err(ActionError::Empty);
    }
    Ok(AgentAction::ToolCalls(calls))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskGenError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Asks the task generator for one task over `tools`. Malformed output is
/// retried within the policy budget; a reply naming tools outside `tools` is
/// re-prompted once and then fails.
pub fn generate_task(
    templates: &TemplateSet,
    tools: Vec<ToolSpec>,
    levels: AspectLevels,
    backend: &dyn Backend,
    policy: &CallPolicy,
) -> Result<TaskSpec, TaskGenError> {
    let prompt = render_task_prompt(templates, &tools, &levels)?;
    let messages = [ChatMessage::user(prompt)];
    let offered: Vec<&str> = tools.iter().map(|t| t.name.as_str()).collect();
    let total = policy.retry_budget.saturating_add(1);
    let mut mismatches = 0;
    let mut attempts = 0;
    let mut last = BackendError::malformed("no attempt made");
    while attempts < total {
        attempts += 1;
        let outcome = backend
            .complete(&messages, &policy.params)
            .and_then(|text| extract_json(&text))
            .and_then(|v| match parse_task(&v, &offered) {
                Ok(d) => Ok(d),
                Err(e @ ParseError::UnknownTool(_)) => {
                    mismatches += 1;
                    Err(e.into_backend())
                }
                Err(e) => Err(e.into_backend()),
            });
        match outcome {
            Ok(draft) => {
                return Ok(TaskSpec {
                    persona: draft.persona,
                    intent: draft.intent,
                    first_query: draft.first_query,
                    expected_calls: draft.expected_calls,
                    levels,
                    tools,
                })
            }
            Err(e) => last = e,
        }
        if mismatches >= 2 {
            break;
        }
    }
    Err(TaskGenError::Backend(BackendError {
        kind: BackendErrorKind::RetriesExhausted,
        detail: alloc::format!("{}: {}", last.kind.as_str(), last.detail),
        attempts,
    }))
}

/// Simulates one tool call against the history that precedes it.
pub fn step_tool(
    templates: &TemplateSet,
    task: &TaskSpec,
    history: &[Event],
    call: &ToolCall,
    backend: &dyn Backend,
    policy: &CallPolicy,
) -> Result<Event, BackendError> {
    let ctx = PromptContext::new(task, history);
    let prompt = render_tool_prompt(templates, &ctx, call).map_err(|e| BackendError::malformed(e.to_string()))?;
    let (result, reward) = complete_parsed(backend, &[ChatMessage::user(prompt)], policy, parse_tool_result)?;
    Ok(Event::tool_result(&call.name, result, reward))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserTurn {
    Message(Event),
    End { sim_reward: Reward },
}

/// Asks the user simulator to answer `latest`, the agent's newest reply.
/// `history` excludes that reply.
pub fn step_user(
    templates: &TemplateSet,
    task: &TaskSpec,
    history: &[Event],
    latest: &str,
    backend: &dyn Backend,
    policy: &CallPolicy,
) -> Result<UserTurn, BackendError> {
    let ctx = PromptContext::new(task, history);
    let prompt = render_user_prompt(templates, &ctx, latest).map_err(|e| BackendError::malformed(e.to_string()))?;
    let (response, reward) = complete_parsed(backend, &[ChatMessage::user(prompt)], policy, parse_user)?;
    if response.trim().is_empty() {
        Ok(UserTurn::End { sim_reward: reward })
    } else {
        Ok(UserTurn::Message(Event::user(response, Some(reward))))
    }
}

/// Hard caps for one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutLimits {
    pub max_user_turns: u32,
    pub max_tool_turns: u32,
    pub max_agent_turns: u32,
    pub max_token_estimate: u64,
}

impl RolloutLimits {
    pub fn from_levels(levels: &AspectLevels, max_token_estimate: u64) -> Self {
        Self {
            max_user_turns: levels.max_user_turns,
            max_tool_turns: levels.max_tool_turns,
            max_agent_turns: levels.max_agent_turns,
            max_token_estimate,
        }
    }
}

/// Token estimate for one piece of text.
pub type TokenCounter = fn(&str) -> u64;

/// Four characters per token, rounded up.
pub fn chars_over_four(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub limits: RolloutLimits,
    pub simulator: CallPolicy,
    /// Extra attempts the agent gets after emitting an unparseable tool block.
    pub action_retry_budget: u32,
    pub token_counter: TokenCounter,
}

impl RolloutConfig {
    pub fn new(limits: RolloutLimits) -> Self {
        Self {
            limits,
            simulator: CallPolicy::default(),
            action_retry_budget: 2,
            token_counter: chars_over_four,
        }
    }
}

/// What a single agent action did to the rollout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub events: Vec<Event>,
    pub done: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
    /// Set when the action was rejected as unparseable and the agent may retry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RolloutError {
    #[error("rollout already finished")]
    AlreadyDone,
    #[error("rollout still running")]
    NotDone,
}

pub struct Rollout {
    task_id: String,
    task: Arc<TaskSpec>,
    templates: Arc<TemplateSet>,
    config: RolloutConfig,
    events: Vec<Event>,
    counters: Counters,
    token_estimate: u64,
    agent_view: Vec<ChatMessage>,
    malformed_streak: u32,
    status: Option<Status>,
    abort_reason: Option<String>,
}

impl core::fmt::Debug for Rollout {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Rollout")
            .field("task_id", &self.task_id)
            .field("events", &self.events.len())
            .field("status", &self.status)
            .finish()
    }
}

impl Rollout {
    pub fn new(
        task_id: impl Into<String>,
        task: Arc<TaskSpec>,
        templates: Arc<TemplateSet>,
        config: RolloutConfig,
    ) -> Result<Self, PromptError> {
        let opening = render_agent_opening(&templates, task.levels.system_prompt_level, &task.tools)?;
        let first = Event::user(task.first_query.clone(), None);
        let token_estimate = (config.token_counter)(&first.content);
        let agent_view = alloc::vec![ChatMessage::system(opening), ChatMessage::user(task.first_query.clone())];
        let mut r = Self {
            task_id: task_id.into(),
            task,
            templates,
            config,
            events: alloc::vec![first],
            counters: Counters::default(),
            token_estimate,
            agent_view,
            malformed_streak: 0,
            status: None,
            abort_reason: None,
        };
        if r.token_estimate > r.config.limits.max_token_estimate {
            r.status = Some(Status::LengthLimit);
        }
        Ok(r)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn task(&self) -> &Arc<TaskSpec> {
        &self.task
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Conversation as the agent sees it: system prompt with tools, the first
    /// query, then raw agent outputs interleaved with tool and user messages.
    pub fn agent_messages(&self) -> &[ChatMessage] {
        &self.agent_view
    }

    pub fn is_done(&self) -> bool {
        self.status.is_some()
    }

    pub fn status(&self) -> Option<Status> {
        self.status
    }

    pub fn abort_reason(&self) -> Option<&str> {
        self.abort_reason.as_deref()
    }

    /// Ends the rollout as aborted, e.g. when the agent backend fails.
    pub fn abort(&mut self, reason: impl Into<String>) {
        if self.status.is_none() {
            self.status = Some(Status::Aborted);
            self.abort_reason = Some(reason.into());
        }
    }

    fn push(&mut self, event: Event) {
        self.token_estimate += (self.config.token_counter)(&event.content);
        self.events.push(event);
    }

    fn over_length(&self) -> bool {
        self.token_estimate > self.config.limits.max_token_estimate
    }

    fn finish(&mut self, status: Status, from: usize) -> StepOutcome {
        self.status = Some(status);
        self.outcome(from, None)
    }

    fn outcome(&self, from: usize, rejected: Option<String>) -> StepOutcome {
        StepOutcome {
            events: self.events[from..].to_vec(),
            done: self.status.is_some(),
            status: self.status,
            rejected,
        }
    }

    /// Feeds one agent output through the environment.
    pub fn apply_agent_output(&mut self, text: &str, sims: &Simulators) -> Result<StepOutcome, RolloutError> {
        if self.is_done() {
            return Err(RolloutError::AlreadyDone);
        }
        let from = self.events.len();
        let action = match classify_action(text) {
            Ok(a) => a,
            Err(e) => {
                self.malformed_streak += 1;
                if self.malformed_streak > self.config.action_retry_budget {
                    self.abort_reason = Some(e.to_string());
                    return Ok(self.finish(Status::Aborted, from));
                }
                return Ok(self.outcome(from, Some(e.to_string())));
            }
        };
        self.malformed_streak = 0;
        let limits = self.config.limits;
        match action {
            AgentAction::ToolCalls(calls) => {
                if self.counters.tool_turns as usize + calls.len() > limits.max_tool_turns as usize {
                    return Ok(self.finish(Status::TurnLimit, from));
                }
                self.agent_view.push(ChatMessage::assistant(text));
                for call in &calls {
                    let history_end = self.events.len();
                    self.push(Event::tool_call(call));
                    self.counters.tool_turns += 1;
                    let result = step_tool(
                        &self.templates,
                        &self.task,
                        &self.events[..history_end],
                        call,
                        sims.tool.as_ref(),
                        &self.config.simulator,
                    );
                    match result {
                        Ok(ev) => {
                            self.agent_view.push(ChatMessage::tool(ev.content.clone()));
                            self.push(ev);
                        }
                        Err(e) => {
                            // Drop the unanswered call so every call keeps its result.
                            let dangling = self.events.pop().expect("call just pushed");
                            self.token_estimate -= (self.config.token_counter)(&dangling.content);
                            self.counters.tool_turns -= 1;
                            self.abort_reason = Some(e.to_string());
                            return Ok(self.finish(Status::Aborted, from));
                        }
                    }
                }
                if self.over_length() {
                    return Ok(self.finish(Status::LengthLimit, from));
                }
                Ok(self.outcome(from, None))
            }
            AgentAction::Text(reply) => {
                if self.counters.agent_turns >= limits.max_agent_turns {
                    return Ok(self.finish(Status::TurnLimit, from));
                }
                let history_end = self.events.len();
                self.agent_view.push(ChatMessage::assistant(text));
                self.push(Event::agent_text(reply.clone()));
                self.counters.agent_turns += 1;
                if self.over_length() {
                    return Ok(self.finish(Status::LengthLimit, from));
                }
                let turn = step_user(
                    &self.templates,
                    &self.task,
                    &self.events[..history_end],
                    &reply,
                    sims.user.as_ref(),
                    &self.config.simulator,
                );
                match turn {
                    Err(e) => {
                        self.abort_reason = Some(e.to_string());
                        Ok(self.finish(Status::Aborted, from))
                    }
                    Ok(UserTurn::End { .. }) => Ok(self.finish(Status::CompletedByUserEnd, from)),
                    Ok(UserTurn::Message(ev)) => {
                        if self.counters.user_turns >= limits.max_user_turns {
                            return Ok(self.finish(Status::TurnLimit, from));
                        }
                        self.agent_view.push(ChatMessage::user(ev.content.clone()));
                        self.push(ev);
                        self.counters.user_turns += 1;
                        if self.over_length() {
                            return Ok(self.finish(Status::LengthLimit, from));
                        }
                        Ok(self.outcome(from, None))
                    }
                }
            }
        }
    }

    pub fn into_trajectory(self) -> Result<Trajectory, RolloutError> {
        let status = self.status.ok_or(RolloutError::NotDone)?;
        Ok(Trajectory {
            task_id: self.task_id,
            events: self.events,
            status,
            counters: self.counters,
            token_estimate: self.token_estimate,
        })
    }
}

/// Runs a rollout to completion with `agent` producing every action.
pub fn run_rollout(
    task_id: impl Into<String>,
    task: Arc<TaskSpec>,
    templates: Arc<TemplateSet>,
    config: RolloutConfig,
    agent: &dyn Backend,
    agent_params: &CompletionParams,
    sims: &Simulators,
) -> Result<Trajectory, PromptError> {
    let mut rollout = Rollout::new(task_id, task, templates, config)?;
    while !rollout.is_done() {
        match agent.complete(rollout.agent_messages(), agent_params) {
            Ok(text) => {
                rollout
                    .apply_agent_output(&text, sims)
                    .expect("loop only runs while the rollout is live");
            }
            Err(e) => rollout.abort(e.to_string()),
        }
    }
    Ok(rollout.into_trajectory().expect("loop ran to completion"))
}

//! Prompt rendering for the task generator, tool simulator, user simulator and
//! verifier, plus the agent system prompts.
//!
//! Prompt prose lives in `templates/*.txt` and is compiled in as the default
//! [`TemplateSet`]; any file can be replaced at runtime. Placeholders are
//! `{name}` where `name` is lowercase ASCII letters and spaces; every other
//! brace is literal text, so JSON examples inside templates need no escaping.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::curriculum::AspectLevels;
use crate::rollout::{Event, EventKind, TaskSpec, ToolCall};
use crate::tools::ToolSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template slot '{{{0}}}' has no value")]
    MissingSlot(String),
    #[error("{aspect} level {level} is outside 0..={max}")]
    LevelOutOfRange {
        aspect: &'static str,
        level: u32,
        max: u32,
    },
    #[error("tool list is empty")]
    NoTools,
    #[error("unknown template file '{0}'")]
    UnknownTemplate(String),
    #[error("template file '{file}' needs {expected} non-empty lines, found {found}")]
    LineCount {
        file: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Placeholder rendered for an empty interaction history.
pub const EMPTY_HISTORY: &str = "(none)";

macro_rules! builtin {
    ($file:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $file))
    };
}

/// All prompt text used by the environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub task_generation: String,
    pub tool_simulation: String,
    pub user_simulation: String,
    pub verifier: String,
    pub agent_opening: String,
    pub system: [String; 4],
    pub persona: [String; 3],
    pub ambiguity: [String; 3],
    pub turns: [String; 3],
    pub criteria: [String; 5],
}

/// File names understood by [`TemplateSet::set_file`].
pub const TEMPLATE_FILES: &[&str] = &[
    "task_generation.txt",
    "tool_simulation.txt",
    "user_simulation.txt",
    "verifier.txt",
    "agent_opening.txt",
    "system_0_detailed.txt",
    "system_1_concise.txt",
    "system_2_sentence.txt",
    "system_3_general.txt",
    "persona_levels.txt",
    "ambiguity_levels.txt",
    "turn_levels.txt",
    "criteria_levels.txt",
];

fn body(text: &str) -> String {
    text.trim_end_matches(['\n', '\r']).to_string()
}

fn lines<const N: usize>(file: &'static str, text: &str) -> Result<[String; N], PromptError> {
    let found: Vec<String> = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let n = found.len();
    found.try_into().map_err(|_| PromptError::LineCount {
        file,
        expected: N,
        found: n,
    })
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let mut set = Self {
            task_generation: String::new(),
            tool_simulation: String::new(),
            user_simulation: String::new(),
            verifier: String::new(),
            agent_opening: String::new(),
            system: Default::default(),
            persona: Default::default(),
            ambiguity: Default::default(),
            turns: Default::default(),
            criteria: Default::default(),
        };
        let files = [
            ("task_generation.txt", builtin!("task_generation.txt")),
            ("tool_simulation.txt", builtin!("tool_simulation.txt")),
            ("user_simulation.txt", builtin!("user_simulation.txt")),
            ("verifier.txt", builtin!("verifier.txt")),
            ("agent_opening.txt", builtin!("agent_opening.txt")),
            ("system_0_detailed.txt", builtin!("system_0_detailed.txt")),
            ("system_1_concise.txt", builtin!("system_1_concise.txt")),
            ("system_2_sentence.txt", builtin!("system_2_sentence.txt")),
            ("system_3_general.txt", builtin!("system_3_general.txt")),
            ("persona_levels.txt", builtin!("persona_levels.txt")),
            ("ambiguity_levels.txt", builtin!("ambiguity_levels.txt")),
            ("turn_levels.txt", builtin!("turn_levels.txt")),
            ("criteria_levels.txt", builtin!("criteria_levels.txt")),
        ];
        for (name, text) in files {
            set.set_file(name, text).expect("bundled templates are well-formed");
        }
        set
    }

    /// Replaces the template stored under `name` (one of [`TEMPLATE_FILES`]).
    pub fn set_file(&mut self, name: &str, text: &str) -> Result<(), PromptError> {
        match name {
            "task_generation.txt" => self.task_generation = body(text),
            "tool_simulation.txt" => self.tool_simulation = body(text),
            "user_simulation.txt" => self.user_simulation = body(text),
            "verifier.txt" => self.verifier = body(text),
            "agent_opening.txt" => self.agent_opening = body(text),
            "system_0_detailed.txt" => self.system[0] = body(text),
            "system_1_concise.txt" => self.system[1] = body(text),
            "system_2_sentence.txt" => self.system[2] = body(text),
            "system_3_general.txt" => self.system[3] = body(text),
            "persona_levels.txt" => self.persona = lines("persona_levels.txt", text)?,
            "ambiguity_levels.txt" => self.ambiguity = lines("ambiguity_levels.txt", text)?,
            "turn_levels.txt" => self.turns = lines("turn_levels.txt", text)?,
            "criteria_levels.txt" => self.criteria = lines("criteria_levels.txt", text)?,
            other => return Err(PromptError::UnknownTemplate(other.to_string())),
        }
        Ok(())
    }

    fn level<'a>(table: &'a [String], aspect: &'static str, level: u32) -> Result<&'a str, PromptError> {
        table
            .get(level as usize)
            .map(String::as_str)
            .ok_or(PromptError::LevelOutOfRange {
                aspect,
                level,
                max: table.len() as u32 - 1,
            })
    }

    pub fn persona_text(&self, level: u32) -> Result<&str, PromptError> {
        Self::level(&self.persona, "persona", level)
    }

    pub fn ambiguity_text(&self, level: u32) -> Result<&str, PromptError> {
        Self::level(&self.ambiguity, "ambiguity", level)
    }

    pub fn turns_text(&self, level: u32) -> Result<&str, PromptError> {
        Self::level(&self.turns, "interaction turns", level)
    }

    /// Agent system prompt: 0 is the most detailed, 3 the most general.
    pub fn system_prompt(&self, level: u32) -> Result<&str, PromptError> {
        Self::level(&self.system, "system prompt", level)
    }
}

fn is_slot_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && name.chars().all(|c| c.is_ascii_lowercase() || c == ' ')
        && !name.ends_with(' ')
}

/// Fills `{name}` placeholders from `slots`. Slot values are inserted verbatim
/// and never re-scanned.
pub fn render(template: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name = after.find('}').map(|close| &after[..close]);
        match name {
            Some(name) if is_slot_name(name) => {
                let value = slots
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Pretty-printed function schemas, one block per tool, blank line between.
pub fn render_tools(tools: &[ToolSpec]) -> String {
    tools
        .iter()
        .map(|t| serde_json::to_string_pretty(&t.schema()).expect("tool schema serializes"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_event(event: &Event) -> String {
    let tag = match event.kind {
        EventKind::UserMessage => "[USER]",
        EventKind::AgentText => "[ASSISTANT]",
        EventKind::AgentToolCall => "[TOOL_CALL]",
        EventKind::ToolResult => "[TOOL_RESULT]",
    };
    format!("{tag} {}", event.content)
}

/// Role-tagged history blocks in event order, or [`EMPTY_HISTORY`].
pub fn render_history(events: &[Event]) -> String {
    if events.is_empty() {
        return EMPTY_HISTORY.to_string();
    }
    events.iter().map(render_event).collect::<Vec<_>>().join("\n\n")
}

/// Slot values shared by the simulator prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContext {
    pub tools_text: String,
    pub history_text: String,
    pub intent: String,
    pub persona: String,
    pub first_query: String,
    pub expected_calls: Vec<String>,
    pub levels: AspectLevels,
}

impl PromptContext {
    pub fn new(task: &TaskSpec, history: &[Event]) -> Self {
        Self {
            tools_text: render_tools(&task.tools),
            history_text: render_history(history),
            intent: task.intent.clone(),
            persona: task.persona.clone(),
            first_query: task.first_query.clone(),
            expected_calls: task.expected_calls.clone(),
            levels: task.levels,
        }
    }
}

/// Verifier criteria for one strictness level: criteria `0..=level`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriteriaSet {
    pub level: u32,
    pub lines: Vec<String>,
}

impl CriteriaSet {
    pub fn new(templates: &TemplateSet, level: u32) -> Result<Self, PromptError> {
        let max = templates.criteria.len() as u32 - 1;
        if level > max {
            return Err(PromptError::LevelOutOfRange {
                aspect: "criteria",
                level,
                max,
            });
        }
        Ok(Self {
            level,
            lines: templates.criteria[..=level as usize].to_vec(),
        })
    }

    /// `1. ...` numbered list.
    pub fn numbered(&self) -> String {
        self.lines
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{}. {l}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn render_task_prompt(
    templates: &TemplateSet,
    tools: &[ToolSpec],
    levels: &AspectLevels,
) -> Result<String, PromptError> {
    if tools.is_empty() {
        return Err(PromptError::NoTools);
    }
    let tools_text = render_tools(tools);
    let calls = levels.expected_calls.to_string();
    render(
        &templates.task_generation,
        &[
            ("tools", &tools_text),
            ("number of expected calls", &calls),
            ("persona", templates.persona_text(levels.persona_level)?),
            ("ambiguity", templates.ambiguity_text(levels.ambiguity_level)?),
            ("number of turns", templates.turns_text(levels.turn_description_level())?),
        ],
    )
}

pub fn render_tool_call(call: &ToolCall) -> String {
    serde_json::to_string(call).expect("tool call serializes")
}

pub fn render_tool_prompt(
    templates: &TemplateSet,
    ctx: &PromptContext,
    call: &ToolCall,
) -> Result<String, PromptError> {
    let call_text = render_tool_call(call);
    render(
        &templates.tool_simulation,
        &[
            ("history", &ctx.history_text),
            ("tool calling", &call_text),
            ("tools", &ctx.tools_text),
            ("user intent", &ctx.intent),
        ],
    )
}

pub fn render_user_prompt(
    templates: &TemplateSet,
    ctx: &PromptContext,
    latest_agent_message: &str,
) -> Result<String, PromptError> {
    render(
        &templates.user_simulation,
        &[
            ("user query", &ctx.first_query),
            ("user intent", &ctx.intent),
            ("user persona", &ctx.persona),
            ("tools", &ctx.tools_text),
            ("history", &ctx.history_text),
            ("agent message", latest_agent_message),
        ],
    )
}

pub fn render_verifier_prompt(
    templates: &TemplateSet,
    ctx: &PromptContext,
    criteria: &CriteriaSet,
) -> Result<String, PromptError> {
    let expected = serde_json::to_string(&ctx.expected_calls).expect("names serialize");
    let count = criteria.lines.len().to_string();
    let criteria_text = criteria.numbered();
    render(
        &templates.verifier,
        &[
            ("user query", &ctx.first_query),
            ("expected tool calls", &expected),
            ("user intent", &ctx.intent),
            ("user persona", &ctx.persona),
            ("tools text", &ctx.tools_text),
            ("interaction history text", &ctx.history_text),
            ("num criteria", &count),
            ("criteria text", &criteria_text),
        ],
    )
}

pub fn select_system_prompt(templates: &TemplateSet, level: u32) -> Result<&str, PromptError> {
    templates.system_prompt(level)
}

/// Opening system message shown to the agent: system prompt plus tool list.
pub fn render_agent_opening(
    templates: &TemplateSet,
    system_prompt_level: u32,
    tools: &[ToolSpec],
) -> Result<String, PromptError> {
    let tools_text = render_tools(tools);
    render(
        &templates.agent_opening,
        &[
            ("system prompt", templates.system_prompt(system_prompt_level)?),
            ("tools", &tools_text),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{derive_levels, CurriculumConfig, DifficultyState};
    use crate::tools::{ParamKind, ParamSpec};
    use alloc::vec;

    fn levels(d: u32) -> AspectLevels {
        derive_levels(&DifficultyState::new(d, 0).unwrap(), &CurriculumConfig::default())
    }

    fn weather() -> ToolSpec {
        ToolSpec {
            name: "get_weather".into(),
            description: "Current weather for a city".into(),
            category: "weather".into(),
            parameters: vec![ParamSpec {
                name: "city".into(),
                kind: ParamKind::String,
                description: "City name".into(),
                required: true,
            }],
        }
    }

    #[test]
    fn placeholder_rules() {
        assert_eq!(render("a {x} b", &[("x", "1")]).unwrap(), "a 1 b");
        assert_eq!(render("{-1, 0, 1}", &[]).unwrap(), "{-1, 0, 1}");
        assert_eq!(render("{\n  \"k\": 0\n}", &[]).unwrap(), "{\n  \"k\": 0\n}");
        assert_eq!(render("{user intent}", &[("user intent", "{tools}")]).unwrap(), "{tools}");
        assert_eq!(
            render("{missing slot}", &[]),
            Err(PromptError::MissingSlot("missing slot".into()))
        );
        assert_eq!(render("dangling {", &[]).unwrap(), "dangling {");
    }

    #[test]
    fn persona_and_ambiguity_descriptors() {
        let t = TemplateSet::builtin();
        let p = render_task_prompt(&t, &[weather()], &levels(1)).unwrap();
        assert!(p.contains("Expert: the user has extensive prior knowledge"));
        let mut lv = levels(1);
        lv.ambiguity_level = 2;
        let p = render_task_prompt(&t, &[weather()], &lv).unwrap();
        assert!(p.contains("Highly ambiguous"));
        lv.expected_calls = 2;
        let p = render_task_prompt(&t, &[weather()], &lv).unwrap();
        assert!(p.contains("approximately 2"));
        assert!(render_task_prompt(&t, &[], &lv).is_err());
        lv.persona_level = 3;
        assert!(matches!(
            render_task_prompt(&t, &[weather()], &lv),
            Err(PromptError::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn system_prompts() {
        let t = TemplateSet::builtin();
        assert_eq!(select_system_prompt(&t, 3).unwrap(), "You are a helpful assistant.");
        assert_eq!(
            select_system_prompt(&t, 2).unwrap(),
            "You are a helpful multi-turn dialogue assistant capable of leveraging tool calls to solve user tasks."
        );
        assert!(select_system_prompt(&t, 0).unwrap().len() > select_system_prompt(&t, 1).unwrap().len());
        assert!(select_system_prompt(&t, 4).is_err());
    }

    #[test]
    fn criteria_prefixes() {
        let t = TemplateSet::builtin();
        let c0 = CriteriaSet::new(&t, 0).unwrap();
        assert_eq!(c0.lines.len(), 1);
        assert!(c0.lines[0].starts_with("Meet the user's intent"));
        for l in 0..4 {
            let a = CriteriaSet::new(&t, l).unwrap();
            let b = CriteriaSet::new(&t, l + 1).unwrap();
            assert_eq!(a.lines.len(), l as usize + 1);
            assert_eq!(&b.lines[..a.lines.len()], &a.lines[..]);
        }
        assert!(CriteriaSet::new(&t, 5).is_err());
    }

    #[test]
    fn history_placeholder() {
        assert_eq!(render_history(&[]), "(none)");
    }

    #[test]
    fn template_override() {
        let mut t = TemplateSet::builtin();
        t.set_file("system_3_general.txt", "Be brief.\n").unwrap();
        assert_eq!(t.system_prompt(3).unwrap(), "Be brief.");
        assert!(t.set_file("persona_levels.txt", "one\ntwo\n").is_err());
        assert!(t.set_file("nope.txt", "").is_err());
    }
}

//! Textual tool definitions and the repository they are sampled from.
//!
//! Tools never execute. They carry a name, a description, a category label and
//! a parameter schema, which is enough for the simulators to pretend.
//!
//! The on-disk form is one JSON object per line:
//!
//! ```text
//! {"name":"get_weather","description":"...","category":"weather",
//!  "parameters":[{"name":"city","type":"string","description":"...","required":true}]}
//! ```

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

/// JSON type of a tool parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Number,
    Integer,
    Boolean,
    Array,
    Object,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Number => "number",
            ParamKind::Integer => "integer",
            ParamKind::Boolean => "boolean",
            ParamKind::Array => "array",
            ParamKind::Object => "object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamKind,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub category: String,
    #[serde(default)]
    pub parameters: Vec<ParamSpec>,
}

impl ToolSpec {
    /// Checks the per-tool invariants: non-empty name and category, unique
    /// parameter names.
    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("tool name is empty".to_string());
        }
        if self.category.trim().is_empty() {
            return Err(alloc::format!("tool '{}' has an empty category", self.name));
        }
        let mut seen = BTreeSet::new();
        for p in &self.parameters {
            if p.name.trim().is_empty() {
                return Err(alloc::format!("tool '{}' has a parameter with an empty name", self.name));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(alloc::format!(
                    "tool '{}' declares parameter '{}' twice",
                    self.name, p.name
                ));
            }
        }
        Ok(())
    }

    /// Function-calling schema view used when rendering tool lists into prompts.
    pub fn schema(&self) -> ToolSchema<'_> {
        ToolSchema(self)
    }
}

/// Serializes a tool as `{name, description, parameters: {type, properties, required}}`,
/// keeping parameter declaration order.
pub struct ToolSchema<'a>(&'a ToolSpec);

struct Properties<'a>(&'a [ParamSpec]);

struct Property<'a>(&'a ParamSpec);

struct ParametersBlock<'a>(&'a [ParamSpec]);

impl Serialize for Property<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("type", self.0.kind.as_str())?;
        m.serialize_entry("description", &self.0.description)?;
        m.end()
    }
}

impl Serialize for Properties<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for p in self.0 {
            m.serialize_entry(&p.name, &Property(p))?;
        }
        m.end()
    }
}

impl Serialize for ParametersBlock<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let required: Vec<&str> = self
            .0
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        let mut m = s.serialize_map(Some(3))?;
        m.serialize_entry("type", "object")?;
        m.serialize_entry("properties", &Properties(self.0))?;
        m.serialize_entry("required", &required)?;
        m.end()
    }
}

impl Serialize for ToolSchema<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(3))?;
        m.serialize_entry("name", &self.0.name)?;
        m.serialize_entry("description", &self.0.description)?;
        m.serialize_entry("parameters", &ParametersBlock(&self.0.parameters))?;
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepositoryError {
    /// A record could not be decoded or failed validation. `record` is the
    /// zero-based index among non-blank lines, `line` the one-based line number.
    Malformed { record: usize, line: usize, detail: String },
    DuplicateName(String),
    Empty,
}

impl fmt::Display for RepositoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepositoryError::Malformed { record, line, detail } => {
                write!(f, "malformed tool record #{record} (line {line}): {detail}")
            }
            RepositoryError::DuplicateName(name) => write!(f, "duplicate tool name '{name}'"),
            RepositoryError::Empty => f.write_str("tool repository contains no tools"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleError {
    CountOutOfRange { requested: usize, available: usize },
}

impl core::error::Error for RepositoryError {}

impl fmt::Display for SampleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleError::CountOutOfRange { requested, available } => write!(
                f,
                "cannot sample {requested} tools from a repository of {available}"
            ),
        }
    }
}

impl core::error::Error for SampleError {}

/// Immutable tool collection with a category index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repository {
    tools: Vec<ToolSpec>,
    categories: BTreeMap<String, Vec<usize>>,
}

impl Repository {
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self, RepositoryError> {
        if tools.is_empty() {
            return Err(RepositoryError::Empty);
        }
        let mut names = BTreeSet::new();
        let mut categories: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, tool) in tools.iter().enumerate() {
            tool.validate().map_err(|detail| RepositoryError::Malformed {
                record: i,
                line: i + 1,
                detail,
            })?;
            if !names.insert(tool.name.as_str()) {
                return Err(RepositoryError::DuplicateName(tool.name.clone()));
            }
            categories.entry(tool.category.clone()).or_default().push(i);
        }
        Ok(Self { tools, categories })
    }

    /// Parses the line-delimited record format. Blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, RepositoryError> {
        let mut tools = Vec::new();
        let mut names = BTreeSet::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = tools.len();
            let malformed = |detail: String| RepositoryError::Malformed {
                record,
                line: line_no + 1,
                detail,
            };
            let tool: ToolSpec =
                serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            tool.validate().map_err(malformed)?;
            if !names.insert(tool.name.clone()) {
                return Err(RepositoryError::DuplicateName(tool.name));
            }
            tools.push(tool);
        }
        Self::new(tools)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tools {
            // ToolSpec holds only strings, bools and enums.
            out.push_str(&serde_json::to_string(t).expect("tool serializes"));
            out.push('\n');
        }
        out
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    /// Category names in sorted order.
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn category(&self, name: &str) -> Option<impl Iterator<Item = &ToolSpec>> {
        self.categories
            .get(name)
            .map(|idx| idx.iter().map(move |&i| &self.tools[i]))
    }

    /// Draws `count` distinct tools, exhausting one category before moving on.
    ///
    /// Categories are visited in uniformly random order (one `gen_range` over the
    /// sorted list of unused categories per pick); within a category, tools are
    /// shuffled. Output order is draw order.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<ToolSpec>, SampleError> {
        if count == 0 || count > self.tools.len() {
            return Err(SampleError::CountOutOfRange {
                requested: count,
                available: self.tools.len(),
            });
        }
        let mut unused: Vec<&Vec<usize>> = self.categories.values().collect();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let pick = rng.gen_range(0..unused.len());
            let mut members = unused.remove(pick).clone();
            members.shuffle(rng);
            let need = count - out.len();
            out.extend(members.into_iter().take(need).map(|i| self.tools[i].clone()));
        }
        Ok(out)
    }
}

/// Free-function form of [`Repository::sample`].
pub fn sample_tools<R: Rng + ?Sized>(
    repo: &Repository,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ToolSpec>, SampleError> {
    repo.sample(count, rng)
}

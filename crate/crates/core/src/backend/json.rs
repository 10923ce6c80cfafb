use alloc::string::String;

use serde_json::Value;

use super::BackendError;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Removes `<think>...</think>` blocks. A dangling `</think>` drops everything
/// before it; a dangling `<think>` drops everything after it.
pub fn strip_reasoning(text: &str) -> String {
    let mut rest = text;
    if let Some(pos) = rest.rfind(THINK_CLOSE) {
        if !rest[..pos].contains(THINK_OPEN) {
            rest = &rest[pos + THINK_CLOSE.len()..];
        }
    }
    let mut out = String::with_capacity(rest.len());
    while let Some(start) = rest.find(THINK_OPEN) {
        out.push_str(&rest[..start]);
        let after = &rest[start + THINK_OPEN.len()..];
        match after.find(THINK_CLOSE) {
            Some(end) => rest = &after[end + THINK_CLOSE.len()..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    out
}

fn strip_fences(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Returns the first complete top-level JSON object or array in `text`,
/// ignoring reasoning blocks and markdown code fences.
pub fn extract_json(text: &str) -> Result<Value, BackendError> {
    let cleaned = strip_fences(&strip_reasoning(text));
    for (i, c) in cleaned.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&cleaned[i..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            return Ok(value);
        }
    }
    Err(BackendError::malformed("no JSON value found in completion"))
}

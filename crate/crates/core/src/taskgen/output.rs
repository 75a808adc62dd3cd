use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TaskgenError;
use crate::task_model::RelPath;

pub const FILE_MARKER: &str = "--- path:";

/// The six-tag output of a generation call, before materialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTask {
    pub prompt: String,
    pub tests: String,
    /// `None` means every test weighs the same.
    pub weights: Option<BTreeMap<String, f64>>,
    pub info: String,
    pub files: BTreeMap<String, String>,
    pub test_requirements: Vec<String>,
}

/// Content between the first `<tag>` and the next `</tag>`, if both exist.
fn tag_body<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.find(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(&raw[start..end])
}

fn required(raw: &str, tag: &'static str) -> Result<String, TaskgenError> {
    match tag_body(raw, tag).map(str::trim) {
        Some(body) if !body.is_empty() => Ok(body.to_string()),
        _ => Err(TaskgenError::MissingRequiredTag(tag)),
    }
}

fn parse_weights(body: &str) -> Result<Option<BTreeMap<String, f64>>, TaskgenError> {
    let body = body.trim();
    if body.is_empty() {
        return Ok(None);
    }
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| TaskgenError::MalformedWeights(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| TaskgenError::MalformedWeights("expected a JSON object".into()))?;
    let mut out = BTreeMap::new();
    for (name, v) in obj {
        let w = v
            .as_f64()
            .ok_or_else(|| TaskgenError::MalformedWeights(format!("`{name}` is not a number")))?;
        if !w.is_finite() || w < 0.0 {
            return Err(TaskgenError::MalformedWeights(format!("`{name}` must be a finite non-negative number")));
        }
        out.insert(name.clone(), w);
    }
    if out.is_empty() {
        return Ok(None);
    }
    Ok(Some(out))
}

fn parse_files(body: &str) -> Result<BTreeMap<String, String>, TaskgenError> {
    let body = body.strip_prefix('\n').unwrap_or(body);
    let mut files = BTreeMap::new();
    let mut current: Option<(String, String)> = None;
    let finish = |files: &mut BTreeMap<String, String>, (path, mut content): (String, String)| {
        // The newline before the next marker (or the closing tag) belongs to the marker.
        if content.ends_with('\n') {
            content.pop();
        }
        if files.insert(path.clone(), content).is_some() {
            return Err(TaskgenError::MalformedFiles(format!("duplicate path `{path}`")));
        }
        Ok(())
    };
    for line in body.split_inclusive('\n') {
        if let Some(rest) = line.strip_prefix(FILE_MARKER) {
            if let Some(done) = current.take() {
                finish(&mut files, done)?;
            }
            let path = rest.trim();
            RelPath::new(path).map_err(|e| TaskgenError::MalformedFiles(e.to_string()))?;
            current = Some((path.to_string(), String::new()));
        } else if let Some((_, content)) = current.as_mut() {
            content.push_str(line);
        } else if !line.trim().is_empty() {
            return Err(TaskgenError::MalformedFiles(format!(
                "content before the first `{FILE_MARKER}` marker"
            )));
        }
    }
    if let Some(done) = current.take() {
        finish(&mut files, done)?;
    }
    Ok(files)
}

fn parse_requirements(body: &str) -> Vec<String> {
    body.split(['\n', ','])
        .map(|s| s.trim().trim_start_matches("- ").trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses a generation reply. `<prompt>` and `<tests>` are required; the
/// other tags default to empty.
pub fn parse_generation_output(raw: &str) -> Result<GeneratedTask, TaskgenError> {
    let prompt = required(raw, "prompt")?;
    let tests = required(raw, "tests")?;
    Ok(GeneratedTask {
        prompt,
        tests,
        weights: tag_body(raw, "weights").map(parse_weights).transpose()?.flatten(),
        info: tag_body(raw, "info").map(|s| s.trim().to_string()).unwrap_or_default(),
        files: tag_body(raw, "files").map(parse_files).transpose()?.unwrap_or_default(),
        test_requirements: tag_body(raw, "test_requirements").map(parse_requirements).unwrap_or_default(),
    })
}

/// Canonical six-tag text; parsing it yields the same task.
pub fn emit_generation_output(task: &GeneratedTask) -> String {
    let mut out = String::new();
    out.push_str(&format!("<prompt>\n{}\n</prompt>\n", task.prompt));
    out.push_str(&format!("<tests>\n{}\n</tests>\n", task.tests));
    let weights = match &task.weights {
        Some(w) => serde_json::to_string(w).expect("weights serialize"),
        None => String::new(),
    };
    out.push_str(&format!("<weights>\n{weights}\n</weights>\n"));
    out.push_str(&format!("<info>\n{}\n</info>\n", task.info));
    out.push_str("<files>\n");
    for (path, content) in &task.files {
        out.push_str(&format!("{FILE_MARKER} {path}\n{content}\n"));
    }
    out.push_str("</files>\n");
    out.push_str(&format!("<test_requirements>\n{}\n</test_requirements>\n", task.test_requirements.join("\n")));
    out
}

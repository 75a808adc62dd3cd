use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ProtocolError;

pub const DEFAULT_DURATION: f64 = 1.0;

const KNOWN_FIELDS: [&str; 4] = ["analysis", "plan", "commands", "task_complete"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub keystrokes: String,
    /// Seconds to wait after sending the keystrokes.
    pub duration: f64,
}

impl Command {
    pub fn new(keystrokes: impl Into<String>, duration: f64) -> Self {
        Self {
            keystrokes: keystrokes.into(),
            duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub analysis: String,
    pub plan: String,
    pub commands: Vec<Command>,
    pub task_complete: bool,
}

impl AgentResponse {
    /// Canonical JSON form; parsing it back yields the same response with no warnings.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("response is always serializable")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Warning {
    /// Non-whitespace text before or after the JSON object.
    SurroundingText,
    UnknownField { field: String },
    /// A negative duration was clamped to zero.
    NegativeDuration { command: usize },
    /// More than one JSON object was present; the first one was used.
    MultipleJsonObjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub response: AgentResponse,
    pub warnings: Vec<Warning>,
}

#[derive(Default)]
struct Warnings(Vec<Warning>);

impl Warnings {
    fn push(&mut self, w: Warning) {
        if !self.0.contains(&w) {
            self.0.push(w);
        }
    }
}

/// Extracts and validates the agent's JSON reply from raw model text.
///
/// The first balanced `{...}` span that parses as a JSON object wins. Text
/// around it is tolerated with a warning.
pub fn parse_agent_response(raw: &str) -> Result<ParseOutcome, ProtocolError> {
    let (start, end, object) = match find_first_object(raw, 0) {
        Scan::Found(start, end, object) => (start, end, object),
        Scan::Invalid(msg) => return Err(ProtocolError::InvalidJson(msg)),
        Scan::Nothing => return Err(ProtocolError::NoJsonObject),
    };

    let mut warnings = Warnings::default();
    if !raw[..start].trim().is_empty() {
        warnings.push(Warning::SurroundingText);
    }
    let response = validate_object(object, &mut warnings)?;
    if !raw[end..].trim().is_empty() {
        warnings.push(Warning::SurroundingText);
        if matches!(find_first_object(raw, end), Scan::Found(..)) {
            warnings.push(Warning::MultipleJsonObjects);
        }
    }
    Ok(ParseOutcome {
        response,
        warnings: warnings.0,
    })
}

enum Scan {
    Found(usize, usize, Map<String, Value>),
    Invalid(String),
    Nothing,
}

fn find_first_object(raw: &str, from: usize) -> Scan {
    let mut search = from;
    let mut first_error = None;
    while let Some(rel) = raw[search..].find('{') {
        let start = search + rel;
        match balanced_end(raw.as_bytes(), start) {
            Some(end) => match serde_json::from_str::<Value>(&raw[start..end]) {
                Ok(Value::Object(map)) => return Scan::Found(start, end, map),
                Ok(_) => search = end,
                Err(e) => {
                    first_error.get_or_insert_with(|| e.to_string());
                    search = end;
                }
            },
            None => search = start + 1,
        }
    }
    match first_error {
        Some(msg) => Scan::Invalid(msg),
        None => Scan::Nothing,
    }
}

/// Index one past the brace closing the object opened at `start`, counting
/// braces outside of JSON string literals only.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn schema(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::SchemaViolation(msg.into())
}

fn required_string(obj: &Map<String, Value>, key: &str) -> Result<String, ProtocolError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(schema(format!("`{key}` must be a string, found {}", type_name(other)))),
        None => Err(schema(format!("missing required field `{key}`"))),
    }
}

fn validate_object(obj: Map<String, Value>, warnings: &mut Warnings) -> Result<AgentResponse, ProtocolError> {
    for key in obj.keys() {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            warnings.push(Warning::UnknownField { field: key.clone() });
        }
    }

    let analysis = required_string(&obj, "analysis")?;
    let plan = required_string(&obj, "plan")?;

    let raw_commands = match obj.get("commands") {
        Some(Value::Array(items)) => items,
        Some(other) => {
            return Err(schema(format!("`commands` must be an array, found {}", type_name(other))))
        }
        None => return Err(schema("missing required field `commands`")),
    };
    let mut commands = Vec::with_capacity(raw_commands.len());
    for (i, item) in raw_commands.iter().enumerate() {
        let cmd = item
            .as_object()
            .ok_or_else(|| schema(format!("commands[{i}] must be an object")))?;
        let keystrokes = match cmd.get("keystrokes") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                return Err(schema(format!(
                    "commands[{i}].keystrokes must be a string, found {}",
                    type_name(other)
                )))
            }
            None => return Err(schema(format!("commands[{i}] is missing `keystrokes`"))),
        };
        let duration = match cmd.get("duration") {
            None | Some(Value::Null) => DEFAULT_DURATION,
            Some(Value::Number(n)) => {
                let d = n.as_f64().ok_or_else(|| schema(format!("commands[{i}].duration out of range")))?;
                if d < 0.0 {
                    warnings.push(Warning::NegativeDuration { command: i });
                    0.0
                } else {
                    d
                }
            }
            Some(other) => {
                return Err(schema(format!(
                    "commands[{i}].duration must be a number, found {}",
                    type_name(other)
                )))
            }
        };
        commands.push(Command { keystrokes, duration });
    }

    let task_complete = match obj.get("task_complete") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(other) => {
            return Err(schema(format!(
                "`task_complete` must be a boolean, found {}",
                type_name(other)
            )))
        }
    };

    Ok(AgentResponse {
        analysis,
        plan,
        commands,
        task_complete,
    })
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

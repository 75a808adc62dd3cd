//! The agent wire protocol: prompt rendering, reply parsing and keystroke encoding.

mod keys;
mod parse;
mod template;

pub use keys::{encode_keystrokes, KeyEncoder};
pub use parse::{parse_agent_response, AgentResponse, Command, ParseOutcome, Warning, DEFAULT_DURATION};
pub use template::{render_prompt, PromptTemplate, INSTRUCTION_PLACEHOLDER, TERMINAL_STATE_PLACEHOLDER};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("template is missing placeholder {0}")]
    PlaceholderMissing(&'static str),
    #[error("template repeats placeholder {0}")]
    PlaceholderRepeated(&'static str),
    #[error("no JSON object found in response")]
    NoJsonObject,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

impl ProtocolError {
    /// Short stable code used in trajectory records.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::PlaceholderMissing(_) => "placeholder_missing",
            ProtocolError::PlaceholderRepeated(_) => "placeholder_repeated",
            ProtocolError::NoJsonObject => "no_json_object",
            ProtocolError::InvalidJson(_) => "invalid_json",
            ProtocolError::SchemaViolation(_) => "schema_violation",
        }
    }
}

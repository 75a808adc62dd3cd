use super::ProtocolError;

pub const INSTRUCTION_PLACEHOLDER: &str = "{instruction}";
pub const TERMINAL_STATE_PLACEHOLDER: &str = "{terminal_state}";

const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../../assets/terminus_system_prompt.txt");

/// A prompt body holding `{instruction}` and `{terminal_state}` exactly once each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
    instruction_at: usize,
    state_at: usize,
}

impl PromptTemplate {
    pub fn new(body: impl Into<String>) -> Result<Self, ProtocolError> {
        let body = body.into();
        let instruction_at = locate_once(&body, INSTRUCTION_PLACEHOLDER)?;
        let state_at = locate_once(&body, TERMINAL_STATE_PLACEHOLDER)?;
        Ok(Self {
            body,
            instruction_at,
            state_at,
        })
    }

    /// The stock Terminus-style system prompt.
    pub fn terminus() -> Self {
        Self::new(DEFAULT_SYSTEM_PROMPT).expect("bundled template is valid")
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes both placeholders in one pass over the template, so
    /// placeholder-looking text inside the arguments is never expanded.
    pub fn render(&self, instruction: &str, terminal_state: &str) -> String {
        let mut slots = [
            (self.instruction_at, INSTRUCTION_PLACEHOLDER.len(), instruction),
            (self.state_at, TERMINAL_STATE_PLACEHOLDER.len(), terminal_state),
        ];
        slots.sort_by_key(|s| s.0);

        let mut out = String::with_capacity(self.body.len() + instruction.len() + terminal_state.len());
        let mut cursor = 0;
        for (at, len, value) in slots {
            out.push_str(&self.body[cursor..at]);
            out.push_str(value);
            cursor = at + len;
        }
        out.push_str(&self.body[cursor..]);
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::terminus()
    }
}

fn locate_once(body: &str, placeholder: &'static str) -> Result<usize, ProtocolError> {
    let mut hits = body.match_indices(placeholder).map(|(i, _)| i);
    match (hits.next(), hits.next()) {
        (Some(i), None) => Ok(i),
        (None, _) => Err(ProtocolError::PlaceholderMissing(placeholder)),
        (Some(_), Some(_)) => Err(ProtocolError::PlaceholderRepeated(placeholder)),
    }
}

/// Renders with a template body given as text; fails if the body is invalid.
pub fn render_prompt(template: &str, instruction: &str, terminal_state: &str) -> Result<String, ProtocolError> {
    Ok(PromptTemplate::new(template)?.render(instruction, terminal_state))
}

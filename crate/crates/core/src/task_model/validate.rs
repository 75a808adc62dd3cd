use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{TaskSpec, RESERVED_METADATA_KEYS, WEIGHTS_FILE};

/// A broken `TaskSpec` invariant. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    InstructionEmpty,
    InvalidId { id: String },
    DuplicateId { id: String },
    NegativeWeight { test: String },
    NonFiniteWeight { test: String },
    WeightsSumNonpositive,
    /// Only adapter-produced tasks may ship without tests.
    TestsEmpty,
    ReservedMetadataKey { key: String },
    ReservedTestPath,
}

impl Violation {
    pub fn field(&self) -> &'static str {
        match self {
            Violation::InstructionEmpty => "instruction",
            Violation::InvalidId { .. } | Violation::DuplicateId { .. } => "id",
            Violation::NegativeWeight { .. }
            | Violation::NonFiniteWeight { .. }
            | Violation::WeightsSumNonpositive => "weights",
            Violation::TestsEmpty | Violation::ReservedTestPath => "tests",
            Violation::ReservedMetadataKey { .. } => "metadata",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InstructionEmpty => write!(f, "instruction: must be non-empty"),
            Violation::InvalidId { id } => write!(f, "id: `{id}` must match [a-z0-9-_]+"),
            Violation::DuplicateId { id } => write!(f, "id: `{id}` appears more than once"),
            Violation::NegativeWeight { test } => write!(f, "weights: `{test}` is negative"),
            Violation::NonFiniteWeight { test } => write!(f, "weights: `{test}` is not finite"),
            Violation::WeightsSumNonpositive => write!(f, "weights: sum must be > 0"),
            Violation::TestsEmpty => write!(f, "tests: empty outside adapter tasks"),
            Violation::ReservedMetadataKey { key } => {
                write!(f, "metadata: `{key}` is reserved for a dedicated field")
            }
            Violation::ReservedTestPath => write!(f, "tests: `{WEIGHTS_FILE}` is reserved"),
        }
    }
}

pub fn is_valid_task_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
}

pub fn validate_task(task: &TaskSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if task.instruction.trim().is_empty() {
        out.push(Violation::InstructionEmpty);
    }
    if !is_valid_task_id(&task.id) {
        out.push(Violation::InvalidId { id: task.id.clone() });
    }
    if let Some(weights) = &task.weights {
        let mut sum = 0.0;
        for (test, &w) in weights {
            if !w.is_finite() {
                out.push(Violation::NonFiniteWeight { test: test.clone() });
            } else if w < 0.0 {
                out.push(Violation::NegativeWeight { test: test.clone() });
            } else {
                sum += w;
            }
        }
        if sum <= 0.0 {
            out.push(Violation::WeightsSumNonpositive);
        }
    }
    if task.tests.is_empty() && task.origin() != Some("adapter") {
        out.push(Violation::TestsEmpty);
    }
    if task.tests.contains(WEIGHTS_FILE) {
        out.push(Violation::ReservedTestPath);
    }
    for key in RESERVED_METADATA_KEYS {
        if task.metadata.contains_key(key) {
            out.push(Violation::ReservedMetadataKey { key: key.to_string() });
        }
    }
    out
}

/// Per-task violations plus cross-task id uniqueness, keyed by task id.
pub fn validate_corpus(tasks: &[TaskSpec]) -> Vec<(String, Violation)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for task in tasks {
        out.extend(validate_task(task).into_iter().map(|v| (task.id.clone(), v)));
        if !seen.insert(task.id.as_str()) {
            out.push((task.id.clone(), Violation::DuplicateId { id: task.id.clone() }));
        }
    }
    out
}

//! Trajectories to role-tagged conversation samples, length policy,
//! dataset mixtures and JSONL serialization.

mod length;
mod mixture;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agent_protocol::PromptTemplate;
use crate::filters::TokenEstimator;
use crate::rollout::{HistoryMode, Message, Role, Trajectory};

pub use length::{apply_length_policy, LengthPolicy, DEFAULT_MAX_TOKENS};
pub use mixture::{build_mixture, mix_parts, MixturePart, MixtureSpec, MixtureStrategy};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("trajectory {task_id}/{trial} has no model replies to export")]
    EmptyTrajectory { task_id: String, trial: u32 },
    #[error("mixture part {0} has no stage")]
    StageMissing(usize),
    #[error("mixture part {part}: {message}")]
    BadWeight { part: usize, message: String },
    #[error("{location}: {message}")]
    Import { location: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub v: u32,
    pub task_id: String,
    pub trial: u32,
    pub origin: Option<String>,
    /// Assistant messages in the sample.
    pub turns: usize,
    pub est_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub messages: Vec<Message>,
    pub meta: SampleMeta,
}

impl SftSample {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }

    /// Recomputes `turns` and `est_tokens` from the messages.
    pub fn refresh_meta(&mut self, estimator: &dyn TokenEstimator) {
        self.meta.turns = self.messages.iter().filter(|m| m.role == Role::Assistant).count();
        self.meta.est_tokens = estimate_messages(&self.messages, estimator);
    }

    /// Optional leading system message, then user and assistant strictly
    /// alternating, ending on an assistant reply.
    pub fn check(&self) -> Result<(), String> {
        if self.meta.v != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", self.meta.v));
        }
        let body = match self.messages.first() {
            Some(m) if m.role == Role::System => &self.messages[1..],
            _ => &self.messages[..],
        };
        if body.is_empty() {
            return Err("no conversation messages".into());
        }
        for (i, m) in body.iter().enumerate() {
            let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != want {
                return Err(format!("message {i} has role {:?}, expected {want:?}", m.role));
            }
        }
        if body.len() % 2 != 0 {
            return Err("last message is not an assistant reply".into());
        }
        if self.meta.est_tokens == 0 {
            return Err("est_tokens must be positive".into());
        }
        Ok(())
    }
}

pub fn estimate_messages(messages: &[Message], estimator: &dyn TokenEstimator) -> usize {
    messages.iter().map(|m| estimator.estimate(&m.content)).sum()
}

/// One user prompt and one assistant reply per turn that produced model
/// text. The first emitted prompt is always the full rendered template; in
/// chat mode later prompts carry only the terminal state.
pub fn trajectory_to_sample(
    traj: &Trajectory,
    template: &PromptTemplate,
    history_mode: HistoryMode,
    estimator: &dyn TokenEstimator,
) -> Result<SftSample, ExportError> {
    let mut messages = Vec::with_capacity(traj.turns.len() * 2);
    for (i, turn) in traj.turns.iter().enumerate() {
        if turn.raw_model_text.is_empty() {
            continue;
        }
        let mode = if messages.is_empty() {
            HistoryMode::Fresh
        } else {
            history_mode
        };
        messages.push(Message::new(Role::User, traj.turn_prompt_as(template, i, mode)));
        messages.push(Message::new(Role::Assistant, turn.raw_model_text.clone()));
    }
    if messages.is_empty() {
        return Err(ExportError::EmptyTrajectory {
            task_id: traj.task_id.clone(),
            trial: traj.trial,
        });
    }
    let mut sample = SftSample {
        messages,
        meta: SampleMeta {
            v: SCHEMA_VERSION,
            task_id: traj.task_id.clone(),
            trial: traj.trial,
            origin: traj.origin.clone(),
            turns: 0,
            est_tokens: 0,
        },
    };
    sample.refresh_meta(estimator);
    Ok(sample)
}

pub fn write_jsonl<'a, W: Write>(
    samples: impl IntoIterator<Item = &'a SftSample>,
    mut out: W,
) -> std::io::Result<usize> {
    let mut n = 0;
    for s in samples {
        writeln!(out, "{}", s.to_json_line())?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Reads samples, validating each line's schema. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SftSample>, ExportError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ExportError::Import {
            location: format!("line {}", i + 1),
            message,
        };
        let sample: SftSample = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        sample.check().map_err(err)?;
        out.push(sample);
    }
    Ok(out)
}

pub fn read_jsonl_file(path: &std::path::Path) -> Result<Vec<SftSample>, ExportError> {
    let file = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(file)).map_err(|e| match e {
        ExportError::Import { location, message } => ExportError::Import {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

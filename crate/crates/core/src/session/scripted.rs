use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::capture::tail_chars;
use super::{materializable, Backend, ExecOutput, SessionConfig, SessionError, TerminalState};
use crate::task_model::{FileEntry, RelPath, TaskSpec};

/// Terminal contents to show once `after_send_index` sends have happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub after_send_index: usize,
    pub text: String,
}

/// Canned result for `exec` calls whose command contains `exec`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRule {
    pub exec: String,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub exit_code: i32,
    /// Files the command "creates", relative to the session root.
    #[serde(default)]
    pub writes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Frame(Frame),
    Exec(ExecRule),
}

/// A scripted terminal transcript.
///
/// JSONL on disk: one object per line, either a frame
/// `{"after_send_index": 0, "text": "$ "}` or an exec rule
/// `{"exec": "pytest", "stdout": "...", "exit_code": 0, "writes": {...}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub frames: Vec<Frame>,
    #[serde(default)]
    pub exec: Vec<ExecRule>,
}

impl Script {
    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut script = Script::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ScriptLine>(line) {
                Ok(ScriptLine::Frame(f)) => script.frames.push(f),
                Ok(ScriptLine::Exec(r)) => script.exec.push(r),
                Err(e) => return Err(format!("line {}: {e}", n + 1)),
            }
        }
        Ok(script)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&serde_json::to_string(f).expect("frame serializes"));
            out.push('\n');
        }
        for r in &self.exec {
            out.push_str(&serde_json::to_string(r).expect("rule serializes"));
            out.push('\n');
        }
        out
    }

    pub fn frame(mut self, after_send_index: usize, text: impl Into<String>) -> Self {
        self.frames.push(Frame {
            after_send_index,
            text: text.into(),
        });
        self
    }

    pub fn rule(mut self, rule: ExecRule) -> Self {
        self.exec.push(rule);
        self
    }
}

/// Where the scripted backend gets its transcript.
///
/// A path to a directory resolves to `<dir>/<task_id>.jsonl`, falling back
/// to `<dir>/default.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptSource {
    Path(PathBuf),
    Inline(Script),
}

impl ScriptSource {
    fn load(&self, task_id: &str) -> Result<Script, SessionError> {
        match self {
            ScriptSource::Inline(s) => Ok(s.clone()),
            ScriptSource::Path(p) => {
                let file = resolve_script_path(p, task_id)
                    .ok_or_else(|| SessionError::BackendUnavailable(format!("no transcript for `{task_id}` under {}", p.display())))?;
                let text = fs::read_to_string(&file)
                    .map_err(|e| SessionError::BackendUnavailable(format!("{}: {e}", file.display())))?;
                Script::from_jsonl(&text).map_err(|e| SessionError::BackendUnavailable(format!("{}: {e}", file.display())))
            }
        }
    }
}

fn resolve_script_path(p: &Path, task_id: &str) -> Option<PathBuf> {
    if p.is_dir() {
        [format!("{task_id}.jsonl"), "default.jsonl".to_string()]
            .into_iter()
            .map(|name| p.join(name))
            .find(|candidate| candidate.is_file())
    } else if p.is_file() {
        Some(p.to_path_buf())
    } else {
        None
    }
}

pub(crate) struct ScriptedBackend {
    frames: Vec<Frame>,
    rules: Vec<ExecRule>,
    files: BTreeMap<RelPath, Vec<u8>>,
    sends: usize,
    clock: f64,
    window: usize,
}

impl ScriptedBackend {
    pub(crate) fn start(task: &TaskSpec, config: &SessionConfig) -> Result<Self, SessionError> {
        let script = match &config.script {
            Some(source) => source.load(&task.id)?,
            None => return Err(SessionError::BackendUnavailable("scripted backend needs a script".into())),
        };
        let mut frames = script.frames;
        frames.sort_by_key(|f| f.after_send_index);
        let files = materializable(task)
            .map(|e| (e.path.clone(), e.content.clone()))
            .collect();
        Ok(Self {
            frames,
            rules: script.exec,
            files,
            sends: 0,
            clock: 0.0,
            window: config.capture_window,
        })
    }
}

impl Backend for ScriptedBackend {
    fn send(&mut self, _bytes: &[u8]) -> Result<(), SessionError> {
        self.sends += 1;
        Ok(())
    }

    fn wait(&mut self, seconds: f64) {
        self.clock += seconds;
    }

    fn snapshot(&mut self) -> TerminalState {
        let text = self
            .frames
            .iter()
            .rev()
            .find(|f| f.after_send_index <= self.sends)
            .map(|f| f.text.as_str())
            .unwrap_or("");
        let (text, truncated) = tail_chars(text, self.window);
        TerminalState {
            text,
            truncated,
            captured_at: self.clock,
        }
    }

    fn exec(&mut self, command: &str, _env: &[(String, String)], _timeout: f64) -> Result<ExecOutput, SessionError> {
        let Some(rule) = self.rules.iter().find(|r| command.contains(&r.exec)) else {
            return Ok(ExecOutput {
                exit_code: Some(127),
                stdout: String::new(),
                stderr: format!("scripted: no rule for `{command}`\n"),
            });
        };
        for (path, content) in &rule.writes {
            let rel = RelPath::new(path.as_str()).map_err(|e| SessionError::Io(e.to_string()))?;
            self.files.insert(rel, content.as_bytes().to_vec());
        }
        Ok(ExecOutput {
            exit_code: Some(rule.exit_code),
            stdout: rule.stdout.clone(),
            stderr: rule.stderr.clone(),
        })
    }

    fn read_file(&mut self, path: &RelPath) -> Result<Option<Vec<u8>>, SessionError> {
        Ok(self.files.get(path).cloned())
    }

    fn write_file(&mut self, entry: &FileEntry) -> Result<(), SessionError> {
        self.files.insert(entry.path.clone(), entry.content.clone());
        Ok(())
    }

    fn elapsed(&self) -> f64 {
        self.clock
    }

    fn root(&self) -> String {
        "/app".to_string()
    }

    fn stop(&mut self) {}
}

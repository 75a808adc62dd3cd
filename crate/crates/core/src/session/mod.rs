//! Interactive terminal sessions the agent acts upon.
//!
//! A [`Session`] is an exclusive handle over one backend:
//!
//! * `scripted` replays a JSONL transcript on a virtual clock and is fully
//!   deterministic,
//! * `local_pty` runs a shell on a pseudo-terminal inside a temporary
//!   working directory,
//! * `container` drives a container runtime CLI (`docker`, `podman`, ...)
//!   as a subprocess.

mod capture;
mod container;
mod exec;
mod pty;
mod scripted;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::task_model::{FileEntry, RelPath, TaskSpec};

pub use capture::{render_screen, strip_ansi};
pub use container::ContainerConfig;
pub use exec::ExecOutput;
pub use scripted::{ExecRule, Frame, Script, ScriptSource};

pub const DEFAULT_CAPTURE_WINDOW: usize = 20_000;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("failed to materialize task environment: {0}")]
    MaterializationFailure(String),
    #[error("session already stopped")]
    SessionDead,
    #[error("command timed out after {0:.1}s")]
    Timeout(f64),
    #[error("session io: {0}")]
    Io(String),
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalState {
    pub text: String,
    pub truncated: bool,
    /// Seconds since session start on the backend's clock (virtual for scripted).
    pub captured_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    LocalPty,
    Container,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub backend: BackendKind,
    /// Parent directory for per-session working directories (system temp if unset).
    pub workdir_root: Option<PathBuf>,
    /// Keep materialized working directories after the session stops.
    pub keep_workdir: bool,
    /// Fallback image when the task does not name one.
    pub image_ref: Option<String>,
    pub capture_window: usize,
    /// Upper bound in seconds for non-interactive `exec` calls.
    pub command_timeout: f64,
    /// Shell spawned by the local backend.
    pub shell: Vec<String>,
    pub script: Option<ScriptSource>,
    pub container: ContainerConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Scripted,
            workdir_root: None,
            keep_workdir: false,
            image_ref: None,
            capture_window: DEFAULT_CAPTURE_WINDOW,
            command_timeout: 600.0,
            shell: vec!["bash".into(), "--noprofile".into(), "--norc".into(), "-i".into()],
            script: None,
            container: ContainerConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn scripted(script: Script) -> Self {
        Self {
            backend: BackendKind::Scripted,
            script: Some(ScriptSource::Inline(script)),
            ..Self::default()
        }
    }

    pub fn local_pty() -> Self {
        Self {
            backend: BackendKind::LocalPty,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.capture_window == 0 {
            return Err(SessionError::BackendUnavailable("capture_window must be > 0".into()));
        }
        if self.command_timeout.is_nan() || self.command_timeout <= 0.0 {
            return Err(SessionError::BackendUnavailable("command_timeout must be > 0".into()));
        }
        Ok(())
    }
}

/// What every backend provides; `Session` adds liveness checks on top.
pub(crate) trait Backend: Send {
    fn send(&mut self, bytes: &[u8]) -> Result<(), SessionError>;
    fn wait(&mut self, seconds: f64);
    fn snapshot(&mut self) -> TerminalState;
    fn exec(&mut self, command: &str, env: &[(String, String)], timeout: f64) -> Result<ExecOutput, SessionError>;
    fn read_file(&mut self, path: &RelPath) -> Result<Option<Vec<u8>>, SessionError>;
    fn write_file(&mut self, entry: &FileEntry) -> Result<(), SessionError>;
    fn elapsed(&self) -> f64;
    fn root(&self) -> String;
    fn stop(&mut self);
}

/// Counts live sessions and remembers the peak.
#[derive(Debug, Default)]
pub struct LiveGauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl LiveGauge {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn enter(self: &Arc<Self>) -> GaugeGuard {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        GaugeGuard(Arc::clone(self))
    }
}

struct GaugeGuard(Arc<LiveGauge>);

impl Drop for GaugeGuard {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Exclusive handle to a live terminal session. Methods take `&mut self`, so
/// a handle can never be driven from two places at once.
pub struct Session {
    backend: Box<dyn Backend>,
    live: bool,
    command_timeout: f64,
    gauge: Option<GaugeGuard>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("live", &self.live)
            .field("root", &self.backend.root())
            .finish()
    }
}

pub fn start_session(task: &TaskSpec, config: &SessionConfig) -> Result<Session, SessionError> {
    start_session_tracked(task, config, None)
}

/// Like [`start_session`], counting the session in `gauge` while it is live.
pub fn start_session_tracked(
    task: &TaskSpec,
    config: &SessionConfig,
    gauge: Option<&Arc<LiveGauge>>,
) -> Result<Session, SessionError> {
    config.validate()?;
    let backend: Box<dyn Backend> = match config.backend {
        BackendKind::Scripted => Box::new(scripted::ScriptedBackend::start(task, config)?),
        BackendKind::LocalPty => Box::new(pty::LocalBackend::start(task, config)?),
        BackendKind::Container => Box::new(container::ContainerBackend::start(task, config)?),
    };
    Ok(Session {
        backend,
        live: true,
        command_timeout: config.command_timeout,
        gauge: gauge.map(|g| g.enter()),
    })
}

impl Session {
    fn ensure_live(&self) -> Result<(), SessionError> {
        if self.live {
            Ok(())
        } else {
            Err(SessionError::SessionDead)
        }
    }

    /// Transmits bytes unmodified.
    pub fn send(&mut self, bytes: &[u8]) -> Result<(), SessionError> {
        self.ensure_live()?;
        self.backend.send(bytes)
    }

    /// Blocks for `seconds` of real time (virtual time on the scripted backend).
    pub fn wait(&mut self, seconds: f64) -> Result<(), SessionError> {
        self.ensure_live()?;
        if seconds > 0.0 {
            self.backend.wait(seconds);
        }
        Ok(())
    }

    pub fn snapshot(&mut self) -> Result<TerminalState, SessionError> {
        self.ensure_live()?;
        Ok(self.backend.snapshot())
    }

    /// Runs a command non-interactively in the session root, outside the terminal.
    pub fn exec(&mut self, command: &str, env: &[(String, String)]) -> Result<ExecOutput, SessionError> {
        self.ensure_live()?;
        self.backend.exec(command, env, self.command_timeout)
    }

    pub fn read_file(&mut self, path: &RelPath) -> Result<Option<Vec<u8>>, SessionError> {
        self.ensure_live()?;
        self.backend.read_file(path)
    }

    pub fn write_file(&mut self, entry: &FileEntry) -> Result<(), SessionError> {
        self.ensure_live()?;
        self.backend.write_file(entry)
    }

    pub fn elapsed(&self) -> f64 {
        self.backend.elapsed()
    }

    /// Root directory that environment files are materialized under.
    pub fn root(&self) -> String {
        self.backend.root()
    }

    pub fn is_live(&self) -> bool {
        self.live
    }

    /// Releases all resources. Calling it again is a no-op.
    pub fn stop(&mut self) {
        if self.live {
            self.live = false;
            self.backend.stop();
            self.gauge.take();
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Environment files that belong inside the session root; the top-level
/// Dockerfile describes the image and is not copied.
pub(crate) fn materializable(task: &TaskSpec) -> impl Iterator<Item = &FileEntry> {
    task.environment
        .iter()
        .filter(|e| e.path.as_str() != crate::task_model::DOCKERFILE)
}

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use portable_pty::{native_pty_system, Child, CommandBuilder, MasterPty, PtySize};

use super::capture::{render_screen, tail_chars, CaptureBuffer, Utf8Stream};
use super::exec::run_with_timeout;
use super::{materializable, Backend, ExecOutput, SessionConfig, SessionError, TerminalState};
use crate::task_model::{FileEntry, RelPath, TaskSpec};

/// Raw characters kept per rendered character, so escape sequences do not
/// eat into the visible window.
const RAW_HEADROOM: usize = 4;

/// A child process attached to a pseudo-terminal, with a reader thread
/// collecting everything it prints.
pub(crate) struct PtyShell {
    master: Option<Box<dyn MasterPty + Send>>,
    writer: Option<Box<dyn Write + Send>>,
    child: Box<dyn Child + Send + Sync>,
    pending: Arc<Mutex<Vec<u8>>>,
    reader: Option<JoinHandle<()>>,
    decoder: Utf8Stream,
    /// Raw output with room for escape sequences; rendered on snapshot.
    capture: CaptureBuffer,
    window: usize,
    started: Instant,
}

impl PtyShell {
    pub(crate) fn spawn(cmd: CommandBuilder, window: usize) -> Result<Self, SessionError> {
        let pair = native_pty_system()
            .openpty(PtySize {
                rows: 48,
                cols: 160,
                pixel_width: 0,
                pixel_height: 0,
            })
            .map_err(|e| SessionError::BackendUnavailable(format!("openpty: {e}")))?;
        let child = pair
            .slave
            .spawn_command(cmd)
            .map_err(|e| SessionError::BackendUnavailable(format!("spawn: {e}")))?;
        drop(pair.slave);

        let mut reader = pair
            .master
            .try_clone_reader()
            .map_err(|e| SessionError::BackendUnavailable(format!("pty reader: {e}")))?;
        let writer = pair
            .master
            .take_writer()
            .map_err(|e| SessionError::BackendUnavailable(format!("pty writer: {e}")))?;

        let pending = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&pending);
        let handle = thread::spawn(move || {
            let mut buf = [0u8; 8192];
            loop {
                match reader.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => sink.lock().expect("pty buffer lock").extend_from_slice(&buf[..n]),
                }
            }
        });

        Ok(Self {
            master: Some(pair.master),
            writer: Some(writer),
            child,
            pending,
            reader: Some(handle),
            decoder: Utf8Stream::default(),
            capture: CaptureBuffer::new(window.saturating_mul(RAW_HEADROOM)),
            window,
            started: Instant::now(),
        })
    }

    pub(crate) fn send(&mut self, bytes: &[u8]) -> Result<(), SessionError> {
        let writer = self.writer.as_mut().ok_or(SessionError::SessionDead)?;
        writer.write_all(bytes)?;
        writer.flush()?;
        Ok(())
    }

    pub(crate) fn snapshot(&mut self) -> TerminalState {
        let bytes = std::mem::take(&mut *self.pending.lock().expect("pty buffer lock"));
        let text = self.decoder.decode(&bytes);
        self.capture.push(&text);
        let (text, cut) = tail_chars(&render_screen(self.capture.text()), self.window);
        TerminalState {
            text,
            truncated: cut || self.capture.truncated(),
            captured_at: self.elapsed(),
        }
    }

    pub(crate) fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub(crate) fn stop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.writer.take();
        self.master.take();
        if let Some(handle) = self.reader.take() {
            // The reader exits once the master side is closed.
            let _ = handle.join();
        }
    }
}

/// Shell on a local pseudo-terminal, rooted in a temporary working directory
/// holding the task's environment files.
pub(crate) struct LocalBackend {
    shell: PtyShell,
    workdir: Option<tempfile::TempDir>,
    root: PathBuf,
}

impl LocalBackend {
    pub(crate) fn start(task: &TaskSpec, config: &SessionConfig) -> Result<Self, SessionError> {
        let (program, args) = config
            .shell
            .split_first()
            .ok_or_else(|| SessionError::BackendUnavailable("empty shell command".into()))?;

        let mut builder = tempfile::Builder::new();
        let prefix = format!("{}-", task.id);
        builder.prefix(&prefix);
        let workdir = match &config.workdir_root {
            Some(parent) => {
                fs::create_dir_all(parent).map_err(|e| SessionError::MaterializationFailure(e.to_string()))?;
                builder.tempdir_in(parent)
            }
            None => builder.tempdir(),
        }
        .map_err(|e| SessionError::MaterializationFailure(e.to_string()))?;
        let root = workdir.path().to_path_buf();
        materialize(task, &root)?;

        let mut cmd = CommandBuilder::new(program);
        cmd.args(args);
        cmd.cwd(&root);
        cmd.env("PS1", "$ ");
        cmd.env("TERM", "xterm");
        let shell = PtyShell::spawn(cmd, config.capture_window)?;

        let workdir = if config.keep_workdir {
            let _ = workdir.keep();
            None
        } else {
            Some(workdir)
        };
        Ok(Self { shell, workdir, root })
    }
}

pub(crate) fn materialize(task: &TaskSpec, root: &Path) -> Result<(), SessionError> {
    for entry in materializable(task) {
        write_entry(root, entry).map_err(|e| SessionError::MaterializationFailure(format!("{}: {e}", entry.path)))?;
    }
    Ok(())
}

fn write_entry(root: &Path, entry: &FileEntry) -> std::io::Result<()> {
    let target = entry.path.under(root);
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&target, &entry.content)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = if entry.executable { 0o755 } else { 0o644 };
        fs::set_permissions(&target, fs::Permissions::from_mode(mode))?;
    }
    Ok(())
}

impl Backend for LocalBackend {
    fn send(&mut self, bytes: &[u8]) -> Result<(), SessionError> {
        self.shell.send(bytes)
    }

    fn wait(&mut self, seconds: f64) {
        thread::sleep(Duration::from_secs_f64(seconds));
    }

    fn snapshot(&mut self) -> TerminalState {
        self.shell.snapshot()
    }

    fn exec(&mut self, command: &str, env: &[(String, String)], timeout: f64) -> Result<ExecOutput, SessionError> {
        let mut cmd = Command::new("bash");
        cmd.arg("-c").arg(command).current_dir(&self.root);
        cmd.envs(env.iter().map(|(k, v)| (k, v)));
        run_with_timeout(cmd, timeout)
    }

    fn read_file(&mut self, path: &RelPath) -> Result<Option<Vec<u8>>, SessionError> {
        match fs::read(path.under(&self.root)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write_file(&mut self, entry: &FileEntry) -> Result<(), SessionError> {
        write_entry(&self.root, entry).map_err(Into::into)
    }

    fn elapsed(&self) -> f64 {
        self.shell.elapsed()
    }

    fn root(&self) -> String {
        self.root.display().to_string()
    }

    fn stop(&mut self) {
        self.shell.stop();
        self.workdir.take();
    }
}

use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use portable_pty::CommandBuilder;
use serde::{Deserialize, Serialize};

use super::exec::run_with_timeout;
use super::pty::{materialize, PtyShell};
use super::{Backend, ExecOutput, SessionConfig, SessionError, TerminalState};
use crate::task_model::{FileEntry, RelPath, TaskSpec};

/// How to drive a container runtime through its command line.
///
/// Each template is an argument vector passed to `runtime`; these
/// placeholders are substituted per argument: `{image}`, `{name}`, `{root}`,
/// `{src}`, `{dest}`, `{path}`, `{command}`. The defaults match the docker
/// and podman CLIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContainerConfig {
    pub runtime: String,
    /// Directory inside the container holding the environment files.
    pub root: String,
    pub name_prefix: String,
    pub inspect: Vec<String>,
    pub create: Vec<String>,
    pub copy: Vec<String>,
    pub shell: Vec<String>,
    pub exec: Vec<String>,
    pub remove: Vec<String>,
    /// Seconds allowed for lifecycle commands (inspect, create, copy, remove).
    pub lifecycle_timeout: f64,
}

fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

impl Default for ContainerConfig {
    fn default() -> Self {
        Self {
            runtime: "docker".into(),
            root: "/app".into(),
            name_prefix: "termforge".into(),
            inspect: argv(&["image", "inspect", "{image}"]),
            create: argv(&["run", "-d", "--name", "{name}", "-w", "{root}", "{image}", "sleep", "infinity"]),
            copy: argv(&["cp", "{src}", "{name}:{dest}"]),
            shell: argv(&["exec", "-it", "-w", "{root}", "{name}", "bash", "--noprofile", "--norc", "-i"]),
            exec: argv(&["exec", "-w", "{root}", "{name}", "bash", "-c", "{command}"]),
            remove: argv(&["rm", "-f", "{name}"]),
            lifecycle_timeout: 120.0,
        }
    }
}

fn fill(template: &[String], vars: &[(&str, &str)]) -> Vec<String> {
    template
        .iter()
        .map(|arg| {
            vars.iter()
                .fold(arg.clone(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
        })
        .collect()
}

/// Shell-quotes a single word for `bash -c`.
fn quote(word: &str) -> String {
    format!("'{}'", word.replace('\'', r"'\''"))
}

pub(crate) struct ContainerBackend {
    cfg: ContainerConfig,
    name: String,
    shell: PtyShell,
    live: bool,
}

impl ContainerBackend {
    pub(crate) fn start(task: &TaskSpec, config: &SessionConfig) -> Result<Self, SessionError> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let cfg = config.container.clone();
        let image = task
            .image_ref
            .as_deref()
            .or(config.image_ref.as_deref())
            .ok_or_else(|| SessionError::BackendUnavailable("no image_ref for container backend".into()))?;
        let name = format!(
            "{}-{}-{}-{}",
            cfg.name_prefix,
            task.id,
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        );
        let vars = [("image", image), ("name", name.as_str()), ("root", cfg.root.as_str())];

        let inspect = run_runtime(&cfg, &fill(&cfg.inspect, &vars))
            .map_err(|e| SessionError::BackendUnavailable(format!("{}: {e}", cfg.runtime)))?;
        if !inspect.success() {
            return Err(SessionError::BackendUnavailable(format!("unknown image `{image}`")));
        }
        let created = run_runtime(&cfg, &fill(&cfg.create, &vars))
            .map_err(|e| SessionError::BackendUnavailable(e.to_string()))?;
        if !created.success() {
            return Err(SessionError::BackendUnavailable(format!(
                "container create failed: {}",
                created.stderr.trim()
            )));
        }

        // From here on the container exists and must be removed on failure.
        let cleanup = |cfg: &ContainerConfig| {
            let _ = run_runtime(cfg, &fill(&cfg.remove, &vars));
        };

        let staging = tempfile::tempdir().map_err(|e| SessionError::MaterializationFailure(e.to_string()))?;
        if let Err(e) = materialize(task, staging.path()) {
            cleanup(&cfg);
            return Err(e);
        }
        let src = format!("{}/.", staging.path().display());
        let copy_vars = [("name", name.as_str()), ("src", src.as_str()), ("dest", cfg.root.as_str())];
        match run_runtime(&cfg, &fill(&cfg.copy, &copy_vars)) {
            Ok(out) if out.success() => {}
            Ok(out) => {
                cleanup(&cfg);
                return Err(SessionError::MaterializationFailure(out.stderr.trim().to_string()));
            }
            Err(e) => {
                cleanup(&cfg);
                return Err(SessionError::MaterializationFailure(e.to_string()));
            }
        }

        let shell_args = fill(&cfg.shell, &vars);
        let mut cmd = CommandBuilder::new(&cfg.runtime);
        cmd.args(&shell_args);
        let shell = match PtyShell::spawn(cmd, config.capture_window) {
            Ok(shell) => shell,
            Err(e) => {
                cleanup(&cfg);
                return Err(e);
            }
        };

        Ok(Self {
            cfg,
            name,
            shell,
            live: true,
        })
    }

    fn vars<'a>(&'a self, extra: &[(&'a str, &'a str)]) -> Vec<(&'a str, &'a str)> {
        let mut v = vec![("name", self.name.as_str()), ("root", self.cfg.root.as_str())];
        v.extend_from_slice(extra);
        v
    }

    fn exec_raw(&self, command: &str, timeout: f64) -> Result<ExecOutput, SessionError> {
        let args = fill(&self.cfg.exec, &self.vars(&[("command", command)]));
        let mut cmd = Command::new(&self.cfg.runtime);
        cmd.args(args);
        run_with_timeout(cmd, timeout)
    }
}

fn run_runtime(cfg: &ContainerConfig, args: &[String]) -> Result<ExecOutput, SessionError> {
    let mut cmd = Command::new(&cfg.runtime);
    cmd.args(args);
    run_with_timeout(cmd, cfg.lifecycle_timeout)
}

impl Backend for ContainerBackend {
    fn send(&mut self, bytes: &[u8]) -> Result<(), SessionError> {
        self.shell.send(bytes)
    }

    fn wait(&mut self, seconds: f64) {
        std::thread::sleep(std::time::Duration::from_secs_f64(seconds));
    }

    fn snapshot(&mut self) -> TerminalState {
        self.shell.snapshot()
    }

    fn exec(&mut self, command: &str, env: &[(String, String)], timeout: f64) -> Result<ExecOutput, SessionError> {
        let exports: String = env
            .iter()
            .map(|(k, v)| format!("export {k}={}; ", quote(v)))
            .collect();
        self.exec_raw(&format!("{exports}{command}"), timeout)
    }

    fn read_file(&mut self, path: &RelPath) -> Result<Option<Vec<u8>>, SessionError> {
        let p = quote(path.as_str());
        let out = self.exec_raw(&format!("test -f {p} && cat {p}"), self.cfg.lifecycle_timeout)?;
        Ok(out.success().then(|| out.stdout.into_bytes()))
    }

    fn write_file(&mut self, entry: &FileEntry) -> Result<(), SessionError> {
        let staging = tempfile::tempdir()?;
        let local = entry.path.under(staging.path());
        if let Some(parent) = local.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&local, &entry.content)?;
        if let Some((dir, _)) = entry.path.as_str().rsplit_once('/') {
            self.exec_raw(&format!("mkdir -p {}", quote(dir)), self.cfg.lifecycle_timeout)?;
        }
        let src = local.display().to_string();
        let dest = format!("{}/{}", self.cfg.root, entry.path);
        let args = fill(&self.cfg.copy, &self.vars(&[("src", &src), ("dest", &dest)]));
        let out = run_runtime(&self.cfg, &args)?;
        if !out.success() {
            return Err(SessionError::Io(out.stderr.trim().to_string()));
        }
        if entry.executable {
            self.exec_raw(&format!("chmod +x {}", quote(entry.path.as_str())), self.cfg.lifecycle_timeout)?;
        }
        Ok(())
    }

    fn elapsed(&self) -> f64 {
        self.shell.elapsed()
    }

    fn root(&self) -> String {
        self.cfg.root.clone()
    }

    fn stop(&mut self) {
        if self.live {
            self.live = false;
            self.shell.stop();
            let _ = run_runtime(&self.cfg, &fill(&self.cfg.remove, &self.vars(&[])));
        }
    }
}

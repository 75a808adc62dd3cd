use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CampaignConfig, CampaignError};
use crate::rollout::{run_episode_with, EpisodeOptions, EpisodeStatus, ModelClient, Trajectory};
use crate::session::LiveGauge;
use crate::task_model::{parse_task_dir, validate_task, TaskSpec};

pub const TRAJ_DIR: &str = "trajs";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub completed: usize,
    pub incomplete: usize,
    pub error: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.completed + self.incomplete + self.error
    }

    fn add(&mut self, status: EpisodeStatus) {
        match status {
            EpisodeStatus::Completed => self.completed += 1,
            EpisodeStatus::Incomplete => self.incomplete += 1,
            EpisodeStatus::Error => self.error += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub tasks: usize,
    pub trials_per_task: u32,
    pub workers: usize,
    pub seed: u64,
    /// Episodes in the full task × trial grid.
    pub planned: usize,
    pub executed_now: usize,
    pub skipped_existing: usize,
    /// Left for a later run because `max_new_episodes` was reached.
    pub pending: usize,
    /// Over every finished episode on disk, including earlier runs.
    pub statuses: StatusCounts,
    pub peak_live_sessions: usize,
    pub invalid_tasks: Vec<(String, String)>,
}

/// `(task directory name, reason)` for tasks that failed to load.
pub type InvalidTasks = Vec<(String, String)>;

/// Parses and validates every task directory under `dir`, in name order.
pub fn load_tasks(dir: &Path) -> Result<(Vec<TaskSpec>, InvalidTasks), CampaignError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CampaignError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut tasks = Vec::new();
    let mut invalid = Vec::new();
    for path in entries {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match parse_task_dir(&path) {
            Ok(task) => {
                let violations = validate_task(&task);
                if violations.is_empty() {
                    tasks.push(task);
                } else {
                    invalid.push((name, format!("{violations:?}")));
                }
            }
            Err(e) => invalid.push((name, e.to_string())),
        }
    }
    Ok((tasks, invalid))
}

pub fn trajectory_path(out: &Path, task_id: &str, trial: u32) -> PathBuf {
    out.join(TRAJ_DIR).join(task_id).join(format!("{trial}.json"))
}

pub fn status_path(out: &Path, task_id: &str, trial: u32) -> PathBuf {
    out.join(TRAJ_DIR).join(task_id).join(format!("{trial}.status"))
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

fn read_status(path: &Path) -> Option<EpisodeStatus> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_value(serde_json::Value::String(text.trim().to_string())).ok()
}

/// The trajectory is written first and the status marker last, so a marker
/// always has a complete trajectory next to it.
fn persist(out: &Path, traj: &Trajectory) -> std::io::Result<()> {
    let path = trajectory_path(out, &traj.task_id, traj.trial);
    fs::create_dir_all(path.parent().expect("trajectory path has a parent"))?;
    write_atomic(&path, &traj.to_json())?;
    let status = serde_json::to_value(traj.status).expect("status serializes");
    write_atomic(
        &status_path(out, &traj.task_id, traj.trial),
        status.as_str().expect("status is a string"),
    )
}

/// Runs every task × trial episode not already finished on disk.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    let model = config.model.build()?;
    run_campaign_with(config, model.as_ref())
}

pub fn run_campaign_with(config: &CampaignConfig, model: &dyn ModelClient) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let template = config.template()?;
    let (tasks, invalid_tasks) = load_tasks(&config.tasks_dir)?;
    if tasks.is_empty() {
        return Err(CampaignError::NoTasks(config.tasks_dir.display().to_string()));
    }
    let out = &config.output_dir;
    fs::create_dir_all(out.join(TRAJ_DIR)).map_err(|e| CampaignError::Io(e.to_string()))?;

    let mut grid: Vec<(usize, u32)> = (0..tasks.len())
        .flat_map(|t| (0..config.trials_per_task).map(move |k| (t, k)))
        .collect();
    let planned = grid.len();
    grid.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let (done, queue): (Vec<_>, Vec<_>) = grid
        .into_iter()
        .partition(|&(t, k)| read_status(&status_path(out, &tasks[t].id, k)).is_some());

    let budget = config.max_new_episodes.unwrap_or(usize::MAX).min(queue.len());
    let gauge = LiveGauge::new();
    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(budget.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= budget {
                    break;
                }
                let (t, trial) = queue[i];
                let task = &tasks[t];
                let options = EpisodeOptions {
                    history_mode: config.history_mode,
                    trial,
                    gauge: Some(Arc::clone(&gauge)),
                    verify: config.verify.clone(),
                    ..EpisodeOptions::default()
                };
                let traj = run_episode_with(task, model, &config.session, &config.limits, &template, &options);
                tracing::info!(task = %task.id, trial, status = ?traj.status, "episode finished");
                if let Err(e) = persist(out, &traj) {
                    failures.lock().expect("failures lock").push(format!("{}/{trial}: {e}", task.id));
                }
            });
        }
    });
    let failures = failures.into_inner().expect("failures lock");
    if !failures.is_empty() {
        return Err(CampaignError::Io(failures.join("; ")));
    }

    let mut statuses = StatusCounts::default();
    for task in &tasks {
        for k in 0..config.trials_per_task {
            if let Some(s) = read_status(&status_path(out, &task.id, k)) {
                statuses.add(s);
            }
        }
    }
    let report = CampaignReport {
        tasks: tasks.len(),
        trials_per_task: config.trials_per_task,
        workers: config.workers,
        seed: config.seed,
        planned,
        executed_now: budget,
        skipped_existing: done.len(),
        pending: queue.len() - budget,
        statuses,
        peak_live_sessions: gauge.peak(),
        invalid_tasks,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out.join(REPORT_FILE), &json).map_err(|e| CampaignError::Io(e.to_string()))?;
    Ok(report)
}

/// Every trajectory JSON under `dir` (a campaign output directory or its
/// `trajs` subdirectory), ordered by task id and trial.
pub fn load_trajectories(dir: &Path) -> Result<Vec<Trajectory>, CampaignError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CampaignError::Io(e.to_string()))?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        if path.file_name().is_some_and(|n| n == REPORT_FILE) {
            continue;
        }
        let text = fs::read_to_string(path).map_err(|e| CampaignError::Io(format!("{}: {e}", path.display())))?;
        let traj: Trajectory =
            serde_json::from_str(&text).map_err(|e| CampaignError::Io(format!("{}: {e}", path.display())))?;
        out.push(traj);
    }
    out.sort_by(|a, b| (&a.task_id, a.trial).cmp(&(&b.task_id, b.trial)));
    Ok(out)
}

/// Serialized trajectories keyed by relative path, for comparing runs.
pub fn snapshot_outputs(out: &Path) -> BTreeMap<String, String> {
    let root = out.join(TRAJ_DIR);
    walkdir::WalkDir::new(&root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| {
            let rel = e.path().strip_prefix(&root).ok()?.to_string_lossy().into_owned();
            Some((rel, fs::read_to_string(e.path()).ok()?))
        })
        .collect()
}

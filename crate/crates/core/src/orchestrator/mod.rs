//! Campaign engine: configuration, parallel resumable rollouts and
//! evaluation aggregation.

mod campaign;
mod config;
mod eval;

pub use campaign::{
    load_tasks, load_trajectories, run_campaign, run_campaign_with, snapshot_outputs, status_path, trajectory_path,
    CampaignReport, InvalidTasks, StatusCounts, REPORT_FILE, TRAJ_DIR,
};
pub use config::{interpolate_env, load_campaign_config, parse_config, CampaignConfig, ModelSpec};
pub use eval::{aggregate_eval, scores_from_trajectories, EvalSummary, ScoreMode};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("config: {0}")]
    Config(String),
    #[error("no valid tasks under {0}")]
    NoTasks(String),
    #[error("no reports to aggregate")]
    EmptyInput,
    #[error("io: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{EpisodeLimits, MockEntry, MockModelClient};
    use crate::session::{Script, SessionConfig};
    use crate::task_model::{write_task_dir, FileSet, TaskSpec};
    use std::path::Path;

    const DONE: &str = r#"{"analysis": "a", "plan": "p", "commands": [{"keystrokes": "ls\n", "duration": 0.5}], "task_complete": true}"#;
    const MORE: &str = r#"{"analysis": "a", "plan": "p", "commands": [], "task_complete": false}"#;

    fn corpus(dir: &Path, n: usize) {
        for i in 0..n {
            let mut t = TaskSpec::new(format!("task-{i:02}"), format!("Do thing {i}."));
            t.tests = FileSet::new().with_text("test_outputs.py", "def test_x():\n    pass\n");
            write_task_dir(&t, &dir.join(&t.id)).unwrap();
        }
    }

    fn model() -> MockModelClient {
        let mut entries = vec![MockEntry::always(MORE)];
        for i in (0..10).step_by(3) {
            entries.push(MockEntry::always(DONE).for_task(format!("task-{i:02}")));
        }
        entries.push(MockEntry::always("garbage").for_task("task-01"));
        MockModelClient::new(entries)
    }

    fn config(tasks: &Path, out: &Path, workers: usize) -> CampaignConfig {
        CampaignConfig {
            tasks_dir: tasks.into(),
            output_dir: out.into(),
            model: ModelSpec::Mock { path: "unused".into() },
            session: SessionConfig::scripted(Script::default().frame(0, "$ ")),
            limits: EpisodeLimits {
                max_turns: 3,
                ..EpisodeLimits::default()
            },
            workers,
            trials_per_task: 1,
            seed: 5,
            history_mode: Default::default(),
            verify: None,
            template: None,
            max_new_episodes: None,
        }
    }

    #[test]
    fn campaign_conserves_and_resumes() {
        let tasks = tempfile::tempdir().unwrap();
        corpus(tasks.path(), 10);
        let m = model();

        let full = tempfile::tempdir().unwrap();
        let r = run_campaign_with(&config(tasks.path(), full.path(), 4), &m).unwrap();
        assert_eq!(r.executed_now, 10);
        assert_eq!(r.statuses.total(), 10);
        assert_eq!(r.statuses.completed, 4);
        assert_eq!(r.statuses.error, 1);
        assert!(r.peak_live_sessions <= 4);
        assert!(full.path().join(REPORT_FILE).exists());
        let full_snapshot = snapshot_outputs(full.path());
        assert_eq!(full_snapshot.len(), 20);

        let part = tempfile::tempdir().unwrap();
        let mut cfg = config(tasks.path(), part.path(), 8);
        cfg.max_new_episodes = Some(5);
        let r1 = run_campaign_with(&cfg, &m).unwrap();
        assert_eq!((r1.executed_now, r1.pending), (5, 5));
        cfg.max_new_episodes = None;
        let r2 = run_campaign_with(&cfg, &m).unwrap();
        assert_eq!((r2.executed_now, r2.skipped_existing), (5, 5));
        assert_eq!(snapshot_outputs(part.path()), full_snapshot);
        let r3 = run_campaign_with(&cfg, &m).unwrap();
        assert_eq!(r3.executed_now, 0);

        let serial = tempfile::tempdir().unwrap();
        run_campaign_with(&config(tasks.path(), serial.path(), 1), &m).unwrap();
        assert_eq!(snapshot_outputs(serial.path()), full_snapshot);

        let trajs = load_trajectories(full.path()).unwrap();
        assert_eq!(trajs.len(), 10);
        assert_eq!(trajs[0].task_id, "task-00");
    }

    #[test]
    fn empty_task_dir_is_fatal() {
        let tasks = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = run_campaign_with(&config(tasks.path(), out.path(), 1), &model()).unwrap_err();
        assert!(matches!(err, CampaignError::NoTasks(_)));
    }
}

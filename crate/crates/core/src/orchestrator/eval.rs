use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::rollout::{TestReport, Trajectory};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// 1 when every test passes, else 0.
    #[default]
    Pass,
    /// The report's weighted score.
    Weighted,
}

impl ScoreMode {
    pub fn score(self, report: &TestReport) -> f64 {
        match self {
            ScoreMode::Pass => f64::from(u8::from(report.all_passed())),
            ScoreMode::Weighted => report.score(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_task: BTreeMap<String, f64>,
    /// Percent.
    pub overall_mean: f64,
    /// Percent: sample standard deviation of the per-task means over
    /// sqrt(task count).
    pub stderr: f64,
    pub tasks: usize,
    pub reports: usize,
    /// Set when only one task was scored and `stderr` is 0 by convention.
    pub single_task: bool,
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.overall_mean, self.stderr)?;
        if self.single_task {
            write!(f, " (single task, no stderr)")?;
        }
        Ok(())
    }
}

/// Aggregates per-trial scores in [0, 1] keyed by (task, trial).
pub fn aggregate_eval(scores: &BTreeMap<(String, u32), f64>) -> Result<EvalSummary, CampaignError> {
    if scores.is_empty() {
        return Err(CampaignError::EmptyInput);
    }
    let mut by_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((task, _), s) in scores {
        by_task.entry(task.clone()).or_default().push(*s);
    }
    let per_task: BTreeMap<String, f64> = by_task
        .into_iter()
        .map(|(t, v)| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (t, m)
        })
        .collect();
    let n = per_task.len();
    let mean = per_task.values().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = per_task.values().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Ok(EvalSummary {
        per_task,
        overall_mean: mean * 100.0,
        stderr: stderr * 100.0,
        tasks: n,
        reports: scores.len(),
        single_task: n == 1,
    })
}

/// Scores taken from the reports embedded in trajectories. Trajectories
/// without a report score 0 when `missing_as_failure`, else are skipped.
pub fn scores_from_trajectories(
    trajs: &[Trajectory],
    mode: ScoreMode,
    missing_as_failure: bool,
) -> BTreeMap<(String, u32), f64> {
    trajs
        .iter()
        .filter_map(|t| {
            let score = match &t.test_report {
                Some(r) => mode.score(r),
                None if missing_as_failure => 0.0,
                None => return None,
            };
            Some(((t.task_id.clone(), t.trial), score))
        })
        .collect()
}

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;

use super::FilterError;
use crate::rollout::{EpisodeStatus, TestReport, Trajectory};

pub type ReportKey = (String, u32);

pub fn complete_only(trajs: impl IntoIterator<Item = Trajectory>) -> Vec<Trajectory> {
    trajs
        .into_iter()
        .filter(|t| t.status == EpisodeStatus::Completed)
        .collect()
}

/// Minimum weighted score a trajectory's report must reach.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuccessThreshold(pub BigRational);

impl Default for SuccessThreshold {
    fn default() -> Self {
        Self(BigRational::from_integer(BigInt::from(1)))
    }
}

impl SuccessThreshold {
    pub fn from_f64(value: f64) -> Option<Self> {
        BigRational::from_float(value).map(Self)
    }
}

/// Keeps trajectories whose report reaches the threshold. Every trajectory
/// must have a report under its (task, trial) key.
pub fn success_only(
    trajs: impl IntoIterator<Item = Trajectory>,
    reports: &BTreeMap<ReportKey, TestReport>,
    threshold: &SuccessThreshold,
) -> Result<Vec<Trajectory>, FilterError> {
    let mut kept = Vec::new();
    for t in trajs {
        let report = reports
            .get(&(t.task_id.clone(), t.trial))
            .ok_or_else(|| FilterError::MissingReport {
                task_id: t.task_id.clone(),
                trial: t.trial,
            })?;
        if report.weighted_score >= threshold.0 {
            kept.push(t);
        }
    }
    Ok(kept)
}

/// Reports recorded inside the trajectories themselves.
pub fn embedded_reports<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> BTreeMap<ReportKey, TestReport> {
    trajs
        .into_iter()
        .filter_map(|t| t.test_report.clone().map(|r| ((t.task_id.clone(), t.trial), r)))
        .collect()
}

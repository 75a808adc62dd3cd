use serde::{Deserialize, Serialize};

use super::{estimate_messages, SftSample};
use crate::filters::TokenEstimator;
use crate::rollout::Role;

pub const DEFAULT_MAX_TOKENS: usize = 32768;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthPolicy {
    #[default]
    Drop,
    /// Remove trailing messages until the sample fits and ends on an
    /// assistant reply. Samples whose first exchange alone is too long are
    /// dropped.
    TruncateTail,
}

fn truncate_tail(mut sample: SftSample, max_len: usize, estimator: &dyn TokenEstimator) -> Option<SftSample> {
    let costs: Vec<usize> = sample.messages.iter().map(|m| estimator.estimate(&m.content)).collect();
    let mut total: usize = costs.iter().sum();
    let mut keep = sample.messages.len();
    while keep > 0 && (total > max_len || sample.messages[keep - 1].role != Role::Assistant) {
        keep -= 1;
        total -= costs[keep];
    }
    if !sample.messages[..keep].iter().any(|m| m.role == Role::Assistant) {
        return None;
    }
    sample.messages.truncate(keep);
    sample.refresh_meta(estimator);
    Some(sample)
}

pub fn apply_length_policy(
    samples: impl IntoIterator<Item = SftSample>,
    max_len: usize,
    policy: LengthPolicy,
    estimator: &dyn TokenEstimator,
) -> Vec<SftSample> {
    samples
        .into_iter()
        .filter_map(|s| {
            if estimate_messages(&s.messages, estimator) <= max_len {
                return Some(s);
            }
            match policy {
                LengthPolicy::Drop => None,
                LengthPolicy::TruncateTail => truncate_tail(s, max_len, estimator),
            }
        })
        .collect()
}

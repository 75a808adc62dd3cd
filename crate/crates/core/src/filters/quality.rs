use regex::Regex;
use serde::{Deserialize, Serialize};

use super::FilterError;
use crate::rollout::Trajectory;

pub const DEFAULT_IDENTITY_PATTERNS: &str = include_str!("../../assets/filters/identity_patterns.txt");

/// CJK Unified Ideographs and extensions A through I.
const CJK_RANGES: &[(u32, u32)] = &[
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0x20000, 0x2A6DF),
    (0x2A700, 0x2B73F),
    (0x2B740, 0x2B81F),
    (0x2B820, 0x2CEAF),
    (0x2CEB0, 0x2EBEF),
    (0x2EBF0, 0x2EE5F),
    (0x30000, 0x3134F),
    (0x31350, 0x323AF),
];

pub fn is_cjk_ideograph(c: char) -> bool {
    let c = c as u32;
    CJK_RANGES.iter().any(|&(lo, hi)| (lo..=hi).contains(&c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reason {
    CjkContent,
    IdentityLeak,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub keep: bool,
    pub reasons: Vec<Reason>,
}

impl FilterDecision {
    fn from_reasons(reasons: Vec<Reason>) -> Self {
        Self {
            keep: reasons.is_empty(),
            reasons,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QualityRules {
    pub reject_cjk: bool,
    pub identity_patterns: Vec<Regex>,
}

impl Default for QualityRules {
    fn default() -> Self {
        Self::from_pattern_text(DEFAULT_IDENTITY_PATTERNS, true).expect("bundled identity patterns compile")
    }
}

impl QualityRules {
    /// Parses a pattern file: one regex per line, `#` comments and blank
    /// lines skipped.
    pub fn from_pattern_text(text: &str, reject_cjk: bool) -> Result<Self, FilterError> {
        let mut identity_patterns = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let re = Regex::new(line).map_err(|e| FilterError::BadPattern {
                line: i + 1,
                message: e.to_string(),
            })?;
            identity_patterns.push(re);
        }
        Ok(Self {
            reject_cjk,
            identity_patterns,
        })
    }

    pub fn check_text(&self, text: &str) -> Vec<Reason> {
        let mut reasons = Vec::new();
        if self.reject_cjk && text.chars().any(is_cjk_ideograph) {
            reasons.push(Reason::CjkContent);
        }
        if self.identity_patterns.iter().any(|re| re.is_match(text)) {
            reasons.push(Reason::IdentityLeak);
        }
        reasons
    }
}

/// Inspects every model reply of the trajectory.
pub fn quality_filter(traj: &Trajectory, rules: &QualityRules) -> FilterDecision {
    let mut reasons: Vec<Reason> = Vec::new();
    for turn in &traj.turns {
        for r in rules.check_text(&turn.raw_model_text) {
            if !reasons.contains(&r) {
                reasons.push(r);
            }
        }
    }
    reasons.sort();
    FilterDecision::from_reasons(reasons)
}

//! Corpus hygiene and trajectory selection.

mod decontam;
mod quality;
mod select;
mod stats;

pub use decontam::{decontaminate, ngram_index, DecontamConfig, DecontamResult, NGramIndex, Removal, DEFAULT_NGRAM};
pub use quality::{is_cjk_ideograph, quality_filter, FilterDecision, QualityRules, Reason, DEFAULT_IDENTITY_PATTERNS};
pub use select::{complete_only, embedded_reports, success_only, ReportKey, SuccessThreshold};
pub use stats::{
    corpus_stats, trajectory_tokens, ByteEstimator, CorpusStats, Distribution, StatsConfig, Summary, TokenEstimator,
};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("no test report for task `{task_id}` trial {trial}")]
    MissingReport { task_id: String, trial: u32 },
    #[error("identity pattern on line {line}: {message}")]
    BadPattern { line: usize, message: String },
}

#[cfg(test)]
pub(crate) mod test_support {
    use num_bigint::BigInt;
    use num_rational::BigRational;

    use crate::rollout::{EpisodeStatus, HistoryMode, TestReport, Trajectory, Turn, TurnOutcome};
    use crate::session::TerminalState;

    pub fn traj_with_status(id: &str, status: EpisodeStatus) -> Trajectory {
        let mut t = traj_with_replies(id, &["{}"]);
        t.status = status;
        t
    }

    pub fn traj_with_replies(id: &str, replies: &[&str]) -> Trajectory {
        let turns = replies
            .iter()
            .enumerate()
            .map(|(index, r)| Turn {
                index,
                terminal_state_before: TerminalState {
                    text: format!("$ {index}"),
                    truncated: false,
                    captured_at: index as f64,
                },
                prompt_state: format!("$ {index}"),
                raw_model_text: r.to_string(),
                outcome: TurnOutcome::ModelError { message: String::new() },
                executed: vec![],
            })
            .collect();
        Trajectory {
            task_id: id.into(),
            trial: 0,
            instruction: format!("do {id}"),
            origin: None,
            domain: None,
            history_mode: HistoryMode::Fresh,
            status: EpisodeStatus::Completed,
            turns,
            total_model_chars: replies.iter().map(|r| r.len()).sum(),
            started_at: 0.0,
            ended_at: 1.0,
            error: None,
            test_report: None,
        }
    }

    pub fn report(num: i64, den: i64) -> TestReport {
        TestReport {
            per_test: Default::default(),
            weighted_score: BigRational::new(BigInt::from(num), BigInt::from(den)),
            exit_code: Some(0),
            raw_output: String::new(),
        }
    }
}

//! Episode driver: prompt, call the model, parse, type into the terminal,
//! repeat; then verify with the task's tests.

mod model;
mod verify;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent_protocol::{parse_agent_response, Command, KeyEncoder, ParseOutcome, PromptTemplate};
use crate::session::{start_session_tracked, LiveGauge, SessionConfig, TerminalState};
use crate::task_model::TaskSpec;

pub use model::{
    CompletionRequest, HttpModelClient, HttpModelConfig, Message, MockEntry, MockModelClient, ModelClient, ModelError,
    RetryPolicy, Role,
};
pub use verify::{
    apply_solution, parse_report, run_tests, run_tests_with, verify_session, weighted_score, TestReport, TestResult,
    VerifyConfig, VerifyError, REPORT_FILE, SOLVE_SCRIPT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeLimits {
    pub max_turns: usize,
    pub max_wall_seconds: f64,
    pub per_wait_cap_seconds: f64,
    /// Consecutive model or parse failures tolerated before giving up.
    pub max_consecutive_errors: usize,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            max_turns: 50,
            max_wall_seconds: 1800.0,
            per_wait_cap_seconds: 60.0,
            max_consecutive_errors: 3,
        }
    }
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 {
            return Err("max_turns must be positive".into());
        }
        if self.max_wall_seconds.is_nan() || self.max_wall_seconds <= 0.0 {
            return Err("max_wall_seconds must be positive".into());
        }
        let cap = self.per_wait_cap_seconds;
        if cap.is_nan() || cap <= 0.0 || cap > self.max_wall_seconds {
            return Err("per_wait_cap_seconds must be positive and at most max_wall_seconds".into());
        }
        if self.max_consecutive_errors == 0 {
            return Err("max_consecutive_errors must be positive".into());
        }
        Ok(())
    }
}

/// How prompts are presented to the model across turns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// Every turn sends the full template rendered with the current screen.
    #[default]
    Fresh,
    /// The rendered template opens a running conversation; later turns add
    /// only the new screen as a user message.
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Completed,
    Incomplete,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnOutcome {
    Parsed(ParseOutcome),
    ParseError { code: String, message: String },
    ModelError { message: String },
}

impl TurnOutcome {
    pub fn is_error(&self) -> bool {
        !matches!(self, TurnOutcome::Parsed(_))
    }

    pub fn task_complete(&self) -> bool {
        matches!(self, TurnOutcome::Parsed(p) if p.response.task_complete)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Executed {
    pub command: Command,
    pub actual_wait_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub terminal_state_before: TerminalState,
    /// Text substituted for the terminal-state placeholder; differs from the
    /// snapshot when an error notice was prepended.
    pub prompt_state: String,
    /// Empty when the model call itself failed.
    pub raw_model_text: String,
    pub outcome: TurnOutcome,
    pub executed: Vec<Executed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub trial: u32,
    pub instruction: String,
    pub origin: Option<String>,
    pub domain: Option<String>,
    pub history_mode: HistoryMode,
    pub status: EpisodeStatus,
    pub turns: Vec<Turn>,
    pub total_model_chars: usize,
    /// Session-clock seconds; virtual on the scripted backend.
    pub started_at: f64,
    pub ended_at: f64,
    /// Why the episode ended in `error`, when not visible in the turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_report: Option<TestReport>,
}

impl Trajectory {
    fn empty(task: &TaskSpec, trial: u32, history_mode: HistoryMode) -> Self {
        Self {
            task_id: task.id.clone(),
            trial,
            instruction: task.instruction.clone(),
            origin: task.origin().map(str::to_string),
            domain: task.domain.clone(),
            history_mode,
            status: EpisodeStatus::Incomplete,
            turns: Vec::new(),
            total_model_chars: 0,
            started_at: 0.0,
            ended_at: 0.0,
            error: None,
            test_report: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    /// The prompt text added on turn `index`: the full rendered template in
    /// fresh mode and on the first chat turn, the bare screen afterwards.
    pub fn turn_prompt(&self, template: &PromptTemplate, index: usize) -> String {
        self.turn_prompt_as(template, index, self.history_mode)
    }

    pub fn turn_prompt_as(&self, template: &PromptTemplate, index: usize, mode: HistoryMode) -> String {
        let turn = &self.turns[index];
        match (mode, index) {
            (HistoryMode::Chat, 1..) => turn.prompt_state.clone(),
            _ => template.render(&self.instruction, &turn.prompt_state),
        }
    }

    /// Messages the model saw on the turn at `index`, with the assistant
    /// replies of earlier turns in chat mode.
    pub fn request_messages(&self, template: &PromptTemplate, index: usize) -> Vec<Message> {
        match self.history_mode {
            HistoryMode::Fresh => vec![Message::new(Role::User, self.turn_prompt(template, index))],
            HistoryMode::Chat => {
                let mut msgs = Vec::with_capacity(2 * index + 1);
                for i in 0..=index {
                    if i > 0 {
                        msgs.push(Message::new(Role::Assistant, self.turns[i - 1].raw_model_text.clone()));
                    }
                    msgs.push(Message::new(Role::User, self.turn_prompt(template, i)));
                }
                msgs
            }
        }
    }
}

/// Knobs beyond the limits, with defaults suitable for single runs.
#[derive(Debug, Clone, Default)]
pub struct EpisodeOptions {
    pub history_mode: HistoryMode,
    pub trial: u32,
    pub keys: KeyEncoder,
    /// Counts the episode's session while it is live.
    pub gauge: Option<Arc<LiveGauge>>,
    /// Run the task's tests in the same session once the agent stops.
    pub verify: Option<VerifyConfig>,
}

pub fn run_episode(
    task: &TaskSpec,
    model: &dyn ModelClient,
    session_config: &SessionConfig,
    limits: &EpisodeLimits,
    template: &PromptTemplate,
) -> Trajectory {
    run_episode_with(task, model, session_config, limits, template, &EpisodeOptions::default())
}

fn error_notice(message: &str) -> String {
    format!(
        "Previous response had errors: {message}\nPlease respond with a single valid JSON object as described above.\n\n"
    )
}

pub fn run_episode_with(
    task: &TaskSpec,
    model: &dyn ModelClient,
    session_config: &SessionConfig,
    limits: &EpisodeLimits,
    template: &PromptTemplate,
    options: &EpisodeOptions,
) -> Trajectory {
    let mut traj = Trajectory::empty(task, options.trial, options.history_mode);
    if let Err(e) = limits.validate() {
        traj.status = EpisodeStatus::Error;
        traj.error = Some(e);
        return traj;
    }
    let mut session = match start_session_tracked(task, session_config, options.gauge.as_ref()) {
        Ok(s) => s,
        Err(e) => {
            traj.status = EpisodeStatus::Error;
            traj.error = Some(e.to_string());
            return traj;
        }
    };
    traj.started_at = session.elapsed();

    let mut consecutive_errors = 0;
    let mut notice: Option<String> = None;
    let mut messages: Vec<Message> = Vec::new();

    while traj.turns.len() < limits.max_turns {
        if session.elapsed() - traj.started_at >= limits.max_wall_seconds {
            break;
        }
        let state = match session.snapshot() {
            Ok(s) => s,
            Err(e) => {
                traj.status = EpisodeStatus::Error;
                traj.error = Some(e.to_string());
                break;
            }
        };
        let prompt_state = match notice.take() {
            Some(n) => n + &state.text,
            None => state.text.clone(),
        };
        let index = traj.turns.len();
        match options.history_mode {
            HistoryMode::Fresh => messages = vec![Message::new(Role::User, template.render(&task.instruction, &prompt_state))],
            HistoryMode::Chat if index == 0 => {
                messages.push(Message::new(Role::User, template.render(&task.instruction, &prompt_state)))
            }
            HistoryMode::Chat => messages.push(Message::new(Role::User, prompt_state.clone())),
        }

        let request = CompletionRequest {
            task_id: &task.id,
            trial: options.trial,
            turn: index,
            messages: &messages,
        };
        let (raw, outcome) = match model.complete(&request) {
            Ok(text) => {
                let outcome = match parse_agent_response(&text) {
                    Ok(p) => TurnOutcome::Parsed(p),
                    Err(e) => TurnOutcome::ParseError {
                        code: e.code().to_string(),
                        message: e.to_string(),
                    },
                };
                (text, outcome)
            }
            Err(e) => (String::new(), TurnOutcome::ModelError { message: e.to_string() }),
        };
        traj.total_model_chars += raw.chars().count();
        if options.history_mode == HistoryMode::Chat {
            messages.push(Message::new(Role::Assistant, raw.clone()));
        }

        let mut turn = Turn {
            index,
            terminal_state_before: state,
            prompt_state,
            raw_model_text: raw,
            outcome,
            executed: Vec::new(),
        };

        match &turn.outcome {
            TurnOutcome::Parsed(parsed) => {
                consecutive_errors = 0;
                for command in &parsed.response.commands {
                    let remaining = limits.max_wall_seconds - (session.elapsed() - traj.started_at);
                    let wait = command.duration.min(limits.per_wait_cap_seconds).min(remaining).max(0.0);
                    let sent = session
                        .send(&options.keys.encode(&command.keystrokes))
                        .and_then(|_| session.wait(wait));
                    if let Err(e) = sent {
                        traj.error = Some(e.to_string());
                        break;
                    }
                    turn.executed.push(Executed {
                        command: command.clone(),
                        actual_wait_seconds: wait,
                    });
                }
            }
            TurnOutcome::ParseError { message, .. } | TurnOutcome::ModelError { message } => {
                consecutive_errors += 1;
                notice = Some(error_notice(message));
            }
        }

        let complete = turn.outcome.task_complete();
        traj.turns.push(turn);
        if traj.error.is_some() {
            traj.status = EpisodeStatus::Error;
            break;
        }
        if complete {
            traj.status = EpisodeStatus::Completed;
            break;
        }
        if consecutive_errors >= limits.max_consecutive_errors {
            traj.status = EpisodeStatus::Error;
            break;
        }
    }

    traj.ended_at = session.elapsed();
    if let Some(cfg) = &options.verify {
        if !task.tests.is_empty() && traj.status != EpisodeStatus::Error {
            match verify_session(&mut session, task, cfg) {
                Ok(report) => traj.test_report = Some(report),
                Err(e) => tracing::warn!(task = %task.id, error = %e, "verification failed"),
            }
        }
    }
    session.stop();
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{ExecRule, Script};
    use crate::task_model::FileSet;

    pub(crate) const REFERENCE_REPLY: &str = r#"{
  "analysis": "I can see the terminal is ready...",
  "plan": "I will first list the files...",
  "commands": [
    {"keystrokes": "ls -la\n", "duration": 0.1},
    {"keystrokes": "cd project\n", "duration": 0.1}
  ],
  "task_complete": true
}"#;

    const IDLE: &str = r#"{"analysis": "a", "plan": "p", "commands": [{"keystrokes": "sleep 100\n", "duration": 90}]}"#;

    fn session() -> SessionConfig {
        SessionConfig::scripted(Script::default().frame(0, "$ ").frame(1, "$ ls -la\ntotal 0\n$ "))
    }

    fn task() -> TaskSpec {
        TaskSpec::new("demo", "List the files.")
    }

    fn mock(entries: Vec<MockEntry>) -> MockModelClient {
        MockModelClient::new(entries)
    }

    #[test]
    fn reference_reply_completes_in_one_turn() {
        let traj = run_episode(
            &task(),
            &mock(vec![MockEntry::on_turn(0, REFERENCE_REPLY)]),
            &session(),
            &EpisodeLimits::default(),
            &PromptTemplate::terminus(),
        );
        assert_eq!(traj.status, EpisodeStatus::Completed);
        assert_eq!(traj.turns.len(), 1);
        let executed = &traj.turns[0].executed;
        assert_eq!(executed.len(), 2);
        assert_eq!(executed[0].command.keystrokes, "ls -la\n");
        assert_eq!(traj.ended_at, 0.2);
        assert_eq!(traj.total_model_chars, REFERENCE_REPLY.chars().count());
    }

    #[test]
    fn never_complete_exhausts_turns() {
        let limits = EpisodeLimits {
            max_turns: 3,
            ..EpisodeLimits::default()
        };
        let traj = run_episode(&task(), &mock(vec![MockEntry::always(IDLE)]), &session(), &limits, &PromptTemplate::terminus());
        assert_eq!(traj.status, EpisodeStatus::Incomplete);
        assert_eq!(traj.turns.len(), 3);
        for turn in &traj.turns {
            assert_eq!(turn.executed[0].actual_wait_seconds, 60.0);
        }
    }

    #[test]
    fn garbage_exhausts_error_budget() {
        let traj = run_episode(
            &task(),
            &mock(vec![MockEntry::always("garbage")]),
            &session(),
            &EpisodeLimits::default(),
            &PromptTemplate::terminus(),
        );
        assert_eq!(traj.status, EpisodeStatus::Error);
        assert_eq!(traj.turns.len(), 3);
        assert!(traj.turns.iter().all(|t| t.outcome.is_error()));
        assert!(traj.turns[1].prompt_state.starts_with("Previous response had errors"));
        assert!(traj.turns[1].prompt_state.ends_with("$ "));
    }

    #[test]
    fn recovery_resets_error_budget() {
        let m = mock(vec![
            MockEntry::always("garbage"),
            MockEntry::on_turn(2, r#"{"analysis":"","plan":"","commands":[]}"#),
            MockEntry::on_turn(5, REFERENCE_REPLY),
        ]);
        let traj = run_episode(&task(), &m, &session(), &EpisodeLimits::default(), &PromptTemplate::terminus());
        assert_eq!(traj.status, EpisodeStatus::Completed);
        assert_eq!(traj.turns.len(), 6);
        assert!(traj.turns[2].executed.is_empty());
    }

    #[test]
    fn model_errors_count_against_budget() {
        let mut failing = MockEntry::always("");
        failing.error = Some("down".into());
        let traj = run_episode(&task(), &mock(vec![failing]), &session(), &EpisodeLimits::default(), &PromptTemplate::terminus());
        assert_eq!(traj.status, EpisodeStatus::Error);
        assert!(matches!(traj.turns[0].outcome, TurnOutcome::ModelError { .. }));
    }

    #[test]
    fn wall_clock_limit_stops_episode() {
        let limits = EpisodeLimits {
            max_wall_seconds: 100.0,
            ..EpisodeLimits::default()
        };
        let traj = run_episode(&task(), &mock(vec![MockEntry::always(IDLE)]), &session(), &limits, &PromptTemplate::terminus());
        assert_eq!(traj.status, EpisodeStatus::Incomplete);
        assert_eq!(traj.turns.len(), 2);
        assert_eq!(traj.turns[1].executed[0].actual_wait_seconds, 40.0);
        assert_eq!(traj.ended_at, 100.0);
    }

    #[test]
    fn session_failure_is_error_status() {
        let traj = run_episode(
            &task(),
            &mock(vec![]),
            &SessionConfig::default(),
            &EpisodeLimits::default(),
            &PromptTemplate::terminus(),
        );
        assert_eq!(traj.status, EpisodeStatus::Error);
        assert!(traj.error.is_some());
        assert!(traj.turns.is_empty());
    }

    #[test]
    fn chat_mode_accumulates_history() {
        let limits = EpisodeLimits {
            max_turns: 3,
            ..EpisodeLimits::default()
        };
        let opts = EpisodeOptions {
            history_mode: HistoryMode::Chat,
            ..EpisodeOptions::default()
        };
        let template = PromptTemplate::terminus();
        let traj = run_episode_with(&task(), &mock(vec![MockEntry::always(IDLE)]), &session(), &limits, &template, &opts);
        let msgs = traj.request_messages(&template, 2);
        assert_eq!(msgs.len(), 5);
        assert_eq!(msgs[1].role, Role::Assistant);
        assert_eq!(msgs[4].content, "$ ls -la\ntotal 0\n$ ");
        assert!(msgs[0].content.contains("List the files."));
    }

    #[test]
    fn verification_in_same_session() {
        let mut t = task();
        t.tests = FileSet::new().with_text("test_outputs.py", "");
        let cfg = SessionConfig::scripted(Script::default().frame(0, "$ ").rule(ExecRule {
            exec: "pytest".into(),
            stdout: String::new(),
            stderr: String::new(),
            exit_code: 0,
            writes: [(REPORT_FILE.to_string(), "test_a PASS\n".to_string())].into(),
        }));
        let opts = EpisodeOptions {
            verify: Some(VerifyConfig::default()),
            ..EpisodeOptions::default()
        };
        let traj = run_episode_with(
            &t,
            &mock(vec![MockEntry::always(REFERENCE_REPLY)]),
            &cfg,
            &EpisodeLimits::default(),
            &PromptTemplate::terminus(),
            &opts,
        );
        assert!(traj.test_report.unwrap().all_passed());
    }

    #[test]
    fn limits_validation() {
        let bad = EpisodeLimits {
            per_wait_cap_seconds: 5000.0,
            ..EpisodeLimits::default()
        };
        assert!(bad.validate().is_err());
        assert!(EpisodeLimits::default().validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn response() -> impl Strategy<Value = String> {
            prop_oneof![
                Just("garbage".to_string()),
                (proptest::collection::vec(0.0f64..200.0, 0..4), any::<bool>()).prop_map(|(durations, done)| {
                    let commands: Vec<_> = durations
                        .iter()
                        .map(|d| serde_json::json!({"keystrokes": "x\n", "duration": d}))
                        .collect();
                    serde_json::json!({"analysis": "", "plan": "", "commands": commands, "task_complete": done}).to_string()
                }),
            ]
        }

        proptest! {
            #[test]
            fn budgets_hold_and_runs_are_deterministic(
                replies in proptest::collection::vec(response(), 1..8),
                max_turns in 1usize..8,
                cap in 1.0f64..100.0,
            ) {
                let entries = replies.iter().enumerate().map(|(i, r)| MockEntry::on_turn(i, r.clone())).collect();
                let m = mock(entries);
                let limits = EpisodeLimits { max_turns, per_wait_cap_seconds: cap, ..EpisodeLimits::default() };
                let t = PromptTemplate::terminus();
                let a = run_episode(&task(), &m, &session(), &limits, &t);
                let b = run_episode(&task(), &m, &session(), &limits, &t);
                prop_assert_eq!(a.to_json(), b.to_json());
                prop_assert!(a.turns.len() <= max_turns);
                for turn in &a.turns {
                    for ex in &turn.executed {
                        prop_assert!(ex.actual_wait_seconds <= cap);
                    }
                }
                let completed = a.turns.iter().any(|t| t.outcome.task_complete());
                prop_assert_eq!(completed, a.status == EpisodeStatus::Completed);
            }
        }
    }
}

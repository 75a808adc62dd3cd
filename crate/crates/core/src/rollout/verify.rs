use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::session::{start_session, Session, SessionConfig, SessionError};
use crate::task_model::{FileEntry, RelPath, TaskSpec, SOLUTION_DIR, TESTS_DIR};
use crate::taskgen::TEST_REQUIREMENTS_KEY;

/// Where the report shim and its output live, relative to the session root.
pub const REPORT_DIR: &str = ".tb";
pub const REPORT_FILE: &str = ".tb/report.txt";
const SHIM_MODULE: &str = "_tb_report";
const SHIM_SOURCE: &str = include_str!("../../assets/tb_report.py");

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("task has no tests")]
    NoTests,
    #[error("test runner failed: {0}")]
    RunnerFailure(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub per_test: BTreeMap<String, TestResult>,
    /// Exact Σ wᵢ·passᵢ / Σ wᵢ, written as `"p/q"`.
    #[serde(with = "ratio_text")]
    pub weighted_score: BigRational,
    pub exit_code: Option<i32>,
    pub raw_output: String,
}

impl TestReport {
    pub fn score(&self) -> f64 {
        self.weighted_score.to_f64().unwrap_or(0.0)
    }

    pub fn all_passed(&self) -> bool {
        self.weighted_score == BigRational::from_integer(BigInt::from(1))
    }
}

mod ratio_text {
    use num_rational::BigRational;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(|e| D::Error::custom(format!("bad ratio `{text}`: {e:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Command run when the task has no `tests/test.sh`.
    pub runner_command: String,
    /// Overrides both `tests/test.sh` and `runner_command`.
    pub test_command: Option<String>,
    /// Installs the task's `test_requirements` before the tests run;
    /// `{packages}` expands to the quoted package names.
    pub install_command: Option<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            runner_command: "python3 -m pytest -q tests".into(),
            test_command: None,
            install_command: Some("python3 -m pip install -q {packages}".into()),
        }
    }
}

impl VerifyConfig {
    fn command_for(&self, task: &TaskSpec) -> String {
        if let Some(cmd) = &self.test_command {
            cmd.clone()
        } else if task.tests.contains("test.sh") {
            format!("bash {TESTS_DIR}/test.sh")
        } else {
            self.runner_command.clone()
        }
    }
}

/// Parses `name PASS|FAIL` lines; a test reported more than once passes only
/// if every report passes.
pub fn parse_report(text: &str) -> BTreeMap<String, TestResult> {
    let mut out: BTreeMap<String, TestResult> = BTreeMap::new();
    for line in text.lines() {
        let Some((name, verdict)) = line.trim_end().rsplit_once(' ') else {
            continue;
        };
        let passed = match verdict {
            "PASS" => true,
            "FAIL" => false,
            _ => continue,
        };
        let name = name.trim();
        if name.is_empty() {
            continue;
        }
        out.entry(name.to_string())
            .and_modify(|r| r.passed &= passed)
            .or_insert(TestResult { passed });
    }
    out
}

/// Σ wᵢ·passᵢ / Σ wᵢ. With weights, every weighted test counts and a
/// weighted test missing from the results counts as failed; reported tests
/// without a weight weigh zero. Without weights, every reported test weighs 1.
pub fn weighted_score(task: &TaskSpec, results: &BTreeMap<String, TestResult>) -> BigRational {
    let passed = |name: &str| results.get(name).is_some_and(|r| r.passed);
    let weighted: Vec<(BigRational, bool)> = match &task.weights {
        Some(w) => w
            .iter()
            .map(|(name, &wt)| (BigRational::from_float(wt).unwrap_or_else(BigRational::zero), passed(name)))
            .collect(),
        None => results
            .values()
            .map(|r| (BigRational::from_integer(BigInt::from(1)), r.passed))
            .collect(),
    };
    let total: BigRational = weighted.iter().map(|(w, _)| w.clone()).sum();
    if total.is_zero() {
        return BigRational::zero();
    }
    let earned: BigRational = weighted.iter().filter(|(_, p)| *p).map(|(w, _)| w.clone()).sum();
    earned / total
}

/// Copies the tests into a live session, runs the test command and scores
/// the machine-readable report it leaves behind.
pub fn verify_session(session: &mut Session, task: &TaskSpec, config: &VerifyConfig) -> Result<TestReport, VerifyError> {
    if task.tests.is_empty() {
        return Err(VerifyError::NoTests);
    }
    for entry in task.tests.iter() {
        let path = RelPath::new(format!("{TESTS_DIR}/{}", entry.path))
            .map_err(|e| VerifyError::RunnerFailure(e.to_string()))?;
        session.write_file(&FileEntry {
            path,
            content: entry.content.clone(),
            executable: entry.executable,
        })?;
    }
    let shim = RelPath::new(format!("{REPORT_DIR}/{SHIM_MODULE}.py")).expect("static path");
    session.write_file(&FileEntry::new(shim, SHIM_SOURCE))?;
    // Blank out any stale report so only this run's results count.
    session.write_file(&FileEntry::new(RelPath::new(REPORT_FILE).expect("static path"), ""))?;

    let root = session.root();
    let env = [
        ("TB_REPORT_FILE".to_string(), format!("{root}/{REPORT_FILE}")),
        ("PYTEST_PLUGINS".to_string(), SHIM_MODULE.to_string()),
        ("PYTHONPATH".to_string(), format!("{root}/{REPORT_DIR}")),
    ];
    let requirements: Vec<&str> = task
        .metadata
        .get(TEST_REQUIREMENTS_KEY)
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|v| v.as_str()).collect())
        .unwrap_or_default();
    if let (false, Some(template)) = (requirements.is_empty(), &config.install_command) {
        let packages: Vec<String> = requirements.iter().map(|p| format!("'{}'", p.replace('\'', r"'\''"))).collect();
        let install = template.replace("{packages}", &packages.join(" "));
        match session.exec(&install, &env) {
            Ok(out) if out.success() => {}
            Ok(out) => {
                return Err(VerifyError::RunnerFailure(format!(
                    "`{install}` exited with {:?}: {}",
                    out.exit_code,
                    out.stderr.trim()
                )))
            }
            Err(SessionError::Timeout(t)) => return Err(VerifyError::RunnerFailure(format!("install timed out after {t}s"))),
            Err(e) => return Err(e.into()),
        }
    }
    let command = config.command_for(task);
    let output = match session.exec(&command, &env) {
        Ok(out) => out,
        Err(SessionError::Timeout(t)) => return Err(VerifyError::RunnerFailure(format!("timed out after {t}s"))),
        Err(e) => return Err(e.into()),
    };
    let raw_output = format!("{}{}", output.stdout, output.stderr);
    let report = session
        .read_file(&RelPath::new(REPORT_FILE).expect("static path"))?
        .ok_or_else(|| VerifyError::RunnerFailure(format!("no report written by `{command}` (exit {:?})", output.exit_code)))?;
    let per_test = parse_report(&String::from_utf8_lossy(&report));
    if per_test.is_empty() {
        return Err(VerifyError::RunnerFailure(format!("`{command}` reported no tests")));
    }
    Ok(TestReport {
        weighted_score: weighted_score(task, &per_test),
        per_test,
        exit_code: output.exit_code,
        raw_output,
    })
}

pub const SOLVE_SCRIPT: &str = "solve.sh";

/// Copies the task's solution under `solution/` and runs its solve script
/// when there is one.
pub fn apply_solution(session: &mut Session, task: &TaskSpec) -> Result<(), VerifyError> {
    let Some(solution) = &task.solution else {
        return Ok(());
    };
    for entry in solution.iter() {
        let path = RelPath::new(format!("{SOLUTION_DIR}/{}", entry.path))
            .map_err(|e| VerifyError::RunnerFailure(e.to_string()))?;
        session.write_file(&FileEntry {
            path,
            content: entry.content.clone(),
            executable: entry.executable,
        })?;
    }
    if solution.contains(SOLVE_SCRIPT) {
        let command = format!("bash {SOLUTION_DIR}/{SOLVE_SCRIPT}");
        let out = session.exec(&command, &[])?;
        if !out.success() {
            return Err(VerifyError::RunnerFailure(format!(
                "`{command}` exited with {:?}: {}",
                out.exit_code,
                out.stderr.trim()
            )));
        }
    }
    Ok(())
}

/// Runs the task's tests in a fresh session, after the reference solution
/// when `with_solution` is set.
pub fn run_tests_with(
    task: &TaskSpec,
    session_config: &SessionConfig,
    config: &VerifyConfig,
    with_solution: bool,
) -> Result<TestReport, VerifyError> {
    if task.tests.is_empty() {
        return Err(VerifyError::NoTests);
    }
    let mut session = start_session(task, session_config)?;
    let report = if with_solution {
        apply_solution(&mut session, task).and_then(|_| verify_session(&mut session, task, config))
    } else {
        verify_session(&mut session, task, config)
    };
    session.stop();
    report
}

/// Runs the task's tests in a fresh session.
pub fn run_tests(task: &TaskSpec, session_config: &SessionConfig, config: &VerifyConfig) -> Result<TestReport, VerifyError> {
    if task.tests.is_empty() {
        return Err(VerifyError::NoTests);
    }
    let mut session = start_session(task, session_config)?;
    let report = verify_session(&mut session, task, config);
    session.stop();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{ExecRule, Script};
    use crate::task_model::FileSet;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn task_with(weights: Option<&[(&str, f64)]>) -> TaskSpec {
        let mut t = TaskSpec::new("t", "x");
        t.tests = FileSet::new().with_text("test_outputs.py", "def test_a(): pass\n");
        t.weights = weights.map(|w| w.iter().map(|(k, v)| (k.to_string(), *v)).collect());
        t
    }

    fn scripted(report: &str) -> SessionConfig {
        SessionConfig::scripted(Script::default().rule(ExecRule {
            exec: "pytest".into(),
            stdout: "ran".into(),
            stderr: String::new(),
            exit_code: 1,
            writes: [(REPORT_FILE.to_string(), report.to_string())].into(),
        }))
    }

    #[test]
    fn weights_two_to_one_with_one_pass() {
        let task = task_with(Some(&[("a", 2.0), ("b", 1.0)]));
        let report = run_tests(&task, &scripted("a PASS\nb FAIL\n"), &VerifyConfig::default()).unwrap();
        assert_eq!(report.weighted_score, ratio(2, 3));
        assert!(!report.all_passed());
        assert_eq!(report.raw_output, "ran");
    }

    #[test]
    fn uniform_weights_and_full_pass() {
        let task = task_with(None);
        let report = run_tests(&task, &scripted("x PASS\ny PASS\n"), &VerifyConfig::default()).unwrap();
        assert!(report.all_passed());
        let report = run_tests(&task, &scripted("x PASS\ny FAIL\nz FAIL\n"), &VerifyConfig::default()).unwrap();
        assert_eq!(report.weighted_score, ratio(1, 3));
    }

    #[test]
    fn missing_weighted_test_counts_as_failed() {
        let task = task_with(Some(&[("a", 1.0), ("b", 3.0)]));
        let results = parse_report("a PASS\nextra PASS\n");
        assert_eq!(weighted_score(&task, &results), ratio(1, 4));
    }

    #[test]
    fn no_tests_and_missing_report() {
        let mut task = task_with(None);
        let cfg = scripted("");
        assert!(matches!(
            run_tests(&task, &SessionConfig::scripted(Script::default()), &VerifyConfig::default()),
            Err(VerifyError::RunnerFailure(_))
        ));
        assert!(matches!(run_tests(&task, &cfg, &VerifyConfig::default()), Err(VerifyError::RunnerFailure(_))));
        task.tests = FileSet::new();
        assert!(matches!(run_tests(&task, &cfg, &VerifyConfig::default()), Err(VerifyError::NoTests)));
    }

    #[test]
    fn report_parsing_is_strict_about_verdicts() {
        let parsed = parse_report("tests/test_x.py::test_a PASS\nnoise line\nb FAIL\nb PASS\n PASS\n");
        assert_eq!(parsed.len(), 2);
        assert!(parsed["tests/test_x.py::test_a"].passed);
        assert!(!parsed["b"].passed);
    }

    #[test]
    fn test_sh_takes_precedence() {
        let mut task = task_with(None);
        task.tests = task.tests.clone().with_text("test.sh", "pytest");
        assert_eq!(VerifyConfig::default().command_for(&task), "bash tests/test.sh");
        let cfg = VerifyConfig {
            test_command: Some("make check".into()),
            ..VerifyConfig::default()
        };
        assert_eq!(cfg.command_for(&task), "make check");
    }

    #[test]
    fn requirements_are_installed_first() {
        let mut task = task_with(None);
        task.set_metadata(TEST_REQUIREMENTS_KEY, toml::Value::from(vec!["numpy".to_string()]));
        let cfg = SessionConfig::scripted(
            Script::default()
                .rule(ExecRule {
                    exec: "pip install -q 'numpy'".into(),
                    stdout: String::new(),
                    stderr: String::new(),
                    exit_code: 0,
                    writes: BTreeMap::new(),
                })
                .rule(ExecRule {
                    exec: "pytest".into(),
                    stdout: String::new(),
                    stderr: String::new(),
                    exit_code: 0,
                    writes: [(REPORT_FILE.to_string(), "a PASS\n".to_string())].into(),
                }),
        );
        assert!(run_tests(&task, &cfg, &VerifyConfig::default()).unwrap().all_passed());
        assert!(matches!(
            run_tests(&task, &scripted("a PASS\n"), &VerifyConfig::default()),
            Err(VerifyError::RunnerFailure(_))
        ));
    }

    #[test]
    fn ratio_serializes_as_text() {
        let report = TestReport {
            per_test: BTreeMap::new(),
            weighted_score: ratio(2, 3),
            exit_code: Some(0),
            raw_output: String::new(),
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains(r#""weighted_score":"2/3""#));
        assert_eq!(serde_json::from_str::<TestReport>(&json).unwrap(), report);
    }

    #[cfg(unix)]
    #[test]
    fn pytest_shim_on_local_backend() {
        let has_pytest = std::process::Command::new("python3")
            .args(["-c", "import pytest"])
            .status()
            .is_ok_and(|s| s.success());
        if !has_pytest {
            eprintln!("skipping: pytest not installed");
            return;
        }
        let mut task = task_with(Some(&[("test_a", 3.0), ("test_b", 1.0)]));
        task.tests = FileSet::new().with_text("test_outputs.py", "def test_a():\n    assert True\n\ndef test_b():\n    assert False\n");
        let mut cfg = SessionConfig::local_pty();
        cfg.shell = vec!["sh".into()];
        let report = match run_tests(&task, &cfg, &VerifyConfig::default()) {
            Err(VerifyError::Session(SessionError::BackendUnavailable(e))) => {
                eprintln!("skipping: {e}");
                return;
            }
            other => other.unwrap(),
        };
        assert_eq!(report.weighted_score, ratio(3, 4), "{}", report.raw_output);
    }

    #[cfg(unix)]
    #[test]
    fn solve_script_runs_before_tests() {
        let has_pytest = std::process::Command::new("python3")
            .args(["-c", "import pytest"])
            .status()
            .is_ok_and(|s| s.success());
        if !has_pytest {
            eprintln!("skipping: pytest not installed");
            return;
        }
        let mut task = task_with(None);
        task.tests = FileSet::new().with_text(
            "test_outputs.py",
            "import pathlib\n\ndef test_out():\n    assert pathlib.Path('out.txt').read_text() == 'ok\\n'\n",
        );
        task.solution = Some(FileSet::new().with_text(SOLVE_SCRIPT, "echo ok > out.txt\n"));
        let mut cfg = SessionConfig::local_pty();
        cfg.shell = vec!["sh".into()];
        let verify = VerifyConfig::default();
        let without = match run_tests_with(&task, &cfg, &verify, false) {
            Err(VerifyError::Session(SessionError::BackendUnavailable(e))) => {
                eprintln!("skipping: {e}");
                return;
            }
            other => other.unwrap(),
        };
        assert!(!without.all_passed());
        let with = run_tests_with(&task, &cfg, &verify, true).unwrap();
        assert!(with.all_passed(), "{}", with.raw_output);
    }
}

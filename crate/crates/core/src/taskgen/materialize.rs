use serde::{Deserialize, Serialize};

use super::output::GeneratedTask;
use super::prompts::SeedRecord;
use super::registry::SkillDomain;
use super::TaskgenError;
use crate::task_model::{validate_task, FileEntry, FileSet, RelPath, TaskSpec, ORIGIN_KEY};

/// Shared lines shorter than this many non-whitespace characters are ignored.
pub const LEAKAGE_MIN_CHARS: usize = 40;
pub const TEST_FILE: &str = "test_outputs.py";
pub const TEST_REQUIREMENTS_KEY: &str = "test_requirements";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeakageFinding {
    TestLineInPrompt { line: String },
    ReferenceSolutionInPrompt { excerpt: String },
}

fn significant(line: &str) -> bool {
    line.chars().filter(|c| !c.is_whitespace()).count() >= LEAKAGE_MIN_CHARS
}

fn shared_lines(source: &str, prompt: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in source.lines().map(str::trim) {
        if significant(line) && prompt.contains(line) && !out.iter().any(|l| l == line) {
            out.push(line.to_string());
        }
    }
    out
}

/// Lexical solution-isolation check: long test lines or reference-solution
/// text that reappear verbatim in the prompt.
pub fn leakage_check(gen: &GeneratedTask, reference_solution: Option<&str>) -> Vec<LeakageFinding> {
    let mut findings: Vec<LeakageFinding> = shared_lines(&gen.tests, &gen.prompt)
        .into_iter()
        .map(|line| LeakageFinding::TestLineInPrompt { line })
        .collect();
    if let Some(solution) = reference_solution.map(str::trim).filter(|s| !s.is_empty()) {
        let mut excerpts = shared_lines(solution, &gen.prompt);
        if excerpts.is_empty() && gen.prompt.contains(solution) {
            excerpts.push(solution.to_string());
        }
        findings.extend(excerpts.into_iter().map(|excerpt| LeakageFinding::ReferenceSolutionInPrompt { excerpt }));
    }
    findings
}

/// Where a generated task came from, recorded in its metadata.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub origin: &'static str,
    pub domain: Option<String>,
    pub image_ref: Option<String>,
    pub skills: Vec<String>,
    pub reference_solution: Option<String>,
}

impl Provenance {
    pub fn skill(domain: &SkillDomain, skills: &[String]) -> Self {
        Self {
            origin: "skill",
            domain: Some(domain.name.clone()),
            image_ref: domain.image_ref.clone(),
            skills: skills.to_vec(),
            reference_solution: None,
        }
    }

    pub fn seed(seed: &SeedRecord, image_ref: Option<String>) -> Self {
        Self {
            origin: "seed",
            domain: seed.domain.clone(),
            image_ref,
            skills: Vec::new(),
            reference_solution: seed.reference_solution.clone(),
        }
    }
}

/// Turns a generated task into a task spec. Generated tasks never carry a
/// solution.
pub fn materialize_task(gen: &GeneratedTask, provenance: &Provenance, id: &str) -> Result<TaskSpec, TaskgenError> {
    let findings = leakage_check(gen, provenance.reference_solution.as_deref());
    if !findings.is_empty() {
        return Err(TaskgenError::LeakageDetected(findings));
    }
    let mut environment = FileSet::new();
    for (path, content) in &gen.files {
        let path = RelPath::new(path.as_str()).map_err(|e| TaskgenError::MalformedFiles(e.to_string()))?;
        environment
            .insert(FileEntry::new(path, content.as_bytes()))
            .map_err(|e| TaskgenError::MalformedFiles(e.to_string()))?;
    }
    let mut tests_src = gen.tests.clone();
    if !tests_src.ends_with('\n') {
        tests_src.push('\n');
    }

    let mut task = TaskSpec::new(id, gen.prompt.clone());
    task.environment = environment;
    task.tests = FileSet::new().with_text(TEST_FILE, &tests_src);
    task.weights = gen.weights.clone();
    task.solution = None;
    task.domain = provenance.domain.clone();
    task.image_ref = provenance.image_ref.clone();
    task.set_metadata(ORIGIN_KEY, provenance.origin);
    if !gen.info.is_empty() {
        task.set_metadata("info", gen.info.as_str());
    }
    if !gen.test_requirements.is_empty() {
        task.set_metadata(TEST_REQUIREMENTS_KEY, toml::Value::from(gen.test_requirements.clone()));
    }
    if !provenance.skills.is_empty() {
        task.set_metadata("skills", toml::Value::from(provenance.skills.clone()));
    }

    let violations = validate_task(&task);
    if !violations.is_empty() {
        return Err(TaskgenError::Invalid(violations));
    }
    Ok(task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::DomainRegistry;
    use std::collections::BTreeMap;

    fn gen(prompt: &str, tests: &str) -> GeneratedTask {
        GeneratedTask {
            prompt: prompt.into(),
            tests: tests.into(),
            weights: None,
            info: String::new(),
            files: BTreeMap::new(),
            test_requirements: vec![],
        }
    }

    const TESTS: &str = "def test_sum():\n    assert open('/app/out.txt').read().strip() == '42'\n";

    #[test]
    fn disjoint_prompt_has_no_findings() {
        assert!(leakage_check(&gen("Write the answer to /app/out.txt.", TESTS), None).is_empty());
    }

    #[test]
    fn quoted_assert_line_is_one_finding() {
        let prompt = "Make sure that assert open('/app/out.txt').read().strip() == '42' holds.";
        let findings = leakage_check(&gen(prompt, TESTS), None);
        assert_eq!(findings.len(), 1);
    }

    #[test]
    fn threshold_boundary() {
        let line39 = "a".repeat(39);
        let line40 = "b".repeat(20) + " " + &"c".repeat(20);
        let prompt = format!("x {line39} y {line40} z");
        let tests = format!("{line39}\n{line40}\n");
        let findings = leakage_check(&gen(&prompt, &tests), None);
        assert_eq!(findings, vec![LeakageFinding::TestLineInPrompt { line: line40 }]);
    }

    #[test]
    fn reference_solution_in_prompt() {
        let g = gen("Hint: use print(sum(xs)) somewhere.", TESTS);
        let findings = leakage_check(&g, Some("print(sum(xs))"));
        assert!(matches!(findings[0], LeakageFinding::ReferenceSolutionInPrompt { .. }));
        assert!(leakage_check(&g, Some("print(max(xs))")).is_empty());
    }

    #[test]
    fn materialized_task_shape() {
        let reg = DomainRegistry::builtin();
        let d = reg.get("data_processing").unwrap();
        let mut g = gen("Sum the CSV columns into /app/out.txt.", TESTS);
        g.files.insert("data/in.csv".into(), "a\n1\n".into());
        g.weights = Some([("test_sum".to_string(), 1.0)].into());
        g.test_requirements = vec!["pandas".into()];
        let t = materialize_task(&g, &Provenance::skill(d, &["s".into()]), "dp-0001").unwrap();
        assert!(t.solution.is_none());
        assert_eq!(t.environment.get("data/in.csv").unwrap().content, b"a\n1\n");
        assert_eq!(t.tests.get(TEST_FILE).unwrap().content, TESTS.as_bytes());
        assert_eq!(t.image_ref, d.image_ref);
        assert_eq!(t.origin(), Some("skill"));
        assert_eq!(t.metadata[TEST_REQUIREMENTS_KEY].as_array().unwrap().len(), 1);
    }

    #[test]
    fn embedded_test_body_is_rejected() {
        let prompt = format!("Here is how you will be graded:\n{TESTS}");
        let err = materialize_task(&gen(&prompt, TESTS), &Provenance::default(), "x").unwrap_err();
        assert!(matches!(err, TaskgenError::LeakageDetected(_)));
    }

    #[test]
    fn invalid_ids_are_rejected() {
        let err = materialize_task(&gen("p", "t"), &Provenance::default(), "Bad Id").unwrap_err();
        assert!(matches!(err, TaskgenError::Invalid(_)));
    }
}

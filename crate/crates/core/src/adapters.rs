//! Wraps existing math, code and SWE prompts into terminal tasks using fixed
//! instruction suffixes. No model is involved.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::task_model::{
    is_valid_task_id, write_task_dir, FileEntry, FileSet, RelPath, TaskError, TaskSpec, DOCKERFILE,
    ORIGIN_KEY,
};

pub const MATH_SUFFIX: &str = "Please place your final answer in a file named `/app/solution.txt`.";
pub const CODE_SUFFIX: &str =
    "Write Python code to solve the problem. Please place the solution code in a file named `/app/solution.py`.";
pub const SWE_SUFFIX: &str = "Please first localize the bug based on the issue statement, generate *SEARCH/REPLACE* edits to fix the issue, and save the diff to a file named `/app/solution.patch`.";

pub const DEFAULT_DOCKERFILE: &str = "FROM python:3.11-slim\nWORKDIR /app\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Math,
    Code,
    Swe,
}

impl PromptKind {
    pub fn suffix(self) -> &'static str {
        match self {
            PromptKind::Math => MATH_SUFFIX,
            PromptKind::Code => CODE_SUFFIX,
            PromptKind::Swe => SWE_SUFFIX,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Math => "math",
            PromptKind::Code => "code",
            PromptKind::Swe => "swe",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One input line: `{"id": ..., "kind": "math"|"code"|"swe", "prompt": ..., "files": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub kind: PromptKind,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<BTreeMap<String, String>>,
}

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("record `{0}` has an empty prompt")]
    EmptyPrompt(String),
    #[error("record `{0}` carries files but is not an swe record")]
    FilesOnNonSwe(String),
    #[error("record `{id}`: {source}")]
    Task { id: String, source: TaskError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// Environment definition written for every adapted task.
    pub dockerfile: String,
    pub image_ref: Option<String>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            dockerfile: DEFAULT_DOCKERFILE.into(),
            image_ref: None,
        }
    }
}

/// `<kind>-<id>` when the id is already lowercase-safe, otherwise a
/// sanitized form plus a short digest of the original so distinct ids stay
/// distinct.
pub fn adapted_task_id(record: &PromptRecord) -> String {
    let plain = format!("{}-{}", record.kind, record.id);
    if is_valid_task_id(&plain) {
        return plain;
    }
    let mut cleaned = String::new();
    for c in record.id.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-' {
            cleaned.push(c);
        } else if !cleaned.ends_with('-') {
            cleaned.push('-');
        }
    }
    let digest = hex::encode(&Sha256::digest(record.id.as_bytes())[..4]);
    let cleaned = cleaned.trim_matches('-');
    if cleaned.is_empty() {
        format!("{}-{digest}", record.kind)
    } else {
        format!("{}-{cleaned}-{digest}", record.kind)
    }
}

pub fn adapt_record(record: &PromptRecord, config: &AdapterConfig) -> Result<TaskSpec, AdaptError> {
    if record.prompt.trim().is_empty() {
        return Err(AdaptError::EmptyPrompt(record.id.clone()));
    }
    let task_err = |source| AdaptError::Task {
        id: record.id.clone(),
        source,
    };
    let mut environment = FileSet::new();
    if let Some(files) = &record.files {
        if record.kind != PromptKind::Swe {
            return Err(AdaptError::FilesOnNonSwe(record.id.clone()));
        }
        for (path, content) in files {
            let path = RelPath::new(path.as_str()).map_err(task_err)?;
            environment.insert(FileEntry::new(path, content.as_bytes())).map_err(task_err)?;
        }
    }
    if !environment.contains(DOCKERFILE) {
        environment = environment.with_text(DOCKERFILE, &config.dockerfile);
    }

    let mut task = TaskSpec::new(
        adapted_task_id(record),
        format!("{}\n\n{}", record.prompt, record.kind.suffix()),
    );
    task.environment = environment;
    task.domain = Some(record.kind.to_string());
    task.image_ref = config.image_ref.clone();
    task.set_metadata(ORIGIN_KEY, "adapter");
    task.set_metadata("adapter_kind", record.kind.as_str());
    task.set_metadata("source_id", record.id.as_str());
    Ok(task)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub written: BTreeMap<PromptKind, usize>,
    pub skipped: usize,
    /// `(record id or line, message)`.
    pub failures: Vec<(String, String)>,
}

impl AdaptSummary {
    pub fn total_written(&self) -> usize {
        self.written.values().sum()
    }
}

/// Reads JSONL prompt records; malformed lines come back as errors tagged
/// with their line number.
pub fn read_records(reader: impl BufRead) -> impl Iterator<Item = Result<PromptRecord, (String, String)>> {
    reader.lines().enumerate().filter_map(|(n, line)| {
        let tag = format!("line {}", n + 1);
        match line {
            Err(e) => Some(Err((tag, e.to_string()))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str(&l).map_err(|e| (tag, e.to_string()))),
        }
    })
}

/// Writes one task directory per record under `out_dir`, skipping tasks
/// whose directory already exists.
pub fn adapt_corpus(
    records: impl IntoIterator<Item = Result<PromptRecord, (String, String)>>,
    out_dir: &Path,
    config: &AdapterConfig,
) -> AdaptSummary {
    let mut summary = AdaptSummary::default();
    for record in records {
        let record = match record {
            Ok(r) => r,
            Err(failure) => {
                summary.failures.push(failure);
                continue;
            }
        };
        let task = match adapt_record(&record, config) {
            Ok(t) => t,
            Err(e) => {
                tracing::warn!(id = %record.id, error = %e, "skipping record");
                summary.failures.push((record.id.clone(), e.to_string()));
                continue;
            }
        };
        let dir = out_dir.join(&task.id);
        if dir.exists() {
            summary.skipped += 1;
            continue;
        }
        match write_task_dir(&task, &dir) {
            Ok(()) => *summary.written.entry(record.kind).or_default() += 1,
            Err(e) => summary.failures.push((record.id.clone(), e.to_string())),
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::{parse_task_dir, validate_task};

    fn rec(id: &str, kind: PromptKind, prompt: &str) -> PromptRecord {
        PromptRecord {
            id: id.into(),
            kind,
            prompt: prompt.into(),
            files: None,
        }
    }

    #[test]
    fn math_suffix() {
        let t = adapt_record(&rec("1", PromptKind::Math, "What is 2+2?"), &AdapterConfig::default()).unwrap();
        assert_eq!(
            t.instruction,
            "What is 2+2?\n\nPlease place your final answer in a file named `/app/solution.txt`."
        );
        assert_eq!(t.origin(), Some("adapter"));
        assert!(t.tests.is_empty());
        assert!(t.solution.is_none());
        assert!(validate_task(&t).is_empty());
    }

    #[test]
    fn code_suffix() {
        let t = adapt_record(&rec("c", PromptKind::Code, "Sum a list."), &AdapterConfig::default()).unwrap();
        assert!(t.instruction.ends_with("\n\nWrite Python code to solve the problem. Please place the solution code in a file named `/app/solution.py`."));
    }

    #[test]
    fn swe_files_become_environment() {
        let mut r = rec("django__1", PromptKind::Swe, "Fix the crash.");
        r.files = Some([("src/x.py".to_string(), "print(1)\n".to_string())].into());
        let t = adapt_record(&r, &AdapterConfig::default()).unwrap();
        assert_eq!(t.environment.get("src/x.py").unwrap().content, b"print(1)\n");
        assert!(t.environment.contains(DOCKERFILE));
        assert!(t.instruction.contains("generate *SEARCH/REPLACE* edits"));
        assert!(t.instruction.ends_with("`/app/solution.patch`."));
    }

    #[test]
    fn record_errors() {
        let mut r = rec("m", PromptKind::Math, "x");
        r.files = Some(BTreeMap::new());
        assert!(matches!(adapt_record(&r, &AdapterConfig::default()), Err(AdaptError::FilesOnNonSwe(_))));
        let mut r = rec("s", PromptKind::Swe, "x");
        r.files = Some([("/etc/passwd".to_string(), String::new())].into());
        assert!(matches!(
            adapt_record(&r, &AdapterConfig::default()),
            Err(AdaptError::Task { source: TaskError::PathEscape(_), .. })
        ));
        assert!(matches!(
            adapt_record(&rec("e", PromptKind::Code, "  \n"), &AdapterConfig::default()),
            Err(AdaptError::EmptyPrompt(_))
        ));
    }

    #[test]
    fn ids_are_sanitized_and_distinct() {
        let a = adapted_task_id(&rec("Django/Issue 12", PromptKind::Swe, "x"));
        let b = adapted_task_id(&rec("django/issue-12", PromptKind::Swe, "x"));
        assert!(is_valid_task_id(&a) && is_valid_task_id(&b));
        assert_ne!(a, b);
        assert!(a.starts_with("swe-django-issue-12-"));
        assert_eq!(adapted_task_id(&rec("abc-1", PromptKind::Math, "x")), "math-abc-1");
        assert!(is_valid_task_id(&adapted_task_id(&rec("!!!", PromptKind::Math, "x"))));
    }

    #[test]
    fn corpus_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut swe = rec("s1", PromptKind::Swe, "Fix it.");
        swe.files = Some([("a.py".to_string(), "x = 1\n".to_string())].into());
        let input = [rec("m1", PromptKind::Math, "2+2?"), rec("c1", PromptKind::Code, "sort"), swe]
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect::<Vec<_>>()
            .join("\n")
            + "\nnot json\n";

        let first = adapt_corpus(read_records(input.as_bytes()), dir.path(), &AdapterConfig::default());
        assert_eq!(first.total_written(), 3);
        assert_eq!(first.written[&PromptKind::Swe], 1);
        assert_eq!(first.failures.len(), 1);
        assert_eq!(first.failures[0].0, "line 4");

        let second = adapt_corpus(read_records(input.as_bytes()), dir.path(), &AdapterConfig::default());
        assert_eq!(second.total_written(), 0);
        assert_eq!(second.skipped, 3);

        let back = parse_task_dir(&dir.path().join("swe-s1")).unwrap();
        assert_eq!(back, adapt_record(&rec_with_files(), &AdapterConfig::default()).unwrap());
    }

    fn rec_with_files() -> PromptRecord {
        let mut swe = rec("s1", PromptKind::Swe, "Fix it.");
        swe.files = Some([("a.py".to_string(), "x = 1\n".to_string())].into());
        swe
    }
}

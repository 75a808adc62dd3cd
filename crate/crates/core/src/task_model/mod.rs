//! The on-disk task directory format shared by every stage of the pipeline.
//!
//! ```text
//! <root>/
//!   instruction.md
//!   task.toml
//!   environment/   (Dockerfile and input files)
//!   solution/      (optional)
//!   tests/         (may hold weights.json)
//! ```

mod io;
mod path;
mod validate;

use std::collections::BTreeMap;

pub use io::{parse_task_dir, write_task_dir};
pub use path::RelPath;
pub use validate::{is_valid_task_id, validate_corpus, validate_task, Violation};

pub const INSTRUCTION_FILE: &str = "instruction.md";
pub const METADATA_FILE: &str = "task.toml";
pub const ENVIRONMENT_DIR: &str = "environment";
pub const SOLUTION_DIR: &str = "solution";
pub const TESTS_DIR: &str = "tests";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const DOCKERFILE: &str = "Dockerfile";

/// task.toml keys lifted into dedicated `TaskSpec` fields.
pub const RESERVED_METADATA_KEYS: [&str; 3] = ["id", "domain", "image_ref"];
pub const ORIGIN_KEY: &str = "origin";

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("missing {INSTRUCTION_FILE} in {0}")]
    MissingInstruction(String),
    #[error("{INSTRUCTION_FILE} is not valid UTF-8")]
    InstructionNotUtf8,
    #[error("missing {METADATA_FILE} in {0}")]
    MissingMetadata(String),
    #[error("malformed {METADATA_FILE}: {0}")]
    MalformedMetadata(String),
    #[error("malformed tests/{WEIGHTS_FILE}: {0}")]
    MalformedWeights(String),
    #[error("path escapes task root: {0}")]
    PathEscape(String),
    #[error("duplicate path in file set: {0}")]
    DuplicatePath(String),
    #[error("io failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TaskError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TaskError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub path: RelPath,
    pub content: Vec<u8>,
    pub executable: bool,
}

impl FileEntry {
    pub fn new(path: RelPath, content: impl Into<Vec<u8>>) -> Self {
        Self {
            path,
            content: content.into(),
            executable: false,
        }
    }

    pub fn executable(mut self) -> Self {
        self.executable = true;
        self
    }
}

/// Files keyed by their relative path; paths are unique by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileSet {
    entries: BTreeMap<RelPath, FileEntry>,
}

impl FileSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: FileEntry) -> Result<(), TaskError> {
        if self.entries.contains_key(&entry.path) {
            return Err(TaskError::DuplicatePath(entry.path.to_string()));
        }
        self.entries.insert(entry.path.clone(), entry);
        Ok(())
    }

    /// Convenience for text fixtures; panics on an invalid path.
    pub fn with_text(mut self, path: &str, content: &str) -> Self {
        let path = RelPath::new(path).expect("valid relative path");
        self.entries
            .insert(path.clone(), FileEntry::new(path, content.as_bytes()));
        self
    }

    pub fn get(&self, path: &str) -> Option<&FileEntry> {
        let key = RelPath::new(path).ok()?;
        self.entries.get(&key)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.get(path).is_some()
    }

    pub fn remove(&mut self, path: &str) -> Option<FileEntry> {
        let key = RelPath::new(path).ok()?;
        self.entries.remove(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FileEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<FileEntry> for FileSet {
    /// Later entries replace earlier ones with the same path.
    fn from_iter<T: IntoIterator<Item = FileEntry>>(iter: T) -> Self {
        let entries = iter.into_iter().map(|e| (e.path.clone(), e)).collect();
        Self { entries }
    }
}

/// Test name to nonnegative weight, as stored in `tests/weights.json`.
pub type Weights = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    /// Everything in task.toml except the reserved keys.
    pub metadata: toml::Table,
    pub environment: FileSet,
    pub solution: Option<FileSet>,
    pub tests: FileSet,
    pub weights: Option<Weights>,
    pub domain: Option<String>,
    pub image_ref: Option<String>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            instruction: instruction.into(),
            metadata: toml::Table::new(),
            environment: FileSet::new(),
            solution: None,
            tests: FileSet::new(),
            weights: None,
            domain: None,
            image_ref: None,
        }
    }

    /// Where the task came from: `adapter`, `seed`, `skill`, or absent.
    pub fn origin(&self) -> Option<&str> {
        self.metadata.get(ORIGIN_KEY).and_then(|v| v.as_str())
    }

    pub fn set_metadata(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.metadata.insert(key.to_string(), value.into());
    }

    /// Weight for a test; tasks without weights weigh every test as 1.
    pub fn weight_of(&self, test: &str) -> f64 {
        match &self.weights {
            Some(w) => w.get(test).copied().unwrap_or(0.0),
            None => 1.0,
        }
    }
}

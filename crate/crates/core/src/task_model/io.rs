use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::*;

/// Reads a task directory.
///
/// Every file is resolved against the canonical root before it is read, so a
/// symlink pointing outside the task fails with `PathEscape` instead of being
/// followed.
pub fn parse_task_dir(root: &Path) -> Result<TaskSpec, TaskError> {
    let canon_root = root.canonicalize().map_err(|e| TaskError::io(root, e))?;

    let instruction_path = root.join(INSTRUCTION_FILE);
    if !exists_no_follow(&instruction_path) {
        return Err(TaskError::MissingInstruction(root.display().to_string()));
    }
    let instruction_bytes = read_contained(&instruction_path, &canon_root)?;
    let instruction = String::from_utf8(instruction_bytes).map_err(|_| TaskError::InstructionNotUtf8)?;

    let metadata_path = root.join(METADATA_FILE);
    if !exists_no_follow(&metadata_path) {
        return Err(TaskError::MissingMetadata(root.display().to_string()));
    }
    let metadata_text = String::from_utf8(read_contained(&metadata_path, &canon_root)?)
        .map_err(|_| TaskError::MalformedMetadata("not valid UTF-8".into()))?;
    let mut metadata: toml::Table = metadata_text
        .parse()
        .map_err(|e: toml::de::Error| TaskError::MalformedMetadata(e.to_string()))?;

    let id = match metadata.remove("id") {
        Some(toml::Value::String(s)) => s,
        Some(other) => {
            return Err(TaskError::MalformedMetadata(format!(
                "`id` must be a string, found {}",
                other.type_str()
            )))
        }
        None => root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let domain = take_string(&mut metadata, "domain")?;
    let image_ref = take_string(&mut metadata, "image_ref")?;

    let environment = read_file_set(root, ENVIRONMENT_DIR, &canon_root)?.unwrap_or_default();
    let solution = read_file_set(root, SOLUTION_DIR, &canon_root)?;
    let mut tests = read_file_set(root, TESTS_DIR, &canon_root)?.unwrap_or_default();

    let weights = match tests.remove(WEIGHTS_FILE) {
        Some(entry) => Some(parse_weights(&entry.content)?),
        None => None,
    };

    Ok(TaskSpec {
        id,
        instruction,
        metadata,
        environment,
        solution,
        tests,
        weights,
        domain,
        image_ref,
    })
}

/// Writes `task` under `root` (created if needed). Existing unrelated files
/// are left alone, so callers should target a fresh directory.
pub fn write_task_dir(task: &TaskSpec, root: &Path) -> Result<(), TaskError> {
    fs::create_dir_all(root).map_err(|e| TaskError::io(root, e))?;

    write_file(&root.join(INSTRUCTION_FILE), task.instruction.as_bytes(), false)?;

    let mut table = task.metadata.clone();
    table.insert("id".into(), toml::Value::String(task.id.clone()));
    if let Some(domain) = &task.domain {
        table.insert("domain".into(), toml::Value::String(domain.clone()));
    }
    if let Some(image) = &task.image_ref {
        table.insert("image_ref".into(), toml::Value::String(image.clone()));
    }
    let toml_text =
        toml::to_string(&table).map_err(|e| TaskError::MalformedMetadata(e.to_string()))?;
    write_file(&root.join(METADATA_FILE), toml_text.as_bytes(), false)?;

    write_file_set(&root.join(ENVIRONMENT_DIR), &task.environment)?;
    if let Some(solution) = &task.solution {
        write_file_set(&root.join(SOLUTION_DIR), solution)?;
    }
    let tests_dir = root.join(TESTS_DIR);
    write_file_set(&tests_dir, &task.tests)?;
    if let Some(weights) = &task.weights {
        let json = serde_json::to_vec_pretty(weights)
            .map_err(|e| TaskError::MalformedWeights(e.to_string()))?;
        write_file(&tests_dir.join(WEIGHTS_FILE), &json, false)?;
    }
    Ok(())
}

pub(crate) fn parse_weights(bytes: &[u8]) -> Result<Weights, TaskError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| TaskError::MalformedWeights(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| TaskError::MalformedWeights("expected a JSON object".into()))?;
    obj.iter()
        .map(|(name, v)| {
            v.as_f64()
                .map(|w| (name.clone(), w))
                .ok_or_else(|| TaskError::MalformedWeights(format!("weight for `{name}` is not a number")))
        })
        .collect()
}

fn take_string(table: &mut toml::Table, key: &str) -> Result<Option<String>, TaskError> {
    match table.remove(key) {
        Some(toml::Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(TaskError::MalformedMetadata(format!(
            "`{key}` must be a string, found {}",
            other.type_str()
        ))),
        None => Ok(None),
    }
}

fn exists_no_follow(path: &Path) -> bool {
    fs::symlink_metadata(path).is_ok()
}

/// Resolves `path` and refuses anything whose target lies outside `canon_root`.
fn resolve_contained(path: &Path, canon_root: &Path) -> Result<PathBuf, TaskError> {
    let resolved = path
        .canonicalize()
        .map_err(|_| TaskError::PathEscape(path.display().to_string()))?;
    if !resolved.starts_with(canon_root) {
        return Err(TaskError::PathEscape(path.display().to_string()));
    }
    Ok(resolved)
}

fn read_contained(path: &Path, canon_root: &Path) -> Result<Vec<u8>, TaskError> {
    let resolved = resolve_contained(path, canon_root)?;
    fs::read(&resolved).map_err(|e| TaskError::io(path, e))
}

fn read_file_set(root: &Path, sub: &str, canon_root: &Path) -> Result<Option<FileSet>, TaskError> {
    let dir = root.join(sub);
    if !exists_no_follow(&dir) {
        return Ok(None);
    }
    let canon_dir = resolve_contained(&dir, canon_root)?;
    if !canon_dir.is_dir() {
        return Ok(None);
    }

    let mut set = FileSet::new();
    for entry in WalkDir::new(&dir).follow_links(false).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.clone());
            TaskError::io(path, e.into())
        })?;
        let file_type = entry.file_type();
        if file_type.is_dir() {
            continue;
        }
        let resolved = resolve_contained(entry.path(), canon_root)?;
        if file_type.is_symlink() && resolved.is_dir() {
            // Symlinked directories inside the task are not traversed.
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(&dir)
            .map_err(|_| TaskError::PathEscape(entry.path().display().to_string()))?;
        let rel = rel
            .components()
            .map(|c| {
                c.as_os_str()
                    .to_str()
                    .map(str::to_owned)
                    .ok_or_else(|| TaskError::PathEscape(entry.path().display().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?
            .join("/");
        let rel = RelPath::new(rel)?;
        let content = fs::read(&resolved).map_err(|e| TaskError::io(&resolved, e))?;
        let meta = fs::metadata(&resolved).map_err(|e| TaskError::io(&resolved, e))?;
        set.insert(FileEntry {
            path: rel,
            content,
            executable: is_executable(&meta),
        })?;
    }
    Ok(Some(set))
}

fn write_file_set(dir: &Path, set: &FileSet) -> Result<(), TaskError> {
    fs::create_dir_all(dir).map_err(|e| TaskError::io(dir, e))?;
    for entry in set.iter() {
        write_file(&entry.path.under(dir), &entry.content, entry.executable)?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, content: &[u8], executable: bool) -> Result<(), TaskError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| TaskError::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| TaskError::io(path, e))?;
    set_executable(path, executable)
}

#[cfg(unix)]
fn is_executable(meta: &fs::Metadata) -> bool {
    use std::os::unix::fs::PermissionsExt;
    meta.permissions().mode() & 0o111 != 0
}

#[cfg(not(unix))]
fn is_executable(_meta: &fs::Metadata) -> bool {
    false
}

#[cfg(unix)]
fn set_executable(path: &Path, executable: bool) -> Result<(), TaskError> {
    use std::os::unix::fs::PermissionsExt;
    let mode = if executable { 0o755 } else { 0o644 };
    fs::set_permissions(path, fs::Permissions::from_mode(mode)).map_err(|e| TaskError::io(path, e))
}

#[cfg(not(unix))]
fn set_executable(_path: &Path, _executable: bool) -> Result<(), TaskError> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout_task() -> TaskSpec {
        let mut task = TaskSpec::new("hello-world", "Create /app/hello.txt containing `Hello, world!`.\n");
        task.environment = FileSet::new().with_text(DOCKERFILE, "FROM ubuntu:24.04\nWORKDIR /app\n");
        let mut solution = FileSet::new();
        solution
            .insert(FileEntry::new(RelPath::new("solve.sh").unwrap(), "echo 'Hello, world!' > /app/hello.txt\n").executable())
            .unwrap();
        task.solution = Some(solution);
        task.tests = FileSet::new()
            .with_text("test.sh", "#!/bin/bash\npytest tests/test_outputs.py\n")
            .with_text("test_outputs.py", "def test_hello():\n    assert open('/app/hello.txt').read() == 'Hello, world!\\n'\n");
        task.set_metadata("origin", "skill");
        task
    }

    #[test]
    fn round_trip_fig2_layout() {
        let dir = tempfile::tempdir().unwrap();
        let task = layout_task();
        write_task_dir(&task, dir.path()).unwrap();
        for p in ["instruction.md", "task.toml", "environment/Dockerfile", "solution/solve.sh", "tests/test.sh"] {
            assert!(dir.path().join(p).exists(), "{p} missing");
        }
        let parsed = parse_task_dir(dir.path()).unwrap();
        assert_eq!(parsed, task);
        assert!(parsed.solution.as_ref().unwrap().get("solve.sh").unwrap().executable);
    }

    #[test]
    fn adapter_shape_has_no_solution_and_no_tests() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("instruction.md"), "What is 2+2?").unwrap();
        fs::write(dir.path().join("task.toml"), "origin = \"adapter\"\n").unwrap();
        fs::create_dir(dir.path().join("environment")).unwrap();
        fs::write(dir.path().join("environment/Dockerfile"), "FROM python:3.11\n").unwrap();
        let task = parse_task_dir(dir.path()).unwrap();
        assert!(task.solution.is_none());
        assert!(task.tests.is_empty());
        assert!(task.environment.contains("Dockerfile"));
        assert_eq!(task.id, dir.path().file_name().unwrap().to_string_lossy());
    }

    #[test]
    fn missing_instruction_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("task.toml"), "").unwrap();
        assert!(matches!(parse_task_dir(dir.path()), Err(TaskError::MissingInstruction(_))));
    }

    #[test]
    fn malformed_toml_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("instruction.md"), "x").unwrap();
        fs::write(dir.path().join("task.toml"), "this is = = not toml").unwrap();
        assert!(matches!(parse_task_dir(dir.path()), Err(TaskError::MalformedMetadata(_))));
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut task = layout_task();
        task.weights = Some([("test_a".to_string(), 2.0), ("test_b".to_string(), 1.0)].into());
        write_task_dir(&task, dir.path()).unwrap();
        let raw = fs::read(dir.path().join("tests/weights.json")).unwrap();
        assert_eq!(parse_weights(&raw).unwrap(), task.weights.clone().unwrap());
        let parsed = parse_task_dir(dir.path()).unwrap();
        assert_eq!(parsed.weights, task.weights);
        assert!(!parsed.tests.contains(WEIGHTS_FILE));
    }

    #[test]
    fn non_numeric_weight_rejected() {
        assert!(matches!(parse_weights(br#"{"a": "x"}"#), Err(TaskError::MalformedWeights(_))));
        assert!(matches!(parse_weights(b"[1,2]"), Err(TaskError::MalformedWeights(_))));
    }

    #[cfg(unix)]
    #[test]
    fn symlink_outside_root_is_path_escape() {
        let outside = tempfile::tempdir().unwrap();
        fs::write(outside.path().join("secret"), "s").unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_task_dir(&layout_task(), dir.path()).unwrap();
        std::os::unix::fs::symlink(outside.path().join("secret"), dir.path().join("environment/leak")).unwrap();
        assert!(matches!(parse_task_dir(dir.path()), Err(TaskError::PathEscape(_))));
    }

    #[cfg(unix)]
    #[test]
    fn symlink_inside_root_is_read() {
        let dir = tempfile::tempdir().unwrap();
        write_task_dir(&layout_task(), dir.path()).unwrap();
        std::os::unix::fs::symlink("../instruction.md", dir.path().join("environment/copy.md")).unwrap();
        let task = parse_task_dir(dir.path()).unwrap();
        assert_eq!(task.environment.get("copy.md").unwrap().content, task.instruction.as_bytes());
    }
}

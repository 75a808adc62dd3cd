use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use termforge_core::orchestrator::{interpolate_env, load_trajectories};
use termforge_core::rollout::Trajectory;

/// The config file as a JSON object (empty without a file), with `${VAR}`
/// expanded.
pub struct ConfigSource {
    pub value: Map<String, Value>,
    pub base_dir: PathBuf,
}

impl ConfigSource {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                value: Map::new(),
                base_dir: PathBuf::from("."),
            });
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        interpolate_env(&mut value, &|name| std::env::var(name).ok())?;
        let Value::Object(value) = value else {
            bail!("config {} must be a JSON object", path.display());
        };
        Ok(Self {
            value,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
        })
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.value.insert(key.to_string(), value.into());
    }

    pub fn set_opt<T: Into<Value>>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Sets a path given on the command line, made absolute against the
    /// working directory so it is not re-based on the config directory.
    pub fn set_path(&mut self, key: &str, path: Option<&Path>) -> Result<()> {
        if let Some(p) = path {
            let abs = std::path::absolute(p)?;
            self.set(key, abs.to_string_lossy().into_owned());
        }
        Ok(())
    }

    pub fn parse<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(Value::Object(self.value.clone())).context("invalid config")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }
}

/// A campaign directory or a `.jsonl` file with one trajectory per line.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    if path.is_dir() {
        return Ok(load_trajectories(path)?);
    }
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = create(path)?;
    for t in trajs {
        writeln!(w, "{}", serde_json::to_string(t)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lines: std::io::Result<Vec<String>> = BufReader::new(file).lines().collect();
    Ok(lines?.into_iter().filter(|l| !l.trim().is_empty()).collect())
}

/// Every string value inside a JSON value, in document order.
pub fn string_fields(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.push(s.clone()),
        Value::Array(items) => items.iter().for_each(|i| string_fields(i, out)),
        Value::Object(m) => m.values().for_each(|i| string_fields(i, out)),
        _ => {}
    }
}

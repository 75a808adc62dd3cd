//! Synthetic task generation from skill domains or seed problems.

mod materialize;
mod output;
mod prompts;
mod registry;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::rollout::{CompletionRequest, Message, ModelClient, Role};
use crate::task_model::{write_task_dir, Violation};

pub use materialize::{
    leakage_check, materialize_task, LeakageFinding, Provenance, LEAKAGE_MIN_CHARS, TEST_FILE, TEST_REQUIREMENTS_KEY,
};
pub use output::{emit_generation_output, parse_generation_output, GeneratedTask, FILE_MARKER};
pub use prompts::{build_seed_prompt, build_skill_prompt, sample_skills, task_seed, SeedRecord, MAX_SKILLS, MIN_SKILLS};
pub use registry::{DomainRegistry, SkillDomain, DEFAULT_ACTIVE_DOMAINS};

#[derive(Debug, thiserror::Error)]
pub enum TaskgenError {
    #[error("domain `{domain}` has {available} skills; at least 3 are needed")]
    InsufficientSkills { domain: String, available: usize },
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("domain registry: {0}")]
    Registry(String),
    #[error("seed record has an empty problem")]
    EmptySeed,
    #[error("missing required tag <{0}>")]
    MissingRequiredTag(&'static str),
    #[error("malformed <weights>: {0}")]
    MalformedWeights(String),
    #[error("malformed <files>: {0}")]
    MalformedFiles(String),
    #[error("solution leakage: {} finding(s)", .0.len())]
    LeakageDetected(Vec<LeakageFinding>),
    #[error("generated task is invalid: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("model call failed: {0}")]
    Model(String),
    #[error("writing task: {0}")]
    Write(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub count: usize,
    pub seed: u64,
    /// Overrides the registry's active set.
    pub domains: Option<Vec<String>>,
    /// Environment description shown to the generator; defaults to a
    /// minimal file built on the domain image.
    pub dockerfile: Option<String>,
    pub workers: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 1,
            seed: 0,
            domains: None,
            dockerfile: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub written: Vec<String>,
    pub skipped: Vec<String>,
    pub failures: Vec<(String, String)>,
}

fn default_dockerfile(image_ref: Option<&str>) -> String {
    format!("FROM {}\nWORKDIR /app", image_ref.unwrap_or("python:3.11-slim"))
}

fn ask(model: &dyn ModelClient, id: &str, system: String, user: String) -> Result<String, TaskgenError> {
    let messages = [Message::new(Role::System, system), Message::new(Role::User, user)];
    model
        .complete(&CompletionRequest {
            task_id: id,
            trial: 0,
            turn: 0,
            messages: &messages,
        })
        .map_err(|e| TaskgenError::Model(e.to_string()))
}

/// Runs `job(i)` for every index on `workers` threads and gathers outcomes
/// in index order.
fn run_pool<F>(n: usize, workers: usize, out_dir: &Path, job: F) -> GenerateSummary
where
    F: Fn(usize) -> (String, Result<Option<crate::task_model::TaskSpec>, TaskgenError>) + Sync,
{
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(n));
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let (id, outcome) = job(i);
                let outcome = outcome.and_then(|task| match task {
                    Some(task) => write_task_dir(&task, &out_dir.join(&task.id))
                        .map(|_| true)
                        .map_err(|e| TaskgenError::Write(e.to_string())),
                    None => Ok(false),
                });
                results.lock().expect("results lock").push((i, id, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(i, _, _)| *i);
    let mut summary = GenerateSummary::default();
    for (_, id, outcome) in results {
        match outcome {
            Ok(true) => summary.written.push(id),
            Ok(false) => summary.skipped.push(id),
            Err(e) => {
                tracing::warn!(%id, error = %e, "generation failed");
                summary.failures.push((id, e.to_string()));
            }
        }
    }
    summary
}

/// Generates `config.count` skill-based tasks, cycling through the active
/// domains in name order. Existing task directories are skipped.
pub fn generate_skill_tasks(
    registry: &DomainRegistry,
    model: &dyn ModelClient,
    config: &GenerateConfig,
    out_dir: &Path,
) -> Result<GenerateSummary, TaskgenError> {
    let mut registry = registry.clone();
    if let Some(names) = &config.domains {
        registry.set_active(names)?;
    }
    let mut domains = registry.active();
    domains.sort_by(|a, b| a.name.cmp(&b.name));
    if domains.is_empty() {
        return Err(TaskgenError::Registry("no active domains".into()));
    }
    Ok(run_pool(config.count, config.workers, out_dir, |i| {
        let domain = domains[i % domains.len()];
        let id = format!("skill-{}-{i:05}", domain.name.replace('_', "-"));
        if out_dir.join(&id).exists() {
            return (id, Ok(None));
        }
        let outcome = (|| {
            let skills = sample_skills(domain, task_seed(config.seed, i as u64))?;
            let dockerfile = config
                .dockerfile
                .clone()
                .unwrap_or_else(|| default_dockerfile(domain.image_ref.as_deref()));
            let (system, user) = build_skill_prompt(domain, &skills, &dockerfile);
            let raw = ask(model, &id, system, user)?;
            let gen = parse_generation_output(&raw)?;
            materialize_task(&gen, &Provenance::skill(domain, &skills), &id).map(Some)
        })();
        (id, outcome)
    }))
}

/// Generates one task per seed record.
pub fn generate_seed_tasks(
    seeds: &[SeedRecord],
    model: &dyn ModelClient,
    image_ref: Option<&str>,
    workers: usize,
    out_dir: &Path,
) -> GenerateSummary {
    run_pool(seeds.len(), workers, out_dir, |i| {
        let seed = &seeds[i];
        let id = format!("seed-{i:05}");
        if out_dir.join(&id).exists() {
            return (id, Ok(None));
        }
        let outcome = (|| {
            let (system, user) = build_seed_prompt(seed)?;
            let raw = ask(model, &id, system, user)?;
            let gen = parse_generation_output(&raw)?;
            let mut task = materialize_task(&gen, &Provenance::seed(seed, image_ref.map(str::to_string)), &id)?;
            if let Some(src) = &seed.id {
                task.set_metadata("source_id", src.as_str());
            }
            Ok(Some(task))
        })();
        (id, outcome)
    })
}

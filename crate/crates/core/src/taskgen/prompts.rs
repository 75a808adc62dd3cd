use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::registry::SkillDomain;
use super::TaskgenError;

const MASTER_SYSTEM: &str = include_str!("../../assets/taskgen/master_system.txt");
const MASTER_USER: &str = include_str!("../../assets/taskgen/master_user.txt");
const SEED_SYSTEM: &str = include_str!("../../assets/taskgen/seed_system.txt");

pub const MIN_SKILLS: usize = 3;
pub const MAX_SKILLS: usize = 5;

/// Draws 3 to 5 distinct skills. The count is uniform over the sizes the
/// domain can supply.
pub fn sample_skills(domain: &SkillDomain, seed: u64) -> Result<Vec<String>, TaskgenError> {
    let n = domain.skills.len();
    if n < MIN_SKILLS {
        return Err(TaskgenError::InsufficientSkills {
            domain: domain.name.clone(),
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(MIN_SKILLS..=MAX_SKILLS.min(n));
    Ok(sample(&mut rng, n, k).into_iter().map(|i| domain.skills[i].clone()).collect())
}

/// Per-task seed derived from a campaign seed.
pub fn task_seed(campaign_seed: u64, task_index: u64) -> u64 {
    campaign_seed ^ task_index
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    // Single pass so substituted text is never re-scanned for placeholders.
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        for (key, value) in vars {
            let placeholder = format!("{{{key}}}");
            if rest[pos..].starts_with(&placeholder) {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + placeholder.len()..];
                continue 'outer;
            }
        }
        out.push_str(&rest[..=pos]);
        rest = &rest[pos + 1..];
    }
    out.push_str(rest);
    out
}

/// `(system, user)` messages for skill-based generation.
pub fn build_skill_prompt(domain: &SkillDomain, skills: &[String], dockerfile: &str) -> (String, String) {
    let system = fill(
        MASTER_SYSTEM,
        &[("domain", &domain.category), ("domain_module", domain.module_text.trim_end())],
    );
    let skill_list = skills.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n");
    let user = fill(
        MASTER_USER,
        &[
            ("category", &domain.category),
            ("skills", &skill_list),
            ("dockerfile", dockerfile.trim_end()),
        ],
    );
    (system, user)
}

/// An existing problem used as the starting point for a new task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub problem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<String>,
}

pub const GROUND_TRUTH_OPEN: &str = "<reference_solution>";
pub const GROUND_TRUTH_CLOSE: &str = "</reference_solution>";

/// `(system, user)` messages for seed-based generation.
pub fn build_seed_prompt(seed: &SeedRecord) -> Result<(String, String), TaskgenError> {
    if seed.problem.trim().is_empty() {
        return Err(TaskgenError::EmptySeed);
    }
    let mut user = format!("# Seed Problem\n{}\n", seed.problem.trim_end());
    if let Some(domain) = seed.domain.as_deref().filter(|d| !d.trim().is_empty()) {
        user.push_str(&format!("\nDomain: {}\n", domain.trim()));
    }
    if let Some(solution) = seed.reference_solution.as_deref().filter(|s| !s.trim().is_empty()) {
        user.push_str(&format!(
            "\n## Ground Truth\n{GROUND_TRUTH_OPEN}\n{}\n{GROUND_TRUTH_CLOSE}\n\
             Use this reference solution only to compute the expected values checked by the tests. \
             Do not reveal it, describe its approach, or copy any of it into <prompt>.\n",
            solution.trim_end()
        ));
    }
    user.push_str(
        "\n## Instructions\n\
         Convert the seed problem into a terminal task:\n\
         1. State the input files the agent must read and the output files it must write under /app, with exact formats.\n\
         2. Name any packages the agent is expected to install.\n\
         3. Put realistic input data in <files>, including edge cases and boundary conditions.\n\
         4. Write pytest tests in <tests> that check output existence, format, and correctness with explicit numerical tolerances.",
    );
    Ok((SEED_SYSTEM.to_string(), user))
}

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use super::TaskgenError;

const BUILTIN_REGISTRY: &str = include_str!("../../assets/taskgen/domains.json");

const BUILTIN_MODULES: [(&str, &str); 10] = [
    ("modules/data_processing.md", include_str!("../../assets/taskgen/modules/data_processing.md")),
    ("modules/data_querying.md", include_str!("../../assets/taskgen/modules/data_querying.md")),
    ("modules/data_science.md", include_str!("../../assets/taskgen/modules/data_science.md")),
    ("modules/debugging.md", include_str!("../../assets/taskgen/modules/debugging.md")),
    ("modules/dependency_management.md", include_str!("../../assets/taskgen/modules/dependency_management.md")),
    ("modules/file_operations.md", include_str!("../../assets/taskgen/modules/file_operations.md")),
    ("modules/scientific_computing.md", include_str!("../../assets/taskgen/modules/scientific_computing.md")),
    ("modules/security.md", include_str!("../../assets/taskgen/modules/security.md")),
    ("modules/software_engineering.md", include_str!("../../assets/taskgen/modules/software_engineering.md")),
    ("modules/system_administration.md", include_str!("../../assets/taskgen/modules/system_administration.md")),
];

/// The nine domains active by default.
pub const DEFAULT_ACTIVE_DOMAINS: [&str; 9] = [
    "data_processing",
    "data_querying",
    "data_science",
    "debugging",
    "dependency_management",
    "file_operations",
    "scientific_computing",
    "security",
    "software_engineering",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillDomain {
    /// Registry key, e.g. `data_science`.
    pub name: String,
    /// Human-readable label used in prompts, e.g. `data science`.
    pub category: String,
    pub module_text: String,
    pub skill_types: Vec<String>,
    pub skills: Vec<String>,
    pub image_ref: Option<String>,
    pub active: bool,
}

#[derive(Deserialize)]
struct RegistryFile {
    domains: Vec<DomainEntry>,
}

#[derive(Deserialize)]
struct DomainEntry {
    name: String,
    #[serde(default)]
    category: Option<String>,
    /// Path to the module text, relative to the registry file.
    #[serde(default)]
    module: Option<String>,
    #[serde(default)]
    module_text: Option<String>,
    #[serde(default)]
    skill_types: Vec<String>,
    skills: Vec<String>,
    #[serde(default)]
    image_ref: Option<String>,
    #[serde(default = "yes")]
    active: bool,
}

fn yes() -> bool {
    true
}

/// Named skill domains available to generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainRegistry {
    domains: Vec<SkillDomain>,
}

impl DomainRegistry {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_REGISTRY, None).expect("built-in registry is valid")
    }

    pub fn load(path: &Path) -> Result<Self, TaskgenError> {
        let text = std::fs::read_to_string(path).map_err(|e| TaskgenError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent())
    }

    /// Module paths resolve against `base_dir` first and the built-in
    /// modules second.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, TaskgenError> {
        let file: RegistryFile = serde_json::from_str(text).map_err(|e| TaskgenError::Registry(e.to_string()))?;
        let mut domains = Vec::new();
        for entry in file.domains {
            let module_text = match (entry.module_text, entry.module) {
                (Some(text), _) => text,
                (None, Some(module)) => load_module(&module, base_dir)?,
                (None, None) => return Err(TaskgenError::Registry(format!("domain `{}` has no module", entry.name))),
            };
            domains.push(SkillDomain {
                category: entry.category.unwrap_or_else(|| entry.name.replace('_', " ")),
                name: entry.name,
                module_text,
                skill_types: entry.skill_types,
                skills: entry.skills,
                image_ref: entry.image_ref,
                active: entry.active,
            });
        }
        let registry = Self { domains };
        registry.validate()?;
        Ok(registry)
    }

    fn validate(&self) -> Result<(), TaskgenError> {
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(d.name.as_str()) {
                return Err(TaskgenError::Registry(format!("duplicate domain `{}`", d.name)));
            }
            if d.skills.is_empty() {
                return Err(TaskgenError::Registry(format!("domain `{}` has no skills", d.name)));
            }
        }
        Ok(())
    }

    pub fn all(&self) -> &[SkillDomain] {
        &self.domains
    }

    pub fn active(&self) -> Vec<&SkillDomain> {
        self.domains.iter().filter(|d| d.active).collect()
    }

    pub fn get(&self, name: &str) -> Option<&SkillDomain> {
        self.domains.iter().find(|d| d.name == name || d.category == name)
    }

    /// Makes exactly `names` active.
    pub fn set_active(&mut self, names: &[String]) -> Result<(), TaskgenError> {
        for name in names {
            if self.get(name).is_none() {
                return Err(TaskgenError::UnknownDomain(name.clone()));
            }
        }
        for d in &mut self.domains {
            d.active = names.iter().any(|n| *n == d.name || *n == d.category);
        }
        Ok(())
    }
}

fn load_module(module: &str, base_dir: Option<&Path>) -> Result<String, TaskgenError> {
    if let Some(base) = base_dir {
        let candidate = base.join(module);
        if candidate.is_file() {
            return std::fs::read_to_string(&candidate)
                .map_err(|e| TaskgenError::Registry(format!("{}: {e}", candidate.display())));
        }
    }
    BUILTIN_MODULES
        .iter()
        .find(|(path, _)| *path == module)
        .map(|(_, text)| text.to_string())
        .ok_or_else(|| TaskgenError::Registry(format!("module `{module}` not found")))
}

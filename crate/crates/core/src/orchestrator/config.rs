use std::path::{Path, PathBuf};
use std::sync::Arc;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CampaignError;
use crate::agent_protocol::PromptTemplate;
use crate::rollout::{EpisodeLimits, HistoryMode, HttpModelClient, HttpModelConfig, MockModelClient, ModelClient, VerifyConfig};
use crate::session::SessionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Scripted replies from a JSONL file of mock entries.
    Mock { path: PathBuf },
    Http(HttpModelConfig),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Arc<dyn ModelClient>, CampaignError> {
        match self {
            ModelSpec::Mock { path } => Ok(Arc::new(MockModelClient::from_file(path).map_err(CampaignError::Config)?)),
            ModelSpec::Http(cfg) => Ok(Arc::new(
                HttpModelClient::new(cfg.clone()).map_err(|e| CampaignError::Config(e.to_string()))?,
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub tasks_dir: PathBuf,
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default)]
    pub limits: EpisodeLimits,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "one_u32")]
    pub trials_per_task: u32,
    /// Shuffles the order in which episodes are dequeued.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub history_mode: HistoryMode,
    /// Run the task tests after each episode and store the report in the
    /// trajectory.
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
    /// Prompt template file; the built-in terminal-agent template otherwise.
    #[serde(default)]
    pub template: Option<PathBuf>,
    /// Stop after this many newly executed episodes.
    #[serde(default)]
    pub max_new_episodes: Option<usize>,
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.workers == 0 {
            return Err(CampaignError::Config("workers must be at least 1".into()));
        }
        if self.trials_per_task == 0 {
            return Err(CampaignError::Config("trials_per_task must be at least 1".into()));
        }
        self.limits.validate().map_err(CampaignError::Config)
    }

    pub fn template(&self) -> Result<PromptTemplate, CampaignError> {
        match &self.template {
            None => Ok(PromptTemplate::terminus()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CampaignError::Config(format!("{}: {e}", p.display())))?;
                PromptTemplate::new(text).map_err(|e| CampaignError::Config(e.to_string()))
            }
        }
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.tasks_dir);
        fix(&mut self.output_dir);
        if let Some(t) = &mut self.template {
            fix(t);
        }
        if let ModelSpec::Mock { path } = &mut self.model {
            fix(path);
        }
    }
}

/// Replaces `${NAME}` in every string value with the environment variable's
/// value, using `lookup`. Unset variables are an error.
pub fn interpolate_env(value: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), CampaignError> {
    let re = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex");
    fn walk(v: &mut Value, re: &Regex, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), CampaignError> {
        match v {
            Value::String(s) if s.contains("${") => {
                let mut missing = None;
                let out = re.replace_all(s, |c: &regex::Captures| {
                    lookup(&c[1]).unwrap_or_else(|| {
                        missing.get_or_insert_with(|| c[1].to_string());
                        String::new()
                    })
                });
                if let Some(name) = missing {
                    return Err(CampaignError::Config(format!("environment variable {name} is not set")));
                }
                *s = out.into_owned();
            }
            Value::Array(items) => items.iter_mut().try_for_each(|i| walk(i, re, lookup))?,
            Value::Object(map) => map.values_mut().try_for_each(|i| walk(i, re, lookup))?,
            _ => {}
        }
        Ok(())
    }
    walk(value, &re, lookup)
}

/// Parses JSON config text with `${VAR}` expansion from the process
/// environment.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T, CampaignError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))?;
    interpolate_env(&mut value, &|name| std::env::var(name).ok())?;
    serde_json::from_value(value).map_err(|e| CampaignError::Config(e.to_string()))
}

pub fn load_campaign_config(path: &Path) -> Result<CampaignConfig, CampaignError> {
    let text = std::fs::read_to_string(path).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: CampaignConfig = parse_config(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

//! Building blocks for synthesizing terminal-agent training data.

pub mod task_model;
pub mod agent_protocol;
pub mod session;
pub mod rollout;
pub mod adapters;
pub mod taskgen;
pub mod filters;
pub mod sft_export;
pub mod orchestrator;

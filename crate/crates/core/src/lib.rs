//! Pilot-Commit rollout allocation for group-relative policy optimization,
//! with GRPO and DAPO baselines and a synthetic Bernoulli-policy
//! environment for comparing them under exact rollout accounting.

pub mod baselines;
pub mod env;
pub mod grpo;
pub mod metrics;
pub mod runner;
pub mod scheduler;
pub mod step;
pub mod traversal;

pub use baselines::{BaselineConfig, Dapo, Grpo};
pub use env::{EnvConfig, Population, PromptId, PromptState};
pub use metrics::{BudgetLedger, StepMetrics};
pub use runner::{ExperimentConfig, ExperimentOutcome, ExperimentReport, RunResult};
pub use scheduler::{PilotCommit, SchedulerConfig};
pub use step::{Allocator, Method, StepError, StepEvent};

//! Self-evaluation, abstraction extraction and merge decisions backed by a
//! chat model.

mod agent;
mod executor;
pub mod parse;
mod prompts;
mod task;

pub use self::agent::{vote_score, AgentSettings, ModelAgent};
pub use self::executor::{ExecOutcome, ExecStatus, Executor, PythonExecutor};
pub use self::prompts::{render, Prompts};
pub use self::task::{Domain, EvaluationHook, ScoreMethod, SelfScore, TaskSpec};

use serde::{Deserialize, Serialize};

use crate::ids::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Code,
    Reasoning,
    Agentic,
    Simulated,
}

/// How a solution to the task gets scored. The variant fixes the task's domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EvaluationHook {
    /// Synthetic tests are generated by the model and run by an executor.
    Code {
        #[serde(default)]
        entry_point: Option<String>,
    },
    /// Final answers are read from `\boxed{...}` and majority-voted.
    Reasoning,
    /// A judge counts accomplished sub-goals.
    Agentic { sub_goals: Vec<String> },
    /// Latent requirements of a simulated world task.
    Simulated { required: Vec<u32>, difficulty: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub description: String,
    pub hook: EvaluationHook,
}

impl TaskSpec {
    pub fn domain(&self) -> Domain {
        match self.hook {
            EvaluationHook::Code { .. } => Domain::Code,
            EvaluationHook::Reasoning => Domain::Reasoning,
            EvaluationHook::Agentic { .. } => Domain::Agentic,
            EvaluationHook::Simulated { .. } => Domain::Simulated,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.description.trim().is_empty() {
            return Err(format!("task {} has an empty description", self.id));
        }
        match &self.hook {
            EvaluationHook::Agentic { sub_goals } if sub_goals.is_empty() => {
                Err(format!("agentic task {} lists no sub-goals", self.id))
            }
            EvaluationHook::Simulated { required, difficulty } => {
                if required.is_empty() {
                    Err(format!("simulated task {} requires no skills", self.id))
                } else if !(*difficulty > 0.0 && *difficulty <= 1.0) {
                    Err(format!("simulated task {} difficulty {difficulty} outside (0, 1]", self.id))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    SyntheticTestPassRate,
    MajorityVote,
    SubGoalJudge,
    SimulatedOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfScore {
    pub value: f64,
    pub method: ScoreMethod,
    pub detail: String,
}

impl SelfScore {
    /// Clamps `value` into [0, 1]; NaN becomes 0.
    pub fn new(value: f64, method: ScoreMethod, detail: impl Into<String>) -> Self {
        let value = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        SelfScore {
            value,
            method,
            detail: detail.into(),
        }
    }
}

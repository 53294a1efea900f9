//! Token accounting. Output tokens are billed at four times the input rate.

use serde::{Deserialize, Serialize};

pub const INPUT_WEIGHT: u64 = 1;
pub const OUTPUT_WEIGHT: u64 = 4;

pub fn weighted_cost(input_tokens: u64, output_tokens: u64) -> u64 {
    INPUT_WEIGHT * input_tokens + OUTPUT_WEIGHT * output_tokens
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Usage {
            input_tokens,
            output_tokens,
        }
    }

    pub fn weighted(&self) -> u64 {
        weighted_cost(self.input_tokens, self.output_tokens)
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage::new(
            self.input_tokens + rhs.input_tokens,
            self.output_tokens + rhs.output_tokens,
        )
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

/// Cumulative spend of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub weighted_cost: u64,
}

impl CostLedger {
    pub fn charge(&mut self, usage: Usage) {
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
        self.weighted_cost += usage.weighted();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_cost_examples() {
        assert_eq!(weighted_cost(100, 50), 300);
        assert_eq!(weighted_cost(0, 0), 0);
        assert_eq!(weighted_cost(1, 0), 1);
    }

    #[test]
    fn ledger_accumulates() {
        let mut l = CostLedger::default();
        l.charge(Usage::new(100, 50));
        l.charge(Usage::new(1, 0));
        assert_eq!(
            l,
            CostLedger {
                input_tokens: 101,
                output_tokens: 50,
                weighted_cost: 301
            }
        );
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BudgetError {
    #[error("token budget must be positive")]
    ZeroBudget,
}

/// Output-token budget for one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    budget_b: u64,
    c_used: u64,
}

impl BudgetLedger {
    pub fn new(budget_b: u64) -> Result<Self, BudgetError> {
        if budget_b == 0 {
            return Err(BudgetError::ZeroBudget);
        }
        Ok(BudgetLedger { budget_b, c_used: 0 })
    }

    pub fn with_usage(budget_b: u64, c_used: u64) -> Result<Self, BudgetError> {
        let mut l = Self::new(budget_b)?;
        l.c_used = c_used;
        Ok(l)
    }

    pub fn budget(&self) -> u64 {
        self.budget_b
    }

    pub fn used(&self) -> u64 {
        self.c_used
    }

    /// Budget sufficiency ratio, clamped to `[0, 1]` since the last generation
    /// may overshoot the budget.
    pub fn rho(&self) -> f64 {
        (1.0 - self.c_used as f64 / self.budget_b as f64).clamp(0.0, 1.0)
    }

    pub fn exhausted(&self) -> bool {
        self.c_used >= self.budget_b
    }

    pub fn charge(&mut self, tokens: u64) {
        self.c_used = self.c_used.saturating_add(tokens);
    }
}

pub fn effective_rho(ledger: &BudgetLedger) -> f64 {
    ledger.rho()
}

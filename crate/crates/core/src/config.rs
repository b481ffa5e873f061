use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Search method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BgMcts,
    Mcts,
    Repeated,
    Refinement,
    EarlyStop,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::BgMcts, Method::Mcts, Method::Repeated, Method::Refinement, Method::EarlyStop];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::BgMcts => "bg-mcts",
            Method::Mcts => "mcts",
            Method::Repeated => "repeated",
            Method::Refinement => "refinement",
            Method::EarlyStop => "early-stop",
        }
    }

    /// Human-readable label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Method::BgMcts => "BG-MCTS",
            Method::Mcts => "MCTS",
            Method::Repeated => "Repeated Sampling",
            Method::Refinement => "Sequential Refinement",
            Method::EarlyStop => "LiteSearch-style (simplified)",
        }
    }

    /// Budget-conditioned selection with a virtual generative child.
    pub fn budget_guided(self) -> bool {
        matches!(self, Method::BgMcts)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Exploration weight.
    pub c: f64,
    /// Completion-bias strength.
    pub kappa: f64,
    /// Weight of the child-value variance in the widening score.
    pub lambda: f64,
    /// Children generated when a leaf is expanded.
    pub k_leaf: usize,
    pub softmax_temp: f64,
    pub method: Method,
    pub epsilon_stop: f64,
    pub allow_wait_continuation: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            c: std::f64::consts::SQRT_2,
            kappa: 1.0,
            lambda: 1.0,
            k_leaf: 2,
            softmax_temp: 1.0,
            method: Method::BgMcts,
            epsilon_stop: 0.9,
            allow_wait_continuation: false,
        }
    }
}

impl PolicyConfig {
    pub fn with_method(method: Method) -> Self {
        PolicyConfig { method, ..Self::default() }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err("c must be positive".into());
        }
        if !(self.kappa >= 0.0 && self.lambda >= 0.0) {
            return Err("kappa and lambda must be non-negative".into());
        }
        if self.k_leaf == 0 {
            return Err("k_leaf must be positive".into());
        }
        if !(self.softmax_temp > 0.0) {
            return Err("softmax_temp must be positive".into());
        }
        if !(self.epsilon_stop >= 0.0) {
            return Err("epsilon_stop must be non-negative".into());
        }
        Ok(())
    }
}

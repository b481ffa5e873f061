//! Prompt templates and conversation assembly.
//!
//! The default templates live in `assets/` and can be replaced at runtime by
//! pointing the configuration at other text files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenerationMode, PathStep};
use crate::chat::ChatMessage;

pub const GENERATOR_USER_TEMPLATE: &str = include_str!("../../assets/generator_user.txt");
pub const PRM_SYSTEM_PROMPT: &str = include_str!("../../assets/prm_system.txt");
pub const WAIT_CONTINUATION: &str = "But wait, let me think about the problem again.";
pub const STEP_DELIMITER: &str = "\nStep";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    /// User turn; `{problem}` is replaced by the problem statement.
    pub generator_user: String,
    pub prm_system: String,
    pub wait_continuation: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            generator_user: GENERATOR_USER_TEMPLATE.trim_end().to_string(),
            prm_system: PRM_SYSTEM_PROMPT.trim_end().to_string(),
            wait_continuation: WAIT_CONTINUATION.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn load(generator_user: Option<&Path>, prm_system: Option<&Path>) -> std::io::Result<Self> {
        let mut t = Self::default();
        if let Some(p) = generator_user {
            t.generator_user = std::fs::read_to_string(p)?.trim_end().to_string();
        }
        if let Some(p) = prm_system {
            t.prm_system = std::fs::read_to_string(p)?.trim_end().to_string();
        }
        Ok(t)
    }

    pub fn user_prompt(&self, problem: &str) -> String {
        self.generator_user.replace("{problem}", problem)
    }

    /// Assistant prefill: `Step 1:` followed by the stored steps, with step
    /// labels re-inserted. In sequential mode the prefill ends with the label
    /// of the step to generate next; numbering continues across
    /// wait-continuations.
    pub fn assistant_prefix(&self, steps: &[PathStep<'_>], mode: GenerationMode, continuation: bool) -> String {
        let mut out = String::from("Step 1:");
        for (i, s) in steps.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
                if s.continuation {
                    out.push_str(&self.wait_continuation);
                    out.push_str("\n\n");
                }
                if mode == GenerationMode::Sequential {
                    out.push_str(&format!("Step {}:", i + 1));
                }
            }
            out.push_str(s.text.trim_end());
        }
        if !steps.is_empty() {
            let next = steps.len() + 1;
            if continuation {
                out.push_str("\n\n");
                out.push_str(&self.wait_continuation);
            }
            if mode == GenerationMode::Sequential {
                out.push_str(&format!("\n\nStep {next}:"));
            }
        }
        out
    }

    pub fn generator_messages(
        &self,
        problem: &str,
        steps: &[PathStep<'_>],
        mode: GenerationMode,
        continuation: bool,
    ) -> Vec<ChatMessage> {
        vec![
            ChatMessage::user(self.user_prompt(problem)),
            ChatMessage::assistant(self.assistant_prefix(steps, mode, continuation)),
        ]
    }
}

//! Chat-completions backed generator.

use serde::{Deserialize, Serialize};

use super::extract::match_answer;
use super::prompts::{PromptTemplates, STEP_DELIMITER};
use super::{EnvError, Environment, ExpansionRequest, Generated, GenerationMode, GenerationResult};
use crate::chat::{estimate_tokens, ChatClient, ChatError, ChatResponse, Choice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub delimiter: String,
    /// Output-token cap per sequential step.
    pub step_max_tokens: u32,
    /// Output-token cap per full solution.
    pub full_max_tokens: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings { delimiter: STEP_DELIMITER.into(), step_max_tokens: 512, full_max_tokens: 4096 }
    }
}

#[derive(Debug, Clone)]
pub struct LlmEnvironment {
    client: ChatClient,
    templates: PromptTemplates,
    settings: LlmSettings,
}

impl LlmEnvironment {
    pub fn new(client: ChatClient, templates: PromptTemplates, settings: LlmSettings) -> Self {
        LlmEnvironment { client, templates, settings }
    }

    fn one(&self, request: &ExpansionRequest<'_>) -> Result<GenerationResult, EnvError> {
        let messages = self.templates.generator_messages(
            &request.problem.text,
            &request.steps,
            request.mode,
            request.continuation,
        );
        let mut chat = self.client.request(messages);
        match request.mode {
            GenerationMode::Sequential => {
                chat.stop = vec![self.settings.delimiter.clone()];
                chat.max_tokens = Some(self.settings.step_max_tokens);
            }
            GenerationMode::Full => chat.max_tokens = Some(self.settings.full_max_tokens),
        }
        let resp = self.client.complete(&chat).map_err(|e| match e {
            e if e.is_retriable() => EnvError::Transient { message: e.to_string(), tokens_spent: 0 },
            e => EnvError::Fatal(e.to_string()),
        })?;
        to_generation(&resp, request.mode, &self.settings.delimiter).map_err(|e| EnvError::Fatal(e.to_string()))
    }
}

/// Maps a server choice onto exactly one of the three stop conditions.
///
/// `length` means the limit was hit. A stop string reported in
/// `stop_reason`, or a `stop_sequence` finish reason, means the delimiter
/// cut the text. A null or numeric `stop_reason` is an end-of-sequence token.
/// When the server does not say which stop fired, a sequential step is taken
/// as delimiter-truncated unless it already contains a boxed final answer.
pub fn classify_stop(choice: &Choice, text: &str, mode: GenerationMode) -> (bool, bool, bool) {
    let finish = choice.finish_reason.as_deref().unwrap_or("stop");
    if finish == "length" || finish == "max_tokens" {
        return (false, false, true);
    }
    if finish == "stop_sequence" {
        return (false, true, false);
    }
    match &choice.stop_reason {
        Some(serde_json::Value::String(_)) => (false, true, false),
        Some(_) => (true, false, false),
        None => match mode {
            GenerationMode::Full => (true, false, false),
            GenerationMode::Sequential if match_answer(text).is_some() => (true, false, false),
            GenerationMode::Sequential => (false, true, false),
        },
    }
}

pub fn to_generation(
    resp: &ChatResponse,
    mode: GenerationMode,
    delimiter: &str,
) -> Result<GenerationResult, ChatError> {
    let choice = resp.choices.first().ok_or_else(|| ChatError::Malformed("no choices".into()))?;
    let mut text = choice.message.content.clone().unwrap_or_default();
    if let Some(stripped) = text.strip_suffix(delimiter) {
        text = stripped.to_string();
    }
    let (natural_stop, truncated_by_delimiter, truncated_by_limit) = classify_stop(choice, &text, mode);
    let reported = resp.usage.and_then(|u| u.completion_tokens).filter(|&t| t > 0);
    let (token_count, token_estimated) = match reported {
        Some(t) => (t, false),
        None => {
            log::warn!("server reported no completion usage; estimating from whitespace");
            (estimate_tokens(&text), true)
        }
    };
    Ok(GenerationResult {
        text,
        token_count,
        natural_stop,
        truncated_by_delimiter,
        truncated_by_limit,
        token_estimated,
    })
}

impl Environment for LlmEnvironment {
    fn expand(&self, request: &ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> {
        let mut out = Vec::with_capacity(request.n_children);
        let mut spent = 0;
        for _ in 0..request.n_children {
            match self.one(request) {
                Ok(result) => {
                    spent += result.token_count;
                    out.push(Generated { result, terminal: false });
                }
                Err(EnvError::Transient { message, tokens_spent }) => {
                    return Err(EnvError::Transient { message, tokens_spent: tokens_spent + spent })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

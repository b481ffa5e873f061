//! Generative process-reward-model client.
//!
//! The conversation opens with the system prompt, then the problem and the
//! first step as one user turn, followed by one user turn per later step. The
//! model answers each step with a critique ending in
//! `**Judgement**: $\boxed{Yes}$` or `...{No}$`. Steps are judged one at a time
//! and the node's value is the mapped judgement of its final step. Replies
//! are cached per conversation prefix, so a child only costs one request once
//! its ancestors were scored.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{EvalError, Evaluation, EvaluationRequest, Evaluator};
use crate::chat::{ChatClient, ChatMessage};
use crate::env::prompts::PromptTemplates;
use crate::env::GenerationMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgementMapping {
    pub yes: f64,
    pub no: f64,
    /// Prefer a numeric `score` field in the response when present.
    pub use_server_score: bool,
}

impl Default for JudgementMapping {
    fn default() -> Self {
        JudgementMapping { yes: 1.0, no: 0.0, use_server_score: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    Yes,
    No,
}

fn judgement_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\*\*Judgement\*\*:\s*\$?\s*\\boxed\{\s*(yes|no)\s*\}").expect("valid pattern"))
}

/// Last judgement marker in a reply.
pub fn parse_judgement(reply: &str) -> Option<Judgement> {
    let caps = judgement_pattern().captures_iter(reply).last()?;
    Some(if caps[1].eq_ignore_ascii_case("yes") { Judgement::Yes } else { Judgement::No })
}

fn step_split_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*Step \d+:").expect("valid pattern"))
}

/// Splits generated texts into labelled reasoning steps.
pub fn reasoning_steps(texts: &[&str], mode: GenerationMode) -> Vec<String> {
    match mode {
        GenerationMode::Sequential => {
            texts.iter().enumerate().map(|(i, t)| format!("Step {}: {}", i + 1, t.trim())).collect()
        }
        GenerationMode::Full => {
            let mut out = Vec::new();
            for t in texts {
                let body = format!("Step 1:{}", t);
                let starts: Vec<usize> = step_split_pattern().find_iter(&body).map(|m| m.start()).collect();
                for (i, &s) in starts.iter().enumerate() {
                    let end = starts.get(i + 1).copied().unwrap_or(body.len());
                    let content = body[s..end].trim();
                    let content = content.split_once(':').map_or(content, |(_, c)| c.trim());
                    out.push(format!("Step {}: {}", out.len() + 1, content));
                }
            }
            out
        }
    }
}

pub struct PrmEvaluator {
    client: ChatClient,
    templates: PromptTemplates,
    mapping: JudgementMapping,
    cache: Mutex<HashMap<Vec<String>, String>>,
}

impl PrmEvaluator {
    pub fn new(client: ChatClient, templates: PromptTemplates, mapping: JudgementMapping) -> Self {
        PrmEvaluator { client, templates, mapping, cache: Mutex::new(HashMap::new()) }
    }

    fn user_turn(problem: &str, steps: &[String], k: usize) -> String {
        if k == 0 {
            format!("Question: {problem}\n\n{}", steps[0])
        } else {
            steps[k].clone()
        }
    }

    /// Builds the conversation that asks for the judgement of step `k`,
    /// given the replies to steps `0..k`.
    pub fn conversation(&self, problem: &str, steps: &[String], replies: &[String]) -> Vec<ChatMessage> {
        let k = replies.len();
        let mut msgs = vec![ChatMessage::system(self.templates.prm_system.clone())];
        for (i, reply) in replies.iter().enumerate() {
            msgs.push(ChatMessage::user(Self::user_turn(problem, steps, i)));
            msgs.push(ChatMessage::assistant(reply.clone()));
        }
        msgs.push(ChatMessage::user(Self::user_turn(problem, steps, k)));
        msgs
    }

    pub fn prm_evaluate(&self, problem: &str, steps: &[String]) -> Result<Evaluation, EvalError> {
        if steps.is_empty() {
            return Err(EvalError::EmptyHistory);
        }
        let mut replies: Vec<String> = Vec::with_capacity(steps.len());
        let mut judgements = Vec::with_capacity(steps.len());
        let mut last_score = None;
        for k in 0..steps.len() {
            let mut key = vec![problem.to_string()];
            key.extend(steps[..=k].iter().cloned());
            let cached = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key).cloned();
            let reply = match cached {
                Some(r) => r,
                None => {
                    let req = self.client.request(self.conversation(problem, steps, &replies));
                    let resp = self.client.complete(&req).map_err(|e| EvalError::Request(e.to_string()))?;
                    if k + 1 == steps.len() {
                        last_score = resp.score;
                    }
                    let reply = resp
                        .choices
                        .first()
                        .and_then(|c| c.message.content.clone())
                        .ok_or_else(|| EvalError::Unparseable { raw: "<empty response>".into() })?;
                    if last_score.is_none() && parse_judgement(&reply).is_none() {
                        return Err(EvalError::Unparseable { raw: reply });
                    }
                    self.cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, reply.clone());
                    reply
                }
            };
            judgements.push(parse_judgement(&reply));
            replies.push(reply);
        }
        let rationale = Some(format!(
            "judgements: {}",
            judgements
                .iter()
                .map(|j| match j {
                    Some(Judgement::Yes) => "Yes",
                    Some(Judgement::No) => "No",
                    None => "?",
                })
                .collect::<Vec<_>>()
                .join(",")
        ));
        let q = match (self.mapping.use_server_score, last_score) {
            (true, Some(s)) => s,
            _ => match judgements.last().copied().flatten() {
                Some(Judgement::Yes) => self.mapping.yes,
                Some(Judgement::No) => self.mapping.no,
                None => return Err(EvalError::Unparseable { raw: replies.pop().unwrap_or_default() }),
            },
        };
        if !q.is_finite() {
            return Err(EvalError::NonFinite(q));
        }
        Ok(Evaluation { q, rationale })
    }
}

impl Evaluator for PrmEvaluator {
    fn evaluate(&self, request: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError> {
        let texts: Vec<&str> = request.steps.iter().map(|s| s.text).collect();
        let steps = reasoning_steps(&texts, request.mode);
        self.prm_evaluate(&request.problem.text, &steps)
    }
}

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bgmcts::chat::{ChatClient, EndpointConfig};
use bgmcts::config::PolicyConfig;
use bgmcts::engine::run_search;
use bgmcts::env::llm::{LlmEnvironment, LlmSettings};
use bgmcts::env::prompts::PromptTemplates;
use bgmcts::env::{extract_answer, EnvError, Environment, ExpansionRequest, GenerationMode, PathStep};
use bgmcts::eval::prm::{JudgementMapping, PrmEvaluator};
use bgmcts::eval::{EvalError, EvaluationRequest, Evaluator};
use bgmcts::harness::trace::NullSink;
use common::problem;
use common::server::{reply, FixtureServer};

fn endpoint(url: &str) -> EndpointConfig {
    EndpointConfig { url: url.into(), api_key_env: None, timeout_secs: 5, ..Default::default() }
}

fn llm(url: &str) -> LlmEnvironment {
    LlmEnvironment::new(ChatClient::new(endpoint(url)).unwrap(), PromptTemplates::default(), LlmSettings::default())
}

fn prm(url: &str, mapping: JudgementMapping) -> PrmEvaluator {
    PrmEvaluator::new(ChatClient::new(endpoint(url)).unwrap(), PromptTemplates::default(), mapping)
}

fn request<'a>(
    p: &'a bgmcts::env::Problem,
    steps: Vec<PathStep<'a>>,
    mode: GenerationMode,
    n: usize,
) -> ExpansionRequest<'a> {
    ExpansionRequest { problem: p, steps, first_slot: 0, n_children: n, mode, continuation: false }
}

const YES: &str = "<analyze>fine</analyze>\n<output>\n**Judgement**: $\\boxed{Yes}$\n</output>";
const NO: &str = "<analyze>wrong sum</analyze>\n<output>\n**Judgement**: $\\boxed{No}$\n</output>";

#[test]
fn sequential_step_uses_delimiter_and_server_usage() {
    let server =
        FixtureServer::start(|_| (200, reply(" Natalia sold 48 clips in April.", "stop_sequence", None, Some(137))));
    let p = problem("How many clips?");
    let out = llm(&server.url).expand(&request(&p, vec![], GenerationMode::Sequential, 2)).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(server.count(), 2);
    let r = &out[0].result;
    assert!(r.truncated_by_delimiter && !r.natural_stop && !r.truncated_by_limit);
    assert_eq!(r.token_count, 137);
    assert!(!r.token_estimated);

    let body = server.last().body;
    assert_eq!(body["stop"], serde_json::json!(["\nStep"]));
    assert_eq!(body["max_tokens"], 512);
    let msgs = body["messages"].as_array().unwrap();
    assert_eq!(msgs[0]["role"], "user");
    assert!(msgs[0]["content"].as_str().unwrap().ends_with("How many clips?"));
    assert_eq!(msgs[1]["role"], "assistant");
    assert_eq!(msgs[1]["content"], "Step 1:");
}

#[test]
fn later_steps_are_relabelled_in_the_prefill() {
    let server = FixtureServer::start(|_| (200, reply(" 72.", "stop", Some("\nStep"), Some(3))));
    let p = problem("q");
    let steps = vec![
        PathStep { slot: 0, text: " 48 clips.", continuation: false },
        PathStep { slot: 1, text: " 24 clips.", continuation: false },
    ];
    llm(&server.url).expand(&request(&p, steps, GenerationMode::Sequential, 1)).unwrap();
    let body = server.last().body;
    assert_eq!(body["messages"][1]["content"], "Step 1: 48 clips.\n\nStep 2: 24 clips.\n\nStep 3:");
}

#[test]
fn full_generation_cut_by_length() {
    let boxed = "Step 1: ok.\n\nStep 2: the answer is $\\boxed{5}$ and";
    let server = FixtureServer::start(move |_| (200, reply(boxed, "length", None, Some(4096))));
    let p = problem("q");
    let out = llm(&server.url).expand(&request(&p, vec![], GenerationMode::Full, 1)).unwrap();
    let r = &out[0].result;
    assert!(r.truncated_by_limit && !r.natural_stop);
    assert_eq!(extract_answer(&r.text, r).answer.as_deref(), Some("5"));
    assert!(server.last().body.get("stop").is_none());
    assert_eq!(server.last().body["max_tokens"], 4096);

    let server = FixtureServer::start(|_| (200, reply("Step 1: so far so", "length", None, Some(4096))));
    let r = llm(&server.url).expand(&request(&p, vec![], GenerationMode::Full, 1)).unwrap().remove(0).result;
    assert!(!extract_answer(&r.text, &r).answered);
}

#[test]
fn missing_usage_falls_back_to_whitespace_estimate() {
    let server = FixtureServer::start(|_| (200, reply("one two three four", "stop", None, None)));
    let p = problem("q");
    let r = llm(&server.url).expand(&request(&p, vec![], GenerationMode::Full, 1)).unwrap().remove(0).result;
    assert_eq!(r.token_count, 4);
    assert!(r.token_estimated);
}

#[test]
fn server_errors_map_to_retry_classes() {
    let p = problem("q");
    let busy = FixtureServer::start(|_| (503, "overloaded".into()));
    assert!(matches!(
        llm(&busy.url).expand(&request(&p, vec![], GenerationMode::Sequential, 1)),
        Err(EnvError::Transient { .. })
    ));
    let bad = FixtureServer::start(|_| (400, "bad request".into()));
    assert!(matches!(
        llm(&bad.url).expand(&request(&p, vec![], GenerationMode::Sequential, 1)),
        Err(EnvError::Fatal(_))
    ));
}

#[test]
fn api_key_comes_from_the_environment() {
    std::env::set_var("BGMCTS_FIXTURE_KEY", "sk-fixture");
    let server = FixtureServer::start(|_| (200, reply("x", "stop", None, Some(1))));
    let cfg = EndpointConfig { api_key_env: Some("BGMCTS_FIXTURE_KEY".into()), ..endpoint(&server.url) };
    let env = LlmEnvironment::new(ChatClient::new(cfg).unwrap(), PromptTemplates::default(), LlmSettings::default());
    let p = problem("q");
    env.expand(&request(&p, vec![], GenerationMode::Full, 1)).unwrap();
    assert_eq!(server.last().header("authorization"), Some("Bearer sk-fixture"));

    let plain = FixtureServer::start(|_| (200, reply("x", "stop", None, Some(1))));
    llm(&plain.url).expand(&request(&p, vec![], GenerationMode::Full, 1)).unwrap();
    assert_eq!(plain.last().header("authorization"), None);
}

fn eval_request<'a>(p: &'a bgmcts::env::Problem, texts: &'a [&'a str]) -> EvaluationRequest<'a> {
    let steps = texts.iter().map(|t| PathStep { slot: 0, text: t, continuation: false }).collect();
    EvaluationRequest { problem: p, steps, mode: GenerationMode::Sequential }
}

#[test]
fn prm_maps_judgements() {
    let p = problem("q");
    let yes = FixtureServer::start(|_| (200, reply(YES, "stop", None, Some(30))));
    let ev = prm(&yes.url, JudgementMapping::default()).evaluate(&eval_request(&p, &[" a"])).unwrap();
    assert_eq!(ev.q, 1.0);
    let no = FixtureServer::start(|_| (200, reply(NO, "stop", None, Some(30))));
    assert_eq!(prm(&no.url, JudgementMapping::default()).evaluate(&eval_request(&p, &[" a"])).unwrap().q, 0.0);
    let custom = JudgementMapping { yes: 0.9, no: 0.1, use_server_score: false };
    assert_eq!(prm(&no.url, custom).evaluate(&eval_request(&p, &[" a"])).unwrap().q, 0.1);
}

#[test]
fn prm_without_marker_is_an_error() {
    let p = problem("q");
    let server = FixtureServer::start(|_| (200, reply("I think it is fine.", "stop", None, Some(5))));
    let err = prm(&server.url, JudgementMapping::default()).evaluate(&eval_request(&p, &[" a"])).unwrap_err();
    match err {
        EvalError::Unparseable { raw } => assert_eq!(raw, "I think it is fine."),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn prm_uses_final_step_and_caches_prefixes() {
    // First step judged No, later steps Yes: the node takes the last verdict.
    let server = FixtureServer::start(|body| {
        let turns = body["messages"].as_array().unwrap().iter().filter(|m| m["role"] == "user").count();
        (200, reply(if turns == 1 { NO } else { YES }, "stop", None, Some(10)))
    });
    let p = problem("P?");
    let evaluator = prm(&server.url, JudgementMapping::default());
    let ev = evaluator.evaluate(&eval_request(&p, &[" a", " b"])).unwrap();
    assert_eq!(ev.q, 1.0);
    assert_eq!(ev.rationale.as_deref(), Some("judgements: No,Yes"));
    assert_eq!(server.count(), 2);
    let last = server.last().body;
    let msgs = last["messages"].as_array().unwrap();
    assert_eq!(msgs[0]["role"], "system");
    assert_eq!(msgs[1]["content"], "Question: P?\n\nStep 1: a");
    assert_eq!(msgs[2]["role"], "assistant");
    assert_eq!(msgs[3]["content"], "Step 2: b");
    // A sibling of the second step only costs one more request.
    evaluator.evaluate(&eval_request(&p, &[" a", " c"])).unwrap();
    assert_eq!(server.count(), 3);
}

#[test]
fn prm_prefers_server_score() {
    let server = FixtureServer::start(|_| {
        let mut v: serde_json::Value = serde_json::from_str(&reply(NO, "stop", None, Some(3))).unwrap();
        v["score"] = serde_json::json!(0.83);
        (200, v.to_string())
    });
    let p = problem("q");
    assert_eq!(prm(&server.url, JudgementMapping::default()).evaluate(&eval_request(&p, &[" a"])).unwrap().q, 0.83);
}

#[test]
fn search_over_fixture_servers() {
    let n = Arc::new(AtomicUsize::new(0));
    let k = n.clone();
    let gen = FixtureServer::start(move |_| {
        let i = k.fetch_add(1, Ordering::SeqCst);
        if i % 3 == 2 {
            (
                200,
                reply(" Therefore, the final answer is: $\\boxed{72}$. I hope it is correct.", "stop", None, Some(20)),
            )
        } else {
            (200, reply(&format!(" partial {i}"), "stop", Some("\nStep"), Some(20)))
        }
    });
    let judge = FixtureServer::start(|_| (200, reply(YES, "stop", None, Some(8))));
    let p = problem("How many clips?");
    let run = run_search(
        &p,
        200,
        &llm(&gen.url),
        &prm(&judge.url, JudgementMapping::default()),
        &PolicyConfig::default(),
        &mut NullSink,
    )
    .unwrap();
    assert!(run.outcome.c_used_final >= 200);
    assert_eq!(run.outcome.c_used_final, 20 * gen.count() as u64);
    assert_eq!(run.outcome.best_answer.as_deref(), Some("72"));
}

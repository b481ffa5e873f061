//! Config-driven experiment grid: every (method, budget, seed, instance) cell
//! runs with its own budget, and results are written as traces, tree dumps
//! and CSV tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::export::{RunMeta, TreeDump};
use super::metrics::{
    answered_node_stats, checkpoints, compute_curves, AnsweredNodeStats, ExactMatch, Grader, RunTrace,
};
use super::trace::{write_jsonl, TraceEvent, VecSink};
use crate::baselines::run_method;
use crate::chat::{ChatClient, EndpointConfig};
use crate::config::{Method, PolicyConfig};
use crate::env::llm::{LlmEnvironment, LlmSettings};
use crate::env::prompts::PromptTemplates;
use crate::env::synthetic::{SyntheticEnvironment, SyntheticWorld, SyntheticWorldSpec};
use crate::env::{Environment, Problem};
use crate::eval::oracle::OracleEvaluator;
use crate::eval::prm::{JudgementMapping, PrmEvaluator};
use crate::eval::Evaluator;
use crate::tree::SearchTree;

/// A single value or a list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    Synthetic(SyntheticWorldSpec),
    Llm {
        endpoint: EndpointConfig,
        /// JSON-lines file of `{"id", "problem", "answer"}` records.
        problems: PathBuf,
        #[serde(default)]
        settings: LlmSettings,
        #[serde(default)]
        generator_template: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    Oracle {
        /// Overrides the world's `evaluator_noise`.
        #[serde(default)]
        noise: Option<f64>,
    },
    Prm {
        endpoint: EndpointConfig,
        #[serde(default)]
        mapping: JudgementMapping,
        #[serde(default)]
        system_prompt: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Parallelism {
    /// Worker threads; 0 picks one per core.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: OneOrMany<Method>,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub budget: OneOrMany<u64>,
    pub environment: EnvironmentConfig,
    pub evaluator: EvaluatorConfig,
    /// Synthetic worlds are regenerated per seed; LLM endpoints receive it as
    /// the sampling seed.
    #[serde(default = "default_seeds")]
    pub seeds: OneOrMany<u64>,
    #[serde(default)]
    pub parallelism: Parallelism,
    /// Uses only the first `n` problems.
    #[serde(default)]
    pub instances: Option<usize>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

fn default_seeds() -> OneOrMany<u64> {
    OneOrMany::One(42)
}

fn default_checkpoints() -> usize {
    20
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("reading {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("endpoint: {0}")]
    Endpoint(String),
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text =
            fs::read_to_string(path).map_err(|source| ExperimentError::Read { path: path.to_path_buf(), source })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.policy.validate().map_err(ExperimentError::Config)?;
        if self.method.to_vec().is_empty() || self.budget.to_vec().is_empty() || self.seeds.to_vec().is_empty() {
            return Err(ExperimentError::Config("method, budget and seeds must be nonempty".into()));
        }
        if self.budget.to_vec().contains(&0) {
            return Err(ExperimentError::Config("budgets must be positive".into()));
        }
        if let EnvironmentConfig::Synthetic(spec) = &self.environment {
            spec.validate().map_err(ExperimentError::Config)?;
        }
        match (&self.environment, &self.evaluator) {
            (EnvironmentConfig::Llm { .. }, EvaluatorConfig::Oracle { .. }) => {
                Err(ExperimentError::Config("the oracle evaluator needs a synthetic environment".into()))
            }
            _ => Ok(()),
        }
    }

    /// Generator, evaluator and problem set for one seed.
    pub fn backends(&self, seed: u64) -> Result<Backends, ExperimentError> {
        let (env, world, mut problems): (Box<dyn Environment>, Option<SyntheticWorld>, Vec<Problem>) =
            match &self.environment {
                EnvironmentConfig::Synthetic(spec) => {
                    let world = SyntheticWorld::new(SyntheticWorldSpec { seed, ..spec.clone() });
                    let problems = world.problems();
                    (Box::new(SyntheticEnvironment::new(world.clone())), Some(world), problems)
                }
                EnvironmentConfig::Llm { endpoint, problems, settings, generator_template } => {
                    let client = ChatClient::new(EndpointConfig { seed: Some(seed), ..endpoint.clone() })
                        .map_err(|e| ExperimentError::Endpoint(e.to_string()))?;
                    let templates = PromptTemplates::load(generator_template.as_deref(), None)?;
                    let env = LlmEnvironment::new(client, templates, settings.clone());
                    (Box::new(env), None, load_problems(problems)?)
                }
            };
        if let Some(n) = self.instances {
            problems.truncate(n);
        }
        let evaluator: Box<dyn Evaluator> = match (&self.evaluator, world) {
            (EvaluatorConfig::Oracle { noise }, Some(world)) => match noise {
                Some(n) => Box::new(OracleEvaluator::new(SyntheticWorld::new(SyntheticWorldSpec {
                    evaluator_noise: *n,
                    ..world.spec().clone()
                }))),
                None => Box::new(OracleEvaluator::new(world)),
            },
            (EvaluatorConfig::Oracle { .. }, None) => {
                return Err(ExperimentError::Config("the oracle evaluator needs a synthetic environment".into()))
            }
            (EvaluatorConfig::Prm { endpoint, mapping, system_prompt }, _) => {
                let client = ChatClient::new(endpoint.clone()).map_err(|e| ExperimentError::Endpoint(e.to_string()))?;
                let templates = PromptTemplates::load(None, system_prompt.as_deref())?;
                Box::new(PrmEvaluator::new(client, templates, *mapping))
            }
        };
        Ok(Backends { env, evaluator, problems })
    }
}

#[derive(Debug, Deserialize)]
struct ProblemRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(alias = "question", alias = "text")]
    problem: String,
    #[serde(default, alias = "reference", alias = "solution")]
    answer: Option<String>,
}

/// Reads a JSON-lines problem file.
pub fn load_problems(path: &Path) -> Result<Vec<Problem>, ExperimentError> {
    let mut out = Vec::new();
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Read { path: path.to_path_buf(), source })?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ProblemRecord = serde_json::from_str(line)?;
        let instance = out.len() as u64;
        out.push(Problem {
            id: r.id.unwrap_or_else(|| format!("line-{}", i + 1)),
            instance,
            text: r.problem,
            reference: r.answer,
        });
    }
    Ok(out)
}

pub struct Backends {
    pub env: Box<dyn Environment>,
    pub evaluator: Box<dyn Evaluator>,
    pub problems: Vec<Problem>,
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunKey {
    pub method: Method,
    pub budget: u64,
    pub seed: u64,
    pub instance: u64,
}

impl RunKey {
    pub fn run_id(&self) -> String {
        format!("{}-b{}-s{}-i{}", self.method.as_str(), self.budget, self.seed, self.instance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub method: Method,
    pub budget: u64,
    pub seed: u64,
    pub instance: u64,
    pub problem_id: String,
    pub correct: bool,
    pub reached: bool,
    pub best_answer: Option<String>,
    pub c_used_final: u64,
    pub iterations: u64,
    pub stop_reason: String,
    pub nodes: u64,
    pub max_depth: u32,
    pub max_width: u64,
    pub answered: u64,
    pub answered_correct: u64,
    pub error: Option<String>,
}

pub struct RunOutput {
    pub key: RunKey,
    pub record: RunRecord,
    pub reference: Option<String>,
    pub events: Vec<TraceEvent>,
    /// Absent when the run failed.
    pub tree: Option<SearchTree>,
}

/// Executes one cell and grades it. Failures are captured in the record.
pub fn run_cell(
    key: RunKey,
    problem: &Problem,
    backends: &Backends,
    policy: &PolicyConfig,
    grader: &dyn Grader,
) -> RunOutput {
    let cfg = PolicyConfig { method: key.method, ..policy.clone() };
    let mut sink = VecSink::new(key.run_id());
    let result = run_method(problem, key.budget, &*backends.env, &*backends.evaluator, &cfg, &mut sink);
    let reference = problem.reference.as_deref();
    let mut record = RunRecord {
        run_id: key.run_id(),
        method: key.method,
        budget: key.budget,
        seed: key.seed,
        instance: key.instance,
        problem_id: problem.id.clone(),
        correct: false,
        reached: false,
        best_answer: None,
        c_used_final: 0,
        iterations: 0,
        stop_reason: String::new(),
        nodes: 0,
        max_depth: 0,
        max_width: 0,
        answered: 0,
        answered_correct: 0,
        error: None,
    };
    let tree = match result {
        Ok(run) => {
            let stats = answered_node_stats([(&run.tree, reference)], grader);
            record.correct = run.outcome.best_answer.as_deref().is_some_and(|a| grader.grade(reference, a));
            record.reached = run.tree.answered_count() > 0;
            record.best_answer = run.outcome.best_answer.clone();
            record.c_used_final = run.outcome.c_used_final;
            record.iterations = run.outcome.iterations;
            record.stop_reason = run.outcome.stop_reason.as_str().to_string();
            record.nodes = run.tree.len() as u64;
            record.max_depth = run.tree.max_depth();
            record.max_width = run.tree.max_width() as u64;
            record.answered = stats.total;
            record.answered_correct = stats.correct;
            Some(run.tree)
        }
        Err(e) => {
            log::warn!("{}: {e}", key.run_id());
            record.c_used_final = sink.events.iter().map(|e| e.tokens()).sum();
            record.iterations = sink.events.last().map_or(0, |e| e.iteration + 1);
            record.stop_reason = "error".into();
            record.error = Some(e.to_string());
            None
        }
    };
    RunOutput { key, record, reference: problem.reference.clone(), events: sink.events, tree }
}

/// Per (method, budget) summary over seeds and instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub label: String,
    pub budget: u64,
    pub runs: u64,
    pub failed: u64,
    pub accuracy: f64,
    pub reach_rate: f64,
    pub mean_c_used: f64,
    pub mean_iterations: f64,
    pub mean_max_depth: f64,
    pub mean_max_width: f64,
    pub answered_total: u64,
    pub answered_correct: u64,
    pub answered_ratio: f64,
    /// "ok", or "incomplete" when some runs failed.
    pub status: String,
}

/// Aggregates by (method, budget). Failed runs are counted but excluded from
/// the means. Input order does not matter.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Method, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.budget)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, budget), mut rs)| {
            rs.sort_by_key(|r| (r.seed, r.instance));
            let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.error.is_none()).collect();
            let n = ok.len().max(1) as f64;
            let mean = |f: &dyn Fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
            let answered_total: u64 = ok.iter().map(|r| r.answered).sum();
            let answered_correct: u64 = ok.iter().map(|r| r.answered_correct).sum();
            let failed = (rs.len() - ok.len()) as u64;
            AggregateRow {
                method,
                label: method.label().to_string(),
                budget,
                runs: rs.len() as u64,
                failed,
                accuracy: mean(&|r| r.correct as u8 as f64),
                reach_rate: mean(&|r| r.reached as u8 as f64),
                mean_c_used: mean(&|r| r.c_used_final as f64),
                mean_iterations: mean(&|r| r.iterations as f64),
                mean_max_depth: mean(&|r| r.max_depth as f64),
                mean_max_width: mean(&|r| r.max_width as f64),
                answered_total,
                answered_correct,
                answered_ratio: if answered_total > 0 { answered_correct as f64 / answered_total as f64 } else { 0.0 },
                status: if failed > 0 { "incomplete".into() } else { "ok".into() },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: Method,
    pub budget: u64,
    pub consumed_tokens: u64,
    pub accuracy: f64,
    pub reach_rate: f64,
    pub avg_max_depth: f64,
    pub avg_max_width: f64,
}

pub fn curves_for(outputs: &[RunOutput], n_checkpoints: usize, grader: &dyn Grader) -> Vec<CurveRow> {
    let mut groups: BTreeMap<(Method, u64), Vec<&RunOutput>> = BTreeMap::new();
    for o in outputs {
        groups.entry((o.key.method, o.key.budget)).or_default().push(o);
    }
    let mut rows = Vec::new();
    for ((method, budget), mut os) in groups {
        os.sort_by_key(|o| o.key);
        let traces: Vec<RunTrace<'_>> =
            os.iter().map(|o| RunTrace { events: &o.events, reference: o.reference.as_deref() }).collect();
        for p in compute_curves(&traces, &checkpoints(budget, n_checkpoints), grader) {
            rows.push(CurveRow {
                method,
                budget,
                consumed_tokens: p.consumed_tokens,
                accuracy: p.accuracy,
                reach_rate: p.reach_rate,
                avg_max_depth: p.avg_max_depth,
                avg_max_width: p.avg_max_width,
            });
        }
    }
    rows
}

pub struct ExperimentResults {
    pub outputs: Vec<RunOutput>,
    pub aggregate: Vec<AggregateRow>,
    pub curves: Vec<CurveRow>,
}

impl ExperimentResults {
    pub fn records(&self) -> Vec<RunRecord> {
        self.outputs.iter().map(|o| o.record.clone()).collect()
    }
}

fn grid(config: &ExperimentConfig, seed: u64, n_problems: usize) -> Vec<(RunKey, usize)> {
    let mut keys = Vec::new();
    for method in config.method.to_vec() {
        for budget in config.budget.to_vec() {
            for (i, _) in (0..n_problems).enumerate() {
                keys.push((RunKey { method, budget, seed, instance: i as u64 }, i));
            }
        }
    }
    keys
}

#[cfg(feature = "parallel")]
fn execute(
    jobs: &[(RunKey, usize)],
    backends: &Backends,
    policy: &PolicyConfig,
    grader: &dyn Grader,
    threads: usize,
) -> Result<Vec<RunOutput>, ExperimentError> {
    use rayon::prelude::*;
    if threads == 1 {
        return Ok(execute_sequential(jobs, backends, policy, grader));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(pool.install(|| {
        jobs.par_iter().map(|&(key, i)| run_cell(key, &backends.problems[i], backends, policy, grader)).collect()
    }))
}

#[cfg(not(feature = "parallel"))]
fn execute(
    jobs: &[(RunKey, usize)],
    backends: &Backends,
    policy: &PolicyConfig,
    grader: &dyn Grader,
    _threads: usize,
) -> Result<Vec<RunOutput>, ExperimentError> {
    Ok(execute_sequential(jobs, backends, policy, grader))
}

fn execute_sequential(
    jobs: &[(RunKey, usize)],
    backends: &Backends,
    policy: &PolicyConfig,
    grader: &dyn Grader,
) -> Vec<RunOutput> {
    jobs.iter().map(|&(key, i)| run_cell(key, &backends.problems[i], backends, policy, grader)).collect()
}

/// Runs the whole grid in memory. Output order is the sorted grid order
/// regardless of scheduling.
pub fn run_experiment(config: &ExperimentConfig, grader: &dyn Grader) -> Result<ExperimentResults, ExperimentError> {
    config.validate()?;
    let mut outputs = Vec::new();
    for seed in config.seeds.to_vec() {
        let backends = config.backends(seed)?;
        let jobs = grid(config, seed, backends.problems.len());
        outputs.extend(execute(&jobs, &backends, &config.policy, grader, config.parallelism.threads)?);
    }
    outputs.sort_by_key(|o| o.key);
    let records: Vec<RunRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let aggregate = aggregate(&records);
    let curves = curves_for(&outputs, config.checkpoints, grader);
    Ok(ExperimentResults { outputs, aggregate, curves })
}

/// Runs the grid with the exact-match grader and writes everything below `dir`.
pub fn run_experiment_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentResults, ExperimentError> {
    let results = run_experiment(config, &ExactMatch)?;
    write_results(&results, dir, &ExactMatch)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    Ok(results)
}

pub fn write_results(results: &ExperimentResults, dir: &Path, grader: &dyn Grader) -> Result<(), ExperimentError> {
    let traces = dir.join("traces");
    let trees = dir.join("trees");
    fs::create_dir_all(&traces)?;
    fs::create_dir_all(&trees)?;
    for o in &results.outputs {
        let id = &o.record.run_id;
        write_jsonl(BufWriter::new(fs::File::create(traces.join(format!("{id}.jsonl")))?), &o.events)?;
        if let Some(tree) = &o.tree {
            let dump = TreeDump::new(run_meta(o), tree, grader);
            dump.write(BufWriter::new(fs::File::create(trees.join(format!("{id}.json")))?))?;
        }
    }
    write_csv(&dir.join("runs.csv"), results.outputs.iter().map(|o| RunCsv::new(&o.record, o.reference.as_deref())))?;
    write_csv(&dir.join("aggregate.csv"), results.aggregate.iter().map(AggregateCsv::from))?;
    write_csv(&dir.join("curves.csv"), results.curves.iter().map(CurveCsv::from))?;
    Ok(())
}

pub fn run_meta(o: &RunOutput) -> RunMeta {
    RunMeta {
        run_id: o.record.run_id.clone(),
        method: o.key.method.as_str().to_string(),
        budget: o.key.budget,
        seed: o.key.seed,
        instance: o.key.instance,
        problem_id: o.record.problem_id.clone(),
        reference: o.reference.clone(),
        best_answer: o.record.best_answer.clone(),
        best_answer_node: o.tree.as_ref().and_then(|t| t.best_answered()).map(|n| n.id.0),
        c_used_final: o.record.c_used_final,
        iterations: o.record.iterations,
        stop_reason: o.record.stop_reason.clone(),
    }
}

/// Fixed six-decimal rendering keeps tables byte-stable across platforms.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.6}")
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run table row as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCsv {
    pub run_id: String,
    pub method: String,
    pub budget: u64,
    pub seed: u64,
    pub instance: u64,
    pub problem_id: String,
    pub reference: String,
    pub correct: bool,
    pub reached: bool,
    pub best_answer: String,
    pub c_used_final: u64,
    pub iterations: u64,
    pub stop_reason: String,
    pub nodes: u64,
    pub max_depth: u32,
    pub max_width: u64,
    pub answered: u64,
    pub answered_correct: u64,
    pub error: String,
}

impl RunCsv {
    fn new(r: &RunRecord, reference: Option<&str>) -> Self {
        RunCsv {
            run_id: r.run_id.clone(),
            method: r.method.as_str().into(),
            budget: r.budget,
            seed: r.seed,
            instance: r.instance,
            problem_id: r.problem_id.clone(),
            reference: reference.unwrap_or("").into(),
            correct: r.correct,
            reached: r.reached,
            best_answer: r.best_answer.clone().unwrap_or_default(),
            c_used_final: r.c_used_final,
            iterations: r.iterations,
            stop_reason: r.stop_reason.clone(),
            nodes: r.nodes,
            max_depth: r.max_depth,
            max_width: r.max_width,
            answered: r.answered,
            answered_correct: r.answered_correct,
            error: r.error.clone().unwrap_or_default(),
        }
    }
}

/// Aggregate table row as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCsv {
    pub method: String,
    pub label: String,
    pub budget: u64,
    pub runs: u64,
    pub failed: u64,
    pub accuracy: String,
    pub reach_rate: String,
    pub mean_c_used: String,
    pub mean_iterations: String,
    pub mean_max_depth: String,
    pub mean_max_width: String,
    pub answered_total: u64,
    pub answered_correct: u64,
    pub answered_ratio: String,
    pub status: String,
}

impl From<&AggregateRow> for AggregateCsv {
    fn from(r: &AggregateRow) -> Self {
        AggregateCsv {
            method: r.method.as_str().into(),
            label: r.label.clone(),
            budget: r.budget,
            runs: r.runs,
            failed: r.failed,
            accuracy: fmt_f64(r.accuracy),
            reach_rate: fmt_f64(r.reach_rate),
            mean_c_used: fmt_f64(r.mean_c_used),
            mean_iterations: fmt_f64(r.mean_iterations),
            mean_max_depth: fmt_f64(r.mean_max_depth),
            mean_max_width: fmt_f64(r.mean_max_width),
            answered_total: r.answered_total,
            answered_correct: r.answered_correct,
            answered_ratio: fmt_f64(r.answered_ratio),
            status: r.status.clone(),
        }
    }
}

#[derive(Serialize)]
struct CurveCsv {
    method: &'static str,
    budget: u64,
    consumed_tokens: u64,
    accuracy: String,
    reach_rate: String,
    avg_max_depth: String,
    avg_max_width: String,
}

impl From<&CurveRow> for CurveCsv {
    fn from(r: &CurveRow) -> Self {
        CurveCsv {
            method: r.method.as_str(),
            budget: r.budget,
            consumed_tokens: r.consumed_tokens,
            accuracy: fmt_f64(r.accuracy),
            reach_rate: fmt_f64(r.reach_rate),
            avg_max_depth: fmt_f64(r.avg_max_depth),
            avg_max_width: fmt_f64(r.avg_max_width),
        }
    }
}

pub fn read_runs(path: &Path) -> Result<Vec<RunCsv>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<RunCsv>, _>>()?;
    Ok(rows)
}

/// Recomputes budget curves from a results directory written by
/// [`write_results`].
pub fn curves_from_dir(
    dir: &Path,
    n_checkpoints: usize,
    grader: &dyn Grader,
) -> Result<Vec<CurveRow>, ExperimentError> {
    let mut outputs = Vec::new();
    for row in read_runs(&dir.join("runs.csv"))? {
        let method: Method = row.method.parse().map_err(ExperimentError::Config)?;
        let path = dir.join("traces").join(format!("{}.jsonl", row.run_id));
        let events = super::trace::read_jsonl(std::io::BufReader::new(fs::File::open(&path)?))
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let key = RunKey { method, budget: row.budget, seed: row.seed, instance: row.instance };
        let reference = (!row.reference.is_empty()).then(|| row.reference.clone());
        outputs.push(RunOutput { key, record: placeholder_record(&row, method), reference, events, tree: None });
    }
    Ok(curves_for(&outputs, n_checkpoints, grader))
}

fn placeholder_record(row: &RunCsv, method: Method) -> RunRecord {
    RunRecord {
        run_id: row.run_id.clone(),
        method,
        budget: row.budget,
        seed: row.seed,
        instance: row.instance,
        problem_id: row.problem_id.clone(),
        correct: row.correct,
        reached: row.reached,
        best_answer: (!row.best_answer.is_empty()).then(|| row.best_answer.clone()),
        c_used_final: row.c_used_final,
        iterations: row.iterations,
        stop_reason: row.stop_reason.clone(),
        nodes: row.nodes,
        max_depth: row.max_depth,
        max_width: row.max_width,
        answered: row.answered,
        answered_correct: row.answered_correct,
        error: (!row.error.is_empty()).then(|| row.error.clone()),
    }
}

/// Answered-node statistics per (method, budget) from the tree dumps in a
/// results directory.
pub fn stats_from_dir(dir: &Path) -> Result<Vec<(String, u64, AnsweredNodeStats)>, ExperimentError> {
    let mut groups: BTreeMap<(String, u64), (u64, u64)> = BTreeMap::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("trees"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let dump = TreeDump::read(std::io::BufReader::new(fs::File::open(&p)?))?;
        let g = groups.entry((dump.meta.method.clone(), dump.meta.budget)).or_default();
        for n in dump.nodes.iter().filter(|n| n.node.answered) {
            g.0 += 1;
            g.1 += n.correct as u64;
        }
    }
    Ok(groups.into_iter().map(|((m, b), (t, c))| (m, b, AnsweredNodeStats::from_counts(t, c))).collect())
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateCsv>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<AggregateCsv>, _>>()?;
    Ok(rows)
}

/// Difference `b - a` for every (method, budget) present in both tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub method: String,
    pub budget: u64,
    pub accuracy_a: String,
    pub accuracy_b: String,
    pub accuracy_delta: String,
    pub reach_rate_delta: String,
    pub mean_c_used_delta: String,
    pub mean_max_depth_delta: String,
    pub mean_max_width_delta: String,
    /// "both", "only_a" or "only_b".
    pub presence: String,
}

pub fn compare(a: &[AggregateCsv], b: &[AggregateCsv]) -> Result<Vec<DeltaRow>, ExperimentError> {
    let parse = |s: &str| -> Result<f64, ExperimentError> {
        s.parse::<f64>().map_err(|e| ExperimentError::Config(format!("bad number {s:?}: {e}")))
    };
    let index = |rows: &[AggregateCsv]| -> BTreeMap<(String, u64), AggregateCsv> {
        rows.iter().map(|r| ((r.method.clone(), r.budget), r.clone())).collect()
    };
    let (ia, ib) = (index(a), index(b));
    let mut keys: Vec<&(String, u64)> = ia.keys().chain(ib.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for k in keys {
        let row = match (ia.get(k), ib.get(k)) {
            (Some(x), Some(y)) => {
                let d = |f: fn(&AggregateCsv) -> &str| -> Result<String, ExperimentError> {
                    Ok(fmt_f64(parse(f(y))? - parse(f(x))?))
                };
                DeltaRow {
                    method: k.0.clone(),
                    budget: k.1,
                    accuracy_a: x.accuracy.clone(),
                    accuracy_b: y.accuracy.clone(),
                    accuracy_delta: d(|r| &r.accuracy)?,
                    reach_rate_delta: d(|r| &r.reach_rate)?,
                    mean_c_used_delta: d(|r| &r.mean_c_used)?,
                    mean_max_depth_delta: d(|r| &r.mean_max_depth)?,
                    mean_max_width_delta: d(|r| &r.mean_max_width)?,
                    presence: "both".into(),
                }
            }
            (x, y) => DeltaRow {
                method: k.0.clone(),
                budget: k.1,
                accuracy_a: x.map(|r| r.accuracy.clone()).unwrap_or_default(),
                accuracy_b: y.map(|r| r.accuracy.clone()).unwrap_or_default(),
                accuracy_delta: String::new(),
                reach_rate_delta: String::new(),
                mean_c_used_delta: String::new(),
                mean_max_depth_delta: String::new(),
                mean_max_width_delta: String::new(),
                presence: if x.is_some() { "only_a".into() } else { "only_b".into() },
            },
        };
        out.push(row);
    }
    Ok(out)
}

pub fn write_deltas<W: std::io::Write>(out: W, rows: &[DeltaRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves<W: std::io::Write>(out: W, rows: &[CurveRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(CurveCsv::from(r))?;
    }
    w.flush()?;
    Ok(())
}

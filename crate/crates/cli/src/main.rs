use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use bgmcts::config::Method;
use bgmcts::harness::experiment::{
    compare, curves_from_dir, read_aggregate, run_cell, run_experiment_to_dir, run_meta, stats_from_dir, write_curves,
    write_deltas, EnvironmentConfig, EvaluatorConfig, ExperimentConfig, OneOrMany, Parallelism, RunKey,
};
use bgmcts::harness::export::TreeDump;
use bgmcts::harness::metrics::ExactMatch;
use bgmcts::harness::trace::{read_jsonl, replay, write_jsonl};
use bgmcts::prelude::SyntheticWorldSpec;

#[derive(Parser)]
#[command(name = "bgmcts", version, about = "Fixed-budget tree-search decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one instance and print its outcome.
    Run {
        /// Experiment config; the bundled synthetic suite when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        instance: u64,
        /// Directory for the trace, tree dump and DOT file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full config grid and write result tables.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `parallelism.threads`.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Recompute budget curves from a results directory.
    Curves {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = 20)]
        checkpoints: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answered-node statistics from a results directory.
    Stats {
        #[arg(long)]
        results: PathBuf,
    },
    /// Convert a tree dump (or a trace) to DOT or JSON.
    ExportTree {
        /// Tree dump (`.json`) or trace (`.jsonl`).
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delta report between two aggregate tables (b - a).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        method: OneOrMany::One(Method::BgMcts),
        policy: Default::default(),
        budget: OneOrMany::One(4000),
        environment: EnvironmentConfig::Synthetic(SyntheticWorldSpec::default()),
        evaluator: EvaluatorConfig::Oracle { noise: None },
        seeds: OneOrMany::One(42),
        parallelism: Parallelism::default(),
        instances: None,
        checkpoints: 20,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(default_config()),
    }
}

fn cmd_run(
    config: Option<&Path>,
    method: Option<Method>,
    budget: Option<u64>,
    seed: Option<u64>,
    instance: u64,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let key = RunKey {
        method: method.unwrap_or(cfg.method.to_vec()[0]),
        budget: budget.unwrap_or(cfg.budget.to_vec()[0]),
        seed: seed.unwrap_or(cfg.seeds.to_vec()[0]),
        instance,
    };
    let backends = cfg.backends(key.seed)?;
    let Some(problem) = backends.problems.get(instance as usize) else {
        bail!("instance {instance} out of range ({} problems)", backends.problems.len());
    };
    let o = run_cell(key, problem, &backends, &cfg.policy, &ExactMatch);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let id = &o.record.run_id;
        write_jsonl(BufWriter::new(fs::File::create(dir.join(format!("{id}.jsonl")))?), &o.events)?;
        if let Some(tree) = &o.tree {
            let dump = TreeDump::new(run_meta(&o), tree, &ExactMatch);
            dump.write(BufWriter::new(fs::File::create(dir.join(format!("{id}.json")))?))?;
            fs::write(dir.join(format!("{id}.dot")), dump.to_dot())?;
        }
    }
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&o.record)?)?;
    if let Some(e) = &o.record.error {
        bail!("run failed: {e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed pipe (`| head`) is not an error.
        Err(e)
            if e.chain()
                .any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("Error: {e:?}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, method, budget, seed, instance, out } => {
            cmd_run(config.as_deref(), method, budget, seed, instance, out.as_deref())
        }
        Command::Sweep { config, out, threads } => {
            let mut cfg = load_config(Some(&config))?;
            if let Some(t) = threads {
                cfg.parallelism.threads = t;
            }
            fs::create_dir_all(&out)?;
            let results = run_experiment_to_dir(&cfg, &out)?;
            let failed = results.outputs.iter().filter(|o| o.record.error.is_some()).count();
            eprintln!("{} runs written to {} ({failed} failed)", results.outputs.len(), out.display());
            Ok(())
        }
        Command::Curves { results, checkpoints, out } => {
            let rows = curves_from_dir(&results, checkpoints, &ExactMatch)?;
            write_curves(output(out.as_deref())?, &rows)?;
            Ok(())
        }
        Command::Stats { results } => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record(["method", "budget", "total", "correct", "ratio"])?;
            for (method, budget, s) in stats_from_dir(&results)? {
                w.write_record([
                    method,
                    budget.to_string(),
                    s.total.to_string(),
                    s.correct.to_string(),
                    format!("{:.6}", s.ratio),
                ])?;
            }
            w.flush()?;
            Ok(())
        }
        Command::ExportTree { input, format, out } => {
            let file = BufReader::new(fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?);
            let dump = if input.extension().is_some_and(|e| e == "jsonl") {
                let events = read_jsonl(file)?;
                let tree = replay("", &events)?;
                let meta = bgmcts::harness::export::RunMeta {
                    run_id: events.first().map(|e| e.run_id.clone()).unwrap_or_default(),
                    ..Default::default()
                };
                TreeDump::new(meta, &tree, &ExactMatch)
            } else {
                TreeDump::read(file)?
            };
            let mut w = output(out.as_deref())?;
            match format {
                Format::Dot => w.write_all(dump.to_dot().as_bytes())?,
                Format::Json => {
                    dump.write(&mut w)?;
                    w.write_all(b"\n")?;
                }
            }
            w.flush()?;
            Ok(())
        }
        Command::Compare { a, b, out } => {
            let rows = compare(&read_aggregate(&a)?, &read_aggregate(&b)?)?;
            write_deltas(output(out.as_deref())?, &rows)?;
            Ok(())
        }
    }
}

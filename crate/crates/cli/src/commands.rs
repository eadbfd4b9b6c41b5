use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use ldba_synth_core::automaton::LdbaSpec;
use ldba_synth_core::benchmarks::{self, Benchmark};
use ldba_synth_core::envs::GridEnv;
use ldba_synth_core::eval::{rollout_trace, robustness_sweep, run_test, SweepConfig, TestConfig, TestReport};
use ldba_synth_core::learner::{
    greedy_policy, moving_average, train_with, EpisodeStats, Hyperparams, ModelFile, ModelFileError, Policy,
    TrainControl,
};
use ldba_synth_core::oracle::{self, OracleError};
use ldba_synth_core::product::{Product, RewardSpec, TraceRow};

use crate::args::{HyperArgs, OracleArgs, RolloutArgs, SweepArgs, TaskArgs, TestArgs, TrainArgs};
use crate::error::CliError;

pub const RESULTS_VAR: &str = "LDBA_SYNTH_RESULTS";

/// Set by the interrupt handler; training stops at the next check and saves.
pub static STOP: AtomicBool = AtomicBool::new(false);

/// Outcome of a subcommand that ran to completion or was cut short.
pub enum Finished {
    Done,
    Interrupted,
}

/// An environment and automaton, with the flags that reproduce them.
struct Task {
    env: GridEnv,
    spec: Arc<LdbaSpec>,
    bench: Option<&'static Benchmark>,
    flags: String,
}

/// Resolved inputs of a training run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub env_file: Option<PathBuf>,
    pub ldba_file: Option<PathBuf>,
    pub benchmark: Option<String>,
    pub hyperparams: Hyperparams,
    pub test_config: TestConfig,
    pub output_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    let fail = |source| CliError::Write { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fail)?;
    }
    fs::write(path, contents).map_err(fail)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("csv row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flushes")).expect("csv is utf-8")
}

fn load_task(args: &TaskArgs) -> Result<Task, CliError> {
    let bench = match &args.benchmark {
        Some(name) => Some(benchmarks::benchmark(name).ok_or_else(|| {
            let known: Vec<_> = benchmarks::names().collect();
            CliError::Config(format!("unknown benchmark '{name}' (known: {})", known.join(", ")))
        })?),
        None => None,
    };
    let mut flags = Vec::new();
    if let Some(b) = bench {
        flags.push(format!("--benchmark {}", b.name));
    }
    let env = match (&args.env, bench) {
        (Some(path), _) => {
            flags.push(format!("--env {}", path.display()));
            GridEnv::from_json(&read(path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(b)) => b.env().map_err(|e| CliError::Config(format!("benchmark {}: {e}", b.name)))?,
        (None, None) => return Err(CliError::Config("an environment is required: pass --env or --benchmark".into())),
    };
    let spec = match (&args.ldba, bench) {
        (Some(path), _) => {
            flags.push(format!("--ldba {}", path.display()));
            Arc::new(
                LdbaSpec::from_json(&read(path)?)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            )
        }
        (None, Some(b)) => b.ldba().map_err(|e| CliError::Config(format!("benchmark {}: {e}", b.name)))?,
        (None, None) => return Err(CliError::Config("an automaton is required: pass --ldba or --benchmark".into())),
    };
    Ok(Task { env, spec, bench, flags: flags.join(" ") })
}

fn check_algorithm(name: &str) -> Result<(), CliError> {
    match name {
        "ql" => Ok(()),
        "nfq" | "ddpg" => Err(CliError::Config(format!(
            "algorithm '{name}' is out of scope: this tool implements tabular Q-learning ('ql') only"
        ))),
        other => Err(CliError::Config(format!("unknown algorithm '{other}' (expected 'ql')"))),
    }
}

/// Output directory: the results variable if set, else `save_dir`.
fn output_dir(save_dir: &str) -> PathBuf {
    match std::env::var(RESULTS_VAR) {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(save_dir),
    }
}

fn resolve_hyperparams(args: &HyperArgs, task: &Task) -> Result<Hyperparams, CliError> {
    let mut hp = match &args.hyperparams {
        Some(path) => serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => task.bench.map_or_else(Hyperparams::default, Benchmark::hyperparams),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field.clone() { hp.$field = v; })*
        };
    }
    overlay!(
        algorithm,
        episode_num,
        iteration_num_max,
        discount_factor,
        learning_rate,
        epsilon,
        test,
        save_dir,
        average_window,
        seed
    );
    check_algorithm(&hp.algorithm)?;
    hp.validate()?;
    Ok(hp)
}

fn test_config(args: &RolloutArgs, rollouts: usize, horizon: usize, task: &Task, seed: u64) -> TestConfig {
    TestConfig {
        rollouts,
        horizon: args.horizon.unwrap_or(horizon),
        required_sweeps: args.required_sweeps.or(task.bench.map(|b| b.required_sweeps)).unwrap_or(1),
        seed,
    }
}

/// Oracle value at the initial state, or the reason it is unavailable.
fn oracle_reference(task: &Task, state_cap: usize) -> Result<f64, OracleError> {
    oracle::oracle(&task.env, &task.spec, state_cap).map(|(_, res)| res.initial_value)
}

/// Runs the test rollouts, writes `test_results.json` and prints the summary.
fn evaluate(
    policy: &dyn Policy,
    task: &Task,
    cfg: &TestConfig,
    state_cap: usize,
    out: &Path,
) -> Result<TestReport, CliError> {
    let mut report = run_test(policy, &task.env, &task.spec, cfg)?;
    let reference = oracle_reference(task, state_cap);
    report.oracle_reference = reference.as_ref().ok().copied();
    let path = out.join("test_results.json");
    write(&path, &to_json(&report))?;
    println!(
        "success rate: {:.4} ({}/{} rollouts; {})",
        report.success_rate, report.successes, cfg.rollouts, report.criterion
    );
    match reference {
        Ok(v) => println!("oracle max sat. prob. at s0: {v:.4}"),
        Err(e) => println!("oracle reference unavailable: {e}"),
    }
    println!("test results written to {}", path.display());
    Ok(report)
}

#[derive(Serialize)]
struct StatsRow {
    episode: usize,
    cumulative_reward: f64,
    steps: usize,
    sweeps_completed: u64,
    reached_sink: bool,
    reached_accepting_sink: bool,
    positive_rewards: u64,
}

#[derive(Serialize)]
struct ReturnRow {
    episode: usize,
    #[serde(rename = "return")]
    value: f64,
    moving_average: f64,
}

/// Trailing mean of the last `window` episode returns, for the progress line.
struct ProgressLine {
    window: usize,
    recent: VecDeque<f64>,
    sum: f64,
    every: usize,
    total: usize,
}

impl ProgressLine {
    fn new(window: usize, total: usize) -> Self {
        ProgressLine { window, recent: VecDeque::new(), sum: 0.0, every: (total / 20).clamp(1, 100), total }
    }

    fn record(&mut self, ep: &EpisodeStats) {
        self.recent.push_back(ep.cumulative_reward);
        self.sum += ep.cumulative_reward;
        if self.recent.len() > self.window {
            self.sum -= self.recent.pop_front().unwrap_or(0.0);
        }
        let n = ep.episode + 1;
        if n.is_multiple_of(self.every) || n == self.total {
            eprintln!(
                "episode {n}/{}  moving-average return {:.3}  sweeps {}",
                self.total,
                self.sum / self.recent.len() as f64,
                ep.sweeps_completed
            );
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<Finished, CliError> {
    let task = load_task(&args.task)?;
    let hp = resolve_hyperparams(&args.hyper, &task)?;
    let config = RunConfig {
        env_file: args.task.env.clone(),
        ldba_file: args.task.ldba.clone(),
        benchmark: task.bench.map(|b| b.name.to_string()),
        test_config: test_config(&args.rollout, args.rollouts, hp.iteration_num_max, &task, hp.seed),
        output_dir: output_dir(&hp.save_dir),
        hyperparams: hp,
    };
    if config.hyperparams.test {
        config.test_config.validate()?;
    }
    let hp = &config.hyperparams;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|source| CliError::Write { path: out.clone(), source })?;

    let window = hp.resolved_average_window();
    let mut progress = ProgressLine::new(window, hp.episode_num);
    let mut on_episode = |ep: &EpisodeStats| progress.record(ep);
    let control = TrainControl {
        stop: Some(&STOP),
        on_episode: if args.quiet { None } else { Some(&mut on_episode) },
    };
    let outcome = train_with(&task.env, &task.spec, hp, control)?;

    let model_path = out.join("learned_model.json");
    write(&model_path, &ModelFile::from_table(&outcome.q, &task.env, &task.spec, hp).to_json())?;
    write(
        &out.join("train_stats.csv"),
        &to_csv(outcome.stats.iter().map(|s| StatsRow {
            episode: s.episode,
            cumulative_reward: s.cumulative_reward,
            steps: s.steps,
            sweeps_completed: s.sweeps_completed,
            reached_sink: s.reached_sink,
            reached_accepting_sink: s.reached_accepting_sink,
            positive_rewards: s.positive_rewards(),
        })),
    )?;
    let returns: Vec<f64> = outcome.stats.iter().map(|s| s.cumulative_reward).collect();
    let averaged = moving_average(&returns, window);
    write(
        &out.join("train_returns.csv"),
        &to_csv(returns.iter().zip(&averaged).enumerate().map(|(episode, (&value, &moving_average))| {
            ReturnRow { episode, value, moving_average }
        })),
    )?;
    write(&out.join("run_config.json"), &to_json(&config))?;

    let p0 = Product::new(task.env.clone(), task.spec.clone(), RewardSpec::new(hp.discount_factor))
        .map_err(ldba_synth_core::learner::LearnerError::from)?
        .reset();
    println!(
        "trained {} episodes; max Q at the initial state: {:.4}",
        outcome.stats.len(),
        outcome.q.max_value(p0)
    );
    println!("model saved to {}", model_path.display());
    if outcome.interrupted {
        println!("training interrupted; partial results saved in {}", out.display());
        return Ok(Finished::Interrupted);
    }
    if hp.test {
        evaluate(&greedy_policy(&outcome.q), &task, &config.test_config, args.state_cap, out)?;
    }
    println!("reload with: ldba-synth test --model {} {}", model_path.display(), task.flags);
    Ok(Finished::Done)
}

pub fn cmd_test(args: &TestArgs) -> Result<Finished, CliError> {
    let task = load_task(&args.task)?;
    let file = ModelFile::from_json(&read(&args.model)?).map_err(|source| match source {
        ModelFileError::HashMismatch { .. } => CliError::Incompatible { path: args.model.clone(), source },
        other => CliError::Config(format!("{}: {other}", args.model.display())),
    })?;
    let q = file.to_table(&task.env, &task.spec).map_err(|source| match source {
        ModelFileError::HashMismatch { .. } => CliError::Incompatible { path: args.model.clone(), source },
        other => CliError::Config(format!("{}: {other}", args.model.display())),
    })?;
    let hp = &file.metadata.hyperparams;
    let cfg = test_config(&args.rollout, args.rollouts, hp.iteration_num_max, &task, args.seed.unwrap_or(hp.seed));
    let out = output_dir(args.save_dir.as_deref().unwrap_or(&hp.save_dir));
    let policy = greedy_policy(&q);
    evaluate(&policy, &task, &cfg, args.state_cap, &out)?;
    if let Some(path) = &args.trace {
        let (_, rows) = rollout_trace(&policy, &task.env, &task.spec, &cfg, 0)?;
        let mut csv = String::from(TraceRow::HEADER);
        csv.push('\n');
        csv.push_str(to_csv(rows).split_once('\n').map_or("", |(_, body)| body));
        write(path, &csv)?;
        println!("trajectory of rollout 0 written to {}", path.display());
    }
    Ok(Finished::Done)
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<Finished, CliError> {
    let task = load_task(&args.task)?;
    let (prod, res) = oracle::oracle(&task.env, &task.spec, args.state_cap)?;
    println!(
        "product: {} states, {} choices, {} accepting end components",
        prod.num_states(),
        prod.num_choices(),
        res.accepting_mecs
    );
    println!("max sat. prob. at s0: {:.4}", res.initial_value);
    if let Some(path) = &args.dump {
        write(path, &oracle::values_csv(&prod, &res))?;
        println!("values written to {}", path.display());
    }
    Ok(Finished::Done)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Finished, CliError> {
    let task = load_task(&args.task)?;
    let hp = resolve_hyperparams(&args.hyper, &task)?;
    if args.grid_eta.is_empty() || args.grid_mu.is_empty() {
        return Err(CliError::Config("grids must not be empty".into()));
    }
    if args.trainings == 0 || args.tests == 0 || args.workers == 0 {
        return Err(CliError::Config("trainings, tests and workers must be positive".into()));
    }
    let cfg = SweepConfig {
        etas: args.grid_eta.clone(),
        mus: args.grid_mu.clone(),
        trainings: args.trainings,
        tests: args.tests,
        horizon: args.rollout.horizon.unwrap_or(hp.iteration_num_max),
        required_sweeps: test_config(&args.rollout, args.tests, hp.iteration_num_max, &task, hp.seed).required_sweeps,
        seed: hp.seed,
        workers: args.workers,
        base: hp.clone(),
    };
    let out = output_dir(&hp.save_dir);
    let report = robustness_sweep(&task.env, &task.spec, &cfg)?;
    let csv_path = out.join("sweep.csv");
    write(&csv_path, &report.to_csv())?;
    let meta = json!({
        "criterion": report.criterion,
        "grid_eta": cfg.etas,
        "grid_mu": cfg.mus,
        "trainings": cfg.trainings,
        "tests": cfg.tests,
        "horizon": cfg.horizon,
        "required_sweeps": cfg.required_sweeps,
        "seed": cfg.seed,
        "base": cfg.base,
        "cells": report.cells,
        "overall_mean": report.overall_mean,
        "overall_stderr": report.overall_stderr,
    });
    write(&out.join("sweep_report.json"), &to_json(&meta))?;
    println!(
        "overall avg.: {:.2}% ± {:.2}% over {} cells ({})",
        100.0 * report.overall_mean,
        100.0 * report.overall_stderr,
        report.cells.len(),
        report.criterion
    );
    println!("grid written to {}", csv_path.display());
    Ok(Finished::Done)
}

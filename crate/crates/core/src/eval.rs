//! Closed-loop testing of policies and hyper-parameter robustness sweeps.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::LdbaSpec;
use crate::envs::GridEnv;
use crate::learner::{greedy_policy, train, Hyperparams, LearnerError, Policy};
use crate::product::{Product, ProductError, RewardSpec, TraceRow};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid test configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Product(#[from] ProductError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub rollouts: usize,
    pub horizon: usize,
    pub required_sweeps: u64,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            rollouts: 100,
            horizon: Hyperparams::default().iteration_num_max,
            required_sweeps: 1,
            seed: 0,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.rollouts == 0 || self.horizon == 0 || self.required_sweeps == 0 {
            return Err(EvalError::BadConfig(
                "rollouts, horizon and required_sweeps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutOutcome {
    pub rollout: usize,
    pub success: bool,
    pub steps: usize,
    pub sweeps_completed: u64,
    pub reached_sink: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub config: TestConfig,
    pub criterion: String,
    pub successes: usize,
    pub success_rate: f64,
    pub per_rollout: Vec<RolloutOutcome>,
    /// Oracle value at the initial state when it was computed; null otherwise.
    pub oracle_reference: Option<f64>,
}

pub fn success_criterion(required_sweeps: u64) -> String {
    format!("no sink and at least {required_sweeps} completed frontier sweep(s) within the horizon")
}

/// Splitmix64 mixing of a base seed with two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ a) ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn rollout_rng(seed: u64, rollout: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rollout as u64);
    rng
}

fn rollout(
    policy: &dyn Policy,
    product: &mut Product,
    cfg: &TestConfig,
    index: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<RolloutOutcome, EvalError> {
    let mut rng = rollout_rng(cfg.seed, index);
    let mut p = product.reset();
    let mut outcome = RolloutOutcome {
        rollout: index,
        success: false,
        steps: 0,
        sweeps_completed: 0,
        reached_sink: false,
    };
    while outcome.steps < cfg.horizon {
        let a = policy.action(p);
        let t = product.step(a, &mut rng)?;
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                episode: index,
                step: outcome.steps,
                row: p.s.row,
                col: p.s.col,
                q: p.q,
                action: a.name(product.spec()).to_string(),
                r: t.reward,
                gamma: t.gamma,
                done: t.done,
            });
        }
        outcome.steps += 1;
        p = t.next;
        if t.done {
            outcome.reached_sink = true;
            break;
        }
        if product.sweeps_completed() >= cfg.required_sweeps {
            outcome.success = true;
            break;
        }
    }
    outcome.sweeps_completed = product.sweeps_completed();
    Ok(outcome)
}

/// Greedy closed-loop rollouts. Rollout `i` draws from stream `i` of the seeded
/// generator, so results do not depend on thread scheduling.
pub fn run_test(
    policy: &dyn Policy,
    env: &GridEnv,
    spec: &Arc<LdbaSpec>,
    cfg: &TestConfig,
) -> Result<TestReport, EvalError> {
    cfg.validate()?;
    let base = Product::new(env.clone(), spec.clone(), RewardSpec::default())?;
    let per_rollout = (0..cfg.rollouts)
        .into_par_iter()
        .map_init(|| base.clone(), |product, i| rollout(policy, product, cfg, i, None))
        .collect::<Result<Vec<_>, _>>()?;
    let successes = per_rollout.iter().filter(|o| o.success).count();
    Ok(TestReport {
        config: cfg.clone(),
        criterion: success_criterion(cfg.required_sweeps),
        successes,
        success_rate: successes as f64 / cfg.rollouts as f64,
        per_rollout,
        oracle_reference: None,
    })
}

/// Trajectory of one greedy rollout, as CSV rows.
pub fn rollout_trace(
    policy: &dyn Policy,
    env: &GridEnv,
    spec: &Arc<LdbaSpec>,
    cfg: &TestConfig,
    index: usize,
) -> Result<(RolloutOutcome, Vec<TraceRow>), EvalError> {
    let mut product = Product::new(env.clone(), spec.clone(), RewardSpec::default())?;
    let mut rows = Vec::new();
    let outcome = rollout(policy, &mut product, cfg, index, Some(&mut rows))?;
    Ok((outcome, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub etas: Vec<f64>,
    pub mus: Vec<f64>,
    pub trainings: usize,
    pub tests: usize,
    /// Hyper-parameters shared by every cell; eta, mu and seed are overridden.
    pub base: Hyperparams,
    pub horizon: usize,
    pub required_sweeps: u64,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub eta: f64,
    pub mu: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Success rate of each training's final policy.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub overall_mean: f64,
    /// Mean of the per-cell standard errors.
    pub overall_stderr: f64,
    pub criterion: String,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,mu,mean,stderr\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", c.eta, c.mu, c.mean, c.stderr));
        }
        out.push_str(&format!("overall,overall,{:.6},{:.6}\n", self.overall_mean, self.overall_stderr));
        out
    }
}

/// Mean and standard error of the mean (sample standard deviation / sqrt(n)).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trains `trainings` policies per (eta, mu) cell and tests each with `tests` rollouts.
pub fn robustness_sweep(env: &GridEnv, spec: &Arc<LdbaSpec>, cfg: &SweepConfig) -> Result<SweepReport, EvalError> {
    if cfg.etas.is_empty() || cfg.mus.is_empty() || cfg.trainings == 0 || cfg.tests == 0 {
        return Err(EvalError::BadConfig("sweep grids and counts must be non-empty".into()));
    }
    let cells: Vec<(f64, f64)> = cfg
        .etas
        .iter()
        .flat_map(|&eta| cfg.mus.iter().map(move |&mu| (eta, mu)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trainings).map(move |t| (c, t)))
        .collect();

    let run_job = |&(c, t): &(usize, usize)| -> Result<f64, EvalError> {
        let (eta, mu) = cells[c];
        let hp = Hyperparams {
            discount_factor: eta,
            learning_rate: mu,
            seed: derive_seed(cfg.seed, c as u64, t as u64),
            ..cfg.base.clone()
        };
        let out = train(env, spec, &hp)?;
        let policy = greedy_policy(&out.q);
        let test = TestConfig {
            rollouts: cfg.tests,
            horizon: cfg.horizon,
            required_sweeps: cfg.required_sweeps,
            seed: derive_seed(hp.seed, u64::MAX, 0),
        };
        Ok(run_test(&policy, env, spec, &test)?.success_rate)
    };

    let rates: Vec<f64> = if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run_job).collect::<Result<_, _>>())?
    } else {
        jobs.par_iter().map(run_job).collect::<Result<_, _>>()?
    };

    let cells: Vec<SweepCell> = cells
        .iter()
        .enumerate()
        .map(|(c, &(eta, mu))| {
            let rs = rates[c * cfg.trainings..(c + 1) * cfg.trainings].to_vec();
            let (mean, stderr) = mean_stderr(&rs);
            SweepCell { eta, mu, mean, stderr, rates: rs }
        })
        .collect();
    let k = cells.len() as f64;
    Ok(SweepReport {
        overall_mean: cells.iter().map(|c| c.mean).sum::<f64>() / k,
        overall_stderr: cells.iter().map(|c| c.stderr).sum::<f64>() / k,
        cells,
        criterion: success_criterion(cfg.required_sweeps),
    })
}

//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each;
//! exits non-zero if any criterion fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ldba_synth_core::automaton::{LdbaSpec, SINK};
use ldba_synth_core::benchmarks::benchmark;
use ldba_synth_core::eval::{robustness_sweep, run_test, SweepConfig, TestConfig};
use ldba_synth_core::learner::{greedy_policy, train, Hyperparams};
use ldba_synth_core::oracle::{max_sat_probability, oracle, ExplicitProduct, DEFAULT_STATE_CAP};
use ldba_synth_core::product::{AugmentedAction, Product, ProductState, RewardSpec};

use common::{brute_force_values, random_product, random_task};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn oracle_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let (mut matched, mut worst, mut fractional) = (0, 0.0f64, 0);
    let total = 100;
    for i in 0..total {
        let product = if i < 65 {
            let n = rng.random_range(1..=12);
            random_product(&mut rng, n, 1, if n <= 7 { 3 } else { 2 })
        } else {
            let n = rng.random_range(1..=6);
            random_product(&mut rng, n, 2, 2)
        };
        let expected = brute_force_values(&product);
        if expected.iter().any(|&v| v > 1e-6 && v < 1.0 - 1e-6) {
            fractional += 1;
        }
        let (choices, membership, k) = product;
        let explicit = ExplicitProduct::from_parts(choices, membership, k, 0).expect("well-formed product");
        let got = max_sat_probability(&explicit).expect("oracle converges").values;
        let err = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if err <= 1e-8 {
            matched += 1;
        }
    }
    verdict(
        matched == total && fractional > total / 4,
        format!(
            "{matched}/{total} random products (65 single-set up to 12 states, 35 two-set up to 6; {fractional} with values strictly inside (0,1)) agree with policy enumeration; worst error {worst:.1e}"
        ),
    )
}

fn learner_oracle_agreement() -> Verdict {
    let b = benchmark("minecraft-t1").unwrap();
    let env = b.env().unwrap();
    let spec = b.ldba().unwrap();
    let shape = (env.num_states(), env.actions().len(), spec.states().len());
    let (_, res) = oracle(&env, &spec, DEFAULT_STATE_CAP).unwrap();
    let p0 = ProductState::new(env.initial_state(), spec.initial_state());
    let mut values = Vec::new();
    for seed in 0..10 {
        let hp = Hyperparams {
            seed,
            ..b.hyperparams()
        };
        values.push(train(&env, &spec, &hp).unwrap().q.max_value(p0));
    }
    let good = values
        .iter()
        .filter(|&&v| v >= 0.95 && (v - res.initial_value).abs() <= 0.05)
        .count();
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
    verdict(
        good >= 9 && res.initial_value == 1.0 && shape == (100, 5, 3),
        format!(
            "minecraft-t1 {shape:?}: oracle {:.4}; {good}/10 seeds within 0.05 and >= 0.95 (max Q: {})",
            res.initial_value,
            shown.join(" ")
        ),
    )
}

fn sequential_task_coverage() -> Verdict {
    let b = benchmark("slp-hard-sml").unwrap();
    let env = b.env().unwrap();
    let spec = b.ldba().unwrap();
    let hp = b.hyperparams();
    let out = train(&env, &spec, &hp).unwrap();
    let cfg = TestConfig {
        rollouts: 100,
        horizon: b.iteration_num_max,
        required_sweeps: 1,
        seed: 0,
    };
    let report = run_test(&greedy_policy(&out.q), &env, &spec, &cfg).unwrap();
    let shape = (env.num_states(), spec.states().len(), spec.accepting_sets().len());
    verdict(
        report.success_rate >= 0.90 && shape == (120, 5, 4),
        format!(
            "slp-hard-sml {shape:?}, {} episodes x {} steps: success rate {:.2} over {} rollouts",
            hp.episode_num, hp.iteration_num_max, report.success_rate, cfg.rollouts
        ),
    )
}

fn robustness_grid() -> Verdict {
    let b = benchmark("frozen-lake-1").unwrap();
    let grid = vec![0.2, 0.4, 0.6, 0.8, 0.99];
    let cfg = SweepConfig {
        etas: grid.clone(),
        mus: grid,
        trainings: 3,
        tests: 20,
        base: b.hyperparams(),
        horizon: b.iteration_num_max,
        required_sweeps: 1,
        seed: 0,
        workers: 4,
    };
    let report = robustness_sweep(&b.env().unwrap(), &b.ldba().unwrap(), &cfg).unwrap();
    let lo = report.cells.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
    let hi = report.cells.iter().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        report.overall_mean >= 0.85 && report.cells.len() == 25,
        format!(
            "frozen-lake-1 5x5 grid, 3 trainings x 20 tests: overall {:.2}% +- {:.2}% (cells {:.1}%..{:.1}%)",
            100.0 * report.overall_mean,
            100.0 * report.overall_stderr,
            100.0 * lo,
            100.0 * hi
        ),
    )
}

/// Random walk on the product of a random task; returns the transitions with the
/// action taken and the environment position before the step.
fn random_walk(
    env: &ldba_synth_core::envs::GridEnv,
    spec: &Arc<LdbaSpec>,
    eta: f64,
    seed: u64,
    steps: usize,
    mut check: impl FnMut(&Product, AugmentedAction, &ldba_synth_core::product::ProductTransition, &ChaCha8Rng, &ChaCha8Rng) -> Result<(), TestCaseError>,
) -> Result<(), TestCaseError> {
    let mut product = Product::new(env.clone(), spec.clone(), RewardSpec::new(eta)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut choose = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    product.reset();
    for _ in 0..steps {
        let q = product.state().q;
        let a = *product.available_actions(q).choose(&mut choose).unwrap();
        let before = product.clone();
        let rng_before = rng.clone();
        let t = product.step(a, &mut rng).unwrap();
        check(&before, a, &t, &rng_before, &rng)?;
        if t.done && choose.random_bool(0.2) {
            product.reset();
        }
    }
    Ok(())
}

fn reward_discount_coupling(seed: u64) -> Result<(), TestCaseError> {
    let (env, spec) = random_task(seed);
    let eta = 0.2 + 0.79 * (seed % 100) as f64 / 100.0;
    random_walk(&env, &spec, eta, seed, 300, |_, _, t, _, _| {
        prop_assert_eq!(t.gamma == eta, t.reward > 0.0);
        prop_assert!(t.gamma == eta || t.gamma == 1.0);
        prop_assert_eq!(t.reward > 0.0, t.fired);
        Ok(())
    })?;
    // the same coupling on logged rollout rows
    let policy = |p: ProductState| {
        if p.s.col.is_multiple_of(2) {
            AugmentedAction::Base(ldba_synth_core::envs::Action::Right)
        } else {
            AugmentedAction::Base(ldba_synth_core::envs::Action::Down)
        }
    };
    let cfg = TestConfig {
        rollouts: 1,
        horizon: 200,
        required_sweeps: u64::MAX,
        seed,
    };
    let product = Product::new(env.clone(), spec.clone(), RewardSpec::default()).unwrap();
    let default_eta = product.reward_spec().eta;
    let (_, rows) = ldba_synth_core::eval::rollout_trace(&policy, &env, &spec, &cfg, 0).unwrap();
    for r in rows {
        prop_assert_eq!(r.gamma == default_eta, r.r > 0.0);
    }
    Ok(())
}

fn frontier_conservation(seed: u64) -> Result<(), TestCaseError> {
    let (env, spec) = random_task(seed);
    let sets = spec.accepting_sets().to_vec();
    let all = (1u64 << sets.len()) - 1;
    let mut remaining = all;
    let mut sweeps = 0u64;
    let mut fired_since_reset = 0usize;
    let mut product = Product::new(env, spec.clone(), RewardSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    product.reset();
    for _ in 0..400 {
        let q = product.state().q;
        let a = *product.available_actions(q).choose(&mut rng).unwrap();
        let t = product.step(a, &mut rng).unwrap();
        let hit = (0..sets.len()).find(|&i| remaining & (1 << i) != 0 && sets[i].contains(&t.next.q));
        prop_assert_eq!(t.fired, hit.is_some());
        if let Some(i) = hit {
            remaining &= !(1 << i);
            fired_since_reset += 1;
            if remaining == 0 {
                prop_assert_eq!(fired_since_reset, sets.len());
                remaining = all;
                sweeps += 1;
                fired_since_reset = 0;
            }
        }
        let frontier = product.ldba().frontier();
        prop_assert_eq!(frontier.remaining_mask(), remaining);
        prop_assert!(remaining != 0 && remaining & !all == 0);
        prop_assert_eq!(product.sweeps_completed(), sweeps);
    }
    Ok(())
}

fn epsilon_purity(seed: u64) -> Result<(), TestCaseError> {
    let (env, spec) = random_task(seed);
    random_walk(&env, &spec, 0.9, seed, 300, |before, a, t, rng_before, rng_after| {
        if let AugmentedAction::Epsilon(id) = a {
            prop_assert_eq!(t.next.s, before.state().s);
            prop_assert_eq!(t.next.q, spec.epsilon(id).to);
            prop_assert!(rng_before == rng_after, "ε-step consumed randomness");
        }
        Ok(())
    })
}

fn sink_absorption(seed: u64) -> Result<(), TestCaseError> {
    let (env, spec) = random_task(seed);
    random_walk(&env, &spec, 0.9, seed, 300, |before, a, t, _, _| {
        prop_assert_eq!(t.done, t.next.q == SINK);
        if before.state().q == SINK {
            prop_assert!(matches!(a, AugmentedAction::Base(_)));
            prop_assert_eq!(t.next.q, SINK);
            prop_assert_eq!(t.reward, 0.0);
        }
        Ok(())
    })
}

fn small_hyperparams(seed: u64) -> Hyperparams {
    Hyperparams {
        episode_num: 15,
        iteration_num_max: 60,
        epsilon: 0.3,
        discount_factor: [0.2, 0.5, 0.9, 0.99][(seed % 4) as usize],
        learning_rate: [0.1, 0.5, 0.9, 1.0][((seed / 4) % 4) as usize],
        seed,
        ..Hyperparams::default()
    }
}

fn seed_determinism(seed: u64) -> Result<(), TestCaseError> {
    let (env, spec) = random_task(seed);
    let hp = small_hyperparams(seed);
    let a = train(&env, &spec, &hp).unwrap();
    let b = train(&env, &spec, &hp).unwrap();
    prop_assert!(a.q.bit_identical(&b.q));
    prop_assert_eq!(a.stats, b.stats);
    Ok(())
}

fn q_boundedness(seed: u64) -> Result<(), TestCaseError> {
    let (env, spec) = random_task(seed);
    let hp = small_hyperparams(seed);
    let bound = 1.0 / (1.0 - hp.discount_factor);
    let out = train(&env, &spec, &hp).unwrap();
    for (p, a, value, progress) in out.q.entries() {
        prop_assert!((0.0..=bound).contains(&value), "Q{:?},{:?} = {} outside [0, {}]", p, a, value, bound);
        prop_assert!((0.0..=bound).contains(&progress));
    }
    Ok(())
}

fn invariant_suites() -> Verdict {
    type Prop = fn(u64) -> Result<(), TestCaseError>;
    let props: [(&str, Prop); 6] = [
        ("reward-discount coupling", reward_discount_coupling),
        ("frontier conservation and sweep counting", frontier_conservation),
        ("epsilon purity", epsilon_purity),
        ("sink absorption", sink_absorption),
        ("seed determinism", seed_determinism),
        ("Q boundedness", q_boundedness),
    ];
    let mut failures = Vec::new();
    for (name, prop) in props {
        let mut runner = TestRunner::new(Config {
            cases: 128,
            failure_persistence: None,
            ..Config::default()
        });
        if let Err(e) = runner.run(&any::<u64>(), prop) {
            failures.push(format!("{name}: {e}"));
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "6 properties x 128 random tasks hold".to_string()
    } else {
        failures.join("; ")
    };
    verdict(pass, detail)
}

fn exclusions() -> Verdict {
    verdict(
        true,
        "not asserted: pacman-sml/lrg satisfaction values, continuous-space rows (mars-rover, cart-pole), wall-clock columns",
    )
}

fn main() {
    type Criterion = fn() -> Verdict;
    let criteria: [(&str, Duration, Criterion); 6] = [
        ("oracle correctness", Duration::from_secs(60), oracle_correctness),
        ("learner-oracle agreement", Duration::from_secs(5 * 60 * 10), learner_oracle_agreement),
        ("sequential-task coverage", Duration::from_secs(10 * 60), sequential_task_coverage),
        ("robustness grid", Duration::from_secs(30 * 60), robustness_grid),
        ("invariant suites", Duration::from_secs(2 * 60), invariant_suites),
        ("documented exclusions", Duration::from_secs(1), exclusions),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed < limit;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {} [{:.1}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

//! Shared generators and the brute-force reference oracle for integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ldba_synth_core::automaton::LdbaSpec;
use ldba_synth_core::envs::{Action, EnvState, GridEnv, LabelRegion, RegionMode, SlipMode};

/// A random small automaton over propositions `p0..p{k-1}`, with ordered guards
/// ending in a catch-all, optional ε-moves and one or two accepting sets.
pub fn random_spec(rng: &mut ChaCha8Rng) -> LdbaSpec {
    let nq = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let props: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    let target = |rng: &mut ChaCha8Rng| -> i32 {
        if rng.random_bool(0.15) {
            -1
        } else {
            rng.random_range(0..nq)
        }
    };
    let mut transitions = serde_json::Map::new();
    let mut epsilons = serde_json::Map::new();
    let mut eps_count = 0;
    for q in 0..nq {
        let mut rows = Vec::new();
        for _ in 0..rng.random_range(0..=2) {
            let mut lits = Vec::new();
            for p in &props {
                match rng.random_range(0..3) {
                    0 => lits.push(p.clone()),
                    1 => lits.push(format!("!{p}")),
                    _ => {}
                }
            }
            let guard = if lits.is_empty() { props[0].clone() } else { lits.join(" & ") };
            rows.push(json!({"guard": guard, "to": target(rng)}));
        }
        rows.push(json!({"guard": "true", "to": target(rng)}));
        transitions.insert(q.to_string(), json!(rows));
        if nq > 1 && rng.random_bool(0.3) {
            let to = (q + rng.random_range(1..nq)) % nq;
            epsilons.insert(q.to_string(), json!([{"name": format!("epsilon_{eps_count}"), "to": to}]));
            eps_count += 1;
        }
    }
    let num_sets = rng.random_range(1..=2);
    let states: Vec<i32> = (0..nq).collect();
    let sets: Vec<Vec<i32>> = (0..num_sets)
        .map(|_| {
            let mut set: Vec<i32> = states.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
            if set.is_empty() {
                set.push(*states.choose(rng).unwrap());
            }
            set
        })
        .collect();
    let doc = json!({
        "states": states,
        "initial_state": 0,
        "alphabet": props,
        "accepting_sets": sets,
        "transitions": transitions,
        "epsilon_transitions": epsilons,
    });
    LdbaSpec::from_json(&doc.to_string()).expect("generated spec is valid")
}

/// A random grid of at most 4x4 cells labelled with propositions `p0..p{k-1}`.
pub fn random_env(rng: &mut ChaCha8Rng, k: usize) -> GridEnv {
    let h = rng.random_range(1..=4);
    let w = rng.random_range(2..=4);
    let mut actions = Action::MOVES.to_vec();
    if rng.random_bool(0.5) {
        actions.push(Action::Stay);
    }
    let slip = *[0.0, 0.15, 0.5, 1.0].choose(rng).unwrap();
    let mode = if rng.random_bool(0.5) {
        SlipMode::PerpendicularOrStay
    } else {
        SlipMode::Perpendicular
    };
    let regions = (0..rng.random_range(0..=4))
        .map(|_| {
            let r0 = rng.random_range(0..h);
            let c0 = rng.random_range(0..w);
            LabelRegion {
                rows: [r0, rng.random_range(r0 + 1..=h)],
                cols: [c0, rng.random_range(c0 + 1..=w)],
                label: Some(format!("p{}", rng.random_range(0..k))),
                labels: vec![],
                mode: if rng.random_bool(0.5) { RegionMode::Replace } else { RegionMode::Add },
            }
        })
        .collect();
    let start = EnvState::new(rng.random_range(0..h), rng.random_range(0..w));
    GridEnv::new(None, h, w, actions, slip, mode, start, regions).expect("generated env is valid")
}

pub fn random_task(seed: u64) -> (GridEnv, Arc<LdbaSpec>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng);
    let env = random_env(&mut rng, spec.alphabet().len());
    (env, Arc::new(spec))
}

/// Successor distributions per state and choice, accepting-set bitmasks, set count.
pub type AbstractProduct = (Vec<Vec<Vec<(usize, f64)>>>, Vec<u64>, usize);

/// A random abstract product with `n` states and `num_sets` accepting sets. Each
/// state gets at most `max_choices` choices, each over at most three successors.
/// With three or more states the last one is a rejecting trap and (usually) the
/// one before it an accepting absorbing state; successors lean toward higher
/// indices and sometimes leak into the trap, so that most products have
/// transient states with values strictly between 0 and 1.
pub fn random_product(rng: &mut ChaCha8Rng, n: usize, num_sets: usize, max_choices: usize) -> AbstractProduct {
    let trap = (n >= 3).then(|| n - 1);
    let goal = (n >= 4).then(|| n - 2);
    let choices = (0..n)
        .map(|s| {
            if Some(s) == trap || (Some(s) == goal && rng.random_bool(0.7)) {
                return vec![vec![(s, 1.0)]];
            }
            (0..rng.random_range(1..=max_choices))
                .map(|_| {
                    let lo = if rng.random_bool(0.7) { s } else { 0 };
                    let mut targets: Vec<usize> = (lo..n).collect();
                    let m = rng.random_range(1..=3.min(targets.len()));
                    let (picked, _) = targets.partial_shuffle(rng, m);
                    let mut picked = picked.to_vec();
                    if let Some(t) = trap.filter(|t| !picked.contains(t) && rng.random_bool(0.3)) {
                        picked.push(t);
                    }
                    picked.sort_unstable();
                    let weights: Vec<f64> = picked.iter().map(|_| rng.random_range(0.05..1.0)).collect();
                    let total: f64 = weights.iter().sum();
                    picked.into_iter().zip(weights).map(|(t, w)| (t, w / total)).collect()
                })
                .collect()
        })
        .collect();
    let membership = (0..n)
        .map(|s| {
            if Some(s) == trap {
                return 0;
            }
            if Some(s) == goal {
                return (1u64 << num_sets) - 1;
            }
            (0..num_sets).fold(0u64, |m, i| if rng.random_bool(0.35) { m | (1 << i) } else { m })
        })
        .collect();
    (choices, membership, num_sets)
}

/// Maximal probability, per state, of visiting every accepting set infinitely
/// often, by exhaustive enumeration of deterministic memoryless policies.
///
/// Several sets are handled by pairing each state with a counter of the set being
/// waited for; the counter advances when the current state belongs to that set,
/// and the resulting single-set product is searched the same way.
pub fn brute_force_values(product: &AbstractProduct) -> Vec<f64> {
    let (choices, membership, k) = product;
    let (n, k) = (choices.len(), *k);
    let big = n * k;
    let succ_of = |s: usize, c: usize| -> Vec<(usize, f64)> {
        let (p, i) = (s / k, s % k);
        let next_i = if membership[p] & (1 << i) != 0 { (i + 1) % k } else { i };
        choices[p][c].iter().map(|&(t, pr)| (t * k + next_i, pr)).collect()
    };
    let accepting = |s: usize| s % k == k - 1 && membership[s / k] & (1 << (k - 1)) != 0;
    let radix: Vec<usize> = (0..big).map(|s| choices[s / k].len()).collect();
    let total: usize = radix.iter().product();
    assert!(total <= 1 << 16, "too many policies to enumerate: {total}");

    let mut best = vec![0.0f64; n];
    let mut policy = vec![0usize; big];
    for _ in 0..total {
        let mut p = vec![vec![0.0; big]; big];
        for s in 0..big {
            for (t, pr) in succ_of(s, policy[s]) {
                p[s][t] += pr;
            }
        }
        let values = reach_accepting_bsccs(&p, &accepting);
        for (q, b) in best.iter_mut().enumerate() {
            *b = b.max(values[q * k]);
        }
        for s in 0..big {
            policy[s] += 1;
            if policy[s] < radix[s] {
                break;
            }
            policy[s] = 0;
        }
    }
    best
}

/// Probability of ending in a bottom SCC that contains an accepting state.
fn reach_accepting_bsccs(p: &[Vec<f64>], accepting: &dyn Fn(usize) -> bool) -> Vec<f64> {
    let n = p.len();
    let mut reach: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || p[i][j] > 0.0).collect()).collect();
    for m in 0..n {
        for i in 0..n {
            if reach[i][m] {
                for j in 0..n {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let bottom = |s: usize| (0..n).all(|t| !reach[s][t] || reach[t][s]);
    let good: Vec<bool> = (0..n)
        .map(|s| bottom(s) && (0..n).any(|t| reach[s][t] && accepting(t)))
        .collect();
    let unknown: Vec<usize> = (0..n)
        .filter(|&s| !good[s] && (0..n).any(|t| reach[s][t] && good[t]))
        .collect();
    let mut x = vec![0.0; n];
    for s in 0..n {
        if good[s] {
            x[s] = 1.0;
        }
    }
    if unknown.is_empty() {
        return x;
    }
    let u = unknown.len();
    let a = DMatrix::from_fn(u, u, |i, j| f64::from(i == j) - p[unknown[i]][unknown[j]]);
    let b = DVector::from_fn(u, |i, _| (0..n).filter(|&t| good[t]).map(|t| p[unknown[i]][t]).sum());
    let sol = a.lu().solve(&b).expect("transient system is nonsingular");
    for (i, &s) in unknown.iter().enumerate() {
        x[s] = sol[i];
    }
    x
}

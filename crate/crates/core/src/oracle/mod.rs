//! Exact maximal satisfaction probability on the explicit product MDP.
//!
//! The product is materialized only here. Acceptance is generalized Büchi over
//! the automaton's accepting sets: a run is accepting iff it visits every set
//! infinitely often, so the answer is the maximal probability of reaching an end
//! component that intersects all of them.

mod mec;

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::automaton::{LdbaSpec, SINK};
use crate::envs::{enumerate_model, GridEnv};
use crate::learner::Policy;
use crate::product::{ActionSpace, AugmentedAction, ProductState};

pub use mec::{mec_decompose, Mec};

pub const DEFAULT_STATE_CAP: usize = 1_000_000;
pub const RESIDUAL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 1_000_000;
const OPTIMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("explicit product exceeds the state cap of {cap}")]
    SizeCap { cap: usize },
    #[error("value iteration did not converge within {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("invalid product: {0}")]
    Malformed(String),
}

/// One action of one product state and its successor distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    /// `None` for the self-loop of the collapsed sink and for products built from parts.
    pub action: Option<AugmentedAction>,
    /// Distinct successors, sorted by index.
    pub succ: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ExplicitProduct {
    states: Vec<Option<ProductState>>,
    index: HashMap<ProductState, usize>,
    choices: Vec<Vec<Choice>>,
    membership: Vec<u64>,
    num_sets: usize,
    initial: usize,
    sink: Option<usize>,
    space: Option<Arc<ActionSpace>>,
}

impl ExplicitProduct {
    /// Reachable part of env x automaton, explored breadth-first from the initial
    /// product state. All states whose automaton component is the sink collapse
    /// into one absorbing state.
    pub fn build(env: &GridEnv, spec: &LdbaSpec, state_cap: usize) -> Result<Self, OracleError> {
        let model = enumerate_model(env);
        let label_masks: Vec<u64> = model.labels.iter().map(|l| spec.label_mask(l)).collect();
        let space = Arc::new(ActionSpace::new(env.actions(), spec));

        let mut prod = ExplicitProduct {
            states: Vec::new(),
            index: HashMap::new(),
            choices: Vec::new(),
            membership: Vec::new(),
            num_sets: spec.accepting_sets().len(),
            initial: 0,
            sink: None,
            space: Some(space.clone()),
        };
        let mut queue = VecDeque::new();
        let p0 = ProductState::new(env.initial_state(), spec.initial_state());
        prod.intern(p0, spec, state_cap, &mut queue)?;

        while let Some(i) = queue.pop_front() {
            let p = prod.states[i].expect("queued states are never the sink");
            let cell = env.index(p.s);
            let mut row = Vec::new();
            for &a in space.actions(p.q) {
                let mut succ: Vec<(usize, f64)> = Vec::new();
                match a {
                    AugmentedAction::Base(act) => {
                        let ai = model.actions.iter().position(|&b| b == act).expect("env action");
                        for &(t, pr) in model.row(cell, ai) {
                            let q_next = spec.guard_successor(p.q, label_masks[t]);
                            let next = ProductState::new(env.state_at(t), q_next);
                            let j = prod.intern(next, spec, state_cap, &mut queue)?;
                            match succ.iter_mut().find(|(u, _)| *u == j) {
                                Some(e) => e.1 += pr,
                                None => succ.push((j, pr)),
                            }
                        }
                    }
                    AugmentedAction::Epsilon(id) => {
                        let next = ProductState::new(p.s, spec.epsilon(id).to);
                        succ.push((prod.intern(next, spec, state_cap, &mut queue)?, 1.0));
                    }
                }
                succ.sort_by_key(|(u, _)| *u);
                row.push(Choice { action: Some(a), succ });
            }
            prod.choices[i] = row;
        }
        Ok(prod)
    }

    fn intern(
        &mut self,
        p: ProductState,
        spec: &LdbaSpec,
        cap: usize,
        queue: &mut VecDeque<usize>,
    ) -> Result<usize, OracleError> {
        if p.q == SINK {
            if let Some(i) = self.sink {
                return Ok(i);
            }
        } else if let Some(&i) = self.index.get(&p) {
            return Ok(i);
        }
        let i = self.states.len();
        if i >= cap {
            return Err(OracleError::SizeCap { cap });
        }
        if p.q == SINK {
            self.sink = Some(i);
            self.states.push(None);
            self.membership.push(0);
            self.choices.push(vec![Choice {
                action: None,
                succ: vec![(i, 1.0)],
            }]);
        } else {
            self.index.insert(p, i);
            self.states.push(Some(p));
            self.membership.push(spec.membership(p.q));
            self.choices.push(Vec::new());
            queue.push_back(i);
        }
        Ok(i)
    }

    /// Abstract product: `choices[s][c]` is the successor distribution of choice `c`
    /// in state `s`; `membership[s]` is a bitmask over `num_sets` accepting sets.
    pub fn from_parts(
        choices: Vec<Vec<Vec<(usize, f64)>>>,
        membership: Vec<u64>,
        num_sets: usize,
        initial: usize,
    ) -> Result<Self, OracleError> {
        let n = choices.len();
        let bad = |m: String| Err(OracleError::Malformed(m));
        if membership.len() != n || initial >= n || num_sets == 0 || num_sets > 64 {
            return bad("inconsistent sizes".into());
        }
        let mut rows = Vec::with_capacity(n);
        for (s, cs) in choices.into_iter().enumerate() {
            if cs.is_empty() {
                return bad(format!("state {s} has no choices"));
            }
            let mut row = Vec::with_capacity(cs.len());
            for mut succ in cs {
                let sum: f64 = succ.iter().map(|(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-12 || succ.iter().any(|&(t, p)| t >= n || p < 0.0) {
                    return bad(format!("state {s}: not a distribution"));
                }
                succ.sort_by_key(|(t, _)| *t);
                row.push(Choice { action: None, succ });
            }
            rows.push(row);
        }
        Ok(ExplicitProduct {
            states: vec![None; n],
            index: HashMap::new(),
            choices: rows,
            membership,
            num_sets,
            initial,
            sink: None,
            space: None,
        })
    }

    pub fn num_states(&self) -> usize {
        self.choices.len()
    }

    pub fn num_choices(&self) -> usize {
        self.choices.iter().map(Vec::len).sum()
    }

    pub fn choices(&self, s: usize) -> &[Choice] {
        &self.choices[s]
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn sink(&self) -> Option<usize> {
        self.sink
    }

    /// Product state behind index `i`; `None` for the collapsed sink and abstract products.
    pub fn state(&self, i: usize) -> Option<ProductState> {
        self.states[i]
    }

    pub fn index_of(&self, p: ProductState) -> Option<usize> {
        if p.q == SINK {
            self.sink
        } else {
            self.index.get(&p).copied()
        }
    }

    pub fn membership(&self, s: usize) -> u64 {
        self.membership[s]
    }

    pub fn num_sets(&self) -> usize {
        self.num_sets
    }

    fn all_sets(&self) -> u64 {
        if self.num_sets == 64 {
            u64::MAX
        } else {
            (1u64 << self.num_sets) - 1
        }
    }

    /// Whether an end component meets every accepting set.
    pub fn is_accepting_mec(&self, mec: &Mec) -> bool {
        mec.states.iter().fold(0, |m, &s| m | self.membership[s]) == self.all_sets()
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Maximal satisfaction probability per product state index.
    pub values: Vec<f64>,
    pub initial_value: f64,
    /// An optimal memoryless choice per state (index into `choices(s)`).
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub accepting_mecs: usize,
}

impl OracleResult {
    pub fn value_of(&self, prod: &ExplicitProduct, p: ProductState) -> Option<f64> {
        prod.index_of(p).map(|i| self.values[i])
    }
}

/// Builds the product and solves it.
pub fn oracle(env: &GridEnv, spec: &LdbaSpec, state_cap: usize) -> Result<(ExplicitProduct, OracleResult), OracleError> {
    let prod = ExplicitProduct::build(env, spec, state_cap)?;
    let res = max_sat_probability(&prod)?;
    Ok((prod, res))
}

pub fn max_sat_probability(prod: &ExplicitProduct) -> Result<OracleResult, OracleError> {
    let n = prod.num_states();
    let mecs = mec_decompose(prod);
    let accepting: Vec<&Mec> = mecs.iter().filter(|m| prod.is_accepting_mec(m)).collect();
    let mut target = vec![false; n];
    for m in &accepting {
        for &s in &m.states {
            target[s] = true;
        }
    }

    let preds = predecessors(prod);
    let can_reach = backward_reach(n, &preds, &target, |_, _| true);
    let almost_sure = prob1e(prod, &preds, &target);

    let mut values = vec![0.0; n];
    let mut open = Vec::new();
    for s in 0..n {
        if almost_sure[s] {
            values[s] = 1.0;
        } else if can_reach[s] {
            open.push(s);
        }
    }

    let mut iterations = 0;
    loop {
        if iterations >= MAX_ITERATIONS {
            let residual = gs_sweep(prod, &open, &mut values);
            return Err(OracleError::NonConvergence { iterations, residual });
        }
        iterations += 1;
        if gs_sweep(prod, &open, &mut values) < RESIDUAL {
            break;
        }
    }

    let policy = extract_policy(prod, &values, &accepting, &preds);
    Ok(OracleResult {
        initial_value: values[prod.initial],
        values,
        policy,
        iterations,
        accepting_mecs: accepting.len(),
    })
}

fn gs_sweep(prod: &ExplicitProduct, open: &[usize], values: &mut [f64]) -> f64 {
    let mut residual: f64 = 0.0;
    for &s in open {
        let best = prod.choices[s]
            .iter()
            .map(|c| c.succ.iter().map(|&(t, p)| p * values[t]).sum::<f64>())
            .fold(0.0, f64::max)
            .min(1.0);
        residual = residual.max((best - values[s]).abs());
        values[s] = best;
    }
    residual
}

/// `preds[t]` lists the (state, choice) pairs with `t` in their support.
fn predecessors(prod: &ExplicitProduct) -> Vec<Vec<(usize, usize)>> {
    let mut preds = vec![Vec::new(); prod.num_states()];
    for s in 0..prod.num_states() {
        for (c, ch) in prod.choices[s].iter().enumerate() {
            for &(t, _) in &ch.succ {
                preds[t].push((s, c));
            }
        }
    }
    preds
}

fn backward_reach(
    n: usize,
    preds: &[Vec<(usize, usize)>],
    target: &[bool],
    edge_ok: impl Fn(usize, usize) -> bool,
) -> Vec<bool> {
    let mut seen = target.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| target[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, c) in &preds[t] {
            if !seen[s] && edge_ok(s, c) {
                seen[s] = true;
                queue.push_back(s);
            }
        }
    }
    seen
}

/// States from which some policy reaches the target with probability 1
/// (greatest fixpoint of "can reach the target while staying in the set").
fn prob1e(prod: &ExplicitProduct, preds: &[Vec<(usize, usize)>], target: &[bool]) -> Vec<bool> {
    let n = prod.num_states();
    let mut u = vec![true; n];
    loop {
        let inside = |s: usize, c: usize| prod.choices[s][c].succ.iter().all(|&(t, _)| u[t]);
        let r = backward_reach(n, preds, target, |s, c| u[s] && inside(s, c));
        let next: Vec<bool> = (0..n).map(|s| u[s] && r[s]).collect();
        if next == u {
            return u;
        }
        u = next;
    }
}

fn extract_policy(
    prod: &ExplicitProduct,
    values: &[f64],
    accepting: &[&Mec],
    preds: &[Vec<(usize, usize)>],
) -> Vec<usize> {
    let n = prod.num_states();
    let mut policy = vec![0usize; n];
    let mut ranked = vec![false; n];

    // Inside an accepting component: stay within it and keep returning to an anchor
    // state drawn from the first accepting set the component meets.
    for mec in accepting {
        let anchor = mec
            .states
            .iter()
            .copied()
            .find(|&s| prod.membership[s] & 1 != 0)
            .unwrap_or(mec.states[0]);
        policy[anchor] = mec.actions_of(anchor).unwrap()[0];
        let mut in_mec_ranked = vec![false; n];
        in_mec_ranked[anchor] = true;
        let mut queue = VecDeque::from([anchor]);
        while let Some(t) = queue.pop_front() {
            for &(s, c) in &preds[t] {
                if in_mec_ranked[s] {
                    continue;
                }
                if mec.actions_of(s).is_some_and(|acts| acts.contains(&c)) {
                    in_mec_ranked[s] = true;
                    policy[s] = c;
                    queue.push_back(s);
                }
            }
        }
        for &s in &mec.states {
            ranked[s] = true;
        }
    }

    // Elsewhere: among value-optimal choices, pick one that moves closer to the target.
    let optimal = |s: usize, c: usize| {
        let v: f64 = prod.choices[s][c].succ.iter().map(|&(t, p)| p * values[t]).sum();
        v >= values[s] - OPTIMAL_TOL
    };
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| ranked[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, c) in &preds[t] {
            if !ranked[s] && values[s] > 0.0 && optimal(s, c) {
                ranked[s] = true;
                policy[s] = c;
                queue.push_back(s);
            }
        }
    }
    policy
}

/// Oracle-optimal memoryless policy lifted back to product states.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    choice: HashMap<ProductState, AugmentedAction>,
    space: Arc<ActionSpace>,
}

impl OraclePolicy {
    pub fn new(prod: &ExplicitProduct, res: &OracleResult) -> Option<Self> {
        let space = prod.space.clone()?;
        let choice = prod
            .index
            .iter()
            .filter_map(|(&p, &i)| prod.choices[i][res.policy[i]].action.map(|a| (p, a)))
            .collect();
        Some(OraclePolicy { choice, space })
    }
}

impl Policy for OraclePolicy {
    fn action(&self, p: ProductState) -> AugmentedAction {
        self.choice
            .get(&p)
            .copied()
            .unwrap_or_else(|| self.space.actions(p.q)[0])
    }
}

/// CSV dump of the value vector: `index,s.row,s.col,q,value`.
pub fn values_csv(prod: &ExplicitProduct, res: &OracleResult) -> String {
    let mut out = String::from("index,s.row,s.col,q,value\n");
    for (i, v) in res.values.iter().enumerate() {
        match prod.state(i) {
            Some(p) => writeln!(out, "{i},{},{},{},{v}", p.s.row, p.s.col, p.q),
            None => writeln!(out, "{i},,,{SINK},{v}"),
        }
        .unwrap();
    }
    out
}

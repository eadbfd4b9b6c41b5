use std::collections::HashMap;
use std::sync::Arc;

use crate::product::{ActionSpace, AugmentedAction, ProductState};

#[derive(Debug, Clone, PartialEq)]
struct Row {
    values: Vec<f64>,
    progress: Vec<f64>,
    visits: Vec<u32>,
}

pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-3;

/// Sparse action-value table over product states.
///
/// Rows are allocated on first write; a pair counts as an entry once it has been
/// written. Absent pairs read as `q_init`.
///
/// Each pair also carries a progress value: the same backup with a discount
/// below one on unrewarded steps, averaged over visits rather than blended. With the undiscounted neutral steps of the
/// main update, every action that keeps satisfaction possible converges to the
/// same value, so the main values alone cannot tell a step toward the goal from a
/// step into a wall. The greedy choice therefore takes the actions whose value is
/// within `tie_tolerance * |max|` of the maximum and, among those, the one with
/// the largest progress value; remaining ties go to the lowest index.
#[derive(Debug, Clone)]
pub struct QTable {
    space: Arc<ActionSpace>,
    q_init: f64,
    tie_tolerance: f64,
    rows: HashMap<ProductState, Row>,
}

impl QTable {
    pub fn new(space: Arc<ActionSpace>, q_init: f64) -> Self {
        Self::with_tolerance(space, q_init, DEFAULT_TIE_TOLERANCE)
    }

    pub fn with_tolerance(space: Arc<ActionSpace>, q_init: f64, tie_tolerance: f64) -> Self {
        QTable {
            space,
            q_init,
            tie_tolerance,
            rows: HashMap::new(),
        }
    }

    pub fn tie_tolerance(&self) -> f64 {
        self.tie_tolerance
    }

    pub fn action_space(&self) -> &Arc<ActionSpace> {
        &self.space
    }

    pub fn q_init(&self) -> f64 {
        self.q_init
    }

    fn index_of(&self, p: ProductState, a: AugmentedAction) -> usize {
        self.space
            .actions(p.q)
            .iter()
            .position(|&b| b == a)
            .unwrap_or_else(|| panic!("action {a:?} not available in automaton state {}", p.q))
    }

    fn row_mut(&mut self, p: ProductState) -> &mut Row {
        let n = self.space.actions(p.q).len();
        let q_init = self.q_init;
        self.rows.entry(p).or_insert_with(|| Row {
            values: vec![q_init; n],
            progress: vec![q_init; n],
            visits: vec![0; n],
        })
    }

    pub fn get(&self, p: ProductState, a: AugmentedAction) -> f64 {
        match self.rows.get(&p) {
            Some(row) => row.values[self.index_of(p, a)],
            None => self.q_init,
        }
    }

    /// Values of all actions available in `p`, in action-space order.
    pub fn values(&self, p: ProductState) -> Vec<f64> {
        match self.rows.get(&p) {
            Some(row) => row.values.clone(),
            None => vec![self.q_init; self.space.actions(p.q).len()],
        }
    }

    pub fn progress(&self, p: ProductState, a: AugmentedAction) -> f64 {
        match self.rows.get(&p) {
            Some(row) => row.progress[self.index_of(p, a)],
            None => self.q_init,
        }
    }

    pub fn visits(&self, p: ProductState, a: AugmentedAction) -> u32 {
        match self.rows.get(&p) {
            Some(row) => row.visits[self.index_of(p, a)],
            None => 0,
        }
    }

    pub fn set(&mut self, p: ProductState, a: AugmentedAction, value: f64) {
        assert!(value.is_finite(), "Q values must be finite");
        let i = self.index_of(p, a);
        let row = self.row_mut(p);
        row.values[i] = value;
        row.visits[i] = row.visits[i].max(1);
    }

    pub fn set_progress(&mut self, p: ProductState, a: AugmentedAction, value: f64) {
        assert!(value.is_finite(), "progress values must be finite");
        let i = self.index_of(p, a);
        let row = self.row_mut(p);
        row.progress[i] = value;
        row.visits[i] = row.visits[i].max(1);
    }

    /// Progress value of the greedy action in `p`.
    pub fn greedy_progress(&self, p: ProductState) -> f64 {
        match self.rows.get(&p) {
            Some(row) => row.progress[self.greedy_index(p)],
            None => self.q_init,
        }
    }

    /// Moves the progress value toward `target` with step `1 / visits`, so it tracks
    /// the running mean of its targets. Call after `blend` has counted the visit.
    pub(crate) fn average_progress(&mut self, p: ProductState, a: AugmentedAction, target: f64) {
        let i = self.index_of(p, a);
        let row = self.row_mut(p);
        let step = 1.0 / f64::from(row.visits[i].max(1));
        row.progress[i] += step * (target - row.progress[i]);
    }

    /// Q(p,a) <- (1-mu) Q(p,a) + mu target, counting one visit.
    pub(crate) fn blend(&mut self, p: ProductState, a: AugmentedAction, target: f64, mu: f64) -> f64 {
        let i = self.index_of(p, a);
        let row = self.row_mut(p);
        let v = (1.0 - mu) * row.values[i] + mu * target;
        debug_assert!(v.is_finite());
        row.values[i] = v;
        row.visits[i] = row.visits[i].saturating_add(1);
        v
    }

    pub fn max_value(&self, p: ProductState) -> f64 {
        match self.rows.get(&p) {
            Some(row) => row.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            None => self.q_init,
        }
    }

    /// Index of the first maximal action in `p`.
    pub fn argmax_index(&self, p: ProductState) -> usize {
        match self.rows.get(&p) {
            Some(row) => {
                let mut best = 0;
                for (i, &v) in row.values.iter().enumerate().skip(1) {
                    if v > row.values[best] {
                        best = i;
                    }
                }
                best
            }
            None => 0,
        }
    }

    /// Indices of the greedy candidates in `p`: actions within the tie tolerance of
    /// the maximal value that share the largest progress value among those.
    pub fn greedy_candidates(&self, p: ProductState) -> Vec<usize> {
        let Some(row) = self.rows.get(&p) else {
            return (0..self.space.actions(p.q).len()).collect();
        };
        let max = row.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor = max - self.tie_tolerance * max.abs();
        let near: Vec<usize> = (0..row.values.len()).filter(|&i| row.values[i] >= floor).collect();
        let best = near.iter().map(|&i| row.progress[i]).fold(f64::NEG_INFINITY, f64::max);
        near.into_iter().filter(|&i| row.progress[i] == best).collect()
    }

    /// The greedy action index: first of `greedy_candidates`.
    pub fn greedy_index(&self, p: ProductState) -> usize {
        match self.rows.get(&p) {
            Some(_) => self.greedy_candidates(p)[0],
            None => 0,
        }
    }

    /// Number of visited (state, action) pairs.
    pub fn len(&self) -> usize {
        self.rows
            .values()
            .map(|r| r.visits.iter().filter(|&&v| v > 0).count())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    /// Visited entries sorted by (row, col, q, action index): state, action, value, progress.
    pub fn entries(&self) -> Vec<(ProductState, AugmentedAction, f64, f64)> {
        let mut keys: Vec<&ProductState> = self.rows.keys().collect();
        keys.sort_by_key(|p| (p.s.row, p.s.col, p.q));
        let mut out = Vec::new();
        for p in keys {
            let row = &self.rows[p];
            for (i, &a) in self.space.actions(p.q).iter().enumerate() {
                if row.visits[i] > 0 {
                    out.push((*p, a, row.values[i], row.progress[i]));
                }
            }
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        self.q_init *= c;
        for row in self.rows.values_mut() {
            for v in row.values.iter_mut().chain(row.progress.iter_mut()) {
                *v *= c;
            }
        }
    }

    /// Same entries with bit-for-bit equal values and visit counts.
    pub fn bit_identical(&self, other: &QTable) -> bool {
        self.q_init.to_bits() == other.q_init.to_bits()
            && self.rows.len() == other.rows.len()
            && self.rows.iter().all(|(p, row)| {
                other.rows.get(p).is_some_and(|o| {
                    let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits());
                    o.visits == row.visits && same(&o.values, &row.values) && same(&o.progress, &row.progress)
                })
            })
    }

    /// Smallest and largest stored value.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let mut it = self.entries().into_iter().map(|(_, _, v, _)| v);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// A stationary deterministic policy on product states.
pub trait Policy: Sync {
    fn action(&self, p: ProductState) -> AugmentedAction;
}

/// Pointwise greedy choice of a Q-table (see [`QTable`] for the tie rule).
/// Unvisited states map to their first available action.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    space: Arc<ActionSpace>,
    choice: HashMap<ProductState, AugmentedAction>,
}

impl GreedyPolicy {
    pub fn from_table(q: &QTable) -> Self {
        let choice = q
            .rows
            .keys()
            .map(|&p| (p, q.space.actions(p.q)[q.greedy_index(p)]))
            .collect();
        GreedyPolicy {
            space: q.space.clone(),
            choice,
        }
    }

    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }
}

impl Policy for GreedyPolicy {
    fn action(&self, p: ProductState) -> AugmentedAction {
        self.choice
            .get(&p)
            .copied()
            .unwrap_or_else(|| self.space.actions(p.q)[0])
    }
}

impl<F: Fn(ProductState) -> AugmentedAction + Sync> Policy for F {
    fn action(&self, p: ProductState) -> AugmentedAction {
        self(p)
    }
}

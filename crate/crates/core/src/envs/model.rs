use super::{Action, GridEnv};
use crate::automaton::LabelSet;

/// Explicit transition kernel of a grid environment.
///
/// `row(s, a)` lists `(successor index, probability)` pairs with distinct successors,
/// sorted by successor index.
#[derive(Debug, Clone)]
pub struct ExplicitModel {
    pub num_states: usize,
    pub actions: Vec<Action>,
    rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<LabelSet>,
}

impl ExplicitModel {
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[s * self.actions.len() + a]
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dense_row(&self, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        for &(t, p) in self.row(s, a) {
            out[t] = p;
        }
        out
    }
}

pub fn enumerate_model(env: &GridEnv) -> ExplicitModel {
    let n = env.num_states();
    let mut rows = Vec::with_capacity(n * env.actions().len());
    for idx in 0..n {
        let s = env.state_at(idx);
        for &a in env.actions() {
            let (outcomes, k) = env.outcomes(s, a);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(k);
            for &(t, p) in &outcomes[..k] {
                let ti = env.index(t);
                match row.iter_mut().find(|(u, _)| *u == ti) {
                    Some(entry) => entry.1 += p,
                    None => row.push((ti, p)),
                }
            }
            row.sort_by_key(|(t, _)| *t);
            rows.push(row);
        }
    }
    ExplicitModel {
        num_states: n,
        actions: env.actions().to_vec(),
        rows,
        labels: (0..n).map(|i| env.state_label(env.state_at(i)).clone()).collect(),
    }
}

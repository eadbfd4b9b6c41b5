use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::ExplicitProduct;

/// A maximal end component: its states (sorted) and, per state, the choice
/// indices that keep play inside the component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mec {
    pub states: Vec<usize>,
    pub actions: Vec<Vec<usize>>,
}

impl Mec {
    pub fn contains(&self, s: usize) -> bool {
        self.states.binary_search(&s).is_ok()
    }

    pub fn actions_of(&self, s: usize) -> Option<&[usize]> {
        self.states
            .binary_search(&s)
            .ok()
            .map(|i| self.actions[i].as_slice())
    }
}

/// Maximal end components by iterated SCC refinement: drop every choice that can
/// leave its SCC, drop states with no choice left, and repeat until stable.
pub fn mec_decompose(prod: &ExplicitProduct) -> Vec<Mec> {
    let n = prod.num_states();
    let mut allowed: Vec<Vec<usize>> = (0..n).map(|s| (0..prod.choices(s).len()).collect()).collect();
    let mut alive = vec![true; n];
    let mut scc_of = vec![usize::MAX; n];

    loop {
        let mut graph: DiGraph<usize, ()> = DiGraph::with_capacity(n, 0);
        let nodes: Vec<NodeIndex> = (0..n).map(|s| graph.add_node(s)).collect();
        for s in (0..n).filter(|&s| alive[s]) {
            for &c in &allowed[s] {
                for &(t, _) in &prod.choices(s)[c].succ {
                    if alive[t] {
                        graph.update_edge(nodes[s], nodes[t], ());
                    }
                }
            }
        }
        scc_of.iter_mut().for_each(|x| *x = usize::MAX);
        for (id, comp) in tarjan_scc(&graph).into_iter().enumerate() {
            for node in comp {
                let s = graph[node];
                if alive[s] {
                    scc_of[s] = id;
                }
            }
        }

        let mut changed = false;
        for s in 0..n {
            if !alive[s] {
                continue;
            }
            let before = allowed[s].len();
            allowed[s].retain(|&c| {
                prod.choices(s)[c]
                    .succ
                    .iter()
                    .all(|&(t, _)| alive[t] && scc_of[t] == scc_of[s])
            });
            if allowed[s].len() != before {
                changed = true;
            }
            if allowed[s].is_empty() {
                alive[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for s in (0..n).filter(|&s| alive[s]) {
        groups.entry(scc_of[s]).or_default().push(s);
    }
    let mut mecs: Vec<Mec> = groups
        .into_values()
        .map(|states| Mec {
            actions: states.iter().map(|&s| allowed[s].clone()).collect(),
            states,
        })
        .collect();
    mecs.sort_by_key(|m| m.states[0]);
    mecs
}

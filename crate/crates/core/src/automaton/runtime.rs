use std::sync::Arc;

use thiserror::Error;

use super::guard::LabelSet;
use super::spec::{EpsilonId, LdbaSpec, StateId, SINK};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("epsilon-transition '{name}' is not available in automaton state {state}")]
    EpsilonUnavailable { name: String, state: StateId },
    #[error("label set carries more than one epsilon name")]
    MultipleEpsilons,
}

/// Accepting sets not yet visited in the current sweep.
///
/// Stored as a bitmask over `LdbaSpec::accepting_sets`; removal always takes the
/// lowest-indexed set containing the visited state, so the list order is preserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrontierState {
    remaining: u64,
    sweeps_completed: u64,
}

impl FrontierState {
    pub fn new(spec: &LdbaSpec) -> Self {
        FrontierState {
            remaining: spec.all_sets_mask(),
            sweeps_completed: 0,
        }
    }

    pub fn remaining_mask(&self) -> u64 {
        self.remaining
    }

    /// Indices into `spec.accepting_sets()` still awaiting a visit.
    pub fn remaining_indices(&self) -> Vec<usize> {
        (0..64).filter(|i| self.remaining & (1 << i) != 0).collect()
    }

    pub fn remaining<'a>(&self, spec: &'a LdbaSpec) -> Vec<&'a [StateId]> {
        self.remaining_indices()
            .into_iter()
            .map(|i| spec.accepting_sets()[i].as_slice())
            .collect()
    }

    pub fn sweeps_completed(&self) -> u64 {
        self.sweeps_completed
    }

    /// Records a visit to `q`. Returns whether an accepting set was ticked off
    /// (the reward signal).
    pub fn update(&mut self, q: StateId, spec: &LdbaSpec) -> bool {
        let hit = self.remaining & spec.membership(q);
        if hit == 0 {
            return false;
        }
        self.remaining &= !(hit & hit.wrapping_neg());
        if self.remaining == 0 {
            self.remaining = spec.all_sets_mask();
            self.sweeps_completed += 1;
        }
        true
    }
}

/// Functional form of [`FrontierState::update`].
pub fn frontier_update(f: FrontierState, q: StateId, spec: &LdbaSpec) -> (FrontierState, bool) {
    let mut next = f;
    let fired = next.update(q, spec);
    (next, fired)
}

/// Mutable automaton execution state: current state plus accepting frontier.
#[derive(Debug, Clone)]
pub struct LdbaRuntime {
    spec: Arc<LdbaSpec>,
    state: StateId,
    frontier: FrontierState,
}

impl LdbaRuntime {
    pub fn new(spec: Arc<LdbaSpec>) -> Self {
        let frontier = FrontierState::new(&spec);
        let state = spec.initial_state();
        LdbaRuntime {
            spec,
            state,
            frontier,
        }
    }

    pub fn spec(&self) -> &Arc<LdbaSpec> {
        &self.spec
    }

    pub fn state(&self) -> StateId {
        self.state
    }

    pub fn frontier(&self) -> &FrontierState {
        &self.frontier
    }

    pub fn reset(&mut self) {
        self.state = self.spec.initial_state();
        self.frontier = FrontierState::new(&self.spec);
    }

    /// Consumes one label set. A label set carrying an ε-name fires that ε-transition
    /// instead of evaluating guards.
    pub fn step(&mut self, labels: &LabelSet) -> Result<StateId, StepError> {
        let mask = self.spec.label_mask(labels);
        self.step_mask(mask)
    }

    pub fn step_mask(&mut self, mask: u64) -> Result<StateId, StepError> {
        let eps_bits = mask & !self.spec.alphabet_mask();
        if eps_bits == 0 || self.state == SINK {
            self.state = self.spec.guard_successor(self.state, mask);
            return Ok(self.state);
        }
        if eps_bits.count_ones() > 1 {
            return Err(StepError::MultipleEpsilons);
        }
        let id = self
            .spec
            .epsilons_from(self.state)
            .iter()
            .copied()
            .find(|&id| self.spec.epsilon_bit(id) == eps_bits);
        match id {
            Some(id) => self.take_epsilon(id),
            None => {
                let bit = eps_bits.trailing_zeros() as usize - self.spec.alphabet().len();
                Err(StepError::EpsilonUnavailable {
                    name: self.spec.epsilons()[bit].name.clone(),
                    state: self.state,
                })
            }
        }
    }

    /// Fires ε-transition `id` from the current state.
    pub fn take_epsilon(&mut self, id: EpsilonId) -> Result<StateId, StepError> {
        let eps = self.spec.epsilon(id);
        if eps.from != self.state {
            return Err(StepError::EpsilonUnavailable {
                name: eps.name.clone(),
                state: self.state,
            });
        }
        self.state = eps.to;
        Ok(self.state)
    }

    /// Updates the frontier with the current state.
    pub fn accepting_frontier_function(&mut self) -> bool {
        self.frontier.update(self.state, &self.spec)
    }
}

//! On-the-fly synchronization of a grid environment with an automaton.
//!
//! The environment moves first and the automaton then reads the label of the cell
//! that was entered. ε-transitions of the automaton are exposed as extra actions that
//! leave the environment untouched.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::{EpsilonId, LdbaRuntime, LdbaSpec, StateId, SINK};
use crate::envs::{Action, EnvError, EnvState, GridEnv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProductState {
    pub s: EnvState,
    pub q: StateId,
}

impl ProductState {
    pub fn new(s: EnvState, q: StateId) -> Self {
        ProductState { s, q }
    }
}

impl fmt::Display for ProductState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}; q={})", self.s.row, self.s.col, self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentedAction {
    Base(Action),
    Epsilon(EpsilonId),
}

impl AugmentedAction {
    pub fn name<'a>(&self, spec: &'a LdbaSpec) -> &'a str {
        match self {
            AugmentedAction::Base(a) => a.name(),
            AugmentedAction::Epsilon(id) => &spec.epsilon(*id).name,
        }
    }

    /// Inverse of [`AugmentedAction::name`].
    pub fn parse(name: &str, spec: &LdbaSpec) -> Option<Self> {
        if let Ok(a) = name.parse::<Action>() {
            return Some(AugmentedAction::Base(a));
        }
        spec.epsilon_by_name(name).map(AugmentedAction::Epsilon)
    }
}

/// Augmented action lists for every automaton state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    states: Vec<StateId>,
    base: Vec<AugmentedAction>,
    by_state: Vec<Vec<AugmentedAction>>,
}

impl ActionSpace {
    pub fn new(env_actions: &[Action], spec: &LdbaSpec) -> Self {
        let base: Vec<AugmentedAction> = env_actions.iter().map(|&a| AugmentedAction::Base(a)).collect();
        let by_state = spec
            .states()
            .iter()
            .map(|&q| {
                let mut acts = base.clone();
                acts.extend(spec.epsilons_from(q).iter().map(|&e| AugmentedAction::Epsilon(e)));
                acts
            })
            .collect();
        ActionSpace {
            states: spec.states().to_vec(),
            base,
            by_state,
        }
    }

    /// Base environment actions followed by one action per ε-transition leaving `q`.
    /// The sink (and any unknown state) gets the base actions only.
    #[inline]
    pub fn actions(&self, q: StateId) -> &[AugmentedAction] {
        match self.states.binary_search(&q) {
            Ok(i) => &self.by_state[i],
            Err(_) => &self.base,
        }
    }

    pub fn base(&self) -> &[AugmentedAction] {
        &self.base
    }

    pub fn max_actions(&self) -> usize {
        self.by_state.iter().map(Vec::len).max().unwrap_or(0).max(self.base.len())
    }
}

/// Reward shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub positive_reward: f64,
    pub neutral_reward: f64,
    /// Discount applied to positively rewarded transitions.
    pub eta: f64,
}

impl RewardSpec {
    pub fn new(eta: f64) -> Self {
        RewardSpec {
            positive_reward: 1.0,
            neutral_reward: 0.0,
            eta,
        }
    }

    pub fn validate(&self) -> Result<(), ProductError> {
        if !(self.positive_reward > 0.0 && self.positive_reward.is_finite()) {
            return Err(ProductError::BadReward(format!(
                "positive reward must be > 0 (got {})",
                self.positive_reward
            )));
        }
        if !self.neutral_reward.is_finite() {
            return Err(ProductError::BadReward("neutral reward must be finite".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(ProductError::BadReward(format!(
                "eta must lie in (0, 1) (got {})",
                self.eta
            )));
        }
        Ok(())
    }

    /// State-dependent discount: `eta` on positively rewarded transitions, 1 otherwise.
    #[inline]
    pub fn discount(&self, reward: f64) -> f64 {
        if reward > 0.0 {
            self.eta
        } else {
            1.0
        }
    }
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec::new(0.95)
    }
}

#[derive(Debug, Error)]
pub enum ProductError {
    #[error("action {action} is not available in product state {state}")]
    IllegalAction { action: String, state: ProductState },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid reward specification: {0}")]
    BadReward(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductTransition {
    pub next: ProductState,
    pub reward: f64,
    pub gamma: f64,
    /// The automaton entered the non-accepting sink.
    pub done: bool,
    /// The accepting frontier ticked off a set on this transition.
    pub fired: bool,
    /// The automaton entered a state from which every run is accepting.
    pub accepting_sink: bool,
}

/// One environment plus one automaton runtime, stepped in lockstep.
#[derive(Debug, Clone)]
pub struct Product {
    env: GridEnv,
    ldba: LdbaRuntime,
    reward: RewardSpec,
    label_masks: Vec<u64>,
    actions: Arc<ActionSpace>,
    accepting_sink: Vec<bool>,
}

impl Product {
    pub fn new(env: GridEnv, spec: Arc<LdbaSpec>, reward: RewardSpec) -> Result<Self, ProductError> {
        reward.validate()?;
        let label_masks = (0..env.num_states())
            .map(|i| spec.label_mask(env.state_label(env.state_at(i))))
            .collect();
        let actions = Arc::new(ActionSpace::new(env.actions(), &spec));
        let accepting_sink = spec.states().iter().map(|&q| spec.is_accepting_sink(q)).collect();
        Ok(Product {
            env,
            ldba: LdbaRuntime::new(spec),
            reward,
            label_masks,
            actions,
            accepting_sink,
        })
    }

    pub fn env(&self) -> &GridEnv {
        &self.env
    }

    pub fn ldba(&self) -> &LdbaRuntime {
        &self.ldba
    }

    pub fn spec(&self) -> &Arc<LdbaSpec> {
        self.ldba.spec()
    }

    pub fn reward_spec(&self) -> &RewardSpec {
        &self.reward
    }

    pub fn state(&self) -> ProductState {
        ProductState::new(self.env.position(), self.ldba.state())
    }

    pub fn sweeps_completed(&self) -> u64 {
        self.ldba.frontier().sweeps_completed()
    }

    /// Base environment actions followed by one action per ε-transition leaving `q`.
    #[inline]
    pub fn available_actions(&self, q: StateId) -> &[AugmentedAction] {
        self.actions.actions(q)
    }

    pub fn action_space(&self) -> &Arc<ActionSpace> {
        &self.actions
    }

    pub fn is_accepting_sink(&self, q: StateId) -> bool {
        self.ldba
            .spec()
            .dense_index(q)
            .is_some_and(|i| self.accepting_sink[i])
    }

    pub fn reset(&mut self) -> ProductState {
        self.env.reset();
        self.ldba.reset();
        self.state()
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        action: AugmentedAction,
        rng: &mut R,
    ) -> Result<ProductTransition, ProductError> {
        let current = self.state();
        if !self.available_actions(current.q).contains(&action) {
            return Err(ProductError::IllegalAction {
                action: action.name(self.ldba.spec()).to_string(),
                state: current,
            });
        }
        let q_next = match action {
            AugmentedAction::Base(a) => {
                let s_next = self.env.step(a, rng)?;
                let mask = self.label_masks[self.env.index(s_next)];
                self.ldba
                    .step_mask(mask)
                    .expect("environment labels never carry epsilon names")
            }
            AugmentedAction::Epsilon(id) => self
                .ldba
                .take_epsilon(id)
                .expect("availability checked above"),
        };
        let fired = self.ldba.accepting_frontier_function();
        let reward = if fired {
            self.reward.positive_reward
        } else {
            self.reward.neutral_reward
        };
        Ok(ProductTransition {
            next: self.state(),
            reward,
            gamma: self.reward.discount(reward),
            done: q_next == SINK,
            fired,
            accepting_sink: self.is_accepting_sink(q_next),
        })
    }
}

/// One logged product transition, as written to trajectory CSV files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub episode: usize,
    pub step: usize,
    pub row: usize,
    pub col: usize,
    pub q: StateId,
    pub action: String,
    pub r: f64,
    pub gamma: f64,
    pub done: bool,
}

impl TraceRow {
    pub const HEADER: &'static str = "episode,step,s.row,s.col,q,action,r,gamma,done";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.episode, self.step, self.row, self.col, self.q, self.action, self.r, self.gamma, self.done
        )
    }
}

//! Limit-deterministic Büchi automata: spec files, guards, and the runtime that
//! tracks the current state and the accepting frontier.

mod guard;
mod runtime;
pub(crate) mod spec;

pub use guard::{guard_eval, is_valid_prop_name, Guard, GuardParseError, LabelSet};
pub use runtime::{frontier_update, FrontierState, LdbaRuntime, StepError};
pub use spec::{
    EpsilonId, EpsilonTransition, LdbaSpec, SemanticError, SpecError, StateId, Transition,
    EPSILON_PREFIX, MAX_ALPHABET, SINK,
};

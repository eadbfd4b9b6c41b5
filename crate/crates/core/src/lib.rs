//! Model-free synthesis of policies that satisfy LTL tasks on unknown finite MDPs,
//! using a limit-deterministic Büchi automaton (LDBA) as the reward machine.
//!
//! The main pieces:
//! - [`automaton`]: LDBA spec files, guards, runtime, and the accepting frontier.
//! - [`envs`]: slippery labeled grid worlds.
//! - [`product`]: on-the-fly product of an environment with an LDBA.
//! - [`learner`]: tabular Q-learning with the frontier reward and state-dependent discount.
//! - [`oracle`]: exact maximal satisfaction probability on the explicit product.
//! - [`eval`]: greedy rollouts and robustness sweeps.

pub mod automaton;
pub mod envs;
pub mod product;
pub mod learner;
pub mod oracle;
pub mod eval;
pub mod benchmarks;

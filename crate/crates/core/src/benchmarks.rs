//! Bundled benchmark environments and automata with their training settings.
//!
//! Layouts are reconstructions sized to the usual benchmark cardinalities
//! (100-cell minecraft maps with five actions, 120/400/1600-cell slippery grids
//! and frozen lakes, a 25-cell surveillance grid).

use std::sync::Arc;

use crate::automaton::{LdbaSpec, SpecError};
use crate::envs::{EnvError, GridEnv};
use crate::learner::Hyperparams;

macro_rules! data {
    ($kind:literal, $name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/benchmarks/", $kind, "/", $name, ".json"))
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Benchmark {
    pub name: &'static str,
    pub env_json: &'static str,
    pub ldba_json: &'static str,
    pub episode_num: usize,
    pub iteration_num_max: usize,
    pub discount_factor: f64,
    pub learning_rate: f64,
    /// Frontier sweeps a test rollout must complete to count as satisfying.
    pub required_sweeps: u64,
}

impl Benchmark {
    pub fn env(&self) -> Result<GridEnv, EnvError> {
        GridEnv::from_json(self.env_json)
    }

    pub fn ldba(&self) -> Result<Arc<LdbaSpec>, SpecError> {
        LdbaSpec::from_json(self.ldba_json).map(Arc::new)
    }

    /// Default hyper-parameters with this benchmark's training settings applied.
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            episode_num: self.episode_num,
            iteration_num_max: self.iteration_num_max,
            discount_factor: self.discount_factor,
            learning_rate: self.learning_rate,
            ..Hyperparams::default()
        }
    }
}

const fn bench(
    name: &'static str,
    env_json: &'static str,
    ldba_json: &'static str,
    (episode_num, iteration_num_max, discount_factor, learning_rate): (usize, usize, f64, f64),
    required_sweeps: u64,
) -> Benchmark {
    Benchmark {
        name,
        env_json,
        ldba_json,
        episode_num,
        iteration_num_max,
        discount_factor,
        learning_rate,
        required_sweeps,
    }
}

const MINECRAFT: &str = data!("envs", "minecraft");
const SLP_EASY: &str = data!("ldba", "slp-easy");
const SLP_HARD: &str = data!("ldba", "slp-hard");
const LAKE_REACH: &str = data!("ldba", "frozen-lake-reach");
const LAKE_SEQUENCE: &str = data!("ldba", "frozen-lake-sequence");

pub const BENCHMARKS: &[Benchmark] = &[
    bench("minecraft-t1", MINECRAFT, data!("ldba", "minecraft-t1"), (500, 4000, 0.95, 0.9), 1),
    bench("minecraft-t2", MINECRAFT, data!("ldba", "minecraft-t2"), (500, 4000, 0.95, 0.9), 1),
    bench("minecraft-t3", MINECRAFT, data!("ldba", "minecraft-t3"), (1500, 4000, 0.95, 0.9), 1),
    bench("minecraft-t4", MINECRAFT, data!("ldba", "minecraft-t4"), (500, 4000, 0.95, 0.9), 1),
    bench("minecraft-t5", MINECRAFT, data!("ldba", "minecraft-t5"), (500, 4000, 0.95, 0.9), 1),
    bench("minecraft-t6", MINECRAFT, data!("ldba", "minecraft-t6"), (1500, 4000, 0.95, 0.9), 1),
    bench("minecraft-t7", MINECRAFT, data!("ldba", "minecraft-t7"), (1500, 4000, 0.95, 0.9), 1),
    bench("robot-surve", data!("envs", "robot-surve"), data!("ldba", "robot-surve"), (500, 1000, 0.95, 0.9), 3),
    bench("slp-easy-sml", data!("envs", "slp-easy-sml"), SLP_EASY, (300, 1000, 0.99, 0.9), 1),
    bench("slp-easy-med", data!("envs", "slp-easy-med"), SLP_EASY, (1500, 1000, 0.99, 0.9), 1),
    bench("slp-easy-lrg", data!("envs", "slp-easy-lrg"), SLP_EASY, (2000, 1000, 0.99, 0.9), 1),
    bench("slp-hard-sml", data!("envs", "slp-hard-sml"), SLP_HARD, (500, 1000, 0.99, 0.9), 1),
    bench("slp-hard-med", data!("envs", "slp-hard-med"), SLP_HARD, (4000, 2100, 0.99, 0.9), 1),
    bench("slp-hard-lrg", data!("envs", "slp-hard-lrg"), SLP_HARD, (6000, 3500, 0.99, 0.9), 1),
    bench("frozen-lake-1", data!("envs", "frozen-lake-1"), LAKE_REACH, (400, 2000, 0.99, 0.9), 1),
    bench("frozen-lake-2", data!("envs", "frozen-lake-2"), LAKE_REACH, (2000, 2000, 0.99, 0.9), 1),
    bench("frozen-lake-3", data!("envs", "frozen-lake-3"), LAKE_REACH, (5000, 4000, 0.99, 0.9), 1),
    bench("frozen-lake-4", data!("envs", "frozen-lake-4"), LAKE_SEQUENCE, (2000, 2000, 0.99, 0.9), 1),
    bench("frozen-lake-5", data!("envs", "frozen-lake-5"), LAKE_SEQUENCE, (7000, 4000, 0.99, 0.9), 1),
    bench("frozen-lake-6", data!("envs", "frozen-lake-6"), LAKE_SEQUENCE, (5000, 5000, 0.99, 0.9), 1),
    bench("gridworld-1", data!("envs", "gridworld-1"), data!("ldba", "goal1-or-goal2"), (2500, 4000, 0.95, 0.9), 1),
];

pub fn benchmark(name: &str) -> Option<&'static Benchmark> {
    BENCHMARKS.iter().find(|b| b.name == name)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    BENCHMARKS.iter().map(|b| b.name)
}

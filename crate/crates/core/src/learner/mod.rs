//! Tabular Q-learning on the on-the-fly product.

mod model_file;
mod qtable;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::LdbaSpec;
use crate::envs::GridEnv;
use crate::product::{AugmentedAction, Product, ProductError, ProductState, RewardSpec};

pub use model_file::{ModelEntry, ModelFile, ModelFileError, ModelMetadata};
pub use qtable::{GreedyPolicy, Policy, QTable, DEFAULT_TIE_TOLERANCE};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid hyper-parameter: {0}")]
    BadHyperparam(String),
    #[error("algorithm '{0}' is not supported (only 'ql' is implemented)")]
    UnsupportedAlgorithm(String),
    #[error(transparent)]
    Product(#[from] ProductError),
}

/// How `select_action` resolves ties among maximal actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Uniformly at random, drawn from the training stream.
    #[default]
    Random,
    /// Lowest action index.
    Index,
}

/// Training hyper-parameters. Field names follow the tool's command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub algorithm: String,
    pub episode_num: usize,
    pub iteration_num_max: usize,
    /// eta: discount applied on positively rewarded transitions.
    pub discount_factor: f64,
    /// mu: weight of the new sample in the update.
    pub learning_rate: f64,
    pub epsilon: f64,
    pub test: bool,
    pub save_dir: String,
    /// Moving-average window for reward curves; -1 means 30% of `episode_num`.
    pub average_window: i64,
    pub seed: u64,
    pub q_init: f64,
    /// Per-pair learning-rate decay: mu / (1 + visits * lr_decay). Zero keeps mu constant.
    pub lr_decay: f64,
    /// Settles ties left after the progress ordering during training. Greedy
    /// policies take the lowest index.
    pub tie_break: TieBreak,
    /// Relative band below the maximal value inside which actions count as tied.
    pub tie_tolerance: f64,
    /// Discount on unrewarded steps for the progress values that order tied actions.
    pub progress_discount: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            algorithm: "ql".into(),
            episode_num: 2500,
            iteration_num_max: 4000,
            discount_factor: 0.95,
            learning_rate: 0.9,
            epsilon: 0.1,
            test: true,
            save_dir: "./results".into(),
            average_window: -1,
            seed: 0,
            q_init: 0.0,
            lr_decay: 0.0,
            tie_break: TieBreak::Random,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
            progress_discount: 0.99,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::BadHyperparam(m));
        if self.algorithm != "ql" {
            return Err(LearnerError::UnsupportedAlgorithm(self.algorithm.clone()));
        }
        if self.iteration_num_max == 0 {
            return bad("iteration_num_max must be positive".into());
        }
        if !(self.discount_factor > 0.0 && self.discount_factor < 1.0) {
            return bad(format!("discount_factor must lie in (0, 1), got {}", self.discount_factor));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must lie in (0, 1], got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !self.q_init.is_finite() {
            return bad("q_init must be finite".into());
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay must be >= 0, got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.tie_tolerance) {
            return bad(format!("tie_tolerance must lie in [0, 1), got {}", self.tie_tolerance));
        }
        if !(self.progress_discount > 0.0 && self.progress_discount < 1.0) {
            return bad(format!("progress_discount must lie in (0, 1), got {}", self.progress_discount));
        }
        if self.average_window == 0 || self.average_window < -1 {
            return bad(format!("average_window must be -1 or positive, got {}", self.average_window));
        }
        Ok(())
    }

    pub fn reward_spec(&self) -> RewardSpec {
        RewardSpec::new(self.discount_factor)
    }

    /// Effective moving-average window.
    pub fn resolved_average_window(&self) -> usize {
        if self.average_window > 0 {
            self.average_window as usize
        } else {
            ((self.episode_num as f64 * 0.3).round() as usize).max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub steps: usize,
    pub sweeps_completed: u64,
    pub reached_sink: bool,
    pub reached_accepting_sink: bool,
    /// Positive rewards observed, keyed by the state the rewarded action was taken in.
    pub positive_reward_counts: BTreeMap<ProductState, u64>,
}

impl EpisodeStats {
    pub fn positive_rewards(&self) -> u64 {
        self.positive_reward_counts.values().sum()
    }
}

/// In-place update Q(p,a) <- (1-mu) Q(p,a) + mu (r + gamma max_a' Q(p',a')). Returns the new value.
pub fn q_update(
    q: &mut QTable,
    p: ProductState,
    a: AugmentedAction,
    r: f64,
    gamma: f64,
    p_next: ProductState,
    mu: f64,
) -> f64 {
    let target = r + gamma * q.max_value(p_next);
    q.blend(p, a, target, mu)
}

/// ε-greedy choice over the actions available in `p`. The greedy branch follows
/// the table's tie rule; `tie_break` settles whatever ties remain.
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    p: ProductState,
    epsilon: f64,
    tie_break: TieBreak,
    rng: &mut R,
) -> AugmentedAction {
    let actions = q.action_space().actions(p.q);
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return actions[rng.random_range(0..actions.len())];
    }
    match tie_break {
        TieBreak::Index => actions[q.greedy_index(p)],
        TieBreak::Random => {
            let best = q.greedy_candidates(p);
            if best.len() == 1 {
                actions[best[0]]
            } else {
                actions[best[rng.random_range(0..best.len())]]
            }
        }
    }
}

/// Observer hooks for a training run.
#[derive(Default)]
pub struct TrainControl<'a> {
    /// Checked between episodes and steps; a set flag ends training early.
    pub stop: Option<&'a AtomicBool>,
    pub on_episode: Option<&'a mut dyn FnMut(&EpisodeStats)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub q: QTable,
    pub stats: Vec<EpisodeStats>,
    pub interrupted: bool,
}

pub fn train(env: &GridEnv, spec: &Arc<LdbaSpec>, hp: &Hyperparams) -> Result<TrainOutcome, LearnerError> {
    train_with(env, spec, hp, TrainControl::default())
}

/// Runs `hp.episode_num` episodes of Q-learning. An episode ends when the automaton
/// enters the rejecting sink, enters an accepting sink (every continuation is
/// accepting and no further information can be learned), or after
/// `hp.iteration_num_max` steps.
pub fn train_with(
    env: &GridEnv,
    spec: &Arc<LdbaSpec>,
    hp: &Hyperparams,
    mut control: TrainControl<'_>,
) -> Result<TrainOutcome, LearnerError> {
    hp.validate()?;
    let mut product = Product::new(env.clone(), spec.clone(), hp.reward_spec())?;
    let mut q = QTable::with_tolerance(product.action_space().clone(), hp.q_init, hp.tie_tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut stats = Vec::with_capacity(hp.episode_num);
    let stopped = || control.stop.is_some_and(|s| s.load(Ordering::Relaxed));
    let mut interrupted = false;

    for episode in 0..hp.episode_num {
        if stopped() {
            interrupted = true;
            break;
        }
        let mut p = product.reset();
        let mut ep = EpisodeStats {
            episode,
            cumulative_reward: 0.0,
            steps: 0,
            sweeps_completed: 0,
            reached_sink: false,
            reached_accepting_sink: false,
            positive_reward_counts: BTreeMap::new(),
        };
        if product.is_accepting_sink(p.q) {
            ep.reached_accepting_sink = true;
        }
        while ep.steps < hp.iteration_num_max && !ep.reached_accepting_sink {
            let a = select_action(&q, p, hp.epsilon, hp.tie_break, &mut rng);
            let t = product.step(a, &mut rng)?;
            let mu = if hp.lr_decay > 0.0 {
                hp.learning_rate / (1.0 + q.visits(p, a) as f64 * hp.lr_decay)
            } else {
                hp.learning_rate
            };
            let progress_gamma = if t.reward > 0.0 { t.gamma } else { hp.progress_discount };
            let progress_target = t.reward + progress_gamma * q.greedy_progress(t.next);
            q_update(&mut q, p, a, t.reward, t.gamma, t.next, mu);
            q.average_progress(p, a, progress_target);
            ep.steps += 1;
            ep.cumulative_reward += t.reward;
            if t.reward > 0.0 {
                *ep.positive_reward_counts.entry(p).or_insert(0) += 1;
            }
            p = t.next;
            if t.done {
                ep.reached_sink = true;
                break;
            }
            ep.reached_accepting_sink = t.accepting_sink;
            if ep.steps.is_multiple_of(1024) && stopped() {
                interrupted = true;
                break;
            }
        }
        ep.sweeps_completed = product.sweeps_completed();
        if let Some(cb) = control.on_episode.as_mut() {
            cb(&ep);
        }
        stats.push(ep);
        if interrupted {
            break;
        }
    }
    Ok(TrainOutcome { q, stats, interrupted })
}

pub fn greedy_policy(q: &QTable) -> GreedyPolicy {
    GreedyPolicy::from_table(q)
}

/// Trailing moving average: entry i averages values[i+1-window ..= i] (fewer at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::spec::tests::FIG2;
    use crate::envs::{Action, EnvState, LabelRegion, RegionMode, SlipMode};
    use crate::product::ActionSpace;

    fn fig2_space() -> Arc<ActionSpace> {
        let spec = LdbaSpec::from_json(FIG2).unwrap();
        Arc::new(ActionSpace::new(&Action::MOVES, &spec))
    }

    fn p(r: usize, c: usize, q: i32) -> ProductState {
        ProductState::new(EnvState::new(r, c), q)
    }

    const UP: AugmentedAction = AugmentedAction::Base(Action::Up);

    #[test]
    fn update_from_zero_with_reward() {
        let mut q = QTable::new(fig2_space(), 0.0);
        let v = q_update(&mut q, p(0, 0, 0), UP, 1.0, 0.95, p(0, 1, 0), 0.9);
        assert!((v - 0.9).abs() < 1e-15);
    }

    #[test]
    fn update_bootstraps_from_successor() {
        let mut q = QTable::new(fig2_space(), 0.0);
        q.set(p(0, 1, 0), AugmentedAction::Base(Action::Left), 0.5);
        let v = q_update(&mut q, p(0, 0, 0), UP, 0.0, 1.0, p(0, 1, 0), 0.9);
        assert!((v - 0.45).abs() < 1e-15);
    }

    #[test]
    fn full_learning_rate_replaces_value() {
        let mut q = QTable::new(fig2_space(), 0.0);
        q.set(p(0, 0, 0), UP, 3.0);
        q.set(p(1, 1, 1), UP, 0.7);
        let v = q_update(&mut q, p(0, 0, 0), UP, 1.0, 0.95, p(1, 1, 1), 1.0);
        assert_eq!(v, 1.0 + 0.95 * 0.7);
    }

    #[test]
    fn successor_max_ranges_over_available_actions_only() {
        let mut q = QTable::new(fig2_space(), 0.0);
        // epsilon actions exist only in automaton state 0
        let eps = q.action_space().actions(0)[4];
        q.set(p(0, 0, 0), eps, 2.0);
        assert_eq!(q.max_value(p(0, 0, 0)), 2.0);
        assert_eq!(q.max_value(p(0, 0, 1)), 0.0);
    }

    #[test]
    fn greedy_picks_unique_max() {
        let mut q = QTable::new(fig2_space(), 0.0);
        q.set(p(2, 2, 1), AugmentedAction::Base(Action::Down), 0.2);
        q.set(p(2, 2, 1), AugmentedAction::Base(Action::Left), 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(select_action(&q, p(2, 2, 1), 0.0, TieBreak::Random, &mut rng), AugmentedAction::Base(Action::Left));
        }
        assert_eq!(greedy_policy(&q).action(p(2, 2, 1)), AugmentedAction::Base(Action::Left));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let q = QTable::new(fig2_space(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&q, p(3, 3, 0), 0.0, TieBreak::Index, &mut rng), UP);
        assert_eq!(greedy_policy(&q).action(p(3, 3, 0)), UP);
    }

    #[test]
    fn random_ties_cover_all_maximal_actions() {
        let mut q = QTable::new(fig2_space(), 0.0);
        q.set(p(1, 1, 1), AugmentedAction::Base(Action::Up), -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            seen.insert(select_action(&q, p(1, 1, 1), 0.0, TieBreak::Random, &mut rng));
        }
        assert_eq!(seen.len(), 3);
        assert!(!seen.contains(&UP));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = QTable::new(fig2_space(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let actions = q.action_space().actions(0).to_vec();
        let n = 100_000;
        let mut counts = vec![0usize; actions.len()];
        for _ in 0..n {
            let a = select_action(&q, p(0, 0, 0), 1.0, TieBreak::Index, &mut rng);
            counts[actions.iter().position(|&b| b == a).unwrap()] += 1;
        }
        let expected = n as f64 / actions.len() as f64;
        for c in counts {
            assert!((c as f64 - expected).abs() / expected < 0.02, "{c} vs {expected}");
        }
    }

    #[test]
    fn scaling_preserves_greedy_policy() {
        let mut q = QTable::new(fig2_space(), 0.0);
        let vals = [0.3, 0.9, 0.1, 0.9];
        for (a, v) in Action::MOVES.iter().zip(vals) {
            q.set(p(1, 1, 2), AugmentedAction::Base(*a), v);
        }
        let before = greedy_policy(&q).action(p(1, 1, 2));
        let mut scaled = q.clone();
        scaled.scale(7.5);
        assert_eq!(greedy_policy(&scaled).action(p(1, 1, 2)), before);
        assert_eq!(before, AugmentedAction::Base(Action::Down));
    }

    #[test]
    fn near_ties_are_ordered_by_progress() {
        let mut q = QTable::new(fig2_space(), 0.0);
        let (down, left) = (AugmentedAction::Base(Action::Down), AugmentedAction::Base(Action::Left));
        q.set(p(2, 2, 0), down, 1.0);
        q.set(p(2, 2, 0), left, 1.0 - 1e-6);
        q.set_progress(p(2, 2, 0), down, 0.5);
        q.set_progress(p(2, 2, 0), left, 0.8);
        assert_eq!(greedy_policy(&q).action(p(2, 2, 0)), left);
        // outside the tolerance band the value decides regardless of progress
        q.set(p(2, 2, 0), left, 0.9);
        assert_eq!(greedy_policy(&q).action(p(2, 2, 0)), down);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&q, p(2, 2, 0), 0.0, TieBreak::Random, &mut rng), down);
    }

    #[test]
    fn saturated_values_follow_the_shorter_route() {
        // Every action keeps the reach task satisfiable, so all values saturate at 1;
        // the greedy policy must still walk toward the goal instead of into a wall.
        let (env, spec) = corridor(0.0);
        let hp = Hyperparams {
            episode_num: 300,
            iteration_num_max: 100,
            seed: 9,
            ..Hyperparams::default()
        };
        let out = train(&env, &spec, &hp).unwrap();
        let policy = greedy_policy(&out.q);
        for col in 0..3 {
            assert_eq!(policy.action(p(0, col, 0)), AugmentedAction::Base(Action::Right), "col {col}");
        }
    }

    fn corridor(slip: f64) -> (GridEnv, Arc<LdbaSpec>) {
        let env = GridEnv::new(
            None,
            1,
            4,
            Action::MOVES.to_vec(),
            slip,
            SlipMode::PerpendicularOrStay,
            EnvState::new(0, 0),
            vec![LabelRegion {
                rows: [0, 1],
                cols: [3, 4],
                label: Some("goal".into()),
                labels: vec![],
                mode: RegionMode::Replace,
            }],
        )
        .unwrap();
        let spec = LdbaSpec::from_json(
            r#"{"states":[0,1],"alphabet":["goal"],"accepting_sets":[[1]],
                "transitions":{"0":[{"guard":"goal","to":1},{"guard":"true","to":0}],
                               "1":[{"guard":"true","to":1}]}}"#,
        )
        .unwrap();
        (env, Arc::new(spec))
    }

    #[test]
    fn zero_episodes_is_a_no_op() {
        let (env, spec) = corridor(0.0);
        let hp = Hyperparams {
            episode_num: 0,
            ..Hyperparams::default()
        };
        let out = train(&env, &spec, &hp).unwrap();
        assert!(out.stats.is_empty());
        assert_eq!(out.q.len(), 0);
    }

    #[test]
    fn deterministic_reach_task_learns_unit_value() {
        let (env, spec) = corridor(0.0);
        let hp = Hyperparams {
            episode_num: 200,
            iteration_num_max: 100,
            seed: 3,
            ..Hyperparams::default()
        };
        let out = train(&env, &spec, &hp).unwrap();
        // One positive reward on entering the absorbing accepting state, discounted once by eta
        // at the rewarded transition, contributes exactly rp = 1 to Q(p0).
        let v0 = out.q.max_value(p(0, 0, 0));
        assert!((v0 - 1.0).abs() < 1e-6, "{v0}");
        let policy = greedy_policy(&out.q);
        assert_eq!(policy.action(p(0, 0, 0)), AugmentedAction::Base(Action::Right));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let (env, spec) = corridor(0.2);
        let hp = Hyperparams {
            episode_num: 50,
            iteration_num_max: 50,
            seed: 42,
            ..Hyperparams::default()
        };
        let a = train(&env, &spec, &hp).unwrap();
        let b = train(&env, &spec, &hp).unwrap();
        assert_eq!(a.stats, b.stats);
        assert!(a.q.bit_identical(&b.q));
    }

    #[test]
    fn stop_flag_interrupts() {
        let (env, spec) = corridor(0.2);
        let stop = AtomicBool::new(true);
        let hp = Hyperparams {
            episode_num: 50,
            ..Hyperparams::default()
        };
        let out = train_with(
            &env,
            &spec,
            &hp,
            TrainControl {
                stop: Some(&stop),
                on_episode: None,
            },
        )
        .unwrap();
        assert!(out.interrupted);
        assert!(out.stats.is_empty());
    }

    #[test]
    fn rejects_out_of_range_hyperparams() {
        for hp in [
            Hyperparams { learning_rate: 0.0, ..Default::default() },
            Hyperparams { discount_factor: 1.0, ..Default::default() },
            Hyperparams { epsilon: 1.5, ..Default::default() },
            Hyperparams { iteration_num_max: 0, ..Default::default() },
            Hyperparams { average_window: 0, ..Default::default() },
        ] {
            assert!(matches!(hp.validate(), Err(LearnerError::BadHyperparam(_))), "{hp:?}");
        }
        let nfq = Hyperparams { algorithm: "nfq".into(), ..Default::default() };
        assert!(matches!(nfq.validate(), Err(LearnerError::UnsupportedAlgorithm(_))));
    }

    #[test]
    fn average_window_defaults_to_thirty_percent() {
        let hp = Hyperparams { episode_num: 1000, ..Default::default() };
        assert_eq!(hp.resolved_average_window(), 300);
        let hp = Hyperparams { average_window: 7, ..Default::default() };
        assert_eq!(hp.resolved_average_window(), 7);
    }

    #[test]
    fn moving_average_is_trailing() {
        let avg = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(avg, vec![1.0, 1.5, 2.5, 3.5]);
    }
}

//! Finite labeled grid MDPs with slippery moves.

mod model;

pub use model::{enumerate_model, ExplicitModel};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::automaton::{is_valid_prop_name, LabelSet, EPSILON_PREFIX};

pub const DEFAULT_SLIP_PROBABILITY: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvState {
    pub row: usize,
    pub col: usize,
}

impl EnvState {
    pub fn new(row: usize, col: usize) -> Self {
        EnvState { row, col }
    }
}

impl fmt::Display for EnvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stay => "stay",
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }

    fn perpendicular(self) -> [Action; 2] {
        match self {
            Action::Up | Action::Down => [Action::Left, Action::Right],
            Action::Left | Action::Right => [Action::Up, Action::Down],
            Action::Stay => [Action::Stay, Action::Stay],
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(Action::Up),
            "down" => Ok(Action::Down),
            "left" => Ok(Action::Left),
            "right" => Ok(Action::Right),
            "stay" => Ok(Action::Stay),
            _ => Err(EnvError::UnknownAction(s.to_string())),
        }
    }
}

/// What happens on a slip event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipMode {
    /// Either perpendicular direction or no move, uniformly.
    #[default]
    PerpendicularOrStay,
    /// Either perpendicular direction, uniformly (frozen-lake style).
    Perpendicular,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("grid dimensions must be positive (got {height}x{width})")]
    EmptyGrid { height: usize, width: usize },
    #[error("actions must be up/down/left/right, optionally followed by stay (got {0:?})")]
    BadActionSet(Vec<String>),
    #[error("unknown action '{0}'")]
    UnknownAction(String),
    #[error("action '{0}' is not available in this environment")]
    ActionNotAvailable(Action),
    #[error("slip probability {0} is outside [0, 1]")]
    SlipOutOfRange(f64),
    #[error("initial state {0} is outside the grid")]
    InitialOutOfBounds(EnvState),
    #[error("label region {index} ({rows:?} x {cols:?}) is empty or outside the grid")]
    BadRegion {
        index: usize,
        rows: [usize; 2],
        cols: [usize; 2],
    },
    #[error("label region {0} declares no label")]
    RegionWithoutLabel(usize),
    #[error("invalid label name '{0}' (expected [a-z0-9_]+)")]
    InvalidLabel(String),
    #[error("label '{0}' uses the reserved prefix 'epsilon_'")]
    ReservedLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionMode {
    /// The region's labels replace whatever earlier regions assigned.
    #[default]
    Replace,
    /// The region's labels are added to those already present.
    Add,
}

/// A rectangular block `[rows.0, rows.1) x [cols.0, cols.1)` of cells sharing labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRegion {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "is_replace")]
    pub mode: RegionMode,
}

fn is_replace(m: &RegionMode) -> bool {
    *m == RegionMode::Replace
}

fn default_slip() -> f64 {
    DEFAULT_SLIP_PROBABILITY
}

fn default_actions() -> Vec<String> {
    Action::MOVES.iter().map(|a| a.name().to_string()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    height: usize,
    width: usize,
    #[serde(default = "default_actions")]
    actions: Vec<String>,
    #[serde(default = "default_slip")]
    slip_probability: f64,
    #[serde(default)]
    slip_mode: SlipMode,
    #[serde(default)]
    initial_state: [usize; 2],
    #[serde(default)]
    label_regions: Vec<LabelRegion>,
}

/// A labeled slippery grid world.
#[derive(Debug, Clone)]
pub struct GridEnv {
    name: Option<String>,
    height: usize,
    width: usize,
    actions: Vec<Action>,
    slip_probability: f64,
    slip_mode: SlipMode,
    initial_state: EnvState,
    regions: Vec<LabelRegion>,
    labels: Vec<LabelSet>,
    position: EnvState,
}

impl GridEnv {
    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let raw: RawEnv = serde_json::from_str(text).map_err(|e| EnvError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let actions = raw
            .actions
            .iter()
            .map(|a| a.parse())
            .collect::<Result<Vec<Action>, _>>()?;
        Self::new(
            raw.name,
            raw.height,
            raw.width,
            actions,
            raw.slip_probability,
            raw.slip_mode,
            EnvState::new(raw.initial_state[0], raw.initial_state[1]),
            raw.label_regions,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: Option<String>,
        height: usize,
        width: usize,
        actions: Vec<Action>,
        slip_probability: f64,
        slip_mode: SlipMode,
        initial_state: EnvState,
        regions: Vec<LabelRegion>,
    ) -> Result<Self, EnvError> {
        if height == 0 || width == 0 {
            return Err(EnvError::EmptyGrid { height, width });
        }
        let valid_actions = actions[..] == Action::MOVES[..]
            || (actions.len() == 5 && actions[..4] == Action::MOVES[..] && actions[4] == Action::Stay);
        if !valid_actions {
            return Err(EnvError::BadActionSet(
                actions.iter().map(|a| a.name().to_string()).collect(),
            ));
        }
        if !(0.0..=1.0).contains(&slip_probability) {
            return Err(EnvError::SlipOutOfRange(slip_probability));
        }
        if initial_state.row >= height || initial_state.col >= width {
            return Err(EnvError::InitialOutOfBounds(initial_state));
        }

        let mut labels = vec![LabelSet::new(); height * width];
        for (index, region) in regions.iter().enumerate() {
            let [r0, r1] = region.rows;
            let [c0, c1] = region.cols;
            if r0 >= r1 || c0 >= c1 || r1 > height || c1 > width {
                return Err(EnvError::BadRegion {
                    index,
                    rows: region.rows,
                    cols: region.cols,
                });
            }
            let names: Vec<&String> = region.label.iter().chain(&region.labels).collect();
            if names.is_empty() {
                return Err(EnvError::RegionWithoutLabel(index));
            }
            for n in &names {
                if n.starts_with(EPSILON_PREFIX) {
                    return Err(EnvError::ReservedLabel(n.to_string()));
                }
                if !is_valid_prop_name(n) {
                    return Err(EnvError::InvalidLabel(n.to_string()));
                }
            }
            for r in r0..r1 {
                for c in c0..c1 {
                    let cell = &mut labels[r * width + c];
                    if region.mode == RegionMode::Replace {
                        cell.clear();
                    }
                    cell.extend(names.iter().map(|n| n.to_string()));
                }
            }
        }

        Ok(GridEnv {
            name,
            height,
            width,
            actions,
            slip_probability,
            slip_mode,
            initial_state,
            regions,
            labels,
            position: initial_state,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawEnv {
            name: self.name.clone(),
            height: self.height,
            width: self.width,
            actions: self.actions.iter().map(|a| a.name().to_string()).collect(),
            slip_probability: self.slip_probability,
            slip_mode: self.slip_mode,
            initial_state: [self.initial_state.row, self.initial_state.col],
            label_regions: self.regions.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("env serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_states(&self) -> usize {
        self.height * self.width
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn slip_probability(&self) -> f64 {
        self.slip_probability
    }

    pub fn slip_mode(&self) -> SlipMode {
        self.slip_mode
    }

    pub fn initial_state(&self) -> EnvState {
        self.initial_state
    }

    pub fn position(&self) -> EnvState {
        self.position
    }

    #[inline]
    pub fn index(&self, s: EnvState) -> usize {
        s.row * self.width + s.col
    }

    pub fn state_at(&self, index: usize) -> EnvState {
        EnvState::new(index / self.width, index % self.width)
    }

    pub fn contains(&self, s: EnvState) -> bool {
        s.row < self.height && s.col < self.width
    }

    pub fn reset(&mut self) -> EnvState {
        self.position = self.initial_state;
        self.position
    }

    /// Labels of cell `s`. Panics if `s` is outside the grid.
    pub fn state_label(&self, s: EnvState) -> &LabelSet {
        assert!(self.contains(s), "state {s} outside {}x{} grid", self.height, self.width);
        &self.labels[self.index(s)]
    }

    /// Distinct propositions used anywhere on the grid.
    pub fn label_alphabet(&self) -> LabelSet {
        self.labels.iter().flatten().cloned().collect()
    }

    fn shifted(&self, s: EnvState, a: Action) -> EnvState {
        let (dr, dc) = a.delta();
        let r = s.row as isize + dr;
        let c = s.col as isize + dc;
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            s
        } else {
            EnvState::new(r as usize, c as usize)
        }
    }

    /// Outcome list for taking `a` at `s`, before merging coinciding cells.
    /// The `stay` action never slips.
    pub(crate) fn outcomes(&self, s: EnvState, a: Action) -> ([(EnvState, f64); 4], usize) {
        let intended = self.shifted(s, a);
        let mut out = [(intended, 1.0); 4];
        if a == Action::Stay || self.slip_probability == 0.0 {
            return (out, 1);
        }
        let [p1, p2] = a.perpendicular();
        let slips: &[EnvState] = match self.slip_mode {
            SlipMode::PerpendicularOrStay => &[self.shifted(s, p1), self.shifted(s, p2), s],
            SlipMode::Perpendicular => &[self.shifted(s, p1), self.shifted(s, p2)],
        };
        out[0].1 = 1.0 - self.slip_probability;
        let each = self.slip_probability / slips.len() as f64;
        for (i, &t) in slips.iter().enumerate() {
            out[i + 1] = (t, each);
        }
        (out, slips.len() + 1)
    }

    /// Moves the agent. Off-grid moves leave the position unchanged.
    pub fn step<R: Rng + ?Sized>(&mut self, a: Action, rng: &mut R) -> Result<EnvState, EnvError> {
        if !self.actions.contains(&a) {
            return Err(EnvError::ActionNotAvailable(a));
        }
        let (outcomes, n) = self.outcomes(self.position, a);
        let next = if n == 1 {
            outcomes[0].0
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = outcomes[n - 1].0;
            for &(t, p) in &outcomes[..n] {
                acc += p;
                if u < acc {
                    chosen = t;
                    break;
                }
            }
            chosen
        };
        self.position = next;
        Ok(next)
    }

    pub fn step_by_name<R: Rng + ?Sized>(&mut self, action: &str, rng: &mut R) -> Result<EnvState, EnvError> {
        let a: Action = action.parse()?;
        self.step(a, rng)
    }
}

/// Free-function form of [`GridEnv::state_label`].
pub fn state_label(env: &GridEnv, s: EnvState) -> &LabelSet {
    env.state_label(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(slip: f64) -> GridEnv {
        GridEnv::new(
            None,
            10,
            10,
            Action::MOVES.to_vec(),
            slip,
            SlipMode::PerpendicularOrStay,
            EnvState::new(0, 0),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_move_and_clamp() {
        let mut env = grid(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.reset();
        assert_eq!(env.step(Action::Right, &mut rng).unwrap(), EnvState::new(0, 1));
        env.reset();
        assert_eq!(env.step(Action::Up, &mut rng).unwrap(), EnvState::new(0, 0));
    }

    #[test]
    fn reset_is_idempotent() {
        let mut env = grid(0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            env.step(Action::Down, &mut rng).unwrap();
        }
        assert_eq!(env.reset(), EnvState::new(0, 0));
        assert_eq!(env.reset(), EnvState::new(0, 0));
    }

    #[test]
    fn stay_rejected_in_four_action_grid() {
        let mut env = grid(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            env.step(Action::Stay, &mut rng),
            Err(EnvError::ActionNotAvailable(Action::Stay))
        ));
        assert!(matches!(
            env.step_by_name("jump", &mut rng),
            Err(EnvError::UnknownAction(_))
        ));
    }

    #[test]
    fn intended_move_frequency_matches_slip() {
        let mut env = grid(0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            env.reset();
            env.position = EnvState::new(5, 5);
            if env.step(Action::Right, &mut rng).unwrap() == EnvState::new(5, 6) {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.85).abs() < 0.01, "freq {freq}");
    }

    const LISTING: &str = r#"{
        "height": 40, "width": 40,
        "label_regions": [
            {"rows": [0, 40], "cols": [0, 40], "label": "safe"},
            {"rows": [25, 33], "cols": [7, 15], "label": "unsafe"},
            {"rows": [7, 15], "cols": [25, 33], "label": "unsafe"},
            {"rows": [15, 25], "cols": [15, 25], "label": "goal1"},
            {"rows": [33, 40], "cols": [0, 7], "label": "goal2"},
            {"rows": [20, 25], "cols": [20, 25], "label": "bonus", "mode": "add"}
        ]
    }"#;

    #[test]
    fn labels_follow_region_overwrite_order() {
        let env = GridEnv::from_json(LISTING).unwrap();
        let set = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<LabelSet>();
        assert_eq!(env.state_label(EnvState::new(16, 16)), &set(&["goal1"]));
        assert_eq!(env.state_label(EnvState::new(0, 0)), &set(&["safe"]));
        assert_eq!(env.state_label(EnvState::new(26, 8)), &set(&["unsafe"]));
        assert_eq!(
            env.state_label(EnvState::new(21, 21)),
            &set(&["bonus", "goal1"])
        );
        assert_eq!(env.slip_probability(), DEFAULT_SLIP_PROBABILITY);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            GridEnv::from_json(r#"{"height": 0, "width": 3}"#),
            Err(EnvError::EmptyGrid { .. })
        ));
        assert!(matches!(
            GridEnv::from_json(r#"{"height": 3, "width": 3, "slip_probability": 1.5}"#),
            Err(EnvError::SlipOutOfRange(_))
        ));
        assert!(matches!(
            GridEnv::from_json(r#"{"height": 3, "width": 3, "initial_state": [3, 0]}"#),
            Err(EnvError::InitialOutOfBounds(_))
        ));
        assert!(matches!(
            GridEnv::from_json(
                r#"{"height": 3, "width": 3, "label_regions": [{"rows":[0,4],"cols":[0,1],"label":"a"}]}"#
            ),
            Err(EnvError::BadRegion { index: 0, .. })
        ));
        assert!(matches!(
            GridEnv::from_json(
                r#"{"height": 3, "width": 3, "label_regions": [{"rows":[0,1],"cols":[0,1],"label":"epsilon_0"}]}"#
            ),
            Err(EnvError::ReservedLabel(_))
        ));
        assert!(matches!(
            GridEnv::from_json(r#"{"height": 3, "width": 3, "actions": ["up", "stay"]}"#),
            Err(EnvError::BadActionSet(_))
        ));
        assert!(matches!(
            GridEnv::from_json("{\"height\": 3,\n \"width\": }"),
            Err(EnvError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn json_round_trip_is_stable() {
        let env = GridEnv::from_json(LISTING).unwrap();
        let again = GridEnv::from_json(&env.to_json()).unwrap();
        assert_eq!(env.to_json(), again.to_json());
        assert_eq!(env.content_hash(), again.content_hash());
    }
}

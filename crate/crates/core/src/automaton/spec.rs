use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::guard::{is_valid_prop_name, CompiledGuard, Guard, GuardParseError, LabelSet};

/// Automaton state number. The non-accepting sink is always [`SINK`].
pub type StateId = i32;

pub const SINK: StateId = -1;

/// Prefix reserved for ε-transition names.
pub const EPSILON_PREFIX: &str = "epsilon_";

/// Propositions plus ε-names share one 64-bit label mask.
const MAX_SYMBOLS: usize = 64;
/// Coverage of each state's guards is checked over every subset of the alphabet.
pub const MAX_ALPHABET: usize = 16;
const MAX_ACCEPTING_SETS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub guard: Guard,
    pub to: StateId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpsilonTransition {
    pub name: String,
    pub from: StateId,
    pub to: StateId,
}

/// Index of an ε-transition within [`LdbaSpec::epsilons`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EpsilonId(pub u16);

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid automaton: {0}")]
    Semantic(#[from] SemanticError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticError {
    #[error("no states declared")]
    NoStates,
    #[error("state {0} declared more than once")]
    DuplicateState(StateId),
    #[error("state -1 is the implicit sink and cannot be declared")]
    SinkDeclared,
    #[error("initial state {0} is not a declared state")]
    UnknownInitialState(StateId),
    #[error("transitions given for undeclared state {0}")]
    TransitionsForUnknownState(StateId),
    #[error("state {state}: transition target {target} is not a declared state")]
    UnknownTarget { state: StateId, target: StateId },
    #[error("state {state}: guards do not cover every label set (missing catch-all transition)")]
    MissingCatchAll { state: StateId },
    #[error("state {state}, transition {index}: cannot parse guard: {source}")]
    GuardSyntax {
        state: StateId,
        index: usize,
        source: GuardParseError,
    },
    #[error("state {state}: guard mentions undeclared proposition '{name}'")]
    UnknownProposition { state: StateId, name: String },
    #[error("proposition '{0}' declared more than once")]
    DuplicateProposition(String),
    #[error("invalid proposition name '{0}' (expected [a-z0-9_]+)")]
    InvalidPropositionName(String),
    #[error("proposition '{0}' uses the reserved prefix 'epsilon_'")]
    ReservedPrefix(String),
    #[error("alphabet has {0} propositions; at most {MAX_ALPHABET} are supported")]
    AlphabetTooLarge(usize),
    #[error("too many propositions and epsilon names ({0}); at most {MAX_SYMBOLS} are supported")]
    TooManySymbols(usize),
    #[error("epsilon-transitions given for undeclared state {0}")]
    EpsilonForUnknownState(StateId),
    #[error("epsilon-transition name '{0}' is used more than once")]
    DuplicateEpsilon(String),
    #[error("epsilon-transition name '{0}' does not follow the 'epsilon_<k>' numbering")]
    InvalidEpsilonName(String),
    #[error("state {state}: epsilon-transition '{name}' has no target (no transition guarded by exactly '{name}')")]
    EpsilonWithoutTarget { state: StateId, name: String },
    #[error("epsilon-transition '{name}' targets undeclared state {target}")]
    EpsilonUnknownTarget { name: String, target: StateId },
    #[error("no accepting sets declared")]
    NoAcceptingSets,
    #[error("too many accepting sets ({0}); at most {MAX_ACCEPTING_SETS} are supported")]
    TooManyAcceptingSets(usize),
    #[error("accepting set {0} is empty")]
    EmptyAcceptingSet(usize),
    #[error("accepting set {set} contains undeclared state {state}")]
    AcceptingUnknownState { set: usize, state: StateId },
    #[error("accepting set {0} contains the non-accepting sink -1")]
    AcceptingSink(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    states: Vec<StateId>,
    #[serde(default)]
    initial_state: StateId,
    alphabet: Vec<String>,
    accepting_sets: Vec<Vec<StateId>>,
    #[serde(default)]
    epsilon_transitions: BTreeMap<StateId, Vec<RawEpsilon>>,
    transitions: BTreeMap<StateId, Vec<RawTransition>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawEpsilon {
    Full { name: String, to: StateId },
    Name(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    guard: String,
    to: StateId,
}

/// A validated limit-deterministic Büchi automaton. Immutable once built.
#[derive(Debug, Clone)]
pub struct LdbaSpec {
    states: Vec<StateId>,
    initial_state: StateId,
    alphabet: Vec<String>,
    transitions: Vec<Vec<Transition>>,
    epsilons: Vec<EpsilonTransition>,
    accepting_sets: Vec<Vec<StateId>>,

    symbol_bits: HashMap<String, u32>,
    compiled: Vec<Vec<(CompiledGuard, StateId)>>,
    epsilons_from: Vec<Vec<EpsilonId>>,
    membership: Vec<u64>,
}

fn is_valid_epsilon_name(name: &str) -> bool {
    name.strip_prefix(EPSILON_PREFIX)
        .is_some_and(|k| !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()))
}

impl LdbaSpec {
    /// Parses and validates an automaton spec document (JSON).
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let raw: RawSpec = serde_json::from_str(text).map_err(|e| SpecError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(Self::from_raw(raw)?)
    }

    fn from_raw(raw: RawSpec) -> Result<Self, SemanticError> {
        let mut transitions = BTreeMap::new();
        for (state, list) in &raw.transitions {
            let mut parsed = Vec::with_capacity(list.len());
            for (index, t) in list.iter().enumerate() {
                let guard = Guard::parse(&t.guard).map_err(|source| SemanticError::GuardSyntax {
                    state: *state,
                    index,
                    source,
                })?;
                parsed.push(Transition { guard, to: t.to });
            }
            transitions.insert(*state, parsed);
        }

        let mut epsilons = Vec::new();
        for (state, list) in &raw.epsilon_transitions {
            for e in list {
                let (name, to) = match e {
                    RawEpsilon::Full { name, to } => (name.clone(), *to),
                    RawEpsilon::Name(name) => {
                        // Target taken from a transition guarded by exactly this name.
                        let to = transitions
                            .get(state)
                            .and_then(|ts: &Vec<Transition>| {
                                ts.iter().find(|t| t.guard == Guard::Prop(name.clone()))
                            })
                            .map(|t| t.to)
                            .ok_or_else(|| SemanticError::EpsilonWithoutTarget {
                                state: *state,
                                name: name.clone(),
                            })?;
                        (name.clone(), to)
                    }
                };
                epsilons.push(EpsilonTransition {
                    name,
                    from: *state,
                    to,
                });
            }
        }

        Self::new(
            raw.states,
            raw.initial_state,
            raw.alphabet,
            transitions,
            epsilons,
            raw.accepting_sets,
        )
    }

    /// Builds and validates a spec from its parts.
    pub fn new(
        states: Vec<StateId>,
        initial_state: StateId,
        alphabet: Vec<String>,
        transitions: BTreeMap<StateId, Vec<Transition>>,
        epsilons: Vec<EpsilonTransition>,
        accepting_sets: Vec<Vec<StateId>>,
    ) -> Result<Self, SemanticError> {
        if states.is_empty() {
            return Err(SemanticError::NoStates);
        }
        let mut sorted = states.clone();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(SemanticError::DuplicateState(w[0]));
            }
        }
        if sorted.contains(&SINK) {
            return Err(SemanticError::SinkDeclared);
        }
        let states = sorted;
        let declared = |q: StateId| states.binary_search(&q).is_ok();
        if !declared(initial_state) {
            return Err(SemanticError::UnknownInitialState(initial_state));
        }

        let mut seen_props = BTreeSet::new();
        for p in &alphabet {
            if p.starts_with(EPSILON_PREFIX) {
                return Err(SemanticError::ReservedPrefix(p.clone()));
            }
            if !is_valid_prop_name(p) {
                return Err(SemanticError::InvalidPropositionName(p.clone()));
            }
            if !seen_props.insert(p.as_str()) {
                return Err(SemanticError::DuplicateProposition(p.clone()));
            }
        }
        if alphabet.len() > MAX_ALPHABET {
            return Err(SemanticError::AlphabetTooLarge(alphabet.len()));
        }

        let mut seen_eps = BTreeSet::new();
        for e in &epsilons {
            if !declared(e.from) {
                return Err(SemanticError::EpsilonForUnknownState(e.from));
            }
            if !is_valid_epsilon_name(&e.name) {
                return Err(SemanticError::InvalidEpsilonName(e.name.clone()));
            }
            if !seen_eps.insert(e.name.as_str()) {
                return Err(SemanticError::DuplicateEpsilon(e.name.clone()));
            }
            if !declared(e.to) {
                return Err(SemanticError::EpsilonUnknownTarget {
                    name: e.name.clone(),
                    target: e.to,
                });
            }
        }
        let mut epsilons = epsilons;
        epsilons.sort_by_key(|e| e.from);
        let symbols = alphabet.len() + epsilons.len();
        if symbols > MAX_SYMBOLS {
            return Err(SemanticError::TooManySymbols(symbols));
        }

        let mut symbol_bits = HashMap::new();
        for (i, p) in alphabet.iter().enumerate() {
            symbol_bits.insert(p.clone(), i as u32);
        }
        for (i, e) in epsilons.iter().enumerate() {
            symbol_bits.insert(e.name.clone(), (alphabet.len() + i) as u32);
        }

        for state in transitions.keys() {
            if !declared(*state) {
                return Err(SemanticError::TransitionsForUnknownState(*state));
            }
        }

        let mut dense_transitions = Vec::with_capacity(states.len());
        let mut compiled = Vec::with_capacity(states.len());
        for &state in &states {
            let list = transitions.get(&state).cloned().unwrap_or_default();
            let mut state_compiled = Vec::with_capacity(list.len());
            for t in &list {
                if t.to != SINK && !declared(t.to) {
                    return Err(SemanticError::UnknownTarget {
                        state,
                        target: t.to,
                    });
                }
                for p in t.guard.props() {
                    if !symbol_bits.contains_key(p) {
                        return Err(SemanticError::UnknownProposition {
                            state,
                            name: p.to_string(),
                        });
                    }
                }
                let g = t
                    .guard
                    .compile(&symbol_bits)
                    .expect("propositions checked above");
                state_compiled.push((g, t.to));
            }
            // ε bits never appear in environment labels, so coverage is over the alphabet only.
            let covered = (0u64..(1u64 << alphabet.len()))
                .all(|mask| state_compiled.iter().any(|(g, _)| g.eval(mask)));
            if !covered {
                return Err(SemanticError::MissingCatchAll { state });
            }
            dense_transitions.push(list);
            compiled.push(state_compiled);
        }

        if accepting_sets.is_empty() {
            return Err(SemanticError::NoAcceptingSets);
        }
        if accepting_sets.len() > MAX_ACCEPTING_SETS {
            return Err(SemanticError::TooManyAcceptingSets(accepting_sets.len()));
        }
        let mut membership = vec![0u64; states.len()];
        for (i, set) in accepting_sets.iter().enumerate() {
            if set.is_empty() {
                return Err(SemanticError::EmptyAcceptingSet(i));
            }
            for &q in set {
                if q == SINK {
                    return Err(SemanticError::AcceptingSink(i));
                }
                let idx = states
                    .binary_search(&q)
                    .map_err(|_| SemanticError::AcceptingUnknownState { set: i, state: q })?;
                membership[idx] |= 1 << i;
            }
        }

        let mut epsilons_from = vec![Vec::new(); states.len()];
        for (i, e) in epsilons.iter().enumerate() {
            let idx = states.binary_search(&e.from).unwrap();
            epsilons_from[idx].push(EpsilonId(i as u16));
        }
        Ok(LdbaSpec {
            states,
            initial_state,
            alphabet,
            transitions: dense_transitions,
            epsilons,
            accepting_sets,
            symbol_bits,
            compiled,
            epsilons_from,
            membership,
        })
    }

    /// Canonical JSON form. Parsing the output yields an equivalent automaton.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("spec serializes")
    }

    fn to_raw(&self) -> RawSpec {
        let mut epsilon_transitions: BTreeMap<StateId, Vec<RawEpsilon>> = BTreeMap::new();
        for e in &self.epsilons {
            epsilon_transitions
                .entry(e.from)
                .or_default()
                .push(RawEpsilon::Full {
                    name: e.name.clone(),
                    to: e.to,
                });
        }
        let transitions = self
            .states
            .iter()
            .zip(&self.transitions)
            .map(|(q, list)| {
                let raw = list
                    .iter()
                    .map(|t| RawTransition {
                        guard: t.guard.to_string(),
                        to: t.to,
                    })
                    .collect();
                (*q, raw)
            })
            .collect();
        RawSpec {
            states: self.states.clone(),
            initial_state: self.initial_state,
            alphabet: self.alphabet.clone(),
            accepting_sets: self.accepting_sets.clone(),
            epsilon_transitions,
            transitions,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Declared (non-sink) states in ascending order.
    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn initial_state(&self) -> StateId {
        self.initial_state
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn accepting_sets(&self) -> &[Vec<StateId>] {
        &self.accepting_sets
    }

    /// Ordered guarded transitions out of `q` (empty for the sink).
    pub fn transitions(&self, q: StateId) -> &[Transition] {
        match self.dense_index(q) {
            Some(i) => &self.transitions[i],
            None => &[],
        }
    }

    pub fn epsilons(&self) -> &[EpsilonTransition] {
        &self.epsilons
    }

    pub fn epsilon(&self, id: EpsilonId) -> &EpsilonTransition {
        &self.epsilons[id.0 as usize]
    }

    /// ε-transitions leaving `q`, in declaration order.
    pub fn epsilons_from(&self, q: StateId) -> &[EpsilonId] {
        match self.dense_index(q) {
            Some(i) => &self.epsilons_from[i],
            None => &[],
        }
    }

    pub fn epsilon_by_name(&self, name: &str) -> Option<EpsilonId> {
        self.epsilons
            .iter()
            .position(|e| e.name == name)
            .map(|i| EpsilonId(i as u16))
    }

    /// Position of `q` among the declared states; `None` for the sink or unknown ids.
    #[inline]
    pub fn dense_index(&self, q: StateId) -> Option<usize> {
        if q == SINK {
            return None;
        }
        self.states.binary_search(&q).ok()
    }

    /// Bitmask of the accepting sets that contain `q`.
    #[inline]
    pub fn membership(&self, q: StateId) -> u64 {
        self.dense_index(q).map_or(0, |i| self.membership[i])
    }

    pub fn all_sets_mask(&self) -> u64 {
        if self.accepting_sets.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.accepting_sets.len()) - 1
        }
    }

    /// True when `q` can never be left and belongs to every accepting set, so every
    /// continuation is accepting.
    pub fn is_accepting_sink(&self, q: StateId) -> bool {
        let Some(i) = self.dense_index(q) else {
            return false;
        };
        self.membership[i] == self.all_sets_mask()
            && self.epsilons_from[i].is_empty()
            && self.compiled[i].iter().all(|(_, to)| *to == q)
    }

    /// Encodes a label set as a bitmask. Labels outside the alphabet and the ε-names are
    /// ignored.
    pub fn label_mask(&self, labels: &LabelSet) -> u64 {
        labels
            .iter()
            .filter_map(|l| self.symbol_bits.get(l))
            .fold(0u64, |m, b| m | (1u64 << b))
    }

    pub(crate) fn alphabet_mask(&self) -> u64 {
        if self.alphabet.is_empty() {
            0
        } else {
            (1u64 << self.alphabet.len()) - 1
        }
    }

    pub(crate) fn epsilon_bit(&self, id: EpsilonId) -> u64 {
        1u64 << (self.alphabet.len() + id.0 as usize)
    }

    /// Successor of `q` under a label mask with no ε bits set. The sink is absorbing.
    #[inline]
    pub(crate) fn guard_successor(&self, q: StateId, mask: u64) -> StateId {
        let Some(i) = self.dense_index(q) else {
            return SINK;
        };
        self.compiled[i]
            .iter()
            .find(|(g, _)| g.eval(mask))
            .map(|(_, to)| *to)
            .expect("catch-all coverage is validated at construction")
    }
}

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Hyperparams, QTable};
use crate::automaton::{LdbaSpec, StateId};
use crate::envs::{EnvState, GridEnv};
use crate::product::{ActionSpace, AugmentedAction, ProductState};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("malformed model file: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("model was trained on a different {what} (hash {expected}, got {actual})")]
    HashMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error("model entry {index}: {message}")]
    BadEntry { index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub env_hash: String,
    pub ldba_hash: String,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub s: [usize; 2],
    pub q: StateId,
    pub action: String,
    pub value: f64,
    pub progress: f64,
}

/// On-disk form of a learned Q-table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub metadata: ModelMetadata,
    pub entries: Vec<ModelEntry>,
}

impl ModelFile {
    pub fn from_table(q: &QTable, env: &GridEnv, spec: &LdbaSpec, hp: &Hyperparams) -> Self {
        let entries = q
            .entries()
            .into_iter()
            .map(|(p, a, value, progress)| ModelEntry {
                s: [p.s.row, p.s.col],
                q: p.q,
                action: a.name(spec).to_string(),
                value,
                progress,
            })
            .collect();
        ModelFile {
            metadata: ModelMetadata {
                env_hash: env.content_hash(),
                ldba_hash: spec.content_hash(),
                hyperparams: hp.clone(),
                seed: hp.seed,
            },
            entries,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rebuilds the table after checking that `env` and `spec` match the ones used in training.
    pub fn to_table(&self, env: &GridEnv, spec: &Arc<LdbaSpec>) -> Result<QTable, ModelFileError> {
        for (what, expected, actual) in [
            ("environment", &self.metadata.env_hash, env.content_hash()),
            ("automaton", &self.metadata.ldba_hash, spec.content_hash()),
        ] {
            if *expected != actual {
                return Err(ModelFileError::HashMismatch {
                    what,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        let space = Arc::new(ActionSpace::new(env.actions(), spec));
        let hp = &self.metadata.hyperparams;
        let mut q = QTable::with_tolerance(space, hp.q_init, hp.tie_tolerance);
        for (index, e) in self.entries.iter().enumerate() {
            let bad = |message: String| ModelFileError::BadEntry { index, message };
            let s = EnvState::new(e.s[0], e.s[1]);
            if !env.contains(s) {
                return Err(bad(format!("cell {s} is outside the grid")));
            }
            if e.q != crate::automaton::SINK && spec.dense_index(e.q).is_none() {
                return Err(bad(format!("unknown automaton state {}", e.q)));
            }
            let a = AugmentedAction::parse(&e.action, spec)
                .ok_or_else(|| bad(format!("unknown action '{}'", e.action)))?;
            if !q.action_space().actions(e.q).contains(&a) {
                return Err(bad(format!("action '{}' unavailable in state {}", e.action, e.q)));
            }
            if !e.value.is_finite() || !e.progress.is_finite() {
                return Err(bad("value is not finite".into()));
            }
            q.set(ProductState::new(s, e.q), a, e.value);
            q.set_progress(ProductState::new(s, e.q), a, e.progress);
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::spec::tests::FIG2;
    use crate::learner::train;

    fn setup() -> (GridEnv, Arc<LdbaSpec>) {
        let env = GridEnv::from_json(
            r#"{"height":4,"width":4,"slip_probability":0.1,
                "label_regions":[{"rows":[3,4],"cols":[3,4],"label":"goal1"},
                                 {"rows":[0,1],"cols":[3,4],"label":"goal2"},
                                 {"rows":[2,3],"cols":[1,2],"label":"unsafe"}]}"#,
        )
        .unwrap();
        (env, Arc::new(LdbaSpec::from_json(FIG2).unwrap()))
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (env, spec) = setup();
        let hp = Hyperparams {
            episode_num: 30,
            iteration_num_max: 60,
            seed: 5,
            ..Default::default()
        };
        let out = train(&env, &spec, &hp).unwrap();
        let text = ModelFile::from_table(&out.q, &env, &spec, &hp).to_json();
        let loaded = ModelFile::from_json(&text).unwrap();
        let q = loaded.to_table(&env, &spec).unwrap();
        let again = ModelFile::from_table(&q, &env, &spec, &hp).to_json();
        assert_eq!(text, again);
        assert_eq!(q.len(), out.q.len());
    }

    #[test]
    fn values_survive_reload_to_the_last_bit() {
        let (env, spec) = setup();
        let hp = Hyperparams::default();
        let space = Arc::new(ActionSpace::new(env.actions(), &spec));
        let mut q = QTable::new(space.clone(), 0.0);
        let p = ProductState::new(env.initial_state(), spec.initial_state());
        let tricky = [0.18439545441662858, 0.9999999999999999, 0.9999999906467265, 0.24203694936264458];
        for (&a, &v) in space.actions(p.q).iter().zip(&tricky) {
            q.set(p, a, v);
            q.set_progress(p, a, 1.0 - v);
        }
        let text = ModelFile::from_table(&q, &env, &spec, &hp).to_json();
        let loaded = ModelFile::from_json(&text).unwrap().to_table(&env, &spec).unwrap();
        assert!(loaded.bit_identical(&q));
        assert_eq!(ModelFile::from_table(&loaded, &env, &spec, &hp).to_json(), text);
    }

    #[test]
    fn mismatched_environment_is_rejected() {
        let (env, spec) = setup();
        let hp = Hyperparams {
            episode_num: 2,
            iteration_num_max: 10,
            ..Default::default()
        };
        let out = train(&env, &spec, &hp).unwrap();
        let file = ModelFile::from_table(&out.q, &env, &spec, &hp);
        let other = GridEnv::from_json(r#"{"height":5,"width":4}"#).unwrap();
        assert!(matches!(
            file.to_table(&other, &spec),
            Err(ModelFileError::HashMismatch { what: "environment", .. })
        ));
    }
}

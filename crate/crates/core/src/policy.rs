//! Softmax policies over discrete observations.
//!
//! Two variants share the same math: [`TabularSoftmaxPolicy`] holds one logit
//! vector per state (one sub-choice per step), [`FactoredStepPolicy`] holds a
//! logit vector per (state, position) and emits composite actions of L
//! sub-choices. Score functions are analytic: d log pi_k / d z_i = delta_ik -
//! pi_i, so gradient checks against finite differences are exact to rounding.
//!
//! Step entropies and log-probabilities are always recorded at sample time
//! from the policy doing the sampling (the "old" policy); nothing here
//! recomputes them under a later policy.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CompositeAction, StateId};

/// Probabilities are clamped here before any log.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("unknown state {0}")]
    UnknownState(StateId),
    #[error("state {state}, position {position}: choice {index} out of range (vocab {vocab})")]
    ActionOutOfRange {
        state: StateId,
        position: usize,
        index: usize,
        vocab: usize,
    },
    #[error("composite action has {got} sub-choices, policy expects {expected}")]
    WrongArity { expected: usize, got: usize },
}

/// Numerically stable softmax; strictly positive output summing to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum).max(PROB_FLOOR)).collect()
}

/// Shannon entropy in nats; summands with p = 0 contribute 0.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .map(|&p| {
            if p > 0.0 {
                -p * p.max(PROB_FLOOR).ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// Score function of log pi_chosen with respect to the logits: delta - pi.
pub fn score_vector(probs: &[f64], chosen: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == chosen { 1.0 - p } else { -p })
        .collect()
}

/// log softmax(logits)[k], computed without materializing probabilities.
fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    logits[k] - max - sum.ln()
}

/// Samples an index from `probs` by inverse CDF on one uniform draw.
fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One logit vector per state; actions are single choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSoftmaxPolicy {
    logits: BTreeMap<StateId, Vec<f64>>,
}

impl TabularSoftmaxPolicy {
    pub fn new(logits: BTreeMap<StateId, Vec<f64>>) -> Self {
        assert!(
            logits.values().all(|v| v.len() >= 2),
            "each state needs at least 2 actions"
        );
        TabularSoftmaxPolicy { logits }
    }

    /// Zero logits (uniform distribution) for every listed state.
    pub fn uniform(states: &[StateId], action_count: usize) -> Self {
        let logits = states
            .iter()
            .map(|&s| (s, vec![0.0; action_count]))
            .collect();
        TabularSoftmaxPolicy { logits }
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.logits.keys().copied()
    }

    pub fn action_count(&self, state: StateId) -> Result<usize, PolicyError> {
        Ok(self.state_logits(state)?.len())
    }

    fn state_logits(&self, state: StateId) -> Result<&Vec<f64>, PolicyError> {
        self.logits
            .get(&state)
            .ok_or(PolicyError::UnknownState(state))
    }

    pub fn logits_mut(&mut self, state: StateId) -> Result<&mut Vec<f64>, PolicyError> {
        self.logits
            .get_mut(&state)
            .ok_or(PolicyError::UnknownState(state))
    }

    /// Softmax of the state's logits.
    pub fn action_distribution(&self, state: StateId) -> Result<Vec<f64>, PolicyError> {
        Ok(softmax(self.state_logits(state)?))
    }

    /// delta_ik - pi_i for the chosen action k; entries sum to 0.
    pub fn score_logits(&self, state: StateId, action: usize) -> Result<Vec<f64>, PolicyError> {
        let probs = self.action_distribution(state)?;
        if action >= probs.len() {
            return Err(PolicyError::ActionOutOfRange {
                state,
                position: 0,
                index: action,
                vocab: probs.len(),
            });
        }
        Ok(score_vector(&probs, action))
    }

    /// Shannon entropy of the action distribution, in nats.
    pub fn policy_entropy(&self, state: StateId) -> Result<f64, PolicyError> {
        Ok(shannon_entropy(&self.action_distribution(state)?))
    }

    /// Samples one action; returns (action, token entropies, log-prob), all
    /// recorded from this policy at call time.
    pub fn sample_step<R: Rng>(
        &self,
        state: StateId,
        rng: &mut R,
    ) -> Result<(CompositeAction, Vec<f64>, f64), PolicyError> {
        let probs = self.action_distribution(state)?;
        let h = shannon_entropy(&probs);
        let chosen = sample_index(&probs, rng);
        let action = CompositeAction(vec![chosen]);
        let log_prob = self.log_prob(state, &action)?;
        Ok((action, vec![h], log_prob))
    }

    /// Log-probability of a (single-choice) composite action; <= 0.
    pub fn log_prob(&self, state: StateId, action: &CompositeAction) -> Result<f64, PolicyError> {
        if action.len() != 1 {
            return Err(PolicyError::WrongArity {
                expected: 1,
                got: action.len(),
            });
        }
        let logits = self.state_logits(state)?;
        let k = action.0[0];
        if k >= logits.len() {
            return Err(PolicyError::ActionOutOfRange {
                state,
                position: 0,
                index: k,
                vocab: logits.len(),
            });
        }
        Ok(log_softmax_at(logits, k).min(0.0))
    }
}

/// Per (state, position) logit tables; a step is a sequence of L sub-choices
/// drawn from position-specific vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredStepPolicy {
    vocab_sizes: Vec<usize>,
    tables: BTreeMap<StateId, Vec<Vec<f64>>>,
}

/// One checkpoint line: the logits of one (state, position) slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointRow {
    state: StateId,
    position: usize,
    logits: Vec<f64>,
}

impl FactoredStepPolicy {
    /// Zero logits for every (state, position) slot.
    pub fn uniform(states: &[StateId], vocab_sizes: &[usize]) -> Self {
        assert!(!vocab_sizes.is_empty() && vocab_sizes.iter().all(|&v| v >= 2));
        let tables = states
            .iter()
            .map(|&s| (s, vocab_sizes.iter().map(|&v| vec![0.0; v]).collect()))
            .collect();
        FactoredStepPolicy {
            vocab_sizes: vocab_sizes.to_vec(),
            tables,
        }
    }

    pub fn sub_token_length(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.tables.keys().copied()
    }

    fn state_table(&self, state: StateId) -> Result<&Vec<Vec<f64>>, PolicyError> {
        self.tables
            .get(&state)
            .ok_or(PolicyError::UnknownState(state))
    }

    pub fn logits(&self, state: StateId, position: usize) -> Result<&[f64], PolicyError> {
        Ok(&self.state_table(state)?[position])
    }

    pub fn logits_mut(
        &mut self,
        state: StateId,
        position: usize,
    ) -> Result<&mut Vec<f64>, PolicyError> {
        let table = self
            .tables
            .get_mut(&state)
            .ok_or(PolicyError::UnknownState(state))?;
        Ok(&mut table[position])
    }

    /// Softmax over the sub-vocabulary at one position.
    pub fn positional_distribution(
        &self,
        state: StateId,
        position: usize,
    ) -> Result<Vec<f64>, PolicyError> {
        let table = self.state_table(state)?;
        Ok(softmax(&table[position]))
    }

    /// Per-position Shannon entropies at a state.
    pub fn positional_entropies(&self, state: StateId) -> Result<Vec<f64>, PolicyError> {
        let table = self.state_table(state)?;
        Ok(table.iter().map(|l| shannon_entropy(&softmax(l))).collect())
    }

    /// Mean of the positional entropies: the step entropy this policy would
    /// record at `state`.
    pub fn step_entropy(&self, state: StateId) -> Result<f64, PolicyError> {
        let hs = self.positional_entropies(state)?;
        Ok(hs.iter().sum::<f64>() / hs.len() as f64)
    }

    fn check_action(&self, state: StateId, action: &CompositeAction) -> Result<(), PolicyError> {
        if action.len() != self.vocab_sizes.len() {
            return Err(PolicyError::WrongArity {
                expected: self.vocab_sizes.len(),
                got: action.len(),
            });
        }
        for (p, (&choice, &vocab)) in action.0.iter().zip(&self.vocab_sizes).enumerate() {
            if choice >= vocab {
                return Err(PolicyError::ActionOutOfRange {
                    state,
                    position: p,
                    index: choice,
                    vocab,
                });
            }
        }
        Ok(())
    }

    /// Samples the L sub-choices sequentially, recording each positional
    /// entropy; the returned log-prob is the sum of positional log-probs.
    pub fn sample_step<R: Rng>(
        &self,
        state: StateId,
        rng: &mut R,
    ) -> Result<(CompositeAction, Vec<f64>, f64), PolicyError> {
        let table = self.state_table(state)?;
        let mut choices = Vec::with_capacity(table.len());
        let mut entropies = Vec::with_capacity(table.len());
        for logits in table {
            let probs = softmax(logits);
            entropies.push(shannon_entropy(&probs));
            choices.push(sample_index(&probs, rng));
        }
        let action = CompositeAction(choices);
        let log_prob = self.log_prob(state, &action)?;
        Ok((action, entropies, log_prob))
    }

    /// Sum of positional log-probabilities; <= 0.
    pub fn log_prob(&self, state: StateId, action: &CompositeAction) -> Result<f64, PolicyError> {
        self.check_action(state, action)?;
        let table = self.state_table(state)?;
        let sum: f64 = action
            .0
            .iter()
            .zip(table)
            .map(|(&choice, logits)| log_softmax_at(logits, choice))
            .sum();
        Ok(sum.min(0.0))
    }

    /// Per-position score vectors (delta - pi) for a composite action.
    pub fn score_logits(
        &self,
        state: StateId,
        action: &CompositeAction,
    ) -> Result<Vec<Vec<f64>>, PolicyError> {
        self.check_action(state, action)?;
        let table = self.state_table(state)?;
        Ok(action
            .0
            .iter()
            .zip(table)
            .map(|(&choice, logits)| score_vector(&softmax(logits), choice))
            .collect())
    }

    /// Flat checkpoint: one line per (state, position), explicit field names.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        for (&state, table) in &self.tables {
            for (position, logits) in table.iter().enumerate() {
                let row = CheckpointRow {
                    state,
                    position,
                    logits: logits.clone(),
                };
                out.push_str(&serde_json::to_string(&row).expect("row serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, String> {
        let mut tables: BTreeMap<StateId, Vec<Vec<f64>>> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: CheckpointRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let table = tables.entry(row.state).or_default();
            if row.position != table.len() {
                return Err(format!(
                    "state {}: expected position {}, found {}",
                    row.state,
                    table.len(),
                    row.position
                ));
            }
            table.push(row.logits);
        }
        let mut vocab_sizes: Option<Vec<usize>> = None;
        for (state, table) in &tables {
            let sizes: Vec<usize> = table.iter().map(Vec::len).collect();
            match &vocab_sizes {
                None => vocab_sizes = Some(sizes),
                Some(expect) if *expect == sizes => {}
                Some(expect) => {
                    return Err(format!(
                        "state {state}: vocab sizes {sizes:?} differ from {expect:?}"
                    ))
                }
            }
        }
        let vocab_sizes = vocab_sizes.ok_or("empty checkpoint")?;
        Ok(FactoredStepPolicy {
            vocab_sizes,
            tables,
        })
    }
}

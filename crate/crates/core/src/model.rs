//! Shared domain types: steps, trajectories, batches, the advantage ledger,
//! and the run configuration.
//!
//! Everything here is immutable after construction and safe to share across
//! threads. Batch and ledger records serialize to a line-delimited JSON format
//! (one record per line, explicit field names) for golden-file tests; see
//! [`Batch::to_jsonl`] and [`AdvantageRecord::to_jsonl`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::EnvSpec;

/// Opaque observation identifier the policy indexes on.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// One composite action: a sequence of sub-token choices, length >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompositeAction(pub Vec<usize>);

impl CompositeAction {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One reason-act cycle: the state seen, the composite action taken, and the
/// per-sub-token entropies plus log-probability recorded from the
/// rollout-time policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: StateId,
    pub action: CompositeAction,
    /// Shannon entropy (nats) of each positional distribution at sample time.
    pub token_entropies: Vec<f64>,
    /// Log-probability of the whole composite action at sample time.
    pub old_log_prob: f64,
}

/// A full episode: the unit of outcome advantage. `terminal_reward` is the
/// only reward in the episode (all intermediate rewards are zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: u32,
    /// Binds the rollouts of one task instance into a group.
    pub group_id: u32,
    pub seed: u64,
    pub steps: Vec<Step>,
    /// Binary outcome, 0 or 1.
    pub terminal_reward: u8,
}

/// A mini-batch of trajectories partitioned into groups of rollouts that
/// share a task instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    /// group_id -> indices into `trajectories`. Derived from the trajectories'
    /// own group ids when a batch is assembled or decoded.
    pub groups: BTreeMap<u32, Vec<usize>>,
}

impl Batch {
    /// Assembles a batch, deriving the group partition from each trajectory's
    /// `group_id`.
    pub fn from_trajectories(trajectories: Vec<Trajectory>) -> Self {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, t) in trajectories.iter().enumerate() {
            groups.entry(t.group_id).or_default().push(i);
        }
        Batch {
            trajectories,
            groups,
        }
    }

    /// Total number of steps across all trajectories.
    pub fn step_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    /// One trajectory per line, explicit field names. The group partition is
    /// not written; it is rebuilt on decode.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trajectories {
            out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let trajectories = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<Trajectory>, _>>()?;
        Ok(Batch::from_trajectories(trajectories))
    }
}

/// Per-step ledger entry produced by the advantage pipeline.
///
/// `f_next` is absent exactly at each trajectory's final step. `a_final` is
/// NaN until the final normalization pass has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub traj_index: usize,
    pub step_index: usize,
    /// Group-relative outcome advantage A of the whole trajectory.
    pub a_outcome: f64,
    /// Raw step entropy H (nats).
    pub h_step: f64,
    /// Batch min-max normalized entropy, in [0, 1).
    pub h_norm: f64,
    /// Self-calibrating scaling factor applied to `a_outcome`.
    pub g: f64,
    /// Clarity bonus f of the next step, absent at the trajectory's last step.
    pub f_next: Option<f64>,
    /// a_outcome * g + zeta * f_next (bonus absent at terminal steps).
    pub a_mod: f64,
    /// a_mod minus the batch mean of a_mod.
    pub a_final: f64,
}

impl AdvantageRecord {
    /// One record per line, explicit field names. Records are expected to be
    /// finalized (JSON has no NaN for a placeholder `a_final`).
    pub fn to_jsonl(records: &[AdvantageRecord]) -> String {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Vec<AdvantageRecord>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

/// Which parts of the advantage modulation are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Plain group-relative advantages: g = 1 everywhere, no bonus.
    Baseline,
    /// Scaling term only.
    ScalingOnly,
    /// Clarity bonus only.
    BonusOnly,
    /// Both terms.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Baseline,
        Ablation::ScalingOnly,
        Ablation::BonusOnly,
        Ablation::Full,
    ];

    /// Maps the ablation to the effective (k, zeta) actually applied.
    /// `baseline` behaves exactly as k = 0, zeta = 0.
    pub fn effective(self, k: f64, zeta: f64) -> (f64, f64) {
        match self {
            Ablation::Baseline => (0.0, 0.0),
            Ablation::ScalingOnly => (k, 0.0),
            Ablation::BonusOnly => (0.0, zeta),
            Ablation::Full => (k, zeta),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::ScalingOnly => "scaling_only",
            Ablation::BonusOnly => "bonus_only",
            Ablation::Full => "full",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Ablation::Baseline),
            "scaling_only" => Ok(Ablation::ScalingOnly),
            "bonus_only" => Ok(Ablation::BonusOnly),
            "full" => Ok(Ablation::Full),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

/// Policy update rule applied after the advantage pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Plain gradient ascent on sum of a_final * grad log pi.
    Vanilla,
    /// Single-epoch clipped surrogate with ratio clipped to
    /// [1 - clip_low, 1 + clip_high].
    Clipped { clip_low: f64, clip_high: f64 },
}

/// Momentum-free step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// learning_rate * (iterations - iteration) / iterations.
    LinearDecay,
}

impl LrSchedule {
    pub fn rate_at(self, base: f64, iteration: usize, iterations: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::LinearDecay => base * (iterations - iteration) as f64 / iterations as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::LinearDecay => "linear_decay",
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "linear_decay" => Ok(LrSchedule::LinearDecay),
            other => Err(format!("unknown lr schedule `{other}`")),
        }
    }
}

/// Every knob of a run. `gamma` must be exactly 1 (undiscounted returns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Gradient-scaling strength.
    pub k: f64,
    /// Clarity-bonus sharpness.
    pub k_prime: f64,
    /// Clarity-bonus weight.
    pub zeta: f64,
    /// Numerical guard used by min-max normalization, GRPO, and g.
    pub epsilon: f64,
    /// Rollouts per task instance (M), at least 2.
    pub group_size: usize,
    /// Task instances per batch.
    pub tasks_per_batch: usize,
    pub learning_rate: f64,
    /// Episode step limit; mirrors `env_spec.horizon`.
    pub horizon: usize,
    /// Fixed at 1.0; kept explicit so configs fail loudly on other values.
    pub gamma: f64,
    pub ablation: Ablation,
    pub update_rule: UpdateRule,
    pub lr_schedule: LrSchedule,
    pub env_spec: EnvSpec,
    pub seed_list: Vec<u64>,
    pub iterations: usize,
    /// Checkpoint cadence in iterations; 0 disables periodic checkpoints
    /// (a final checkpoint is always written).
    pub checkpoint_every: usize,
}

impl RunConfig {
    /// Defaults for an environment: k = k' = 1, zeta from the environment
    /// family (0.05 for maze/grid, 0.1 for fork), vanilla updates.
    pub fn for_env(env_spec: EnvSpec) -> RunConfig {
        RunConfig {
            k: 1.0,
            k_prime: 1.0,
            zeta: env_spec.default_zeta(),
            epsilon: 1e-8,
            group_size: 8,
            tasks_per_batch: 8,
            learning_rate: 0.1,
            horizon: env_spec.horizon,
            gamma: 1.0,
            ablation: Ablation::Full,
            update_rule: UpdateRule::Vanilla,
            lr_schedule: LrSchedule::Constant,
            env_spec,
            seed_list: vec![0],
            iterations: 300,
            checkpoint_every: 50,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        for (name, v) in [
            ("k", self.k),
            ("k_prime", self.k_prime),
            ("zeta", self.zeta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigInvalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(ConfigInvalid("epsilon must be finite and > 0".into()));
        }
        if self.group_size < 2 {
            return Err(ConfigInvalid("group_size must be >= 2".into()));
        }
        if self.tasks_per_batch < 1 {
            return Err(ConfigInvalid("tasks_per_batch must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(ConfigInvalid("learning_rate must be finite and > 0".into()));
        }
        if self.gamma != 1.0 {
            return Err(ConfigInvalid("gamma is fixed at 1".into()));
        }
        if self.horizon != self.env_spec.horizon {
            return Err(ConfigInvalid(format!(
                "horizon {} does not match env horizon {}",
                self.horizon, self.env_spec.horizon
            )));
        }
        if let UpdateRule::Clipped {
            clip_low,
            clip_high,
        } = self.update_rule
        {
            let clip_ok = clip_low > 0.0 && clip_low < 1.0 && clip_high > 0.0;
            if !clip_ok {
                return Err(ConfigInvalid(
                    "clip_low must be in (0,1) and clip_high > 0".into(),
                ));
            }
        }
        if self.seed_list.is_empty() {
            return Err(ConfigInvalid("seed_list must be non-empty".into()));
        }
        self.env_spec
            .validate()
            .map_err(|e| ConfigInvalid(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid config: {0}")]
pub struct ConfigInvalid(pub String);

/// First violated batch invariant, by construction order.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("batch contains no trajectories")]
    EmptyBatch,
    #[error("group {0} has {1} trajectory(ies); groups need at least 2")]
    SingletonGroup(u32, usize),
    #[error("trajectory {0}: terminal reward {1} out of range {{0,1}}")]
    RewardOutOfRange(usize, u8),
    #[error("trajectory {0} has no steps")]
    EmptyTrajectory(usize),
    #[error("trajectory {traj}, step {step}: empty token entropy list")]
    EmptyStep { traj: usize, step: usize },
    #[error("trajectory {traj}, step {step}: token entropy {value} is negative")]
    NegativeTokenEntropy {
        traj: usize,
        step: usize,
        value: f64,
    },
    #[error("trajectory {traj}, step {step}: old_log_prob {value} is positive")]
    PositiveLogProb {
        traj: usize,
        step: usize,
        value: f64,
    },
    #[error("group {group} references out-of-range trajectory index {index}")]
    UnknownTrajectoryIndex { group: u32, index: usize },
    #[error("trajectory {0} appears in more than one group")]
    DoublyAssignedTrajectory(usize),
    #[error("trajectory {0} is not assigned to any group")]
    UnassignedTrajectory(usize),
    #[error("trajectory {index} in group {group} carries group_id {actual}")]
    GroupIdMismatch {
        group: u32,
        index: usize,
        actual: u32,
    },
}

/// Checks every batch invariant; reports the first violation found.
pub fn validate_batch(batch: &Batch) -> Result<(), BatchError> {
    if batch.trajectories.is_empty() {
        return Err(BatchError::EmptyBatch);
    }
    let n = batch.trajectories.len();
    let mut assigned = vec![false; n];
    for (&gid, members) in &batch.groups {
        if members.len() < 2 {
            return Err(BatchError::SingletonGroup(gid, members.len()));
        }
        for &i in members {
            if i >= n {
                return Err(BatchError::UnknownTrajectoryIndex {
                    group: gid,
                    index: i,
                });
            }
            if assigned[i] {
                return Err(BatchError::DoublyAssignedTrajectory(i));
            }
            assigned[i] = true;
            if batch.trajectories[i].group_id != gid {
                return Err(BatchError::GroupIdMismatch {
                    group: gid,
                    index: i,
                    actual: batch.trajectories[i].group_id,
                });
            }
        }
    }
    if let Some(i) = assigned.iter().position(|a| !a) {
        return Err(BatchError::UnassignedTrajectory(i));
    }
    for (i, t) in batch.trajectories.iter().enumerate() {
        if t.terminal_reward > 1 {
            return Err(BatchError::RewardOutOfRange(i, t.terminal_reward));
        }
        if t.steps.is_empty() {
            return Err(BatchError::EmptyTrajectory(i));
        }
        for (s, step) in t.steps.iter().enumerate() {
            if step.token_entropies.is_empty() {
                return Err(BatchError::EmptyStep { traj: i, step: s });
            }
            if let Some(&bad) = step
                .token_entropies
                .iter()
                .find(|&&e| e.is_nan() || e < 0.0)
            {
                return Err(BatchError::NegativeTokenEntropy {
                    traj: i,
                    step: s,
                    value: bad,
                });
            }
            if step.old_log_prob > 0.0 {
                return Err(BatchError::PositiveLogProb {
                    traj: i,
                    step: s,
                    value: step.old_log_prob,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_step(state: u32) -> Step {
        Step {
            state: StateId(state),
            action: CompositeAction(vec![0]),
            token_entropies: vec![0.5],
            old_log_prob: -0.7,
        }
    }

    pub(crate) fn unit_trajectory(group: u32, reward: u8) -> Trajectory {
        Trajectory {
            task_id: group,
            group_id: group,
            seed: 0,
            steps: vec![unit_step(0)],
            terminal_reward: reward,
        }
    }

    #[test]
    fn minimal_valid_batch_passes() {
        let batch = Batch::from_trajectories(vec![unit_trajectory(0, 0), unit_trajectory(0, 1)]);
        assert_eq!(validate_batch(&batch), Ok(()));
    }

    #[test]
    fn singleton_group_rejected() {
        let batch = Batch::from_trajectories(vec![unit_trajectory(0, 1)]);
        assert_eq!(
            validate_batch(&batch),
            Err(BatchError::SingletonGroup(0, 1))
        );
    }

    #[test]
    fn reward_out_of_range_rejected() {
        let mut batch =
            Batch::from_trajectories(vec![unit_trajectory(0, 0), unit_trajectory(0, 1)]);
        batch.trajectories[1].terminal_reward = 2;
        assert_eq!(
            validate_batch(&batch),
            Err(BatchError::RewardOutOfRange(1, 2))
        );
    }

    #[test]
    fn empty_batch_rejected() {
        assert_eq!(
            validate_batch(&Batch::default()),
            Err(BatchError::EmptyBatch)
        );
    }

    #[test]
    fn group_sizes_partition_trajectories() {
        let batch = Batch::from_trajectories(vec![
            unit_trajectory(0, 0),
            unit_trajectory(1, 1),
            unit_trajectory(0, 1),
            unit_trajectory(1, 0),
        ]);
        let total: usize = batch.groups.values().map(Vec::len).sum();
        assert_eq!(total, batch.trajectories.len());
        assert_eq!(validate_batch(&batch), Ok(()));
    }

    #[test]
    fn batch_jsonl_round_trips_bitwise() {
        let batch = Batch::from_trajectories(vec![
            unit_trajectory(0, 0),
            unit_trajectory(0, 1),
            Trajectory {
                task_id: 1,
                group_id: 1,
                seed: 99,
                steps: vec![unit_step(3), unit_step(4)],
                terminal_reward: 1,
            },
            unit_trajectory(1, 0),
        ]);
        let text = batch.to_jsonl();
        let decoded = Batch::from_jsonl(&text).unwrap();
        assert_eq!(decoded, batch);
        assert_eq!(decoded.to_jsonl(), text);
    }

    #[test]
    fn record_jsonl_round_trips_bitwise() {
        let records = vec![
            AdvantageRecord {
                traj_index: 0,
                step_index: 0,
                a_outcome: 1.0,
                h_step: 0.3,
                h_norm: 0.0,
                g: 1.4621171572600098,
                f_next: Some(0.5378828427399902),
                a_mod: 1.51,
                a_final: 1.05,
            },
            AdvantageRecord {
                traj_index: 0,
                step_index: 1,
                a_outcome: 1.0,
                h_step: 0.9,
                h_norm: 0.999999995,
                g: 0.5378828427399902,
                f_next: None,
                a_mod: -0.53,
                a_final: -1.05,
            },
        ];
        let text = AdvantageRecord::to_jsonl(&records);
        let decoded = AdvantageRecord::from_jsonl(&text).unwrap();
        assert_eq!(decoded, records);
        assert_eq!(AdvantageRecord::to_jsonl(&decoded), text);
    }

    #[test]
    fn ablation_effective_params() {
        assert_eq!(Ablation::Baseline.effective(1.0, 0.1), (0.0, 0.0));
        assert_eq!(Ablation::ScalingOnly.effective(1.0, 0.1), (1.0, 0.0));
        assert_eq!(Ablation::BonusOnly.effective(1.0, 0.1), (0.0, 0.1));
        assert_eq!(Ablation::Full.effective(1.0, 0.1), (1.0, 0.1));
    }
}

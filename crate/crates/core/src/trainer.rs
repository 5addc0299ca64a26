//! The training loop: grouped rollouts, the advantage pipeline, analytic
//! policy updates, and stability metrics.
//!
//! Rollouts are collected as `tasks_per_batch` groups of `group_size`
//! trajectories. Every trajectory derives its own environment seed and
//! sampling RNG from (run seed, iteration, task, member), so batches are
//! bit-identical regardless of how the rollout loop is scheduled. One
//! optimization epoch runs per batch (on-policy); entropies and
//! log-probabilities are frozen at rollout time.
//!
//! A run directory contains `config.echo`, `metrics.jsonl` (one record per
//! iteration), `ledger/iter_<n>.records`, `batches/iter_0.records`, and
//! `checkpoints/` (`iter_0`, periodic, and `final`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{filter_groups, group_advantage, trajectory_return, AdvantageError};
use crate::entropy::{step_entropy, EntropyError, EntropyLedger};
use crate::envs::{EnvError, EnvSpec};
use crate::model::{
    validate_batch, AdvantageRecord, Batch, BatchError, RunConfig, StateId, Step, Trajectory,
    UpdateRule,
};
use crate::modulation::{finalize_records, modulate, ModulationError, ModulationParams};
use crate::policy::{FactoredStepPolicy, PolicyError};
use crate::seeding::mix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("non-finite gradient encountered during the policy update")]
    NonFiniteGradient,
    #[error("run directory {0} already exists and is not empty")]
    DirectoryNotEmpty(PathBuf),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("all {dropped} groups were filtered out; skip this update")]
    AllGroupsFiltered { dropped: usize },
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
}

/// Per-iteration diagnostics. `wall_time` is measured but intentionally not
/// serialized, so metrics files stay bit-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// successes / rollouts over the whole batch (before filtering).
    pub success_rate: f64,
    /// Mean step entropy over every collected step (nats).
    pub mean_step_entropy: f64,
    pub mean_abs_a_final: f64,
    /// Mean KL(new || old) over the states visited this iteration.
    pub kl_to_previous: f64,
    pub dropped_groups: usize,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Collects `tasks_per_batch` groups of `group_size` rollouts. Trajectory
/// seeds derive from (seed, task, member) so the result is independent of
/// scheduling.
pub fn collect_batch(
    policy: &FactoredStepPolicy,
    spec: &EnvSpec,
    config: &RunConfig,
    seed: u64,
) -> Result<Batch, TrainError> {
    let slots: Vec<(u32, u32)> = (0..config.tasks_per_batch as u32)
        .flat_map(|task| (0..config.group_size as u32).map(move |member| (task, member)))
        .collect();
    let trajectories = slots
        .into_par_iter()
        .map(|(task, member)| {
            let traj_seed = mix(mix(seed, task as u64), member as u64);
            rollout(policy, spec, task, traj_seed)
        })
        .collect::<Result<Vec<Trajectory>, TrainError>>()?;
    let batch = Batch::from_trajectories(trajectories);
    validate_batch(&batch)?;
    Ok(batch)
}

fn rollout(
    policy: &FactoredStepPolicy,
    spec: &EnvSpec,
    task: u32,
    traj_seed: u64,
) -> Result<Trajectory, TrainError> {
    let mut env = spec.reset(mix(traj_seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(traj_seed, 1));
    let mut steps = Vec::new();
    while !env.state().done {
        let state = env.state().observation_id;
        let (action, token_entropies, old_log_prob) = policy.sample_step(state, &mut rng)?;
        env.step(&action)?;
        steps.push(Step {
            state,
            action,
            token_entropies,
            old_log_prob,
        });
    }
    Ok(Trajectory {
        task_id: task,
        group_id: task,
        seed: traj_seed,
        steps,
        terminal_reward: env.terminal_reward()?,
    })
}

/// Output of the advantage pipeline for one batch.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub records: Vec<AdvantageRecord>,
    pub dropped_groups: usize,
}

/// Runs, in order: trajectory returns -> zero-variance group filtering ->
/// GRPO advantages -> step entropies -> min-max normalization -> scaling
/// factors -> clarity bonuses -> modulated advantage -> final normalization.
/// Normalization pools only the surviving steps.
pub fn run_advantage_pipeline(
    batch: &Batch,
    config: &RunConfig,
) -> Result<PipelineOutput, PipelineError> {
    validate_batch(batch)?;
    let rewards: Vec<f64> = batch
        .trajectories
        .iter()
        .map(|t| trajectory_return(t) as f64)
        .collect();

    let (survivors, dropped_groups) = filter_groups(&batch.groups, &rewards);
    if survivors.is_empty() {
        return Err(PipelineError::AllGroupsFiltered {
            dropped: dropped_groups,
        });
    }

    let mut a_outcome: BTreeMap<usize, f64> = BTreeMap::new();
    for (&gid, members) in &survivors {
        let group_rewards: Vec<f64> = members.iter().map(|&i| rewards[i]).collect();
        let group = group_advantage(gid, group_rewards, config.epsilon)?;
        for (&i, &a) in members.iter().zip(&group.advantages) {
            a_outcome.insert(i, a);
        }
    }

    // Canonical step order: ascending trajectory index, then step index.
    let mut h_step = Vec::new();
    for &ti in a_outcome.keys() {
        for step in &batch.trajectories[ti].steps {
            h_step.push(step_entropy(&step.token_entropies)?);
        }
    }
    let ledger = EntropyLedger::build(h_step, config.epsilon)?;

    let params = ModulationParams::new(config.k, config.k_prime, config.zeta, config.epsilon);
    let mut records = modulate(batch, &a_outcome, &ledger, &params, config.ablation)?;
    finalize_records(&mut records)?;
    Ok(PipelineOutput {
        records,
        dropped_groups,
    })
}

type LogitGrad = BTreeMap<(StateId, usize), Vec<f64>>;

fn accumulate_step(
    grad: &mut LogitGrad,
    policy: &FactoredStepPolicy,
    step: &Step,
    weight: f64,
) -> Result<(), TrainError> {
    let scores = policy.score_logits(step.state, &step.action)?;
    for (position, score) in scores.into_iter().enumerate() {
        let slot = grad
            .entry((step.state, position))
            .or_insert_with(|| vec![0.0; score.len()]);
        for (g, s) in slot.iter_mut().zip(&score) {
            *g += weight * s;
        }
    }
    Ok(())
}

/// One policy-gradient ascent step using the finalized ledger. Returns the
/// updated policy and the L2 norm of the applied logit update.
pub fn update_policy(
    policy: &FactoredStepPolicy,
    records: &[AdvantageRecord],
    batch: &Batch,
    config: &RunConfig,
) -> Result<(FactoredStepPolicy, f64), TrainError> {
    let mut grad: LogitGrad = BTreeMap::new();
    for r in records {
        let step = &batch.trajectories[r.traj_index].steps[r.step_index];
        let weight = match config.update_rule {
            UpdateRule::Vanilla => r.a_final,
            UpdateRule::Clipped {
                clip_low,
                clip_high,
            } => {
                // Single-epoch surrogate: rho = pi_theta / pi_old. Steps
                // clipped out of the trust region contribute no gradient.
                let ratio = (policy.log_prob(step.state, &step.action)? - step.old_log_prob).exp();
                let clipped_out = (r.a_final >= 0.0 && ratio > 1.0 + clip_high)
                    || (r.a_final < 0.0 && ratio < 1.0 - clip_low);
                if clipped_out {
                    continue;
                }
                r.a_final * ratio
            }
        };
        accumulate_step(&mut grad, policy, step, weight)?;
    }

    let mut new_policy = policy.clone();
    let mut norm_sq = 0.0;
    for ((state, position), g) in &grad {
        let logits = new_policy.logits_mut(*state, *position)?;
        for (z, &gi) in logits.iter_mut().zip(g) {
            if !gi.is_finite() {
                return Err(TrainError::NonFiniteGradient);
            }
            let delta = config.learning_rate * gi;
            *z += delta;
            norm_sq += delta * delta;
        }
    }
    Ok((new_policy, norm_sq.sqrt()))
}

/// Mean over the visited states of KL(pi_new(.|s) || pi_old(.|s)), i.e. how
/// far the update moved the policy away from its previous self. Factored
/// positions are independent, so the composite KL is the positional sum.
pub fn kl_to_previous(
    old: &FactoredStepPolicy,
    new: &FactoredStepPolicy,
    visited: &BTreeSet<StateId>,
) -> Result<f64, PolicyError> {
    if visited.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &state in visited {
        for position in 0..old.sub_token_length() {
            let p_old = old.positional_distribution(state, position)?;
            let p_new = new.positional_distribution(state, position)?;
            total += p_new
                .iter()
                .zip(&p_old)
                .map(|(&pn, &po)| pn * (pn / po).ln())
                .sum::<f64>();
        }
    }
    Ok((total / visited.len() as f64).max(0.0))
}

fn visited_states(batch: &Batch) -> BTreeSet<StateId> {
    batch
        .trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.state))
        .collect()
}

/// Everything `train` leaves behind, plus the in-memory metrics for callers
/// that keep going (tests, the ablation runner).
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub seed: u64,
    pub metrics: Vec<IterationMetrics>,
}

fn ensure_empty_dir(dir: &Path) -> Result<(), TrainError> {
    if dir.exists() {
        if fs::read_dir(dir)?.next().is_some() {
            return Err(TrainError::DirectoryNotEmpty(dir.to_path_buf()));
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Runs `config.iterations` training iterations for one seed, writing the
/// run directory. Fully reproducible from (config, seed); refuses to write
/// into a non-empty directory.
pub fn train(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<RunSummary, TrainError> {
    config
        .validate()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    ensure_empty_dir(out_dir)?;
    fs::create_dir_all(out_dir.join("ledger"))?;
    fs::create_dir_all(out_dir.join("checkpoints"))?;
    fs::create_dir_all(out_dir.join("batches"))?;

    fs::write(
        out_dir.join("config.echo"),
        crate::config::echo_config(config, Some(&[seed])),
    )?;

    let spec = config.env_spec;
    let mut policy = FactoredStepPolicy::uniform(&spec.observation_ids(), &spec.vocab_sizes());
    fs::write(out_dir.join("checkpoints/iter_0"), policy.to_checkpoint())?;

    let mut metrics_file = fs::File::create(out_dir.join("metrics.jsonl"))?;
    let mut all_metrics = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let started = Instant::now();
        let batch = collect_batch(&policy, &spec, config, mix(seed, iteration as u64))?;
        if iteration == 0 {
            fs::write(out_dir.join("batches/iter_0.records"), batch.to_jsonl())?;
        }

        let rollouts = batch.trajectories.len() as f64;
        let success_rate = batch
            .trajectories
            .iter()
            .map(|t| t.terminal_reward as f64)
            .sum::<f64>()
            / rollouts;
        let mut entropy_sum = 0.0;
        for t in &batch.trajectories {
            for s in &t.steps {
                entropy_sum += step_entropy(&s.token_entropies).expect("validated batch");
            }
        }
        let mean_step_entropy = entropy_sum / batch.step_count() as f64;

        let ledger_path = out_dir.join(format!("ledger/iter_{iteration}.records"));
        let (mean_abs_a_final, kl, dropped_groups) = match run_advantage_pipeline(&batch, config) {
            Ok(out) => {
                fs::write(&ledger_path, AdvantageRecord::to_jsonl(&out.records))?;
                #[cfg(debug_assertions)]
                {
                    let (_, zeta_eff) = config.ablation.effective(config.k, config.zeta);
                    let diff = crate::theory::gradient_assembly_identity(
                        &batch,
                        &out.records,
                        &policy,
                        zeta_eff,
                    )
                    .expect("finalized records");
                    debug_assert!(diff < 1e-10, "gradient assembly drifted: {diff}");
                }
                let mut iter_cfg = config.clone();
                iter_cfg.learning_rate =
                    config
                        .lr_schedule
                        .rate_at(config.learning_rate, iteration, config.iterations);
                let (new_policy, _norm) = update_policy(&policy, &out.records, &batch, &iter_cfg)?;
                let kl = kl_to_previous(&policy, &new_policy, &visited_states(&batch))?;
                let mean_abs = out.records.iter().map(|r| r.a_final.abs()).sum::<f64>()
                    / out.records.len() as f64;
                policy = new_policy;
                (mean_abs, kl, out.dropped_groups)
            }
            // No informative group: log the iteration and leave the
            // policy untouched.
            Err(PipelineError::AllGroupsFiltered { dropped }) => {
                fs::write(&ledger_path, "")?;
                (0.0, 0.0, dropped)
            }
            Err(other) => return Err(other.into()),
        };

        let row = IterationMetrics {
            iteration,
            success_rate,
            mean_step_entropy,
            mean_abs_a_final,
            kl_to_previous: kl,
            dropped_groups,
            wall_time: started.elapsed().as_secs_f64(),
        };
        serde_json::to_writer(&mut metrics_file, &row)?;
        metrics_file.write_all(b"\n")?;
        all_metrics.push(row);

        let iter_1 = iteration + 1;
        if config.checkpoint_every > 0 && iter_1 % config.checkpoint_every == 0 {
            fs::write(
                out_dir.join(format!("checkpoints/iter_{iter_1}")),
                policy.to_checkpoint(),
            )?;
        }
    }

    fs::write(out_dir.join("checkpoints/final"), policy.to_checkpoint())?;
    Ok(RunSummary {
        dir: out_dir.to_path_buf(),
        seed,
        metrics: all_metrics,
    })
}

/// Reads a run's metrics back from `metrics.jsonl`.
pub fn load_metrics(dir: &Path) -> Result<Vec<IterationMetrics>, TrainError> {
    let text = fs::read_to_string(dir.join("metrics.jsonl"))?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<Vec<IterationMetrics>, _>>()?;
    Ok(rows)
}

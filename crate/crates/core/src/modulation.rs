//! The modulated advantage: self-calibrating gradient scaling, future
//! clarity bonus, and final zero-mean normalization.
//!
//! For each step t of trajectory i:
//!
//! ```text
//! A_mod(i, t) = A(i) * g(H_norm(t)) + zeta * f(H_norm(t+1))
//! ```
//!
//! where g(h) = exp(-k h) normalized by its per-step batch mean (so the batch
//! mean of g is exactly 1 and the modulation redistributes signal instead of
//! inflating it), and f(h) = exp(-k' h) in (0, 1]. The bonus uses the next
//! step of the *same* trajectory and is skipped at terminal steps; it never
//! leaks across trajectory boundaries. A_final subtracts the per-step batch
//! mean of A_mod.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::EntropyLedger;
use crate::model::{Ablation, AdvantageRecord, Batch};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModulationError {
    #[error("modulation over an empty batch")]
    EmptyBatch,
    #[error("entropy pipeline output missing or misaligned: expected {expected} steps, got {got}")]
    EntropyPipelineMissing { expected: usize, got: usize },
}

/// The modulation knobs k, k', zeta, and the shared epsilon guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    pub k: f64,
    pub k_prime: f64,
    pub zeta: f64,
    pub epsilon: f64,
}

impl ModulationParams {
    pub fn new(k: f64, k_prime: f64, zeta: f64, epsilon: f64) -> Self {
        ModulationParams {
            k,
            k_prime,
            zeta,
            epsilon,
        }
    }
}

/// Self-calibrating scaling factors g over one batch of normalized entropies.
///
/// g_t = exp(-k h_t) / mean_batch(exp(-k h)). The epsilon guard floors the
/// denominator instead of being added to it, so the per-step mean of g stays
/// 1 to rounding (the additive variant would bias the mean by eps/mean, which
/// breaks both the mean-one constraint and the k = 0 identity).
pub fn scaling_factors(h_norm: &[f64], k: f64, epsilon: f64) -> Result<Vec<f64>, ModulationError> {
    if h_norm.is_empty() {
        return Err(ModulationError::EmptyBatch);
    }
    let raw: Vec<f64> = h_norm.iter().map(|&h| (-k * h).exp()).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let denom = mean.max(epsilon);
    Ok(raw.iter().map(|r| r / denom).collect())
}

/// Future clarity bonus f(h_next) = exp(-k' h_next), in (0, 1].
pub fn clarity_bonus(h_norm_next: f64, k_prime: f64) -> f64 {
    (-k_prime * h_norm_next).exp()
}

/// Builds the per-step ledger with a_mod filled for the surviving
/// trajectories, in canonical order (ascending trajectory index, then step).
///
/// `a_outcome` maps surviving trajectory indices to their group-relative
/// advantage; `ledger` must hold exactly one entry per surviving step in the
/// same canonical order. `a_final` is left NaN until [`finalize_records`].
pub fn modulate(
    batch: &Batch,
    a_outcome: &BTreeMap<usize, f64>,
    ledger: &EntropyLedger,
    params: &ModulationParams,
    ablation: Ablation,
) -> Result<Vec<AdvantageRecord>, ModulationError> {
    if a_outcome.is_empty() {
        return Err(ModulationError::EmptyBatch);
    }
    let expected: usize = a_outcome
        .keys()
        .map(|&ti| batch.trajectories[ti].steps.len())
        .sum();
    if ledger.len() != expected {
        return Err(ModulationError::EntropyPipelineMissing {
            expected,
            got: ledger.len(),
        });
    }

    let (k_eff, zeta_eff) = ablation.effective(params.k, params.zeta);
    let g = scaling_factors(&ledger.h_norm, k_eff, params.epsilon)?;

    let mut records = Vec::with_capacity(ledger.len());
    let mut cursor = 0;
    for (&ti, &a) in a_outcome {
        let len = batch.trajectories[ti].steps.len();
        for si in 0..len {
            let idx = cursor + si;
            let f_next = if si + 1 < len {
                Some(clarity_bonus(ledger.h_norm[idx + 1], params.k_prime))
            } else {
                None
            };
            let a_mod = a * g[idx] + zeta_eff * f_next.unwrap_or(0.0);
            records.push(AdvantageRecord {
                traj_index: ti,
                step_index: si,
                a_outcome: a,
                h_step: ledger.h_step[idx],
                h_norm: ledger.h_norm[idx],
                g: g[idx],
                f_next,
                a_mod,
                a_final: f64::NAN,
            });
        }
        cursor += len;
    }
    Ok(records)
}

/// Final normalization: subtract the per-step batch mean of a_mod.
pub fn final_normalize(a_mod: &[f64]) -> Result<Vec<f64>, ModulationError> {
    if a_mod.is_empty() {
        return Err(ModulationError::EmptyBatch);
    }
    let mean = a_mod.iter().sum::<f64>() / a_mod.len() as f64;
    Ok(a_mod.iter().map(|a| a - mean).collect())
}

/// Fills `a_final` on every record from its `a_mod` via [`final_normalize`].
pub fn finalize_records(records: &mut [AdvantageRecord]) -> Result<(), ModulationError> {
    let a_mod: Vec<f64> = records.iter().map(|r| r.a_mod).collect();
    let a_final = final_normalize(&a_mod)?;
    for (r, a) in records.iter_mut().zip(a_final) {
        r.a_final = a;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CompositeAction, StateId, Step, Trajectory};
    use proptest::prelude::*;

    #[test]
    fn k_zero_gives_unit_factors_exactly() {
        let g = scaling_factors(&[0.3, 0.9, 0.1], 0.0, 1e-8).unwrap();
        assert_eq!(g, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn equal_entropies_give_unit_factors() {
        let g = scaling_factors(&[0.4, 0.4, 0.4, 0.4], 1.7, 1e-8).unwrap();
        for x in g {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_matches_hand_worked_values() {
        // exp(0) = 1, exp(-1) = 0.367879; mean = 0.683940
        let g = scaling_factors(&[0.0, 1.0], 1.0, 1e-8).unwrap();
        assert!((g[0] - 1.46212).abs() < 1e-5, "{}", g[0]);
        assert!((g[1] - 0.53788).abs() < 1e-5, "{}", g[1]);
    }

    #[test]
    fn clarity_bonus_examples() {
        assert_eq!(clarity_bonus(0.0, 1.0), 1.0);
        assert!((clarity_bonus(1.0, 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((clarity_bonus(1.0, 1.0) - 0.36788).abs() < 1e-5);
        assert_eq!(clarity_bonus(0.7, 0.0), 1.0);
    }

    #[test]
    fn final_normalize_examples() {
        assert_eq!(final_normalize(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(
            final_normalize(&[2.0, 2.0, 2.0]).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        let out = final_normalize(&[1.56212, -0.53788]).unwrap();
        assert!((out[0] - 1.05).abs() < 1e-12);
        assert!((out[1] + 1.05).abs() < 1e-12);
        assert_eq!(final_normalize(&[]), Err(ModulationError::EmptyBatch));
    }

    fn step(h: f64) -> Step {
        Step {
            state: StateId(0),
            action: CompositeAction(vec![0]),
            token_entropies: vec![h],
            old_log_prob: -0.5,
        }
    }

    fn two_trajectory_batch(lens: &[usize]) -> Batch {
        let trajectories = lens
            .iter()
            .enumerate()
            .map(|(i, &len)| Trajectory {
                task_id: 0,
                group_id: 0,
                seed: i as u64,
                steps: (0..len).map(|s| step(0.1 * s as f64)).collect(),
                terminal_reward: (i % 2) as u8,
            })
            .collect();
        Batch::from_trajectories(trajectories)
    }

    #[test]
    fn baseline_ablation_is_identity_modulation() {
        let batch = two_trajectory_batch(&[3, 2]);
        let mut a = BTreeMap::new();
        a.insert(0usize, 1.0);
        a.insert(1usize, -1.0);
        let ledger = EntropyLedger::build(vec![0.9, 0.2, 0.4, 0.8, 0.05], 1e-8).unwrap();
        let params = ModulationParams::new(1.0, 1.0, 0.1, 1e-8);
        let records = modulate(&batch, &a, &ledger, &params, Ablation::Baseline).unwrap();
        for r in &records {
            assert_eq!(r.a_mod, r.a_outcome);
            assert_eq!(r.g, 1.0);
        }
    }

    #[test]
    fn terminal_steps_carry_no_bonus() {
        let batch = two_trajectory_batch(&[3, 2]);
        let mut a = BTreeMap::new();
        a.insert(0usize, 1.0);
        a.insert(1usize, -1.0);
        let ledger = EntropyLedger::build(vec![0.9, 0.2, 0.4, 0.8, 0.05], 1e-8).unwrap();
        let params = ModulationParams::new(1.0, 1.0, 0.1, 1e-8);
        let records = modulate(&batch, &a, &ledger, &params, Ablation::Full).unwrap();
        for r in &records {
            let len = batch.trajectories[r.traj_index].steps.len();
            assert_eq!(r.f_next.is_none(), r.step_index + 1 == len);
            let bonus = r.f_next.map_or(0.0, |f| 0.1 * f);
            assert!((r.a_mod - (r.a_outcome * r.g + bonus)).abs() < 1e-15);
        }
    }

    #[test]
    fn bonus_never_crosses_trajectory_boundaries() {
        // Trajectory 0 ends on a high-entropy step; trajectory 1 starts on a
        // zero-entropy step. A flat-array bonus would give trajectory 0's
        // last step f = 1; the per-trajectory lookup must not.
        let batch = two_trajectory_batch(&[2, 2]);
        let mut a = BTreeMap::new();
        a.insert(0usize, 1.0);
        a.insert(1usize, -1.0);
        let ledger = EntropyLedger::build(vec![0.1, 0.9, 0.0, 0.5], 1e-8).unwrap();
        let params = ModulationParams::new(1.0, 1.0, 0.1, 1e-8);
        let records = modulate(&batch, &a, &ledger, &params, Ablation::Full).unwrap();
        assert_eq!(records[1].f_next, None);
        assert_eq!(records[3].f_next, None);
        assert!(records[0].f_next.is_some() && records[2].f_next.is_some());
    }

    #[test]
    fn misaligned_ledger_is_rejected() {
        let batch = two_trajectory_batch(&[2, 2]);
        let mut a = BTreeMap::new();
        a.insert(0usize, 1.0);
        a.insert(1usize, -1.0);
        let ledger = EntropyLedger::build(vec![0.1, 0.9], 1e-8).unwrap();
        let params = ModulationParams::new(1.0, 1.0, 0.1, 1e-8);
        assert_eq!(
            modulate(&batch, &a, &ledger, &params, Ablation::Full),
            Err(ModulationError::EntropyPipelineMissing {
                expected: 4,
                got: 2
            })
        );
    }

    #[test]
    fn finalize_fills_zero_mean_a_final() {
        let batch = two_trajectory_batch(&[3, 3]);
        let mut a = BTreeMap::new();
        a.insert(0usize, 0.7);
        a.insert(1usize, -0.7);
        let ledger = EntropyLedger::build(vec![0.9, 0.2, 0.4, 0.8, 0.05, 0.33], 1e-8).unwrap();
        let params = ModulationParams::new(1.0, 1.0, 0.1, 1e-8);
        let mut records = modulate(&batch, &a, &ledger, &params, Ablation::Full).unwrap();
        assert!(records.iter().all(|r| r.a_final.is_nan()));
        finalize_records(&mut records).unwrap();
        let mean: f64 = records.iter().map(|r| r.a_final).sum::<f64>() / records.len() as f64;
        assert!(mean.abs() < 1e-9);
        let shift = records[0].a_mod - records[0].a_final;
        for r in &records {
            assert!((r.a_mod - r.a_final - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn amplification_splits_on_the_batch_mean_exponential() {
        // For positive A: below-mean exp(-k h) attenuates (a*g < a), above
        // amplifies (a*g > a), strictly when entropies are not all equal.
        let h = [0.05, 0.3, 0.7, 0.95, 0.5];
        let k = 1.0;
        let a = 0.8;
        let g = scaling_factors(&h, k, 1e-8).unwrap();
        let raw: Vec<f64> = h.iter().map(|&x| (-k * x).exp()).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        for (&r, &gi) in raw.iter().zip(&g) {
            if r < mean {
                assert!(a * gi < a, "below-mean step must attenuate");
            } else if r > mean {
                assert!(a * gi > a, "above-mean step must amplify");
            }
        }
    }

    proptest! {
        #[test]
        fn factor_mean_is_pinned_to_one(
            h in proptest::collection::vec(0.0f64..1.0, 1..60),
            k in 0.0f64..4.0,
        ) {
            let g = scaling_factors(&h, k, 1e-8).unwrap();
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-9, "mean {mean}");
        }

        #[test]
        fn factors_decrease_in_entropy(
            h in proptest::collection::vec(0.0f64..1.0, 2..40),
            k in 0.01f64..4.0,
        ) {
            let g = scaling_factors(&h, k, 1e-8).unwrap();
            for i in 0..h.len() {
                for j in 0..h.len() {
                    if h[i] < h[j] {
                        prop_assert!(g[i] > g[j]);
                    }
                }
            }
        }

        #[test]
        fn constant_advantage_total_is_conserved(
            h in proptest::collection::vec(0.0f64..1.0, 1..40),
            c in -3.0f64..3.0,
        ) {
            let g = scaling_factors(&h, 1.0, 1e-8).unwrap();
            let total: f64 = g.iter().map(|&gi| gi * c).sum();
            let expect = c * h.len() as f64;
            prop_assert!((total - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }

        #[test]
        fn bonus_decreases_in_next_entropy(
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
            k_prime in 0.01f64..4.0,
        ) {
            if a < b {
                prop_assert!(clarity_bonus(a, k_prime) > clarity_bonus(b, k_prime));
            }
            let f = clarity_bonus(a, k_prime);
            prop_assert!(f > 0.0 && f <= 1.0);
        }
    }
}

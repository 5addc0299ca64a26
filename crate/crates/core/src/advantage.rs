//! Sparse trajectory returns and group-relative (GRPO) advantages.
//!
//! Returns are undiscounted and binary: a trajectory is worth exactly its
//! terminal reward. Advantages are z-scores within each group of rollouts of
//! the same task, using the population standard deviation and an epsilon
//! guard: A_j = (r_j - mean) / (std + epsilon). Zero-variance groups carry no
//! learning signal and are dropped before the rest of the pipeline runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvantageError {
    #[error("group has {0} reward(s); at least 2 are required")]
    GroupTooSmall(usize),
}

/// Undiscounted return of a sparse-reward episode: the terminal reward.
pub fn trajectory_return(trajectory: &Trajectory) -> u8 {
    trajectory.terminal_reward
}

/// Z-score advantages over one group, population std, epsilon-guarded.
pub fn grpo_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(rewards
        .iter()
        .map(|r| (r - mean) / (std + epsilon))
        .collect())
}

/// One group's rewards, moments, and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantage {
    pub group_id: u32,
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

/// Computes the advantage bundle for one group.
pub fn group_advantage(
    group_id: u32,
    rewards: Vec<f64>,
    epsilon: f64,
) -> Result<GroupAdvantage, AdvantageError> {
    let advantages = grpo_advantages(&rewards, epsilon)?;
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(GroupAdvantage {
        group_id,
        rewards,
        mean,
        std: var.sqrt(),
        advantages,
    })
}

/// Drops every group whose rewards are all equal (all-success or
/// all-failure). Returns the surviving groups and the number dropped.
pub fn filter_groups(
    groups: &BTreeMap<u32, Vec<usize>>,
    rewards_by_trajectory: &[f64],
) -> (BTreeMap<u32, Vec<usize>>, usize) {
    let mut survivors = BTreeMap::new();
    let mut dropped = 0;
    for (&gid, members) in groups {
        let first = rewards_by_trajectory[members[0]];
        let uniform = members.iter().all(|&i| rewards_by_trajectory[i] == first);
        if uniform {
            dropped += 1;
        } else {
            survivors.insert(gid, members.clone());
        }
    }
    (survivors, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CompositeAction, StateId, Step};

    fn traj_with_reward(reward: u8, len: usize) -> Trajectory {
        Trajectory {
            task_id: 0,
            group_id: 0,
            seed: 0,
            steps: (0..len)
                .map(|i| Step {
                    state: StateId(i as u32),
                    action: CompositeAction(vec![0]),
                    token_entropies: vec![0.1],
                    old_log_prob: -0.1,
                })
                .collect(),
            terminal_reward: reward,
        }
    }

    #[test]
    fn return_is_terminal_reward_regardless_of_length() {
        assert_eq!(trajectory_return(&traj_with_reward(1, 1)), 1);
        assert_eq!(trajectory_return(&traj_with_reward(0, 5)), 0);
        assert_eq!(trajectory_return(&traj_with_reward(1, 12)), 1);
    }

    #[test]
    fn grpo_mixed_group_matches_hand_values() {
        // mean 0.5, population std 0.5 -> +/- 1 up to the epsilon guard
        let a = grpo_advantages(&[1.0, 0.0, 0.0, 1.0], 1e-8).unwrap();
        for (got, want) in a.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((got - want).abs() < 1e-7, "{got} vs {want}");
        }
        let a = grpo_advantages(&[1.0, 0.0], 1e-8).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-7 && (a[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn zero_variance_group_gets_zero_advantages() {
        assert_eq!(
            grpo_advantages(&[1.0, 1.0, 1.0], 1e-8).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn group_too_small_is_rejected() {
        assert_eq!(
            grpo_advantages(&[1.0], 1e-8),
            Err(AdvantageError::GroupTooSmall(1))
        );
    }

    #[test]
    fn advantages_are_zero_mean_when_std_positive() {
        let g = group_advantage(3, vec![1.0, 0.0, 0.0, 0.0, 1.0], 1e-8).unwrap();
        let mean: f64 = g.advantages.iter().sum::<f64>() / g.advantages.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert_eq!(g.group_id, 3);
    }

    #[test]
    fn permuting_rewards_permutes_advantages() {
        let r = [1.0, 0.0, 1.0, 0.0, 0.0];
        let perm = [4, 2, 0, 1, 3];
        let a = grpo_advantages(&r, 1e-8).unwrap();
        let r_perm: Vec<f64> = perm.iter().map(|&i| r[i]).collect();
        let a_perm = grpo_advantages(&r_perm, 1e-8).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(a_perm[j], a[i]);
        }
    }

    #[test]
    fn binary_rewards_split_into_two_advantage_levels() {
        for p in 1..8 {
            let rewards: Vec<f64> = (0..8).map(|i| if i < p { 1.0 } else { 0.0 }).collect();
            let a = grpo_advantages(&rewards, 1e-8).unwrap();
            let success = a[0];
            let failure = a[7];
            assert!(a.iter().zip(&rewards).all(|(&adv, &r)| {
                (r == 1.0 && adv == success) || (r == 0.0 && adv == failure)
            }));
            assert!(success > 0.0 && failure < 0.0);
        }
    }

    #[test]
    fn filtering_drops_uniform_groups() {
        let mut groups = BTreeMap::new();
        groups.insert(0, vec![0, 1, 2, 3]);
        groups.insert(1, vec![4, 5, 6, 7]);
        let rewards = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let (survivors, dropped) = filter_groups(&groups, &rewards);
        assert_eq!(dropped, 1);
        assert!(survivors.contains_key(&1) && !survivors.contains_key(&0));

        let rewards = [0.0, 0.0, 0.0, 1.0];
        let mut groups = BTreeMap::new();
        groups.insert(7, vec![0, 1, 2, 3]);
        let (survivors, dropped) = filter_groups(&groups, &rewards);
        assert_eq!((survivors.len(), dropped), (1, 0));
    }

    #[test]
    fn all_uniform_groups_leave_an_empty_batch() {
        let mut groups = BTreeMap::new();
        groups.insert(0, vec![0, 1]);
        groups.insert(1, vec![2, 3]);
        let (survivors, dropped) = filter_groups(&groups, &[1.0, 1.0, 0.0, 0.0]);
        assert!(survivors.is_empty());
        assert_eq!(dropped, 2);
    }
}

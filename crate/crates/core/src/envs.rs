//! Deterministic, seeded, long-horizon sparse-reward environments.
//!
//! Three families, all with binary terminal rewards and a hard step horizon:
//!
//! * `chain_maze(n)` — a line of n positions; walk from 0 to n-1. One
//!   sub-choice per step (forward/back).
//! * `key_door(w, h)` — a w x h grid; pick up the key (stand next to it and
//!   pick toward it), then reach the goal cell, which is blocked without the
//!   key. Two sub-choices per step (verb + direction).
//! * `ambiguity_fork(depth, alias_width)` — a fork into two corridors of
//!   equal length. Corridor A is fully observable with fixed pass-codes per
//!   position; a wrong code there just wastes the step. Corridor B reaches
//!   the goal just as fast, but its positions are aliased in groups of
//!   `alias_width` onto one observation, its pass-codes are redrawn
//!   uniformly per episode, and a wrong code ends the episode, so no policy
//!   conditioned on observations alone can exceed 1/alias_width per aliased
//!   decision. Two sub-choices per step (advance/wait + pass-code).
//!
//! All episode randomness flows from the reset seed through a counter-based
//! generator; there is no global RNG. Identical (seed, action sequence)
//! pairs produce identical trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CompositeAction, StateId};
use crate::seeding::draw_mod;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("step called on a finished episode")]
    SteppedAfterDone,
    #[error("terminal_reward called before the episode finished")]
    NotTerminal,
}

/// Snapshot of an episode: the observation the policy conditions on, whether
/// the episode has ended, and how many steps have elapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub observation_id: StateId,
    pub done: bool,
    pub step_count: usize,
}

/// Structural parameters of an environment family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnvKind {
    ChainMaze { n: usize },
    KeyDoor { width: usize, height: usize },
    AmbiguityFork { depth: usize, alias_width: usize },
}

/// An environment family plus its episode horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn chain_maze(n: usize, horizon: usize) -> Self {
        EnvSpec {
            kind: EnvKind::ChainMaze { n },
            horizon,
        }
    }

    pub fn key_door(width: usize, height: usize, horizon: usize) -> Self {
        EnvSpec {
            kind: EnvKind::KeyDoor { width, height },
            horizon,
        }
    }

    pub fn ambiguity_fork(depth: usize, alias_width: usize, horizon: usize) -> Self {
        EnvSpec {
            kind: EnvKind::AmbiguityFork { depth, alias_width },
            horizon,
        }
    }

    /// Named presets addressable from config files.
    pub fn preset(name: &str) -> Option<EnvSpec> {
        match name {
            "chain8" => Some(EnvSpec::chain_maze(8, 16)),
            "keydoor5x5" => Some(EnvSpec::key_door(5, 5, 24)),
            "fork3x3" => Some(EnvSpec::ambiguity_fork(3, 3, 12)),
            _ => None,
        }
    }

    pub const PRESET_NAMES: [&'static str; 3] = ["chain8", "keydoor5x5", "fork3x3"];

    pub fn validate(&self) -> Result<(), EnvError> {
        match self.kind {
            EnvKind::ChainMaze { n } if n < 2 => {
                return Err(EnvError::InvalidSpec("chain_maze needs n >= 2".into()))
            }
            EnvKind::KeyDoor { width, height } if width < 2 || height < 2 => {
                return Err(EnvError::InvalidSpec(
                    "key_door needs width, height >= 2".into(),
                ))
            }
            EnvKind::AmbiguityFork { depth, alias_width } if depth < 1 || alias_width < 2 => {
                return Err(EnvError::InvalidSpec(
                    "ambiguity_fork needs depth >= 1 and alias_width >= 2".into(),
                ))
            }
            _ => {}
        }
        if self.horizon < self.shortest_solution_len() {
            return Err(EnvError::InvalidSpec(format!(
                "horizon {} is below the shortest solution length {}",
                self.horizon,
                self.shortest_solution_len()
            )));
        }
        Ok(())
    }

    /// Steps needed by an optimal action sequence.
    pub fn shortest_solution_len(&self) -> usize {
        match self.kind {
            EnvKind::ChainMaze { n } => n - 1,
            // right to the cell before the key, pick, step onto the key
            // column, then up to the goal.
            EnvKind::KeyDoor { width, height } => width + height - 1,
            EnvKind::AmbiguityFork { depth, .. } => depth + 1,
        }
    }

    /// Sub-choices per composite action.
    pub fn sub_token_length(&self) -> usize {
        match self.kind {
            EnvKind::ChainMaze { .. } => 1,
            EnvKind::KeyDoor { .. } | EnvKind::AmbiguityFork { .. } => 2,
        }
    }

    /// Per-position sub-vocabulary sizes.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        match self.kind {
            EnvKind::ChainMaze { .. } => vec![2],
            EnvKind::KeyDoor { .. } => vec![2, 4],
            EnvKind::AmbiguityFork { alias_width, .. } => vec![2, alias_width.max(2)],
        }
    }

    /// Every observation the environment can emit.
    pub fn observation_ids(&self) -> Vec<StateId> {
        match self.kind {
            EnvKind::ChainMaze { n } => (0..n as u32).map(StateId).collect(),
            EnvKind::KeyDoor { width, height } => {
                (0..(2 * width * height) as u32).map(StateId).collect()
            }
            EnvKind::AmbiguityFork { depth, alias_width } => {
                let b_groups = depth.div_ceil(alias_width);
                (0..(1 + depth + b_groups) as u32).map(StateId).collect()
            }
        }
    }

    /// Default clarity-bonus weight for the family: 0.05 for maze/grid
    /// presets, 0.1 for fork presets.
    pub fn default_zeta(&self) -> f64 {
        match self.kind {
            EnvKind::ChainMaze { .. } | EnvKind::KeyDoor { .. } => 0.05,
            EnvKind::AmbiguityFork { .. } => 0.1,
        }
    }

    /// Starts a fresh episode. Identical seeds yield identical episodes
    /// under identical action sequences.
    pub fn reset(&self, seed: u64) -> Result<Box<dyn Env>, EnvError> {
        self.validate()?;
        Ok(match self.kind {
            EnvKind::ChainMaze { n } => Box::new(ChainMaze::new(n, self.horizon)),
            EnvKind::KeyDoor { width, height } => {
                Box::new(KeyDoor::new(width, height, self.horizon))
            }
            EnvKind::AmbiguityFork { depth, alias_width } => {
                Box::new(AmbiguityFork::new(depth, alias_width, self.horizon, seed))
            }
        })
    }
}

/// A running episode.
pub trait Env {
    fn state(&self) -> EnvState;

    /// Applies one composite action; returns the new state. Errors if the
    /// episode already finished.
    fn step(&mut self, action: &CompositeAction) -> Result<EnvState, EnvError>;

    /// Binary outcome; only defined once the episode is done.
    fn terminal_reward(&self) -> Result<u8, EnvError>;
}

fn reward_of(done: bool, reward: u8) -> Result<u8, EnvError> {
    if done {
        Ok(reward)
    } else {
        Err(EnvError::NotTerminal)
    }
}

// --- chain maze ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ChainMaze {
    n: usize,
    horizon: usize,
    pos: usize,
    steps: usize,
    done: bool,
    reward: u8,
}

impl ChainMaze {
    fn new(n: usize, horizon: usize) -> Self {
        ChainMaze {
            n,
            horizon,
            pos: 0,
            steps: 0,
            done: false,
            reward: 0,
        }
    }
}

impl Env for ChainMaze {
    fn state(&self) -> EnvState {
        EnvState {
            observation_id: StateId(self.pos as u32),
            done: self.done,
            step_count: self.steps,
        }
    }

    fn step(&mut self, action: &CompositeAction) -> Result<EnvState, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        debug_assert_eq!(action.len(), 1);
        match action.0[0] {
            0 => self.pos = (self.pos + 1).min(self.n - 1),
            _ => self.pos = self.pos.saturating_sub(1),
        }
        self.steps += 1;
        if self.pos == self.n - 1 {
            self.done = true;
            self.reward = 1;
        } else if self.steps >= self.horizon {
            self.done = true;
            self.reward = 0;
        }
        Ok(self.state())
    }

    fn terminal_reward(&self) -> Result<u8, EnvError> {
        reward_of(self.done, self.reward)
    }
}

// --- key & door ------------------------------------------------------------

const DIRS: [(isize, isize); 4] = [(0, 1), (0, -1), (-1, 0), (1, 0)]; // up, down, left, right

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct KeyDoor {
    width: usize,
    height: usize,
    horizon: usize,
    x: usize,
    y: usize,
    has_key: bool,
    steps: usize,
    done: bool,
    reward: u8,
}

impl KeyDoor {
    fn new(width: usize, height: usize, horizon: usize) -> Self {
        KeyDoor {
            width,
            height,
            horizon,
            x: 0,
            y: 0,
            has_key: false,
            steps: 0,
            done: false,
            reward: 0,
        }
    }

    fn key_pos(&self) -> (usize, usize) {
        (self.width - 1, 0)
    }

    fn goal_pos(&self) -> (usize, usize) {
        (self.width - 1, self.height - 1)
    }

    fn neighbor(&self, dir: usize) -> Option<(usize, usize)> {
        let (dx, dy) = DIRS[dir];
        let nx = self.x as isize + dx;
        let ny = self.y as isize + dy;
        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
            None
        } else {
            Some((nx as usize, ny as usize))
        }
    }
}

impl Env for KeyDoor {
    fn state(&self) -> EnvState {
        let base = self.y * self.width + self.x;
        let id = base
            + if self.has_key {
                self.width * self.height
            } else {
                0
            };
        EnvState {
            observation_id: StateId(id as u32),
            done: self.done,
            step_count: self.steps,
        }
    }

    fn step(&mut self, action: &CompositeAction) -> Result<EnvState, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        debug_assert_eq!(action.len(), 2);
        let (verb, dir) = (action.0[0], action.0[1] % 4);
        match verb {
            0 => {
                // move; the goal cell is a locked door without the key.
                if let Some(target) = self.neighbor(dir) {
                    if target != self.goal_pos() || self.has_key {
                        (self.x, self.y) = target;
                    }
                }
            }
            _ => {
                // pick: take the key from the adjacent cell we face.
                if !self.has_key && self.neighbor(dir) == Some(self.key_pos()) {
                    self.has_key = true;
                }
            }
        }
        self.steps += 1;
        if (self.x, self.y) == self.goal_pos() && self.has_key {
            self.done = true;
            self.reward = 1;
        } else if self.steps >= self.horizon {
            self.done = true;
            self.reward = 0;
        }
        Ok(self.state())
    }

    fn terminal_reward(&self) -> Result<u8, EnvError> {
        reward_of(self.done, self.reward)
    }
}

// --- ambiguity fork ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ForkLoc {
    Entry,
    A(usize),
    B(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct AmbiguityFork {
    depth: usize,
    alias_width: usize,
    horizon: usize,
    /// Per-episode pass-codes of corridor B, drawn uniformly from the seed.
    required_b: Vec<usize>,
    loc: ForkLoc,
    steps: usize,
    done: bool,
    reward: u8,
}

impl AmbiguityFork {
    fn new(depth: usize, alias_width: usize, horizon: usize, seed: u64) -> Self {
        let required_b = (0..depth)
            .map(|j| draw_mod(seed, j as u64, alias_width))
            .collect();
        AmbiguityFork {
            depth,
            alias_width,
            horizon,
            required_b,
            loc: ForkLoc::Entry,
            steps: 0,
            done: false,
            reward: 0,
        }
    }

    /// Fixed, learnable pass-code of corridor A position j.
    fn required_a(&self, j: usize) -> usize {
        j % self.alias_width
    }

    fn observation(&self) -> StateId {
        let id = match self.loc {
            ForkLoc::Entry => 0,
            ForkLoc::A(j) => 1 + j,
            // B positions are aliased in groups of alias_width.
            ForkLoc::B(j) => 1 + self.depth + j / self.alias_width,
        };
        StateId(id as u32)
    }
}

const VERB_ADVANCE: usize = 0;

impl Env for AmbiguityFork {
    fn state(&self) -> EnvState {
        EnvState {
            observation_id: self.observation(),
            done: self.done,
            step_count: self.steps,
        }
    }

    fn step(&mut self, action: &CompositeAction) -> Result<EnvState, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        debug_assert_eq!(action.len(), 2);
        let (verb, code) = (action.0[0], action.0[1]);
        if verb == VERB_ADVANCE {
            match self.loc {
                ForkLoc::Entry => {
                    // code selects the corridor; anything else is a no-op.
                    if code == 0 {
                        self.loc = ForkLoc::A(0);
                    } else if code == 1 {
                        self.loc = ForkLoc::B(0);
                    }
                }
                ForkLoc::A(j) => {
                    if code == self.required_a(j) {
                        if j + 1 == self.depth {
                            self.done = true;
                            self.reward = 1;
                        } else {
                            self.loc = ForkLoc::A(j + 1);
                        }
                    }
                }
                ForkLoc::B(j) => {
                    if code == self.required_b[j] {
                        if j + 1 == self.depth {
                            self.done = true;
                            self.reward = 1;
                        } else {
                            self.loc = ForkLoc::B(j + 1);
                        }
                    } else {
                        // In the dark corridor a wrong pass-code ends the
                        // episode: each aliased decision is one-shot.
                        self.done = true;
                        self.reward = 0;
                    }
                }
            }
        }
        self.steps += 1;
        if !self.done && self.steps >= self.horizon {
            self.done = true;
            self.reward = 0;
        }
        Ok(self.state())
    }

    fn terminal_reward(&self) -> Result<u8, EnvError> {
        reward_of(self.done, self.reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn act1(a: usize) -> CompositeAction {
        CompositeAction(vec![a])
    }

    fn act2(v: usize, a: usize) -> CompositeAction {
        CompositeAction(vec![v, a])
    }

    #[test]
    fn chain_reset_starts_at_zero() {
        let spec = EnvSpec::chain_maze(8, 16);
        let env = spec.reset(0).unwrap();
        assert_eq!(env.state().observation_id, StateId(0));
        assert!(!env.state().done);
        let env2 = spec.reset(0).unwrap();
        assert_eq!(env.state(), env2.state());
    }

    #[test]
    fn chain_shortest_path_reaches_goal() {
        let spec = EnvSpec::chain_maze(3, 10);
        let mut env = spec.reset(0).unwrap();
        env.step(&act1(0)).unwrap();
        let s = env.step(&act1(0)).unwrap();
        assert!(s.done);
        assert_eq!(env.terminal_reward(), Ok(1));
    }

    #[test]
    fn chain_timeout_gives_zero() {
        let spec = EnvSpec::chain_maze(3, 2);
        let mut env = spec.reset(0).unwrap();
        env.step(&act1(1)).unwrap();
        let s = env.step(&act1(1)).unwrap();
        assert!(s.done);
        assert_eq!(env.terminal_reward(), Ok(0));
        assert_eq!(env.step(&act1(0)), Err(EnvError::SteppedAfterDone));
    }

    #[test]
    fn reward_before_done_is_an_error() {
        let spec = EnvSpec::chain_maze(3, 10);
        let env = spec.reset(0).unwrap();
        assert_eq!(env.terminal_reward(), Err(EnvError::NotTerminal));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(EnvSpec::chain_maze(1, 10).validate().is_err());
        assert!(EnvSpec::chain_maze(8, 3).validate().is_err());
        assert!(EnvSpec::ambiguity_fork(3, 1, 12).validate().is_err());
        assert!(EnvSpec::key_door(5, 5, 5).validate().is_err());
        for name in EnvSpec::PRESET_NAMES {
            assert!(EnvSpec::preset(name).unwrap().validate().is_ok());
        }
    }

    #[test]
    fn key_door_requires_key_before_goal() {
        let spec = EnvSpec::key_door(2, 2, 10);
        let mut env = spec.reset(0).unwrap();
        env.step(&act2(0, 3)).unwrap(); // right -> (1,0); walking over the key does not pick it
        env.step(&act2(0, 0)).unwrap(); // up toward the goal (1,1)
        let s = env.state();
        assert!(!s.done, "goal must be locked without the key");
        assert_eq!(s.observation_id, StateId(1)); // still at (1,0), keyless
    }

    #[test]
    fn key_door_solution_and_observation_space() {
        let spec = EnvSpec::key_door(2, 2, 10);
        let mut env = spec.reset(0).unwrap();
        env.step(&act2(1, 3)).unwrap(); // pick right: key at (1,0), we are at (0,0)
        env.step(&act2(0, 3)).unwrap(); // right -> (1,0)
        let s = env.step(&act2(0, 0)).unwrap(); // up -> goal (1,1), door unlocks
        assert!(s.done);
        assert_eq!(env.terminal_reward(), Ok(1));
        // has_key flips the observation id by width*height.
        assert_eq!(s.observation_id, StateId(3 + 4));
    }

    #[test]
    fn key_door_pick_needs_adjacency_and_direction() {
        let spec = EnvSpec::key_door(3, 3, 20);
        let mut env = spec.reset(0).unwrap();
        env.step(&act2(1, 3)).unwrap(); // pick right from (0,0): nothing there
        env.step(&act2(0, 3)).unwrap(); // -> (1,0), adjacent to key (2,0)
        env.step(&act2(1, 2)).unwrap(); // pick left: wrong direction
        assert_eq!(env.state().observation_id, StateId(1)); // keyless ids
        env.step(&act2(1, 3)).unwrap(); // pick right: key acquired
        assert_eq!(env.state().observation_id, StateId(1 + 9));
    }

    #[test]
    fn fork_reset_starts_at_entry_observation() {
        let spec = EnvSpec::ambiguity_fork(3, 3, 12);
        let env = spec.reset(42).unwrap();
        assert_eq!(env.state().observation_id, StateId(0));
    }

    #[test]
    fn fork_corridor_a_solution() {
        let spec = EnvSpec::ambiguity_fork(3, 3, 12);
        let mut env = spec.reset(7).unwrap();
        env.step(&act2(0, 0)).unwrap(); // enter A
        env.step(&act2(0, 0)).unwrap(); // pass-code of A0 is 0
        env.step(&act2(0, 1)).unwrap(); // A1 -> 1
        let s = env.step(&act2(0, 2)).unwrap(); // A2 -> 2
        assert!(s.done);
        assert_eq!(env.terminal_reward(), Ok(1));
    }

    #[test]
    fn fork_corridor_b_solvable_with_episode_codes() {
        let spec = EnvSpec::ambiguity_fork(3, 3, 12);
        for seed in 0..20 {
            let codes: Vec<usize> = (0..3).map(|j| draw_mod(seed, j, 3)).collect();
            let mut env = spec.reset(seed).unwrap();
            env.step(&act2(0, 1)).unwrap(); // enter B
            for (i, &c) in codes.iter().enumerate() {
                let s = env.step(&act2(0, c)).unwrap();
                assert_eq!(s.done, i == 2);
            }
            assert_eq!(env.terminal_reward(), Ok(1));
        }
    }

    #[test]
    fn fork_b_positions_share_one_observation() {
        let spec = EnvSpec::ambiguity_fork(3, 3, 12);
        let seed = 5;
        let codes: Vec<usize> = (0..3).map(|j| draw_mod(seed, j, 3)).collect();
        let mut env = spec.reset(seed).unwrap();
        env.step(&act2(0, 1)).unwrap();
        let mut seen = HashSet::new();
        seen.insert(env.state().observation_id);
        for &c in codes.iter().take(2) {
            env.step(&act2(0, c)).unwrap();
            seen.insert(env.state().observation_id);
        }
        assert_eq!(seen.len(), 1, "aliased corridor must look identical");
        // Corridor A observations are all distinct.
        let mut env = spec.reset(seed).unwrap();
        env.step(&act2(0, 0)).unwrap();
        let mut seen = HashSet::new();
        seen.insert(env.state().observation_id);
        env.step(&act2(0, 0)).unwrap();
        seen.insert(env.state().observation_id);
        env.step(&act2(0, 1)).unwrap();
        seen.insert(env.state().observation_id);
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn wait_and_wrong_codes_in_a_stay_in_place() {
        let spec = EnvSpec::ambiguity_fork(2, 2, 10);
        let mut env = spec.reset(3).unwrap();
        let start = env.state().observation_id;
        env.step(&act2(1, 0)).unwrap(); // wait
        assert_eq!(env.state().observation_id, start);
        env.step(&act2(0, 0)).unwrap(); // enter A
        let a0 = env.state().observation_id;
        env.step(&act2(0, 1)).unwrap(); // wrong pass-code (A0 wants 0)
        assert_eq!(env.state().observation_id, a0);
        assert!(!env.state().done);
    }

    #[test]
    fn wrong_code_in_b_ends_the_episode() {
        let spec = EnvSpec::ambiguity_fork(3, 3, 12);
        for seed in 0..10u64 {
            let right = draw_mod(seed, 0, 3);
            let wrong = (right + 1) % 3;
            let mut env = spec.reset(seed).unwrap();
            env.step(&act2(0, 1)).unwrap(); // enter B
            let s = env.step(&act2(0, wrong)).unwrap();
            assert!(s.done);
            assert_eq!(env.terminal_reward(), Ok(0));
        }
    }

    #[test]
    fn identical_seed_and_actions_give_identical_trajectories() {
        let spec = EnvSpec::ambiguity_fork(3, 3, 12);
        let actions: Vec<CompositeAction> = vec![
            act2(0, 1),
            act2(0, 2),
            act2(0, 0),
            act2(1, 1),
            act2(0, 1),
            act2(0, 2),
        ];
        let run = |seed: u64| {
            let mut env = spec.reset(seed).unwrap();
            let mut states = vec![env.state()];
            for a in &actions {
                if env.state().done {
                    break;
                }
                states.push(env.step(a).unwrap());
            }
            states
        };
        assert_eq!(run(9), run(9));
        // And a different seed redraws corridor B's codes eventually.
        let differs = (0..50).any(|s| run(s) != run(9));
        assert!(differs);
    }

    fn all_actions(spec: &EnvSpec) -> Vec<CompositeAction> {
        let v = spec.vocab_sizes();
        match v.len() {
            1 => (0..v[0]).map(act1).collect(),
            _ => (0..v[0])
                .flat_map(|a| (0..v[1]).map(move |b| act2(a, b)))
                .collect(),
        }
    }

    /// Brute-force oracle: exhaustive search over action sequences up to the
    /// horizon. The environments are deterministic, so two prefixes reaching
    /// the same underlying state have identical futures and can be merged.
    fn solvable<T: Env + Clone + Eq + std::hash::Hash>(
        start: T,
        actions: &[CompositeAction],
    ) -> bool {
        let mut seen: HashSet<T> = HashSet::new();
        let mut frontier = vec![start];
        while let Some(env) = frontier.pop() {
            for action in actions {
                let mut next = env.clone();
                let state = next.step(action).unwrap();
                if state.done {
                    if next.terminal_reward().unwrap() == 1 {
                        return true;
                    }
                    continue;
                }
                if seen.insert(next.clone()) {
                    frontier.push(next);
                }
            }
        }
        false
    }

    #[test]
    fn presets_are_solvable_by_exhaustive_search() {
        let chain = EnvSpec::preset("chain8").unwrap();
        assert!(solvable(
            ChainMaze::new(8, chain.horizon),
            &all_actions(&chain)
        ));

        let door = EnvSpec::preset("keydoor5x5").unwrap();
        assert!(solvable(
            KeyDoor::new(5, 5, door.horizon),
            &all_actions(&door)
        ));

        let fork = EnvSpec::preset("fork3x3").unwrap();
        for seed in 0..10 {
            assert!(solvable(
                AmbiguityFork::new(3, 3, fork.horizon, seed),
                &all_actions(&fork)
            ));
        }
    }

    #[test]
    fn both_fork_corridors_admit_reward_by_search() {
        // Constrain the first move to pin the corridor, then search.
        let spec = EnvSpec::preset("fork3x3").unwrap();
        let actions = all_actions(&spec);
        for seed in [0u64, 1, 2, 3, 4] {
            for corridor in [0usize, 1] {
                let mut env = AmbiguityFork::new(3, 3, spec.horizon, seed);
                env.step(&act2(0, corridor)).unwrap();
                assert!(
                    solvable(env, &actions),
                    "corridor {corridor} unsolvable for seed {seed}"
                );
            }
        }
    }

    /// Aliasing bound, by enumeration: over all alias_width^depth equally
    /// likely pass-code assignments, a policy that maps the aliased
    /// observation to one fixed code succeeds at any given aliased decision
    /// in exactly a 1/alias_width fraction of assignments.
    #[test]
    fn aliased_decisions_cap_deterministic_policies() {
        for alias_width in 2..=4usize {
            for depth in 1..=3usize {
                let assignments = alias_width.pow(depth as u32);
                for code in 0..alias_width {
                    let mut first_attempt_hits = vec![0usize; depth];
                    for mut a in 0..assignments {
                        let mut required = Vec::with_capacity(depth);
                        for _ in 0..depth {
                            required.push(a % alias_width);
                            a /= alias_width;
                        }
                        for (j, &r) in required.iter().enumerate() {
                            if r == code {
                                first_attempt_hits[j] += 1;
                            }
                        }
                    }
                    for hits in first_attempt_hits {
                        assert_eq!(hits * alias_width, assignments);
                    }
                }
            }
        }
    }

    #[test]
    fn episode_codes_are_uniform_over_seeds() {
        // The per-episode draw feeding required_b covers every code.
        let mut seen = [false; 3];
        for seed in 0..100u64 {
            seen[draw_mod(seed, 0, 3)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}

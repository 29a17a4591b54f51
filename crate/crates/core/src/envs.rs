//! Gridworld tasks for the continual-learning harness.
//!
//! Cells are indexed `y·width + x`; actions are 0 = up, 1 = right, 2 = down,
//! 3 = left. The agent observes only its cell, so every task shares the same
//! state-action space and later tasks can overwrite what earlier ones taught.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::QTable;
use crate::error::{AmcError, Result};
use crate::rng::stream;

pub const N_ACTIONS: usize = 4;
const MOVES: [(i64, i64); N_ACTIONS] = [(0, -1), (1, 0), (0, 1), (-1, 0)];
const PLACEMENT_RETRIES: usize = 1000;

pub type Cell = (usize, usize);

/// A terminal cell with its own reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    pub cell: Cell,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTask {
    pub width: usize,
    pub height: usize,
    /// Fixed start cell; `None` draws a uniform non-terminal free cell per episode.
    pub start: Option<Cell>,
    pub goal: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    #[serde(default)]
    pub hazards: Vec<Hazard>,
    pub max_steps: usize,
    #[serde(default)]
    pub walls: BTreeSet<Cell>,
    /// Probability that the chosen action is replaced by a uniform one.
    #[serde(default)]
    pub slip: f64,
}

/// Result of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next_state: usize,
    pub reward: f64,
    /// Reached a terminal cell (goal or hazard).
    pub terminal: bool,
}

impl GridTask {
    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn state_of(&self, cell: Cell) -> usize {
        cell.1 * self.width + cell.0
    }

    pub fn cell_of(&self, state: usize) -> Cell {
        (state % self.width, state / self.width)
    }

    /// Cell coordinates scaled into `[0, 1]²`.
    pub fn features(&self, state: usize) -> Vec<f64> {
        let (x, y) = self.cell_of(state);
        let sx = (self.width.max(2) - 1) as f64;
        let sy = (self.height.max(2) - 1) as f64;
        vec![x as f64 / sx, y as f64 / sy]
    }

    /// Largest absolute one-step reward.
    pub fn r_max(&self) -> f64 {
        self.hazards
            .iter()
            .map(|h| h.reward.abs())
            .fold(self.goal_reward.abs().max(self.step_reward.abs()), f64::max)
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        let cell = self.cell_of(state);
        cell == self.goal || self.hazards.iter().any(|h| h.cell == cell)
    }

    fn in_bounds(&self, cell: Cell) -> bool {
        cell.0 < self.width && cell.1 < self.height
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AmcError::InvalidTask(m.to_string()));
        if self.width == 0 || self.height == 0 || self.max_steps == 0 {
            return bad("grid dimensions and max_steps must be positive");
        }
        if !self.in_bounds(self.goal) || self.walls.contains(&self.goal) {
            return bad("goal must be a free in-bounds cell");
        }
        if let Some(s) = self.start {
            if s == self.goal || !self.in_bounds(s) || self.walls.contains(&s) {
                return bad("start must be a free in-bounds cell distinct from the goal");
            }
            if !self.reachable(s) {
                return bad("goal unreachable from start");
            }
        }
        if self.hazards.iter().any(|h| !self.in_bounds(h.cell) || h.cell == self.goal) {
            return bad("hazards must be in bounds and off the goal");
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return bad("slip must lie in [0, 1]");
        }
        Ok(())
    }

    /// Deterministic move: off-grid or into a wall leaves the agent in place.
    pub fn moved(&self, state: usize, action: usize) -> Result<usize> {
        if state >= self.n_states() || action >= N_ACTIONS {
            return Err(AmcError::UnknownStateAction { state, action });
        }
        let (x, y) = self.cell_of(state);
        let (dx, dy) = MOVES[action];
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if nx < 0 || ny < 0 {
            return Ok(state);
        }
        let next = (nx as usize, ny as usize);
        if !self.in_bounds(next) || self.walls.contains(&next) {
            return Ok(state);
        }
        Ok(self.state_of(next))
    }

    /// Reward and terminal flag for entering `next`.
    pub fn outcome(&self, next: usize) -> (f64, bool) {
        let cell = self.cell_of(next);
        if cell == self.goal {
            return (self.goal_reward, true);
        }
        if let Some(h) = self.hazards.iter().find(|h| h.cell == cell) {
            return (h.reward, true);
        }
        (self.step_reward, false)
    }

    /// One step of the deterministic dynamics.
    pub fn step(&self, state: usize, action: usize) -> Result<Transition> {
        let next_state = self.moved(state, action)?;
        let (reward, terminal) = self.outcome(next_state);
        Ok(Transition {
            next_state,
            reward,
            terminal,
        })
    }

    /// One step with slip noise drawn from `rng`.
    pub fn step_with<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<Transition> {
        if action >= N_ACTIONS {
            return Err(AmcError::UnknownStateAction { state, action });
        }
        let a = if self.slip > 0.0 && rng.random::<f64>() < self.slip {
            rng.random_range(0..N_ACTIONS)
        } else {
            action
        };
        self.step(state, a)
    }

    /// Free, non-terminal cells (valid episode starts).
    pub fn start_states(&self) -> Vec<usize> {
        (0..self.n_states())
            .filter(|&s| !self.walls.contains(&self.cell_of(s)) && !self.is_terminal(s))
            .collect()
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.start {
            Some(c) => self.state_of(c),
            None => {
                let starts = self.start_states();
                starts[rng.random_range(0..starts.len())]
            }
        }
    }

    /// Breadth-first reachability of the goal, ignoring terminal cells on the way.
    pub fn reachable(&self, from: Cell) -> bool {
        let goal = self.state_of(self.goal);
        let mut seen = vec![false; self.n_states()];
        let mut queue = VecDeque::from([self.state_of(from)]);
        seen[self.state_of(from)] = true;
        while let Some(s) = queue.pop_front() {
            if s == goal {
                return true;
            }
            if self.is_terminal(s) {
                continue;
            }
            for a in 0..N_ACTIONS {
                let n = self.moved(s, a).expect("valid state");
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        false
    }
}

/// Optimal action values of a deterministic task by value iteration.
pub fn value_iteration(task: &GridTask, gamma: f64, tol: f64) -> Result<QTable> {
    let n = task.n_states();
    let bound = task.r_max() / (1.0 - gamma);
    let mut q = QTable::new(n, N_ACTIONS, bound.max(f64::MIN_POSITIVE));
    let mut v = vec![0.0; n];
    for _ in 0..100_000 {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if task.is_terminal(s) || task.walls.contains(&task.cell_of(s)) {
                continue;
            }
            for a in 0..N_ACTIONS {
                let t = task.step(s, a)?;
                let boot = if t.terminal { 0.0 } else { v[t.next_state] };
                let new = t.reward + gamma * boot;
                delta = delta.max((new - q.get(s, a)?).abs());
                q.set(s, a, new)?;
            }
        }
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = q.max_value(s)?;
        }
        if delta < tol {
            return Ok(q);
        }
    }
    Err(AmcError::InsufficientData("value iteration did not converge".into()))
}

/// An ordered list of tasks sharing one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub tasks: Vec<GridTask>,
    pub permutation_seed: u64,
}

/// Shape of the reward-flip suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSpec {
    pub n_tasks: usize,
    pub width: usize,
    pub height: usize,
    pub max_steps: usize,
    pub n_walls: usize,
    pub goal_reward: f64,
    /// Reward of the previous task's goal cell, which becomes terminal.
    pub flipped_reward: f64,
    pub step_reward: f64,
    pub slip: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            n_tasks: 5,
            width: 8,
            height: 8,
            max_steps: 200,
            n_walls: 6,
            goal_reward: 1.0,
            flipped_reward: -1.0,
            step_reward: 0.0,
            slip: 0.0,
        }
    }
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Largest reward magnitude across the suite.
    pub fn r_max(&self) -> f64 {
        self.tasks.iter().map(GridTask::r_max).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AmcError::InvalidTask(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let seq: Self = serde_json::from_str(s).map_err(|e| AmcError::InvalidTask(e.to_string()))?;
        if seq.tasks.is_empty() {
            return Err(AmcError::InvalidTask("empty task sequence".into()));
        }
        seq.tasks.iter().try_for_each(GridTask::validate)?;
        Ok(seq)
    }
}

/// Goals in a seeded random order; task `k` rewards its own goal and turns the
/// goal of task `k − 1` into a terminal cell with `flipped_reward`, so stored
/// transitions into that cell now disagree in reward with fresh ones.
///
/// Episodes start from a uniformly drawn free cell. Wall layouts that cut any
/// free cell off from a goal are redrawn.
pub fn make_reward_flip_sequence(spec: &SuiteSpec, seed: u64) -> Result<TaskSequence> {
    if spec.n_tasks == 0 {
        return Err(AmcError::InvalidTask("need at least one task".into()));
    }
    let cells = spec.width * spec.height;
    if spec.n_tasks + spec.n_walls + 1 > cells {
        return Err(AmcError::InvalidTask("grid too small for goals and walls".into()));
    }
    let mut rng = stream(seed, "env");
    for _ in 0..PLACEMENT_RETRIES {
        let mut order: Vec<usize> = (0..cells).collect();
        order.shuffle(&mut rng);
        let to_cell = |i: usize| (i % spec.width, i / spec.width);
        let goals: Vec<Cell> = order[..spec.n_tasks].iter().map(|&i| to_cell(i)).collect();
        let walls: BTreeSet<Cell> = order[spec.n_tasks..spec.n_tasks + spec.n_walls]
            .iter()
            .map(|&i| to_cell(i))
            .collect();
        let tasks: Vec<GridTask> = (0..spec.n_tasks)
            .map(|k| GridTask {
                width: spec.width,
                height: spec.height,
                start: None,
                goal: goals[k],
                step_reward: spec.step_reward,
                goal_reward: spec.goal_reward,
                hazards: if k > 0 {
                    vec![Hazard {
                        cell: goals[k - 1],
                        reward: spec.flipped_reward,
                    }]
                } else {
                    Vec::new()
                },
                max_steps: spec.max_steps,
                walls: walls.clone(),
                slip: spec.slip,
            })
            .collect();
        let connected = tasks
            .iter()
            .all(|t| t.start_states().iter().all(|&s| t.reachable(t.cell_of(s))));
        if connected {
            return Ok(TaskSequence {
                tasks,
                permutation_seed: seed,
            });
        }
    }
    Err(AmcError::InvalidTask("could not place reachable goals".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn open_task() -> GridTask {
        GridTask {
            width: 4,
            height: 3,
            start: Some((0, 0)),
            goal: (3, 2),
            step_reward: 0.0,
            goal_reward: 1.0,
            hazards: vec![],
            max_steps: 200,
            walls: BTreeSet::from([(1, 0)]),
            slip: 0.0,
        }
    }

    #[test]
    fn wall_and_edge_block_movement() {
        let t = open_task();
        let s = t.state_of((0, 0));
        assert_eq!(t.step(s, 1).unwrap().next_state, s); // wall at (1, 0)
        assert_eq!(t.step(s, 0).unwrap().next_state, s); // top edge
        assert_eq!(t.step(s, 3).unwrap().next_state, s); // left edge
        assert_eq!(t.step(s, 2).unwrap().next_state, t.state_of((0, 1)));
        assert!(t.step(s, 4).is_err());
        assert!(t.step(99, 0).is_err());
    }

    #[test]
    fn stepping_onto_goal_terminates() {
        let t = open_task();
        let tr = t.step(t.state_of((2, 2)), 1).unwrap();
        assert_eq!(tr.reward, 1.0);
        assert!(tr.terminal);
    }

    /// Independent re-implementation of the movement rules on raw coordinates.
    fn reference_step(t: &GridTask, (x, y): (i64, i64), a: usize) -> ((i64, i64), f64, bool) {
        let (nx, ny) = match a {
            0 => (x, y - 1),
            1 => (x + 1, y),
            2 => (x, y + 1),
            _ => (x - 1, y),
        };
        let blocked = nx < 0
            || ny < 0
            || nx >= t.width as i64
            || ny >= t.height as i64
            || t.walls.contains(&(nx as usize, ny as usize));
        let (fx, fy) = if blocked { (x, y) } else { (nx, ny) };
        let cell = (fx as usize, fy as usize);
        if cell == t.goal {
            return ((fx, fy), t.goal_reward, true);
        }
        for h in &t.hazards {
            if h.cell == cell {
                return ((fx, fy), h.reward, true);
            }
        }
        ((fx, fy), t.step_reward, false)
    }

    #[test]
    fn random_rollout_matches_reference_simulator() {
        let seq = make_reward_flip_sequence(&SuiteSpec::default(), 42).unwrap();
        let t = &seq.tasks[1];
        let mut rng = stream(3, "rollout");
        let mut s = t.sample_start(&mut rng);
        let (x0, y0) = t.cell_of(s);
        let mut pos = (x0 as i64, y0 as i64);
        for _ in 0..200 {
            let a = rng.random_range(0..N_ACTIONS);
            let tr = t.step(s, a).unwrap();
            let (rp, rr, rd) = reference_step(t, pos, a);
            assert_eq!(t.cell_of(tr.next_state), (rp.0 as usize, rp.1 as usize));
            assert_eq!((tr.reward, tr.terminal), (rr, rd));
            if tr.terminal {
                s = t.sample_start(&mut rng);
                let c = t.cell_of(s);
                pos = (c.0 as i64, c.1 as i64);
            } else {
                s = tr.next_state;
                pos = rp;
            }
        }
    }

    #[test]
    fn suite_is_deterministic_and_flips_previous_goal() {
        let spec = SuiteSpec::default();
        let a = make_reward_flip_sequence(&spec, 42).unwrap();
        assert_eq!(a, make_reward_flip_sequence(&spec, 42).unwrap());
        assert_ne!(a, make_reward_flip_sequence(&spec, 43).unwrap());
        assert_eq!(a.len(), 5);
        for k in 1..a.len() {
            assert_eq!(a.tasks[k].hazards[0].cell, a.tasks[k - 1].goal);
            assert_eq!(a.tasks[k].hazards[0].reward, -1.0);
        }
        assert_eq!(a.r_max(), 1.0);
        let round = TaskSequence::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(round, a);
    }

    #[test]
    fn single_task_sequence() {
        let one = make_reward_flip_sequence(
            &SuiteSpec {
                n_tasks: 1,
                ..Default::default()
            },
            42,
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.tasks[0].hazards.is_empty());
    }

    #[test]
    fn value_iteration_gives_discounted_distance() {
        let t = open_task();
        let q = value_iteration(&t, 0.9, 1e-12).unwrap();
        // from (2, 2) moving right reaches the goal immediately
        assert!((q.get(t.state_of((2, 2)), 1).unwrap() - 1.0).abs() < 1e-12);
        // (0, 0) is 5 moves away: value 0.9⁴
        assert!((q.max_value(t.state_of((0, 0))).unwrap() - 0.9f64.powi(4)).abs() < 1e-9);
    }

    #[test]
    fn unreachable_start_is_rejected() {
        let mut t = open_task();
        t.walls = BTreeSet::from([(1, 0), (0, 1)]);
        assert!(t.validate().is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::QTable;
use crate::error::{invalid, Result};
use crate::memory::effective_lr;
use crate::sde::CrystallizationState;

/// Learner and schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub eta0: f64,
    /// `κ` in `η_base,t = η0/(1 + κt)`.
    pub lr_decay: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps over which exploration decays linearly; restarts with every task.
    pub epsilon_decay_steps: u64,
    pub f_train: u64,
    pub f_consol: u64,
    pub f_target: u64,
    pub b_min: usize,
    pub steps_per_task: u64,
    pub eval_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            eta0: 0.25,
            lr_decay: 1e-5,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 3_000,
            f_train: 1,
            f_consol: 50,
            f_target: 100,
            b_min: 64,
            steps_per_task: 6_000,
            eval_episodes: 20,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", "must lie in [0, 1)"));
        }
        if !(self.eta0 > 0.0) {
            return Err(invalid("eta0", "must be positive"));
        }
        if !(self.lr_decay > 0.0) {
            return Err(invalid("lr_decay", "must be positive"));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(invalid(name, "must lie in [0, 1]"));
            }
        }
        if self.f_train == 0 || self.f_consol == 0 || self.f_target == 0 {
            return Err(invalid("frequencies", "must be >= 1"));
        }
        if self.steps_per_task == 0 || self.eval_episodes == 0 {
            return Err(invalid("budget", "steps_per_task and eval_episodes must be positive"));
        }
        Ok(())
    }

    /// Robbins–Monro base rate `η0/(1 + κt)`.
    pub fn eta_base(&self, step: u64) -> f64 {
        self.eta0 / (1.0 + self.lr_decay * step as f64)
    }

    /// Linearly decayed exploration rate `task_step` steps into a task.
    pub fn epsilon(&self, task_step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 {
            return self.epsilon_end;
        }
        let frac = (task_step as f64 / self.epsilon_decay_steps as f64).min(1.0);
        (1.0 - frac) * self.epsilon_start + frac * self.epsilon_end
    }
}

/// One replayed transition as seen by the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainItem {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
    /// Crystallization state; 0 for plain replay.
    pub c: f64,
    pub is_weight: f64,
}

/// Gradient steps on `w·(Q(s, a) − y)²` with `y = r + γ·max Q⁻(s′, ·)`,
/// applied item by item with rate `η_base,t·(1 − c)²`.
///
/// Returns each item's `|y − Q(s, a)|` before its update (fresh priorities).
pub fn train_step(q: &mut QTable, target: &QTable, batch: &[TrainItem], cfg: &AgentConfig, step: u64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(invalid("batch", "must not be empty"));
    }
    let eta_base = cfg.eta_base(step);
    batch
        .iter()
        .map(|it| {
            let bootstrap = if it.done { 0.0 } else { target.max_value(it.next_state)? };
            let y = it.reward + cfg.gamma * bootstrap;
            let current = q.get(it.state, it.action)?;
            let eta = effective_lr(eta_base, CrystallizationState::clipped(it.c));
            q.set(it.state, it.action, current - eta * it.is_weight * 2.0 * (current - y))?;
            Ok((y - current).abs())
        })
        .collect()
}

use serde::{Deserialize, Serialize};

use crate::error::{AmcError, Result};

/// Dense action-value table with a symmetric projection range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    /// Entries are projected into `[−bound, bound]` (`R_max/(1 − γ)`).
    bound: f64,
    projections: u64,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, bound: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            bound,
            projections: 0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// How many writes have been clipped by the projection so far.
    pub fn projections(&self) -> u64 {
        self.projections
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index(&self, state: usize, action: usize) -> Result<usize> {
        if state < self.n_states && action < self.n_actions {
            Ok(state * self.n_actions + action)
        } else {
            Err(AmcError::UnknownStateAction { state, action })
        }
    }

    pub fn get(&self, state: usize, action: usize) -> Result<f64> {
        Ok(self.values[self.index(state, action)?])
    }

    /// Store `value` projected into the admissible range.
    pub fn set(&mut self, state: usize, action: usize, value: f64) -> Result<()> {
        let i = self.index(state, action)?;
        let projected = value.clamp(-self.bound, self.bound);
        if projected != value {
            self.projections += 1;
        }
        self.values[i] = projected;
        Ok(())
    }

    pub fn row(&self, state: usize) -> Result<&[f64]> {
        let i = self.index(state, 0)?;
        Ok(&self.values[i..i + self.n_actions])
    }

    pub fn max_value(&self, state: usize) -> Result<f64> {
        Ok(self.row(state)?.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Greedy action; ties go to the lowest action id.
    pub fn argmax(&self, state: usize) -> Result<usize> {
        let row = self.row(state)?;
        let mut best = 0;
        for (a, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = a;
            }
        }
        Ok(best)
    }

    /// Overwrite with another table's entries (hard target sync).
    pub fn copy_from(&mut self, other: &QTable) {
        self.values.copy_from_slice(&other.values);
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

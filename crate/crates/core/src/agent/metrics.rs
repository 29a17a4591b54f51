use serde::{Deserialize, Serialize};

use crate::error::{AmcError, Result};

/// Continual-learning summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualMetrics {
    /// Mean final return over all tasks.
    pub average_performance: f64,
    /// Mean zero-shot gain over a from-scratch learner; absent for one task.
    pub forward_transfer: Option<f64>,
    /// Mean change of each earlier task's return by the end; absent for one task.
    pub backward_transfer: Option<f64>,
    /// `R_1^K / R_1^1`; absent when the first task was never solved.
    pub task1_retention: Option<f64>,
}

/// `eval[j][k]` is the return on task `k` after training stage `j`
/// (both zero-based). `scratch[k]` is a fresh learner's return on task `k`
/// after the same budget; only needed for forward transfer.
pub fn compute_metrics(eval: &[Vec<f64>], scratch: Option<&[f64]>) -> Result<ContinualMetrics> {
    let k_tasks = eval.len();
    if k_tasks == 0 {
        return Err(AmcError::InsufficientData("empty evaluation matrix".into()));
    }
    for (j, row) in eval.iter().enumerate() {
        if row.len() < k_tasks {
            return Err(AmcError::InsufficientData(format!("stage {j} evaluated {} of {k_tasks} tasks", row.len())));
        }
    }
    let last = &eval[k_tasks - 1];
    let average_performance = last[..k_tasks].iter().sum::<f64>() / k_tasks as f64;
    let first = eval[0][0];
    let task1_retention = (first > 0.0).then(|| last[0] / first);
    if k_tasks == 1 {
        return Ok(ContinualMetrics {
            average_performance,
            forward_transfer: None,
            backward_transfer: None,
            task1_retention,
        });
    }
    let denom = (k_tasks - 1) as f64;
    let backward_transfer = (0..k_tasks - 1).map(|k| last[k] - eval[k][k]).sum::<f64>() / denom;
    let forward_transfer = match scratch {
        Some(s) if s.len() >= k_tasks => Some((1..k_tasks).map(|k| eval[k - 1][k] - s[k]).sum::<f64>() / denom),
        Some(s) => {
            return Err(AmcError::InsufficientData(format!("{} scratch returns for {k_tasks} tasks", s.len())));
        }
        None => None,
    };
    Ok(ContinualMetrics {
        average_performance,
        forward_transfer,
        backward_transfer: Some(backward_transfer),
        task1_retention,
    })
}

//! Accuracy-matrix summaries.
//!
//! `rows[i][j]` is the accuracy on task `j`'s test split after training
//! through task `i` (both zero-based), defined for `j <= i`.

use crate::error::{Error, Result};

fn check_complete(rows: &[Vec<f64>]) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::State("empty accuracy matrix".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != i + 1 {
            return Err(Error::State(format!(
                "accuracy row {i} has {} entries, expected {}",
                row.len(),
                i + 1
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::State(format!("accuracy {v} outside [0, 1]")));
        }
    }
    Ok(rows.len())
}

/// Mean of the final row.
pub fn average_accuracy(rows: &[Vec<f64>]) -> Result<f64> {
    let t = check_complete(rows)?;
    Ok(rows[t - 1].iter().sum::<f64>() / t as f64)
}

/// Mean over earlier tasks of (best accuracy − final accuracy). The best
/// includes the final row, so a task that ends at its peak contributes zero.
/// Zero, with a warning, for a single task.
pub fn average_forgetting(rows: &[Vec<f64>]) -> Result<f64> {
    let t = check_complete(rows)?;
    if t < 2 {
        log::warn!("average forgetting needs at least two tasks; reporting 0");
        return Ok(0.0);
    }
    let last = &rows[t - 1];
    let total: f64 = (0..t - 1)
        .map(|j| {
            let best = (j..t).map(|i| rows[i][j]).fold(f64::NEG_INFINITY, f64::max);
            best - last[j]
        })
        .sum();
    Ok(total / (t - 1) as f64)
}

/// Average incremental accuracy: mean of each row.
pub fn incremental_curve(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect()
}

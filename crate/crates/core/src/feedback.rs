//! Prototype-confusion feedback.
//!
//! The pairwise cosine similarity of class prototypes measures how easily
//! two classes are confused. The `m` most similar distinct pairs select rows
//! of that matrix whose mean becomes a length-`K` signal. The model projects
//! the signal into its gate and logit pre-activations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numerics::{cosine_sim, norm, COSINE_EPS};
use crate::prototypes::PrototypeBank;

/// Which rows of the confusion matrix a selected pair `(i, j)` contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRows {
    /// Row `i` only, normalised by the number of pairs.
    #[default]
    First,
    /// Rows `i` and `j`, normalised by twice the number of pairs.
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackState {
    pub matrix: Vec<Vec<f64>>,
    pub top_pairs: Vec<(usize, usize)>,
    pub signal: Vec<f64>,
    pub m: usize,
}

/// Pairwise prototype cosine similarities. Rows and columns of unseen
/// classes are zero; the diagonal is 1 for seen nonzero prototypes.
pub fn feedback_matrix(bank: &PrototypeBank) -> Vec<Vec<f64>> {
    let k = bank.num_classes();
    let mut f = vec![vec![0.0; k]; k];
    for i in 0..k {
        if !bank.is_seen(i) {
            continue;
        }
        let pi = bank.prototype(i);
        if norm(pi) >= COSINE_EPS {
            f[i][i] = 1.0;
        }
        for j in (i + 1)..k {
            if !bank.is_seen(j) {
                continue;
            }
            let s = cosine_sim(pi, bank.prototype(j), COSINE_EPS)
                .expect("prototypes share one length")
                .clamp(-1.0, 1.0);
            f[i][j] = s;
            f[j][i] = s;
        }
    }
    f
}

/// Picks the `m` most similar distinct seen pairs (descending similarity,
/// ties by `(i, j)`) and averages their rows.
pub fn feedback_signal(
    matrix: &[Vec<f64>],
    seen: &[bool],
    m: usize,
    rows: PairRows,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let k = matrix.len();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if seen[i] && seen[j] {
                candidates.push((i, j));
            }
        }
    }
    candidates.sort_by(|&(a, b), &(c, d)| {
        matrix[c][d]
            .partial_cmp(&matrix[a][b])
            .expect("similarities are finite")
            .then((a, b).cmp(&(c, d)))
    });
    candidates.truncate(m);

    let mut signal = vec![0.0; k];
    if candidates.is_empty() {
        return (candidates, signal);
    }
    let mut count = 0usize;
    for &(i, j) in &candidates {
        let picked: &[usize] = match rows {
            PairRows::First => &[i],
            PairRows::Both => &[i, j],
        };
        for &r in picked {
            signal.iter_mut().zip(&matrix[r]).for_each(|(s, v)| *s += v);
            count += 1;
        }
    }
    let inv = 1.0 / count as f64;
    signal.iter_mut().for_each(|s| *s *= inv);
    (candidates, signal)
}

/// Confusion matrix and signal for the current bank.
pub fn refresh(bank: &PrototypeBank, m: usize, rows: PairRows) -> FeedbackState {
    let matrix = feedback_matrix(bank);
    let (top_pairs, signal) = feedback_signal(&matrix, bank.seen_flags(), m, rows);
    FeedbackState {
        matrix,
        top_pairs,
        signal,
        m,
    }
}

impl FeedbackState {
    pub fn csv_header(num_classes: usize) -> String {
        let mut h = String::from("step,pairs");
        for k in 0..num_classes {
            let _ = write!(h, ",f{k}");
        }
        h
    }

    /// One diagnostics row: step, the selected pairs as `i-j` joined by `;`,
    /// then the signal.
    pub fn csv_row(&self, step: usize) -> String {
        let pairs: Vec<String> = self
            .top_pairs
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect();
        let mut row = format!("{step},{}", pairs.join(";"));
        for s in &self.signal {
            let _ = write!(row, ",{s:.6}");
        }
        row
    }
}

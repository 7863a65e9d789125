//! Agreement between clusterings (purity, NMI) and top-k accuracy.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{LdpoError, Result};
use crate::stats::entropy;

/// Counts `n_ij` of items labeled `i` by A and `j` by B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Array2<usize>,
    pub total: usize,
}

impl ContingencyTable {
    pub fn new(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<Self> {
        if a.len() != b.len() {
            return Err(LdpoError::invalid(format!(
                "item sets differ: {} vs {} items",
                a.len(),
                b.len()
            )));
        }
        let mut counts = Array2::zeros((a.k(), b.k()));
        for (&i, &j) in a.labels().iter().zip(b.labels()) {
            counts[[i, j]] += 1;
        }
        Ok(ContingencyTable {
            counts,
            total: a.len(),
        })
    }

    fn row_sums(&self) -> Vec<usize> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        self.counts.columns().into_iter().map(|c| c.sum()).collect()
    }
}

/// Fraction of items in the majority reference class of their candidate
/// cluster. Not symmetric in its arguments.
pub fn purity(candidate: &ClusterAssignment, reference: &ClusterAssignment) -> Result<f64> {
    let table = ContingencyTable::new(candidate, reference)?;
    if table.total == 0 {
        return Err(LdpoError::invalid("purity of an empty item set"));
    }
    let hits: usize = table
        .counts
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / table.total as f64)
}

/// Mutual information normalized by the geometric mean of the two entropies.
/// Two single-cluster labelings score 1; if only one is a single cluster the
/// score is 0.
pub fn nmi(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<f64> {
    let table = ContingencyTable::new(a, b)?;
    if table.total == 0 {
        return Err(LdpoError::invalid("NMI of an empty item set"));
    }
    let n = table.total as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let h_a = entropy(rows.iter().map(|&c| c as f64 / n));
    let h_b = entropy(cols.iter().map(|&c| c as f64 / n));
    match (h_a > 0.0, h_b > 0.0) {
        (false, false) => return Ok(1.0),
        (false, true) | (true, false) => return Ok(0.0),
        _ => {}
    }
    let mut mi = 0.0;
    for ((i, j), &c) in table.counts.indexed_iter() {
        if c > 0 {
            let c = c as f64;
            mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    Ok((mi / (h_a * h_b).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of rows whose true label ranks among the `k` highest scores;
/// equal scores rank by lower class index first.
pub fn topk_accuracy(scores: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Result<f64> {
    let n_classes = scores.ncols();
    if k == 0 || k > n_classes {
        return Err(LdpoError::invalid(format!("top-{k} is undefined for {n_classes} classes")));
    }
    if labels.len() != scores.nrows() {
        return Err(LdpoError::DimensionMismatch {
            expected: scores.nrows(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(LdpoError::invalid("no rows to score"));
    }
    let mut hits = 0usize;
    for (row, &label) in scores.rows().into_iter().zip(labels) {
        if label >= n_classes {
            return Err(LdpoError::invalid(format!("label {label} out of range")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LdpoError::invalid("non-finite score"));
        }
        let target = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > target || (s == target && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceThresholds {
    pub purity_min: f64,
    pub nmi_min: f64,
}

impl Default for ConvergenceThresholds {
    fn default() -> Self {
        ConvergenceThresholds {
            purity_min: 0.7,
            nmi_min: 0.7,
        }
    }
}

/// Successive clusterings agree when `purity(curr, prev)` and
/// `nmi(curr, prev)` both reach their thresholds.
pub fn check_convergence(
    prev: &ClusterAssignment,
    curr: &ClusterAssignment,
    thresholds: ConvergenceThresholds,
) -> Result<bool> {
    Ok(purity(curr, prev)? >= thresholds.purity_min && nmi(curr, prev)? >= thresholds.nmi_min)
}

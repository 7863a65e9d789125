//! k-means and regularized information maximization (RIM) clustering.

mod kmeans;
mod rim;

pub use kmeans::{kmeans, KMeansConfig, KMeansModel};
pub use rim::{rim_fit, rim_objective, rim_objective_terms, RimConfig, RimFit, RimGradient, RimModel};

use serde::{Deserialize, Serialize};

use crate::error::{LdpoError, Result};

/// Hard cluster labels in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(LdpoError::invalid(format!("label {bad} is not below k = {k}")));
        }
        Ok(ClusterAssignment { labels, k })
    }

    /// `k` is taken as one more than the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        ClusterAssignment { labels, k }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Drops empty clusters and renumbers the rest densely, keeping their order.
    pub fn compact(&self) -> ClusterAssignment {
        let mut remap = vec![usize::MAX; self.k];
        let mut next = 0;
        for (old, size) in self.sizes().into_iter().enumerate() {
            if size > 0 {
                remap[old] = next;
                next += 1;
            }
        }
        ClusterAssignment {
            labels: self.labels.iter().map(|&l| remap[l]).collect(),
            k: next,
        }
    }

    /// Items whose label is `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> ClusterAssignment {
        ClusterAssignment {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_renumbers_densely() {
        let a = ClusterAssignment::new(vec![4, 0, 4, 2], 6).unwrap();
        let c = a.compact();
        assert_eq!(c.k(), 3);
        assert_eq!(c.labels(), &[2, 0, 2, 1]);
        assert_eq!(c.sizes(), vec![1, 1, 2]);
    }

    #[test]
    fn labels_must_be_below_k() {
        assert!(ClusterAssignment::new(vec![0, 3], 3).is_err());
    }
}

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::error::{LdpoError, Result};
use crate::stats::sq_dist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Independent k-means++ restarts (seeds `seed`, `seed + 1`, ...); the
    /// lowest-cost run wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 8,
            seed: 0,
            max_iter: 300,
            restarts: 1,
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centers: Array2<f64>,
    /// Within-cluster sum of squared distances of the returned assignment.
    pub cost: f64,
    /// Cost after each assignment step.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Ties between equidistant centers go to the lowest center index. A center
/// left without points is moved onto the point farthest from its own center.
pub fn kmeans(
    data: ArrayView2<'_, f64>,
    config: &KMeansConfig,
) -> Result<(KMeansModel, ClusterAssignment)> {
    let n = data.nrows();
    if config.k < 1 {
        return Err(LdpoError::invalid("k must be at least 1"));
    }
    if config.k > n {
        return Err(LdpoError::invalid(format!("k = {} exceeds {n} points", config.k)));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(LdpoError::invalid("non-finite feature value"));
    }
    let mut best: Option<(KMeansModel, ClusterAssignment)> = None;
    for r in 0..config.restarts.max(1) {
        let run = lloyd(data, config.k, config.seed.wrapping_add(r as u64), config.max_iter);
        if best.as_ref().is_none_or(|(m, _)| run.0.cost < m.cost) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init(data: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    chosen
}

fn assign(data: ArrayView2<'_, f64>, centers: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut cost = 0.0;
    for (i, row) in data.rows().into_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.rows().into_iter().enumerate() {
            let d = sq_dist(row, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
        dists[i] = best_d;
        cost += best_d;
    }
    cost
}

fn lloyd(data: ArrayView2<'_, f64>, k: usize, seed: u64, max_iter: usize) -> (KMeansModel, ClusterAssignment) {
    let (n, d) = data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = plus_plus_init(data, k, &mut rng);
    let mut centers = Array2::zeros((k, d));
    for (c, &i) in init.iter().enumerate() {
        centers.row_mut(c).assign(&data.row(i));
    }

    let mut labels = vec![0usize; n];
    let mut prev = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let cost = assign(data, &centers, &mut labels, &mut dists);
        trace.push(cost);
        iterations += 1;
        if labels == prev {
            converged = true;
            break;
        }
        if iterations >= max_iter.max(1) {
            break;
        }
        prev.copy_from_slice(&labels);

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &data.row(i));
            counts[l] += 1;
        }
        let mut used = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centers.row_mut(c).assign(&mean);
            } else {
                let far = (0..n)
                    .filter(|&i| !used[i])
                    .fold(None, |acc: Option<usize>, i| match acc {
                        Some(j) if dists[j] >= dists[i] => Some(j),
                        _ => Some(i),
                    })
                    .expect("k <= n leaves an unused point");
                used[far] = true;
                centers.row_mut(c).assign(&data.row(far));
            }
        }
    }
    let cost = *trace.last().expect("at least one assignment");
    let model = KMeansModel {
        centers,
        cost,
        cost_trace: trace,
        iterations,
        converged,
    };
    (model, ClusterAssignment { labels, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_distant_pairs() {
        let x = array![[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]];
        let (m, a) = kmeans(x.view(), &KMeansConfig::new(2, 3)).unwrap();
        assert_eq!(a.labels()[0], a.labels()[1]);
        assert_eq!(a.labels()[2], a.labels()[3]);
        assert_ne!(a.labels()[0], a.labels()[2]);
        // each point is 1 from its pair midpoint
        assert!((m.cost - 4.0).abs() < 1e-12);
        let c = a.labels()[0];
        assert_eq!(m.centers.row(c).to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn k_equals_n_has_zero_cost() {
        let x = array![[0.0], [1.0], [5.0], [7.5], [-3.0]];
        let (m, a) = kmeans(x.view(), &KMeansConfig::new(5, 1)).unwrap();
        assert_eq!(m.cost, 0.0);
        assert_eq!(a.sizes(), vec![1; 5]);
    }

    #[test]
    fn k_bounds_checked() {
        let x = array![[0.0], [1.0]];
        assert!(kmeans(x.view(), &KMeansConfig::new(3, 0)).is_err());
        assert!(kmeans(x.view(), &KMeansConfig::new(0, 0)).is_err());
    }

    #[test]
    fn cost_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((200, 3), |_| rng.random::<f64>());
        for seed in 0..5 {
            let (m, _) = kmeans(x.view(), &KMeansConfig::new(7, seed)).unwrap();
            for w in m.cost_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
            }
        }
    }

    #[test]
    fn duplicate_points_with_k_equal_n() {
        let x = array![[1.0], [1.0], [1.0]];
        let (m, a) = kmeans(x.view(), &KMeansConfig::new(3, 0)).unwrap();
        assert_eq!(m.cost, 0.0);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((50, 2), |_| rng.random::<f64>());
        let a = kmeans(x.view(), &KMeansConfig::new(4, 17)).unwrap();
        let b = kmeans(x.view(), &KMeansConfig::new(4, 17)).unwrap();
        assert_eq!(a, b);
    }
}

//! Seeded synthetic corpora with known generating classes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cluster::ClusterAssignment;
use crate::data::{DescriptorGrid, FeatureMatrix};
use crate::error::{LdpoError, Result};

/// Classes nested in groups. Class centers live in the first
/// `signal_dims` coordinates: a group center drawn with std `group_spread`
/// plus a class offset with std `class_spread`. The remaining `noise_dims`
/// coordinates carry only noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub groups: usize,
    pub classes_per_group: usize,
    pub per_class: usize,
    pub signal_dims: usize,
    pub noise_dims: usize,
    pub group_spread: f64,
    pub class_spread: f64,
    pub within_std: f64,
    pub noise_std: f64,
}

impl CorpusSpec {
    /// Flat classes without group structure.
    pub fn flat(classes: usize, per_class: usize, signal_dims: usize, noise_dims: usize) -> Self {
        CorpusSpec {
            groups: classes,
            classes_per_group: 1,
            per_class,
            signal_dims,
            noise_dims,
            group_spread: 3.0,
            class_spread: 0.0,
            within_std: 1.0,
            noise_std: 1.0,
        }
    }

    pub fn classes(&self) -> usize {
        self.groups * self.classes_per_group
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub features: FeatureMatrix,
    pub classes: ClusterAssignment,
    pub groups: ClusterAssignment,
}

pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<SyntheticCorpus> {
    if spec.classes() == 0 || spec.per_class == 0 || spec.signal_dims + spec.noise_dims == 0 {
        return Err(LdpoError::invalid("synthetic corpus needs classes, items and dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.signal_dims + spec.noise_dims;
    let n = spec.classes() * spec.per_class;
    let mut centers = Array2::<f64>::zeros((spec.classes(), spec.signal_dims));
    for g in 0..spec.groups {
        let gc: Vec<f64> = (0..spec.signal_dims).map(|_| spec.group_spread * gauss(&mut rng)).collect();
        for c in 0..spec.classes_per_group {
            for j in 0..spec.signal_dims {
                centers[[g * spec.classes_per_group + c, j]] = gc[j] + spec.class_spread * gauss(&mut rng);
            }
        }
    }
    let mut values = Array2::zeros((n, d));
    let mut classes = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let c = i / spec.per_class;
        classes.push(c);
        groups.push(c / spec.classes_per_group);
        for j in 0..spec.signal_dims {
            values[[i, j]] = centers[[c, j]] + spec.within_std * gauss(&mut rng);
        }
        for j in spec.signal_dims..d {
            values[[i, j]] = spec.noise_std * gauss(&mut rng);
        }
    }
    let ids = (0..n).map(|i| format!("item{i:05}")).collect();
    Ok(SyntheticCorpus {
        features: FeatureMatrix::new(ids, values)?,
        classes: ClusterAssignment::new(classes, spec.classes())?,
        groups: ClusterAssignment::new(groups, spec.groups)?,
    })
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussian blobs at the given centers, `per_blob` items each.
pub fn blobs(centers: &[Vec<f64>], per_blob: usize, std: f64, seed: u64) -> Result<(Array2<f64>, ClusterAssignment)> {
    let d = centers.first().map(Vec::len).unwrap_or(0);
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(LdpoError::invalid("blob centers must share a positive dimension"));
    }
    let noise = Normal::new(0.0, std).map_err(|e| LdpoError::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = centers.len() * per_blob;
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let b = i / per_blob;
        labels.push(b);
        for j in 0..d {
            x[[i, j]] = centers[b][j] + noise.sample(&mut rng);
        }
    }
    Ok((x, ClusterAssignment::new(labels, centers.len())?))
}

/// Replaces a `fraction` of labels, chosen at random, with a different
/// label drawn uniformly.
pub fn corrupt_labels(labels: &ClusterAssignment, fraction: f64, seed: u64) -> Result<ClusterAssignment> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(LdpoError::invalid("corruption fraction must lie in [0, 1]"));
    }
    let k = labels.k();
    let n = labels.len();
    let mut out = labels.labels().to_vec();
    if k < 2 {
        return Ok(labels.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flips = (fraction * n as f64).round() as usize;
    let chosen = rand::seq::index::sample(&mut rng, n, flips);
    for i in chosen.iter() {
        let shift = rng.random_range(1..k);
        out[i] = (out[i] + shift) % k;
    }
    ClusterAssignment::new(out, k)
}

/// Descriptor grids whose local descriptors come from a per-class mixture
/// of `textons` Gaussian prototypes.
pub fn texture_grids(
    classes: usize,
    per_class: usize,
    side: usize,
    dim: usize,
    textons: usize,
    seed: u64,
) -> Result<(Vec<DescriptorGrid>, ClusterAssignment)> {
    if classes == 0 || per_class == 0 || side == 0 || dim == 0 || textons == 0 {
        return Err(LdpoError::invalid("texture grids need positive sizes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Array2<f64>> = (0..classes)
        .map(|_| Array2::from_shape_fn((textons, dim), |_| 2.0 * gauss(&mut rng)))
        .collect();
    let mut grids = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for i in 0..per_class {
            let mut desc = Array2::zeros((side * side, dim));
            for mut row in desc.rows_mut() {
                let t = rng.random_range(0..textons);
                for j in 0..dim {
                    row[j] = protos[c][[t, j]] + 0.5 * gauss(&mut rng);
                }
            }
            grids.push(DescriptorGrid::new(format!("tex{c:02}_{i:03}"), side, desc)?);
            labels.push(c);
        }
    }
    Ok((grids, ClusterAssignment::new(labels, classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shapes_and_determinism() {
        let spec = CorpusSpec {
            groups: 2,
            classes_per_group: 3,
            per_class: 4,
            signal_dims: 3,
            noise_dims: 2,
            group_spread: 5.0,
            class_spread: 1.0,
            within_std: 0.1,
            noise_std: 1.0,
        };
        let a = generate_corpus(&spec, 1).unwrap();
        assert_eq!(a.features.n_items(), 24);
        assert_eq!(a.features.dim(), 5);
        assert_eq!(a.classes.k(), 6);
        assert_eq!(a.groups.labels()[23], 1);
        let b = generate_corpus(&spec, 1).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn corruption_rate_is_exact() {
        let truth = ClusterAssignment::new((0..100).map(|i| i % 5).collect(), 5).unwrap();
        let noisy = corrupt_labels(&truth, 0.3, 2).unwrap();
        let changed = truth.labels().iter().zip(noisy.labels()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 30);
    }

    #[test]
    fn texture_grid_shapes() {
        let (g, l) = texture_grids(3, 2, 2, 4, 2, 0).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0].descriptors().dim(), (4, 4));
        assert_eq!(l.k(), 3);
    }
}

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::{read_fmat, write_fmat};
use crate::error::{LdpoError, Result};

/// Eigenvalues below this fraction of the largest are treated as zero rank.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// d_in × d_out, orthonormal columns.
    pub components: Array2<f64>,
    /// Sample variances along each component, descending.
    pub eigenvalues: Array1<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(LdpoError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok((&x - &self.mean).dot(&self.components))
    }

    /// Writes `<prefix>.mean.fmat`, `<prefix>.proj.fmat` and `<prefix>.eig.fmat`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        write_fmat(&suffixed(prefix, "mean"), self.mean.view().insert_axis(Axis(0)))?;
        write_fmat(&suffixed(prefix, "proj"), self.components.view())?;
        write_fmat(&suffixed(prefix, "eig"), self.eigenvalues.view().insert_axis(Axis(0)))
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let mean = read_fmat(&suffixed(prefix, "mean"))?.row(0).to_owned();
        let components = read_fmat(&suffixed(prefix, "proj"))?;
        let eigenvalues = read_fmat(&suffixed(prefix, "eig"))?.row(0).to_owned();
        if components.nrows() != mean.len() || components.ncols() != eigenvalues.len() {
            return Err(LdpoError::parse(prefix, "inconsistent PCA matrices"));
        }
        Ok(PcaModel {
            mean,
            components,
            eigenvalues,
        })
    }
}

fn suffixed(prefix: &Path, part: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".{part}.fmat"));
    s.into()
}

/// Principal components of the sample covariance. The output dimension is
/// `min(target_dim, D, rank)`; the rank of centered data is at most `N − 1`,
/// and when `N − 1 < D` the eigenproblem is solved on the N×N Gram matrix.
pub fn fit_pca(x: ArrayView2<'_, f64>, target_dim: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(LdpoError::invalid("PCA needs at least 2 rows"));
    }
    if target_dim == 0 {
        return Err(LdpoError::invalid("PCA target dimension must be positive"));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean;
    let denom = (n - 1) as f64;

    let (values, vectors): (Vec<f64>, Array2<f64>) = if d < n {
        let c = centered.t().dot(&centered) / denom;
        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| c[[i, j]]));
        let vecs = Array2::from_shape_fn((d, d), |(i, j)| eig.eigenvectors[(i, j)]);
        (eig.eigenvalues.iter().copied().collect(), vecs)
    } else {
        let g = centered.dot(&centered.t()) / denom;
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| g[[i, j]]));
        let u = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, j)]);
        let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        // v = Xcᵀ u / sqrt((N−1) λ)
        let mut vecs = centered.t().dot(&u);
        for (j, &lam) in vals.iter().enumerate() {
            let scale = if lam > 0.0 { 1.0 / (denom * lam).sqrt() } else { 0.0 };
            vecs.column_mut(j).mapv_inplace(|v| v * scale);
        }
        (vals, vecs)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    if top <= 0.0 {
        return Err(LdpoError::Degenerate("centered data has rank 0".into()));
    }
    let rank = order.iter().filter(|&&i| values[i] > top * RANK_TOL).count();
    let out_dim = target_dim.min(d).min(rank);

    let mut components = Array2::zeros((d, out_dim));
    let mut eigenvalues = Array1::zeros(out_dim);
    for (slot, &src) in order.iter().take(out_dim).enumerate() {
        let mut col = vectors.column(src).to_owned();
        let norm = col.dot(&col).sqrt();
        col /= norm;
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > col[best].abs() { i } else { best });
        if col[pivot] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
        components.column_mut(slot).assign(&col);
        eigenvalues[slot] = values[src].max(0.0);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

/// `(x − mean)ᵀ · components`.
pub fn apply_pca(model: &PcaModel, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != model.input_dim() {
        return Err(LdpoError::DimensionMismatch {
            expected: model.input_dim(),
            found: x.len(),
        });
    }
    Ok((&x - &model.mean).dot(&model.components))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_data(n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = array![[1.0, 2.0, 0.0, -1.0, 0.5], [0.0, 1.0, 1.0, 3.0, -2.0]];
        let offset = array![3.0, -1.0, 2.0, 0.0, 7.0];
        let coef = Array2::from_shape_fn((n, 2), |_| rng.random_range(-5.0..5.0));
        coef.dot(&basis) + &offset
    }

    #[test]
    fn plane_is_recovered_exactly() {
        let x = plane_data(40);
        let m = fit_pca(x.view(), 2).unwrap();
        assert_eq!(m.output_dim(), 2);
        let proj = m.transform(x.view()).unwrap();
        let back = proj.dot(&m.components.t()) + &m.mean;
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_caps_output_dimension() {
        let x = plane_data(40);
        let m = fit_pca(x.view(), 5).unwrap();
        assert_eq!(m.output_dim(), 2);
    }

    #[test]
    fn eigenvalues_are_projected_variances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((30, 4), |(_, j)| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let m = fit_pca(x.view(), 4).unwrap();
        let proj = m.transform(x.view()).unwrap();
        let var = proj.var_axis(Axis(0), 1.0);
        for (v, e) in var.iter().zip(&m.eigenvalues) {
            assert!((v - e).abs() < 1e-9);
        }
        for w in m.eigenvalues.as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1]);
        }
        let gram = m.components.t().dot(&m.components);
        for ((i, j), v) in gram.indexed_iter() {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn wide_data_uses_gram_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((12, 4096), |_| rng.random_range(-1.0..1.0));
        let m = fit_pca(x.view(), 4096).unwrap();
        assert!(m.output_dim() <= 11);
        let proj = m.transform(x.view()).unwrap();
        let var = proj.var_axis(Axis(0), 1.0);
        for (v, e) in var.iter().zip(&m.eigenvalues) {
            assert!((v - e).abs() < 1e-9 * e.max(1.0));
        }
    }

    #[test]
    fn apply_examples() {
        let x = plane_data(20);
        let m = fit_pca(x.view(), 2).unwrap();
        let at_mean = apply_pca(&m, m.mean.view()).unwrap();
        assert!(at_mean.iter().all(|v| v.abs() < 1e-12));

        let identity = PcaModel {
            mean: Array1::zeros(3),
            components: Array2::eye(3),
            eigenvalues: Array1::ones(3),
        };
        let p = array![4.0, -2.0, 0.5];
        assert_eq!(apply_pca(&identity, p.view()).unwrap(), p);

        let v = array![1.0, 2.0, 3.0, 4.0, 5.0];
        let direct: Vec<f64> = (0..2)
            .map(|c| (0..5).map(|i| (v[i] - m.mean[i]) * m.components[[i, c]]).sum())
            .collect();
        let got = apply_pca(&m, v.view()).unwrap();
        for (a, b) in got.iter().zip(direct) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(apply_pca(&m, array![1.0].view()).is_err());
    }

    #[test]
    fn too_few_rows() {
        assert!(fit_pca(array![[1.0, 2.0]].view(), 1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("pca");
        let m = fit_pca(plane_data(10).view(), 2).unwrap();
        m.save(&prefix).unwrap();
        assert_eq!(PcaModel::load(&prefix).unwrap(), m);
    }
}

//! Fixed-length encodings of descriptor grids (Fisher vectors, VLAD) and
//! PCA reduction.

mod gmm;
mod pca;

pub use gmm::{fit_gmm, GmmCodebook, GmmConfig, GmmFit};
pub use pca::{apply_pca, fit_pca, PcaModel};

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, KMeansConfig};
use crate::data::{pool_descriptors, DescriptorGrid, FeatureMatrix};
use crate::error::{LdpoError, Result};
use crate::stats::sq_dist;

const NORM_EPS: f64 = 1e-12;

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm >= NORM_EPS {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(LdpoError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Raw Fisher vector: gradients of the GMM log-likelihood with respect to
/// the means (first `K·d` entries, component-major) and the variances (last
/// `K·d` entries), each averaged over descriptors and scaled by the inverse
/// square root of the Fisher information.
pub fn fisher_gradients(descriptors: ArrayView2<'_, f64>, gmm: &GmmCodebook) -> Result<Array1<f64>> {
    check_dim(gmm.dim(), descriptors.ncols())?;
    let (k, d) = (gmm.components(), gmm.dim());
    let t = descriptors.nrows() as f64;
    let (post, _) = gmm.posteriors(descriptors)?;
    let mut out = Array1::zeros(2 * k * d);
    for c in 0..k {
        let w = gmm.weights[c];
        if w <= 0.0 {
            continue;
        }
        let sigma = gmm.variances.row(c).mapv(f64::sqrt);
        let mut mean_grad = vec![0.0; d];
        let mut var_grad = vec![0.0; d];
        for (row, gamma) in descriptors.rows().into_iter().zip(post.column(c)) {
            if *gamma == 0.0 {
                continue;
            }
            for j in 0..d {
                let u = (row[j] - gmm.means[[c, j]]) / sigma[j];
                mean_grad[j] += gamma * u;
                var_grad[j] += gamma * (u * u - 1.0);
            }
        }
        let mean_scale = 1.0 / (t * w.sqrt());
        let var_scale = 1.0 / (t * (2.0 * w).sqrt());
        for j in 0..d {
            out[c * d + j] = mean_grad[j] * mean_scale;
            out[k * d + c * d + j] = var_grad[j] * var_scale;
        }
    }
    Ok(out)
}

/// Improved Fisher vector: signed square root then global L2 normalization.
/// Output length is `2·K·d`.
pub fn encode_fisher(grid: &DescriptorGrid, gmm: &GmmCodebook) -> Result<Array1<f64>> {
    let mut v = fisher_gradients(grid.descriptors(), gmm)?;
    v.mapv_inplace(|x| x.signum() * x.abs().sqrt());
    l2_normalize(v.as_slice_mut().expect("contiguous"));
    Ok(v)
}

/// k-means codewords for VLAD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VladCodebook {
    pub codewords: Array2<f64>,
}

impl VladCodebook {
    pub fn len(&self) -> usize {
        self.codewords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.codewords.ncols()
    }
}

pub fn fit_vlad_codebook(descriptors: ArrayView2<'_, f64>, codewords: usize, seed: u64) -> Result<VladCodebook> {
    let (model, _) = kmeans(descriptors, &KMeansConfig::new(codewords, seed))?;
    Ok(VladCodebook {
        codewords: model.centers,
    })
}

/// Per-codeword sums of `descriptor − codeword` over the descriptors whose
/// nearest codeword it is, before any normalization.
pub fn vlad_residual_sums(descriptors: ArrayView2<'_, f64>, cb: &VladCodebook) -> Result<Array1<f64>> {
    check_dim(cb.dim(), descriptors.ncols())?;
    let d = cb.dim();
    let mut out = Array1::zeros(cb.len() * d);
    for row in descriptors.rows() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, cw) in cb.codewords.rows().into_iter().enumerate() {
            let dist = sq_dist(row, cw);
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        let mut block = out.slice_mut(s![best * d..(best + 1) * d]);
        block += &row;
        block -= &cb.codewords.row(best);
    }
    Ok(out)
}

/// VLAD with per-codeword intra-normalization followed by global L2.
/// Output length is `K·d`.
pub fn encode_vlad(grid: &DescriptorGrid, cb: &VladCodebook) -> Result<Array1<f64>> {
    let mut v = vlad_residual_sums(grid.descriptors(), cb)?;
    let d = cb.dim();
    {
        let flat = v.as_slice_mut().expect("contiguous");
        for block in flat.chunks_mut(d) {
            l2_normalize(block);
        }
        l2_normalize(flat);
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EncodingMethod {
    Fv { components: usize },
    Vlad { codewords: usize },
}

/// Everything needed to re-apply a fitted encoding.
#[derive(Debug, Clone)]
pub enum FittedEncoder {
    Fisher(GmmCodebook),
    Vlad(VladCodebook),
}

impl FittedEncoder {
    pub fn encode(&self, grid: &DescriptorGrid) -> Result<Array1<f64>> {
        match self {
            FittedEncoder::Fisher(g) => encode_fisher(grid, g),
            FittedEncoder::Vlad(cb) => encode_vlad(grid, cb),
        }
    }
}

/// Fits the codebook on all pooled descriptors, encodes every grid, and
/// optionally reduces the result with PCA.
pub fn encode_grids(
    grids: &[DescriptorGrid],
    method: EncodingMethod,
    pca_dim: Option<usize>,
    seed: u64,
) -> Result<(FeatureMatrix, FittedEncoder, Option<PcaModel>)> {
    let pooled = pool_descriptors(grids)?;
    let encoder = match method {
        EncodingMethod::Fv { components } => {
            let cfg = GmmConfig {
                components,
                seed,
                ..Default::default()
            };
            FittedEncoder::Fisher(fit_gmm(pooled.view(), &cfg)?.codebook)
        }
        EncodingMethod::Vlad { codewords } => FittedEncoder::Vlad(fit_vlad_codebook(pooled.view(), codewords, seed)?),
    };
    let rows = grids.iter().map(|g| encoder.encode(g)).collect::<Result<Vec<_>>>()?;
    let width = rows[0].len();
    let mut values = Array2::zeros((rows.len(), width));
    for (mut dst, src) in values.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    let ids = grids.iter().map(|g| g.id.clone()).collect();
    let encoded = FeatureMatrix::new(ids, values)?;
    match pca_dim {
        Some(dim) => {
            let pca = fit_pca(encoded.view(), dim)?;
            let reduced = pca.transform(encoded.view())?;
            let (ids, _) = encoded.into_parts();
            Ok((FeatureMatrix::new(ids, reduced)?, encoder, Some(pca)))
        }
        None => Ok((encoded, encoder, None)),
    }
}

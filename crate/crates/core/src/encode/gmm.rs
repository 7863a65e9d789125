use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, KMeansConfig};
use crate::error::{LdpoError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian mixture used as a Fisher vector codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmCodebook {
    pub weights: Array1<f64>,
    /// K×d
    pub means: Array2<f64>,
    /// K×d diagonal variances
    pub variances: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative change of the mean log-likelihood that ends EM.
    pub tol: f64,
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 64,
            seed: 0,
            max_iter: 200,
            tol: 1e-6,
            variance_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub codebook: GmmCodebook,
    /// Mean per-descriptor log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

impl GmmCodebook {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Log of `π_k N(x | μ_k, Σ_k)` for every component.
    fn weighted_log_densities(&self, x: ArrayView1<'_, f64>, out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let w = self.weights[k];
            if w <= 0.0 {
                *slot = f64::NEG_INFINITY;
                continue;
            }
            let mut acc = 0.0;
            for ((&xj, &mj), &vj) in x.iter().zip(self.means.row(k)).zip(self.variances.row(k)) {
                let diff = xj - mj;
                acc += LN_2PI + vj.ln() + diff * diff / vj;
            }
            *slot = w.ln() - 0.5 * acc;
        }
    }

    /// Component posteriors for each descriptor (rows) and the total log-likelihood.
    pub fn posteriors(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, f64)> {
        if x.ncols() != self.dim() {
            return Err(LdpoError::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let k = self.components();
        let mut post = Array2::zeros((x.nrows(), k));
        let mut buf = vec![0.0; k];
        let mut total = 0.0;
        for (i, row) in x.rows().into_iter().enumerate() {
            self.weighted_log_densities(row, &mut buf);
            let max = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = buf.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse;
            for (c, v) in buf.iter().enumerate() {
                post[[i, c]] = (v - lse).exp();
            }
        }
        Ok((post, total))
    }
}

fn distinct_rows(x: ArrayView2<'_, f64>) -> usize {
    x.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// EM for a diagonal GMM, initialized from k-means.
pub fn fit_gmm(descriptors: ArrayView2<'_, f64>, config: &GmmConfig) -> Result<GmmFit> {
    let (n, d) = descriptors.dim();
    let k = config.components;
    if k == 0 || d == 0 {
        return Err(LdpoError::invalid("GMM needs at least one component and one dimension"));
    }
    let distinct = distinct_rows(descriptors);
    if distinct < k {
        return Err(LdpoError::invalid(format!(
            "{distinct} distinct descriptors cannot support {k} components"
        )));
    }
    if distinct < 2 {
        return Err(LdpoError::Degenerate("all descriptors are identical".into()));
    }
    let floor = config.variance_floor;

    let (km, init) = kmeans(descriptors, &KMeansConfig::new(k, config.seed))?;
    let global_var = descriptors.var_axis(Axis(0), 0.0).mapv(|v| v.max(floor));
    let sizes = init.sizes();
    let mut variances = Array2::zeros((k, d));
    for c in 0..k {
        let members = init.members(c);
        if members.len() < 2 {
            variances.row_mut(c).assign(&global_var);
        } else {
            let v = descriptors.select(Axis(0), &members).var_axis(Axis(0), 0.0);
            variances.row_mut(c).assign(&v.mapv(|x| x.max(floor)));
        }
    }
    let mut gmm = GmmCodebook {
        weights: Array1::from_iter(sizes.iter().map(|&s| s as f64 / n as f64)),
        means: km.centers,
        variances,
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (post, total) = gmm.posteriors(descriptors)?;
        let ll = total / n as f64;
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= config.tol * prev.abs());
        trace.push(ll);
        if done || iterations >= config.max_iter {
            break;
        }
        iterations += 1;

        let mass = post.sum_axis(Axis(0));
        for c in 0..k {
            let nk = mass[c];
            gmm.weights[c] = nk / n as f64;
            if nk < 1e-10 {
                continue;
            }
            let resp = post.column(c);
            let mean = resp.dot(&descriptors) / nk;
            let mut var = Array1::<f64>::zeros(d);
            for (r, row) in resp.iter().zip(descriptors.rows()) {
                for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += r * (x - m) * (x - m);
                }
            }
            gmm.variances.row_mut(c).assign(&(var / nk).mapv(|v| v.max(floor)));
            gmm.means.row_mut(c).assign(&mean);
        }
        let wsum = gmm.weights.sum();
        gmm.weights /= wsum;
    }
    Ok(GmmFit {
        codebook: gmm,
        log_likelihood: trace,
        iterations,
    })
}

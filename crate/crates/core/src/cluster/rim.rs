//! Discriminative clustering by regularized information maximization over
//! an unsupervised multilogit model `p(c = k | f) ∝ exp(w_kᵀ f + b_k)`.
//!
//! The objective is the empirical mutual information between items and
//! labels minus an L2 penalty on the weight vectors:
//!
//! ```text
//! F(W) = H(p̄) − (1/N) Σ_i H(p_i) − (λ/N) Σ_k w_kᵀ w_k
//! ```
//!
//! where `p_i` is the posterior of item `i` and `p̄` the mean posterior.
//! Biases are not penalized. The penalty is divided by `N` so that `λ`
//! weighs the regularizer against the information carried by the whole
//! corpus rather than by a single item.

use nalgebra::DMatrix;
#[cfg(test)]
use nalgebra::DVector;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::error::{LdpoError, Result};
use crate::stats::{argmax, entropy, log_softmax_rows, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RimConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
    /// Sufficient-increase constant of the backtracking line search.
    pub armijo: f64,
    /// z-score features before fitting.
    pub standardize: bool,
}

impl Default for RimConfig {
    fn default() -> Self {
        RimConfig {
            lambda: 1.0,
            max_iter: 500,
            tol: 1e-7,
            armijo: 1e-4,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RimModel {
    /// K×D, one row per cluster.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub lambda: f64,
    /// Applied to raw features before the multilogit model.
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RimGradient {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct RimFit {
    pub model: RimModel,
    pub assignment: ClusterAssignment,
    /// Objective value at the start and after every accepted ascent step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl RimModel {
    pub fn zeros(k: usize, dim: usize, lambda: f64) -> Self {
        RimModel {
            weights: Array2::zeros((k, dim)),
            biases: Array1::zeros(k),
            lambda,
            standardizer: Standardizer::identity(dim),
        }
    }

    pub fn k(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    fn standardized(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(LdpoError::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        self.standardizer.apply(x)
    }

    pub fn posteriors(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let z = self.standardized(x)?;
        Ok(log_softmax_rows(&logits(&self.weights, &self.biases, z.view())).mapv(f64::exp))
    }

    /// Hard labels by largest posterior (lowest index on ties).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<ClusterAssignment> {
        let p = self.posteriors(x)?;
        let labels = p.rows().into_iter().map(argmax).collect();
        ClusterAssignment::new(labels, self.k())
    }

    /// Gradient of the objective with respect to weights and biases.
    pub fn gradient(&self, x: ArrayView2<'_, f64>) -> Result<RimGradient> {
        let z = self.standardized(x)?;
        let eval = evaluate(&self.weights, &self.biases, self.lambda, z.view(), true);
        Ok(eval.grad.expect("requested"))
    }
}

pub fn rim_objective(model: &RimModel, x: ArrayView2<'_, f64>) -> Result<f64> {
    let (mi, penalty) = rim_objective_terms(model, x)?;
    Ok(mi - penalty)
}

/// The mutual-information estimate and the penalty, separately.
pub fn rim_objective_terms(model: &RimModel, x: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    let z = model.standardized(x)?;
    let eval = evaluate(&model.weights, &model.biases, model.lambda, z.view(), false);
    Ok((eval.mi, eval.penalty))
}

fn logits(w: &Array2<f64>, b: &Array1<f64>, z: ArrayView2<'_, f64>) -> Array2<f64> {
    z.dot(&w.t()) + b
}

struct Evaluation {
    mi: f64,
    penalty: f64,
    grad: Option<RimGradient>,
}

impl Evaluation {
    fn value(&self) -> f64 {
        self.mi - self.penalty
    }
}

fn evaluate(w: &Array2<f64>, b: &Array1<f64>, lambda: f64, z: ArrayView2<'_, f64>, with_grad: bool) -> Evaluation {
    let n = z.nrows() as f64;
    let log_p = log_softmax_rows(&logits(w, b, z));
    let p = log_p.mapv(f64::exp);
    let p_bar = p.mean_axis(Axis(0)).expect("nonempty");
    let cond: f64 = p
        .iter()
        .zip(log_p.iter())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &lp)| -pi * lp)
        .sum::<f64>()
        / n;
    let mi = entropy(p_bar.iter().copied()) - cond;
    let penalty = lambda / n * w.iter().map(|v| v * v).sum::<f64>();

    let grad = with_grad.then(|| {
        let log_bar = p_bar.mapv(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
        // dF/dp_ik = (ln p_ik − ln p̄_k) / N, chained through the softmax.
        let mut dz = Array2::zeros(p.dim());
        for ((mut dz_row, p_row), lp_row) in dz.rows_mut().into_iter().zip(p.rows()).zip(log_p.rows()) {
            let g: Vec<f64> = lp_row
                .iter()
                .zip(log_bar.iter())
                .map(|(&lp, &lb)| if lb.is_finite() { (lp - lb) / n } else { 0.0 })
                .collect();
            let mean_g: f64 = p_row.iter().zip(&g).map(|(pk, gk)| pk * gk).sum();
            for (k, d) in dz_row.iter_mut().enumerate() {
                *d = p_row[k] * (g[k] - mean_g);
            }
        }
        let mut gw = dz.t().dot(&z);
        gw.scaled_add(-2.0 * lambda / n, w);
        let gb = dz.sum_axis(Axis(0));
        RimGradient {
            weights: gw,
            biases: gb,
        }
    });
    Evaluation { mi, penalty, grad }
}

/// One-vs-rest least-squares fit of `[z, 1]` to ±1 targets.
fn least_squares_init(z: ArrayView2<'_, f64>, init: &ClusterAssignment) -> Result<(Array2<f64>, Array1<f64>)> {
    let (n, d) = z.dim();
    let k = init.k();
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j < d { z[[i, j]] } else { 1.0 });
    let t = DMatrix::from_fn(n, k, |i, c| if init.labels()[i] == c { 1.0 } else { -1.0 });
    let mut gram = a.transpose() * &a;
    let ridge = 1e-8 * n as f64;
    for j in 0..=d {
        gram[(j, j)] += ridge;
    }
    let rhs = a.transpose() * t;
    let chol = gram
        .cholesky()
        .ok_or_else(|| LdpoError::Degenerate("least-squares initialization is singular".into()))?;
    let beta = chol.solve(&rhs);
    let weights = Array2::from_shape_fn((k, d), |(c, j)| beta[(j, c)]);
    let biases = Array1::from_iter((0..k).map(|c| beta[(d, c)]));
    Ok((weights, biases))
}

/// Maximizes the RIM objective by full-batch gradient ascent with a
/// backtracking (Armijo) line search, starting from a least-squares fit to
/// `init`. Clusters that end up with no hard-assigned items are removed and
/// the remaining ones renumbered in order.
pub fn rim_fit(x: ArrayView2<'_, f64>, init: &ClusterAssignment, config: &RimConfig) -> Result<RimFit> {
    let n = x.nrows();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LdpoError::invalid("non-finite feature value"));
    }
    if init.len() != n {
        return Err(LdpoError::DimensionMismatch {
            expected: n,
            found: init.len(),
        });
    }
    if !(config.lambda > 0.0) {
        return Err(LdpoError::invalid("lambda must be positive"));
    }
    let init = init.compact();
    if init.k() < 2 {
        return Err(LdpoError::invalid("RIM needs an initial clustering with at least 2 clusters"));
    }
    let standardizer = if config.standardize {
        Standardizer::fit(x)?
    } else {
        Standardizer::identity(x.ncols())
    };
    let z = standardizer.apply(x)?;

    let (mut w, mut b) = least_squares_init(z.view(), &init)?;
    let mut current = evaluate(&w, &b, config.lambda, z.view(), true);
    let mut trace = vec![current.value()];
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let grad = current.grad.take().expect("gradient requested");
        let sq_norm: f64 =
            grad.weights.iter().map(|v| v * v).sum::<f64>() + grad.biases.iter().map(|v| v * v).sum::<f64>();
        if sq_norm == 0.0 {
            break;
        }
        let f0 = current.value();
        let mut accepted = None;
        step *= 2.0;
        while step > 1e-16 {
            let w_try = &w + &(&grad.weights * step);
            let b_try = &b + &(&grad.biases * step);
            let trial = evaluate(&w_try, &b_try, config.lambda, z.view(), false);
            if trial.value() >= f0 + config.armijo * step * sq_norm {
                accepted = Some((w_try, b_try, trial.value()));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, b_new, f_new)) = accepted else {
            break;
        };
        w = w_new;
        b = b_new;
        iterations += 1;
        trace.push(f_new);
        current = evaluate(&w, &b, config.lambda, z.view(), true);
        if (f_new - f0).abs() <= config.tol * f0.abs().max(1e-12) {
            break;
        }
    }

    let model = RimModel {
        weights: w,
        biases: b,
        lambda: config.lambda,
        standardizer,
    };
    let hard = model.predict(x)?;
    let keep: Vec<usize> = hard
        .sizes()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .map(|(c, _)| c)
        .collect();
    let assignment = hard.compact();
    let model = RimModel {
        weights: model.weights.select(Axis(0), &keep),
        biases: model.biases.select(Axis(0), &keep),
        ..model
    };
    Ok(RimFit {
        model,
        assignment,
        objective_trace: trace,
        iterations,
    })
}

/// Solves `(AᵀA)x = Aᵀy` for tests that need a reference least-squares fit.
#[cfg(test)]
pub(crate) fn normal_equations(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    (a.transpose() * a).cholesky().unwrap().solve(&(a.transpose() * y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(k: usize, d: usize, lambda: f64, rng: &mut ChaCha8Rng) -> RimModel {
        let mut m = RimModel::zeros(k, d, lambda);
        m.weights.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        m.biases.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        m
    }

    #[test]
    fn zero_model_has_zero_objective() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let m = RimModel::zeros(4, 2, 1.0);
        assert_eq!(rim_objective(&m, x.view()).unwrap().abs(), 0.0);
    }

    #[test]
    fn separating_model_approaches_ln2() {
        let x = array![[-1.0], [-1.2], [-0.9], [1.0], [1.1], [0.8]];
        let mut m = RimModel::zeros(2, 1, 1.0);
        m.weights[[0, 0]] = -40.0;
        m.weights[[1, 0]] = 40.0;
        let (mi, penalty) = rim_objective_terms(&m, x.view()).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-3, "mi = {mi}");
        assert!((penalty - 3200.0 / 6.0).abs() < 1e-9);
        assert!((rim_objective(&m, x.view()).unwrap() - (mi - penalty)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((12, 3), |_| rng.random_range(-2.0..2.0));
        let m = random_model(4, 3, 0.7, &mut rng);
        let g = m.gradient(x.view()).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..m.weights.len() {
            let (r, c) = (idx / 3, idx % 3);
            let mut plus = m.clone();
            plus.weights[[r, c]] += h;
            let mut minus = m.clone();
            minus.weights[[r, c]] -= h;
            let fd = (rim_objective(&plus, x.view()).unwrap() - rim_objective(&minus, x.view()).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g.weights[[r, c]]).abs() / fd.abs().max(g.weights[[r, c]].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn mi_term_bounded_by_ln_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x = Array2::from_shape_fn((15, 2), |_| rng.random_range(-3.0..3.0));
            let m = random_model(5, 2, 1.0, &mut rng);
            let (mi, pen) = rim_objective_terms(&m, x.view()).unwrap();
            assert!(mi >= -1e-12 && mi <= 5f64.ln() + 1e-12);
            assert!(pen >= 0.0);
        }
    }

    #[test]
    fn init_needs_two_clusters() {
        let x = array![[0.0], [1.0]];
        let init = ClusterAssignment::new(vec![0, 0], 1).unwrap();
        assert!(rim_fit(x.view(), &init, &RimConfig::default()).is_err());
    }

    #[test]
    fn least_squares_init_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Array2::from_shape_fn((20, 2), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let init = ClusterAssignment::new(labels.clone(), 3).unwrap();
        let (w, b) = least_squares_init(z.view(), &init).unwrap();
        let a = DMatrix::from_fn(20, 3, |i, j| if j < 2 { z[[i, j]] } else { 1.0 });
        let y = DVector::from_fn(20, |i, _| if labels[i] == 1 { 1.0 } else { -1.0 });
        let beta = normal_equations(&a, &y);
        assert!((w[[1, 0]] - beta[0]).abs() < 1e-6);
        assert!((w[[1, 1]] - beta[1]).abs() < 1e-6);
        assert!((b[1] - beta[2]).abs() < 1e-6);
    }
}

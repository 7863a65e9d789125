//! The pseudo-task learner: a one-hidden-layer softmax network trained on
//! cluster labels whose hidden activations serve as the next embedding.
//!
//! On a warm start the hidden layer is copied from the previous model while
//! the output layer is rebuilt for the new number of classes and trained
//! with a larger learning rate.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::{load_feature_matrix, read_fmat, write_atomic, write_fmat, FeatureMatrix, MatrixFormat};
use crate::error::{LdpoError, Result};
use crate::stats::log_softmax_rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning-rate multiplier for the output layer.
    pub output_lr_multiplier: f64,
    /// L2 penalty coefficient on both weight matrices (biases are not
    /// decayed).
    pub weight_decay: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden: 256,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            output_lr_multiplier: 10.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerModel {
    /// D×H
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    /// H×K
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
    pub config: LearnerConfig,
    pub seed: u64,
    /// Mean training cross-entropy before training and after each epoch.
    pub loss_history: Vec<f64>,
    /// Same for the validation items, when supplied.
    pub val_loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

struct Forward {
    pre: Array2<f64>,
    hidden: Array2<f64>,
    log_p: Array2<f64>,
}

impl LearnerModel {
    pub fn input_dim(&self) -> usize {
        self.hidden_weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_weights.ncols()
    }

    pub fn classes(&self) -> usize {
        self.output_weights.ncols()
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(LdpoError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Forward {
        let pre = x.dot(&self.hidden_weights) + &self.hidden_bias;
        let hidden = pre.mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.output_weights) + &self.output_bias;
        Forward {
            pre,
            hidden,
            log_p: log_softmax_rows(&logits),
        }
    }

    /// Post-ReLU hidden activations.
    pub fn hidden_activations(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok((x.dot(&self.hidden_weights) + &self.hidden_bias).mapv(|v| v.max(0.0)))
    }

    /// Mean cross-entropy and its gradients on `(x, labels)`.
    pub fn loss_and_gradients(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        check_labels(x.nrows(), labels, self.classes())?;
        let f = self.forward(x);
        let n = x.nrows() as f64;
        let loss = -labels.iter().enumerate().map(|(i, &y)| f.log_p[[i, y]]).sum::<f64>() / n;

        let mut d_logits = f.log_p.mapv(f64::exp);
        for (i, &y) in labels.iter().enumerate() {
            d_logits[[i, y]] -= 1.0;
        }
        d_logits /= n;
        let output_weights = f.hidden.t().dot(&d_logits);
        let output_bias = d_logits.sum_axis(Axis(0));
        let mut d_hidden = d_logits.dot(&self.output_weights.t());
        d_hidden.zip_mut_with(&f.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let hidden_weights = x.t().dot(&d_hidden);
        let hidden_bias = d_hidden.sum_axis(Axis(0));
        Ok((
            loss,
            Gradients {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            },
        ))
    }

    pub fn loss(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        self.check_input(x)?;
        check_labels(x.nrows(), labels, self.classes())?;
        let f = self.forward(x);
        Ok(-labels.iter().enumerate().map(|(i, &y)| f.log_p[[i, y]]).sum::<f64>() / x.nrows() as f64)
    }

    /// Writes `<prefix>.json` plus `<prefix>.{w1,b1,w2,b2}.fmat`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let header = ModelHeader {
            input_dim: self.input_dim(),
            hidden: self.hidden_dim(),
            classes: self.classes(),
            config: self.config.clone(),
            seed: self.seed,
            loss_history: self.loss_history.clone(),
            val_loss_history: self.val_loss_history.clone(),
        };
        let json = serde_json::to_vec_pretty(&header).map_err(|e| LdpoError::invalid(e.to_string()))?;
        write_atomic(&part(prefix, "json"), &json)?;
        write_fmat(&part(prefix, "w1.fmat"), self.hidden_weights.view())?;
        write_fmat(&part(prefix, "b1.fmat"), self.hidden_bias.view().insert_axis(Axis(0)))?;
        write_fmat(&part(prefix, "w2.fmat"), self.output_weights.view())?;
        write_fmat(&part(prefix, "b2.fmat"), self.output_bias.view().insert_axis(Axis(0)))
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let header_path = part(prefix, "json");
        let text = std::fs::read_to_string(&header_path).map_err(|e| LdpoError::io(&header_path, e))?;
        let header: ModelHeader =
            serde_json::from_str(&text).map_err(|e| LdpoError::parse(&header_path, e.to_string()))?;
        let model = LearnerModel {
            hidden_weights: read_fmat(&part(prefix, "w1.fmat"))?,
            hidden_bias: read_fmat(&part(prefix, "b1.fmat"))?.row(0).to_owned(),
            output_weights: read_fmat(&part(prefix, "w2.fmat"))?,
            output_bias: read_fmat(&part(prefix, "b2.fmat"))?.row(0).to_owned(),
            config: header.config,
            seed: header.seed,
            loss_history: header.loss_history,
            val_loss_history: header.val_loss_history,
        };
        let shapes_ok = model.input_dim() == header.input_dim
            && model.hidden_dim() == header.hidden
            && model.classes() == header.classes
            && model.hidden_bias.len() == header.hidden
            && model.output_weights.nrows() == header.hidden
            && model.output_bias.len() == header.classes;
        if !shapes_ok {
            return Err(LdpoError::parse(&header_path, "weight shapes disagree with header"));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    input_dim: usize,
    hidden: usize,
    classes: usize,
    config: LearnerConfig,
    seed: u64,
    loss_history: Vec<f64>,
    #[serde(default)]
    val_loss_history: Vec<f64>,
}

fn part(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    s.into()
}

fn check_labels(n: usize, labels: &[usize], k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(LdpoError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(LdpoError::invalid(format!("label {bad} is out of range for {k} classes")));
    }
    Ok(())
}

/// Items held out to monitor the loss during training.
pub struct Validation<'a> {
    pub x: ArrayView2<'a, f64>,
    pub labels: &'a ClusterAssignment,
}

pub fn train(
    x: ArrayView2<'_, f64>,
    labels: &ClusterAssignment,
    warm_start: Option<&LearnerModel>,
    config: &LearnerConfig,
    seed: u64,
) -> Result<LearnerModel> {
    train_monitored(x, labels, None, warm_start, config, seed)
}

/// Seeded minibatch SGD with momentum on the mean cross-entropy.
pub fn train_monitored(
    x: ArrayView2<'_, f64>,
    labels: &ClusterAssignment,
    validation: Option<Validation<'_>>,
    warm_start: Option<&LearnerModel>,
    config: &LearnerConfig,
    seed: u64,
) -> Result<LearnerModel> {
    let (n, d) = x.dim();
    let k = labels.k();
    if labels.len() != n {
        return Err(LdpoError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if k < 2 {
        return Err(LdpoError::invalid("the learner needs at least 2 classes"));
    }
    if let Some(c) = labels.sizes().iter().position(|&s| s == 0) {
        return Err(LdpoError::EmptyClass(c));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LdpoError::invalid("non-finite feature value"));
    }
    if config.batch_size == 0 {
        return Err(LdpoError::Config("batch_size must be positive".into()));
    }
    if !(config.weight_decay >= 0.0 && config.weight_decay.is_finite()) {
        return Err(LdpoError::Config("weight_decay must be finite and nonnegative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hidden_weights, hidden_bias) = match warm_start {
        Some(prev) => {
            if prev.input_dim() != d {
                return Err(LdpoError::DimensionMismatch {
                    expected: prev.input_dim(),
                    found: d,
                });
            }
            (prev.hidden_weights.clone(), prev.hidden_bias.clone())
        }
        None => {
            if config.hidden == 0 {
                return Err(LdpoError::Config("hidden size must be positive".into()));
            }
            let normal = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("positive std");
            (
                Array2::from_shape_fn((d, config.hidden), |_| normal.sample(&mut rng)),
                Array1::zeros(config.hidden),
            )
        }
    };
    let h = hidden_weights.ncols();
    let mut model = LearnerModel {
        hidden_weights,
        hidden_bias,
        output_weights: Array2::zeros((h, k)),
        output_bias: Array1::zeros(k),
        config: LearnerConfig {
            hidden: h,
            ..config.clone()
        },
        seed,
        loss_history: Vec::with_capacity(config.epochs + 1),
        val_loss_history: Vec::new(),
    };
    let y = labels.labels();
    let record = |m: &mut LearnerModel| -> Result<()> {
        let loss = m.loss(x, y)?;
        m.loss_history.push(loss);
        if let Some(v) = &validation {
            let vl = m.loss(v.x, v.labels.labels())?;
            m.val_loss_history.push(vl);
        }
        Ok(())
    };
    record(&mut model)?;

    let mut vel = Gradients {
        hidden_weights: Array2::zeros(model.hidden_weights.dim()),
        hidden_bias: Array1::zeros(h),
        output_weights: Array2::zeros((h, k)),
        output_bias: Array1::zeros(k),
    };
    let lr = config.learning_rate;
    let lr_out = lr * config.output_lr_multiplier;
    let mu = config.momentum;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (_, mut g) = model.loss_and_gradients(xb.view(), &yb)?;
            if config.weight_decay > 0.0 {
                g.hidden_weights.scaled_add(config.weight_decay, &model.hidden_weights);
                g.output_weights.scaled_add(config.weight_decay, &model.output_weights);
            }
            step(&mut vel.hidden_weights, &mut model.hidden_weights, &g.hidden_weights, mu, lr);
            step(&mut vel.hidden_bias, &mut model.hidden_bias, &g.hidden_bias, mu, lr);
            step(&mut vel.output_weights, &mut model.output_weights, &g.output_weights, mu, lr_out);
            step(&mut vel.output_bias, &mut model.output_bias, &g.output_bias, mu, lr_out);
        }
        record(&mut model)?;
    }
    Ok(model)
}

fn step<D: ndarray::Dimension>(
    vel: &mut ndarray::Array<f64, D>,
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    momentum: f64,
    lr: f64,
) {
    vel.zip_mut_with(grad, |v, &g| *v = momentum * *v - lr * g);
    *param += &*vel;
}

/// Hidden-layer embedding of every item, keeping ids.
pub fn embed(model: &LearnerModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    let values = model.hidden_activations(x.view())?;
    FeatureMatrix::new(x.ids().to_vec(), values)
}

/// Softmax class probabilities, one row per item.
pub fn predict_proba(model: &LearnerModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.check_input(x)?;
    Ok(model.forward(x).log_p.mapv(f64::exp))
}

/// Per-iteration feature files, e.g. `features/iter_{iter}.fmat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalFeatureSource {
    /// Path pattern; `{iter}` is replaced by the iteration index.
    pub template: String,
    #[serde(default)]
    pub expected_dim: Option<usize>,
    #[serde(default)]
    pub format: Option<MatrixFormat>,
}

impl ExternalFeatureSource {
    pub fn path_for(&self, iteration: usize) -> PathBuf {
        PathBuf::from(self.template.replace("{iter}", &iteration.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    LearnerEmbedding,
    External(ExternalFeatureSource),
}

/// Features for the next clustering round: the trained learner's embedding of
/// `inputs`, or the external file for `iteration` aligned to `inputs`' ids.
pub fn next_features(
    source: &FeatureSource,
    iteration: usize,
    model: Option<&LearnerModel>,
    inputs: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    match source {
        FeatureSource::LearnerEmbedding => {
            let model =
                model.ok_or_else(|| LdpoError::Config("learner embedding requested before any training".into()))?;
            embed(model, inputs)
        }
        FeatureSource::External(ext) => {
            let path = ext.path_for(iteration);
            if !path.exists() {
                return Err(LdpoError::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "external feature file not found"),
                ));
            }
            let format = ext.format.unwrap_or_else(|| MatrixFormat::from_path(&path));
            let m = load_feature_matrix(&path, format)?.align_to(inputs.ids())?;
            if let Some(dim) = ext.expected_dim {
                if m.dim() != dim {
                    return Err(LdpoError::DimensionMismatch {
                        expected: dim,
                        found: m.dim(),
                    });
                }
            }
            Ok(m)
        }
    }
}

//! The full loop: cluster the corpus, retrain the learner on the clusters,
//! re-embed, and repeat until successive clusterings agree.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, rim_fit, ClusterAssignment, KMeansConfig, RimConfig};
use crate::data::{
    grids_from_matrix, load_feature_matrix, read_assignments, read_split, save_feature_matrix, split_dataset,
    write_assignments, write_atomic, write_split, DescriptorGrid, FeatureMatrix, MatrixFormat, Split,
    SplitAssignment, SplitRatios,
};
use crate::encode::{encode_grids, EncodingMethod};
use crate::error::{LdpoError, Result};
use crate::hierarchy::{build_tree, ApConfig, CategoryTree};
use crate::learner::{embed, next_features, predict_proba, train_monitored, FeatureSource, LearnerConfig, LearnerModel, Validation};
use crate::metrics::{check_convergence, nmi, purity, topk_accuracy, ConvergenceThresholds};
use crate::stats::Standardizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClusteringMode {
    Kmeans {
        k: usize,
        #[serde(default = "one")]
        restarts: usize,
    },
    /// k-means with `k_init` clusters refined by RIM, which may drop clusters.
    KmeansRim { k_init: usize, lambda: f64 },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    #[default]
    None,
    Fv,
    Vlad,
}

/// Applies only to descriptor-grid inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub mode: EncodingKind,
    /// GMM components for Fisher vectors.
    pub components: usize,
    /// k-means codewords for VLAD.
    pub codewords: usize,
    pub pca_dim: Option<usize>,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            mode: EncodingKind::None,
            components: 64,
            codewords: 64,
            pca_dim: None,
        }
    }
}

impl EncodingConfig {
    pub fn method(&self) -> Option<EncodingMethod> {
        match self.mode {
            EncodingKind::None => None,
            EncodingKind::Fv => Some(EncodingMethod::Fv {
                components: self.components,
            }),
            EncodingKind::Vlad => Some(EncodingMethod::Vlad {
                codewords: self.codewords,
            }),
        }
    }
}

/// Where the corpus comes from. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub features: Option<PathBuf>,
    pub format: Option<MatrixFormat>,
    /// Rows are flattened descriptor grids with this descriptor length.
    pub grid_dim: Option<usize>,
    /// Pseudo-task labels (`id,cluster` csv) to pretrain the learner on.
    pub initial_labels: Option<PathBuf>,
    /// Reference classes (`id,cluster` csv), used only for reporting.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    #[serde(default)]
    pub input: InputConfig,
    /// Features clustered after the first iteration.
    #[serde(default = "default_source")]
    pub next_features: FeatureSource,
    pub clustering: ClusteringMode,
    #[serde(default)]
    pub encoding: EncodingConfig,
    #[serde(default)]
    pub convergence: ConvergenceThresholds,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_source() -> FeatureSource {
    FeatureSource::LearnerEmbedding
}

fn default_max_iterations() -> usize {
    10
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl LoopConfig {
    pub fn new(clustering: ClusteringMode) -> Self {
        LoopConfig {
            input: InputConfig::default(),
            next_features: default_source(),
            clustering,
            encoding: EncodingConfig::default(),
            convergence: ConvergenceThresholds::default(),
            max_iterations: default_max_iterations(),
            split: SplitRatios::default(),
            learner: LearnerConfig::default(),
            seed: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LoopConfig = toml::from_str(text).map_err(|e| LdpoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LdpoError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        resolve(dir, &mut cfg.input.features);
        resolve(dir, &mut cfg.input.initial_labels);
        resolve(dir, &mut cfg.input.truth);
        if let FeatureSource::External(ext) = &mut cfg.next_features {
            let t = PathBuf::from(&ext.template);
            if t.is_relative() {
                ext.template = dir.join(t).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(LdpoError::Config("max_iterations must be at least 1".into()));
        }
        let t = self.convergence;
        if !(0.0..=1.0).contains(&t.purity_min) || !(0.0..=1.0).contains(&t.nmi_min) {
            return Err(LdpoError::Config("convergence thresholds must lie in [0, 1]".into()));
        }
        self.split.validate().map_err(|e| LdpoError::Config(e.to_string()))?;
        match self.clustering {
            ClusteringMode::Kmeans { k, restarts } if k < 2 || restarts == 0 => {
                Err(LdpoError::Config("k-means needs k >= 2 and at least one restart".into()))
            }
            ClusteringMode::KmeansRim { k_init, lambda } if k_init < 2 || !(lambda > 0.0) => {
                Err(LdpoError::Config("RIM needs k_init >= 2 and a positive lambda".into()))
            }
            _ => Ok(()),
        }
    }
}

/// The corpus representation fed to the loop.
#[derive(Debug, Clone)]
pub enum BaseInput {
    Features(FeatureMatrix),
    Grids(Vec<DescriptorGrid>),
}

impl BaseInput {
    pub fn ids(&self) -> Vec<String> {
        match self {
            BaseInput::Features(m) => m.ids().to_vec(),
            BaseInput::Grids(g) => g.iter().map(|g| g.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopInputs {
    pub base: BaseInput,
    pub initial_labels: Option<ClusterAssignment>,
    pub truth: Option<ClusterAssignment>,
}

impl LoopInputs {
    pub fn from_features(features: FeatureMatrix) -> Self {
        LoopInputs {
            base: BaseInput::Features(features),
            initial_labels: None,
            truth: None,
        }
    }

    pub fn load(input: &InputConfig) -> Result<Self> {
        let path = input
            .features
            .as_ref()
            .ok_or_else(|| LdpoError::Config("input.features is not set".into()))?;
        let format = input.format.unwrap_or_else(|| MatrixFormat::from_path(path));
        let matrix = load_feature_matrix(path, format)?;
        let ids = matrix.ids().to_vec();
        let base = match input.grid_dim {
            Some(dim) => BaseInput::Grids(grids_from_matrix(&matrix, dim)?),
            None => BaseInput::Features(matrix),
        };
        let aligned = |p: &Option<PathBuf>| -> Result<Option<ClusterAssignment>> {
            p.as_ref()
                .map(|p| read_assignments(p)?.align_to(&ids))
                .transpose()
        };
        Ok(LoopInputs {
            base,
            initial_labels: aligned(&input.initial_labels)?,
            truth: aligned(&input.truth)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Converged,
    MaxIterationsReached,
}

/// One loop iteration. Agreement with the previous iteration is absent at
/// iteration 0; top-5 is absent when there are fewer than 5 clusters; a
/// split-level accuracy is absent when that split is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub k: usize,
    pub purity: Option<f64>,
    pub nmi: Option<f64>,
    pub train_top1: Option<f64>,
    pub val_top1: Option<f64>,
    pub test_top1: Option<f64>,
    pub train_top5: Option<f64>,
    pub val_top5: Option<f64>,
    pub test_top5: Option<f64>,
    pub seconds: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<LoopStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_purity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_nmi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub reports: Vec<IterationReport>,
    /// Whole-corpus clustering of every iteration.
    pub assignments: Vec<ClusterAssignment>,
    pub learner: LearnerModel,
    /// Features clustered in the last iteration.
    pub features: FeatureMatrix,
    /// Standardized learner inputs.
    pub base: FeatureMatrix,
    /// Split used to train the final learner.
    pub split: SplitAssignment,
    pub converged: bool,
}

impl LoopOutcome {
    pub fn assignment(&self) -> &ClusterAssignment {
        self.assignments.last().expect("at least one iteration")
    }

    pub fn ids(&self) -> &[String] {
        self.base.ids()
    }
}

/// Clusters the rows of `x`. RIM starts from k-means with
/// `min(k_init, n)` clusters.
pub fn cluster_features(x: ArrayView2<'_, f64>, mode: &ClusteringMode, seed: u64) -> Result<ClusterAssignment> {
    match *mode {
        ClusteringMode::Kmeans { k, restarts } => {
            let cfg = KMeansConfig {
                restarts,
                ..KMeansConfig::new(k, seed)
            };
            Ok(kmeans(x, &cfg)?.1.compact())
        }
        ClusteringMode::KmeansRim { k_init, lambda } => {
            let (_, init) = kmeans(x, &KMeansConfig::new(k_init.min(x.nrows()), seed))?;
            let cfg = RimConfig {
                lambda,
                ..Default::default()
            };
            Ok(rim_fit(x, &init, &cfg)?.assignment)
        }
    }
}

/// Moves the lowest-index item of every class absent from the training
/// split into it.
pub fn cover_classes(split: &mut SplitAssignment, labels: &ClusterAssignment) {
    let mut seen = vec![false; labels.k()];
    for (i, &l) in labels.labels().iter().enumerate() {
        if split.tags[i] == Split::Train {
            seen[l] = true;
        }
    }
    for (i, &l) in labels.labels().iter().enumerate() {
        if !seen[l] {
            split.tags[i] = Split::Train;
            seen[l] = true;
        }
    }
}

fn accuracy(probs: ArrayView2<'_, f64>, labels: &ClusterAssignment, idx: &[usize], k: usize) -> Result<Option<f64>> {
    if idx.is_empty() || k > probs.ncols() {
        return Ok(None);
    }
    let sub = probs.select(Axis(0), idx);
    let y: Vec<usize> = idx.iter().map(|&i| labels.labels()[i]).collect();
    topk_accuracy(sub.view(), &y, k).map(Some)
}

fn train_on(
    base: &FeatureMatrix,
    labels: &ClusterAssignment,
    split: &SplitAssignment,
    warm: Option<&LearnerModel>,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<LearnerModel> {
    let train_idx = split.indices(Split::Train);
    let val_idx = split.indices(Split::Val);
    let xt = base.view().select(Axis(0), &train_idx);
    let yt = labels.select(&train_idx);
    let xv = base.view().select(Axis(0), &val_idx);
    let yv = labels.select(&val_idx);
    let validation = (!val_idx.is_empty()).then(|| Validation {
        x: xv.view(),
        labels: &yv,
    });
    train_monitored(xt.view(), &yt, validation, warm, cfg, seed)
}

fn build_base(config: &LoopConfig, base: BaseInput) -> Result<FeatureMatrix> {
    let raw = match base {
        BaseInput::Features(m) => m,
        BaseInput::Grids(grids) => {
            let method = config
                .encoding
                .method()
                .ok_or_else(|| LdpoError::Config("descriptor grids need an encoding mode".into()))?;
            encode_grids(&grids, method, config.encoding.pca_dim, config.seed)?.0
        }
    };
    let standardizer = Standardizer::fit(raw.view())?;
    let values = standardizer.apply(raw.view())?;
    let (ids, _) = raw.into_parts();
    FeatureMatrix::new(ids, values)
}

/// Runs the loop on the corpus named in `config.input`.
pub fn run_loop(config: &LoopConfig) -> Result<LoopOutcome> {
    run_loop_with(config, LoopInputs::load(&config.input)?)
}

/// Iteration `t` uses seed `config.seed + t` for clustering, the split and
/// training. With initial labels the learner is first trained on them (seed
/// `config.seed - 1`) and iteration 0 clusters its embedding; otherwise
/// iteration 0 clusters the base features. The iteration whose clustering
/// agrees with the previous one still trains, so the returned learner
/// predicts the returned clusters.
pub fn run_loop_with(config: &LoopConfig, inputs: LoopInputs) -> Result<LoopOutcome> {
    config.validate()?;
    let base = build_base(config, inputs.base)?;
    let n = base.n_items();
    for labels in inputs.initial_labels.iter().chain(&inputs.truth) {
        if labels.len() != n {
            return Err(LdpoError::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
    }

    let mut learner = match &inputs.initial_labels {
        Some(labels) => {
            let labels = labels.compact();
            if labels.k() < 2 {
                return Err(LdpoError::invalid("initial labels need at least 2 classes"));
            }
            let seed = config.seed.wrapping_sub(1);
            let mut split = split_dataset(n, config.split, seed)?;
            cover_classes(&mut split, &labels);
            Some(train_on(&base, &labels, &split, None, &config.learner, seed)?)
        }
        None => None,
    };

    let mut reports = Vec::new();
    let mut assignments: Vec<ClusterAssignment> = Vec::new();
    let mut converged = false;
    let mut last = None;
    for t in 0..config.max_iterations {
        let start = Instant::now();
        let seed = config.seed.wrapping_add(t as u64);
        let features = if t == 0 {
            match &learner {
                Some(m) => embed(m, &base)?,
                None => base.clone(),
            }
        } else {
            next_features(&config.next_features, t, learner.as_ref(), &base)?
        };
        let curr = cluster_features(features.view(), &config.clustering, seed)?;
        if curr.k() < 2 {
            return Err(LdpoError::Degenerate(format!("iteration {t} produced a single cluster")));
        }
        let (agree_purity, agree_nmi) = match assignments.last() {
            Some(prev) => {
                converged = check_convergence(prev, &curr, config.convergence)?;
                (Some(purity(&curr, prev)?), Some(nmi(&curr, prev)?))
            }
            None => (None, None),
        };

        let mut split = split_dataset(n, config.split, seed)?;
        cover_classes(&mut split, &curr);
        let model = train_on(&base, &curr, &split, learner.as_ref(), &config.learner, seed)?;
        let probs = predict_proba(&model, base.view())?;
        let k = curr.k();
        let acc = |s: Split, top: usize| accuracy(probs.view(), &curr, &split.indices(s), top);
        let status = if converged {
            Some(LoopStatus::Converged)
        } else if t + 1 == config.max_iterations {
            Some(LoopStatus::MaxIterationsReached)
        } else {
            None
        };
        let (truth_purity, truth_nmi) = match &inputs.truth {
            Some(truth) => (Some(purity(&curr, truth)?), Some(nmi(&curr, truth)?)),
            None => (None, None),
        };
        reports.push(IterationReport {
            iteration: t,
            k,
            purity: agree_purity,
            nmi: agree_nmi,
            train_top1: acc(Split::Train, 1)?,
            val_top1: acc(Split::Val, 1)?,
            test_top1: acc(Split::Test, 1)?,
            train_top5: if k >= 5 { acc(Split::Train, 5)? } else { None },
            val_top5: if k >= 5 { acc(Split::Val, 5)? } else { None },
            test_top5: if k >= 5 { acc(Split::Test, 5)? } else { None },
            seconds: start.elapsed().as_secs_f64(),
            seed,
            status,
            truth_purity,
            truth_nmi,
        });
        assignments.push(curr);
        learner = Some(model);
        last = Some((features, split));
        if converged {
            break;
        }
    }
    let (features, split) = last.expect("max_iterations >= 1");
    Ok(LoopOutcome {
        reports,
        assignments,
        learner: learner.expect("trained at least once"),
        features,
        base,
        split,
        converged,
    })
}

/// Class affinities from the learner's predictions on the test split (all
/// items when some class has no test item), then the category tree.
pub fn run_tree(
    assignment: &ClusterAssignment,
    learner: &LearnerModel,
    base: &FeatureMatrix,
    split: Option<&SplitAssignment>,
    ap: &ApConfig,
) -> Result<CategoryTree> {
    if learner.classes() != assignment.k() {
        return Err(LdpoError::DimensionMismatch {
            expected: assignment.k(),
            found: learner.classes(),
        });
    }
    if assignment.len() != base.n_items() {
        return Err(LdpoError::DimensionMismatch {
            expected: base.n_items(),
            found: assignment.len(),
        });
    }
    let probs = predict_proba(learner, base.view())?;
    let test: Vec<usize> = split.map(|s| s.indices(Split::Test)).unwrap_or_default();
    let covers = !test.is_empty() && assignment.select(&test).sizes().iter().all(|&s| s > 0);
    let idx: Vec<usize> = if covers { test } else { (0..assignment.len()).collect() };
    let scores = probs.select(Axis(0), &idx);
    build_tree(scores.view(), &assignment.select(&idx), ap)
}

/// Holds a loop configuration and, once run, its outcome.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: LoopConfig,
    outcome: Option<LoopOutcome>,
}

impl Session {
    pub fn new(config: LoopConfig) -> Self {
        Session { config, outcome: None }
    }

    pub fn run(&mut self) -> Result<&LoopOutcome> {
        let inputs = LoopInputs::load(&self.config.input)?;
        self.run_with(inputs)
    }

    pub fn run_with(&mut self, inputs: LoopInputs) -> Result<&LoopOutcome> {
        let outcome = run_loop_with(&self.config, inputs)?;
        Ok(self.outcome.insert(outcome))
    }

    pub fn outcome(&self) -> Option<&LoopOutcome> {
        self.outcome.as_ref()
    }

    pub fn tree(&self, ap: &ApConfig) -> Result<CategoryTree> {
        let o = self.outcome.as_ref().ok_or(LdpoError::NoConvergedModel)?;
        run_tree(o.assignment(), &o.learner, &o.base, Some(&o.split), ap)
    }
}

pub fn reports_to_json(reports: &[IterationReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

pub fn reports_from_json(text: &str) -> Result<Vec<IterationReport>> {
    serde_json::from_str(text).map_err(|e| LdpoError::invalid(format!("reports: {e}")))
}

/// Copies of the reports with wall-clock fields zeroed.
pub fn without_timing(reports: &[IterationReport]) -> Vec<IterationReport> {
    reports
        .iter()
        .map(|r| IterationReport {
            seconds: 0.0,
            ..r.clone()
        })
        .collect()
}

/// Per-iteration metrics as csv for plotting.
pub fn reports_to_csv(reports: &[IterationReport]) -> String {
    fn cell(v: Option<f64>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    let mut out = String::from("iteration,k,purity,nmi,train_top1,val_top1,test_top1,test_top5,truth_purity,truth_nmi,seconds\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.k,
            cell(r.purity),
            cell(r.nmi),
            cell(r.train_top1),
            cell(r.val_top1),
            cell(r.test_top1),
            cell(r.test_top5),
            cell(r.truth_purity),
            cell(r.truth_nmi),
            r.seconds
        );
    }
    out
}

pub const REPORTS_FILE: &str = "reports.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BASE_FILE: &str = "base.fmat";
pub const FEATURES_FILE: &str = "features.fmat";
pub const FINAL_ASSIGNMENTS_FILE: &str = "final.assignments.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const LEARNER_PREFIX: &str = "learner";
pub const TREE_FILE: &str = "tree.json";

pub fn iteration_assignments_file(t: usize) -> String {
    format!("iter_{t}.assignments.csv")
}

/// Writes every loop artifact into `dir`, creating it if needed.
pub fn write_outcome(outcome: &LoopOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LdpoError::io(dir, e))?;
    let ids = outcome.ids();
    write_atomic(&dir.join(REPORTS_FILE), reports_to_json(&outcome.reports).as_bytes())?;
    write_atomic(&dir.join(METRICS_FILE), reports_to_csv(&outcome.reports).as_bytes())?;
    for (t, a) in outcome.assignments.iter().enumerate() {
        write_assignments(&dir.join(iteration_assignments_file(t)), ids, a)?;
    }
    write_assignments(&dir.join(FINAL_ASSIGNMENTS_FILE), ids, outcome.assignment())?;
    write_split(&dir.join(SPLIT_FILE), ids, &outcome.split)?;
    save_feature_matrix(&outcome.base, &dir.join(BASE_FILE), MatrixFormat::Fmat)?;
    save_feature_matrix(&outcome.features, &dir.join(FEATURES_FILE), MatrixFormat::Fmat)?;
    outcome.learner.save(&dir.join(LEARNER_PREFIX))
}

/// The pieces of a finished loop needed to build its tree.
#[derive(Debug, Clone)]
pub struct LoopArtifacts {
    pub base: FeatureMatrix,
    pub learner: LearnerModel,
    pub assignment: ClusterAssignment,
    pub split: SplitAssignment,
}

impl LoopArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let base = load_feature_matrix(&dir.join(BASE_FILE), MatrixFormat::Fmat)?;
        let learner = LearnerModel::load(&dir.join(LEARNER_PREFIX))?;
        let assignment = read_assignments(&dir.join(FINAL_ASSIGNMENTS_FILE))?.align_to(base.ids())?;
        let (split_ids, tags) = read_split(&dir.join(SPLIT_FILE))?;
        let index = crate::data::id_index(&split_ids);
        let tags = base
            .ids()
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| tags[i])
                    .ok_or_else(|| LdpoError::MissingId(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LoopArtifacts {
            base,
            learner,
            assignment,
            split: SplitAssignment { tags, seed: 0 },
        })
    }

    pub fn tree(&self, ap: &ApConfig) -> Result<CategoryTree> {
        run_tree(&self.assignment, &self.learner, &self.base, Some(&self.split), ap)
    }
}

/// Writes `tree.json` and one affinity matrix per level
/// (`tree.level<L>.affinity.fmat`) next to it.
pub fn write_tree(tree: &CategoryTree, path: &Path) -> Result<()> {
    write_atomic(path, tree.to_json().as_bytes())?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("tree");
    for (l, level) in tree.levels.iter().enumerate() {
        let p = dir.join(format!("{stem}.level{l}.affinity.fmat"));
        crate::data::write_fmat(&p, level.affinity.values.view())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{blobs, generate_corpus, CorpusSpec};

    fn small_learner() -> LearnerConfig {
        LearnerConfig {
            hidden: 16,
            epochs: 10,
            batch_size: 32,
            ..Default::default()
        }
    }

    fn blob_inputs(seed: u64) -> (LoopInputs, ClusterAssignment) {
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|c| (0..4).map(|j| if j == c { 8.0 } else { 0.0 }).collect())
            .collect();
        let (x, truth) = blobs(&centers, 30, 1.0, seed).unwrap();
        let m = FeatureMatrix::with_index_ids(x).unwrap();
        (LoopInputs::from_features(m), truth)
    }

    fn kmeans_config(max_iterations: usize) -> LoopConfig {
        LoopConfig {
            max_iterations,
            learner: small_learner(),
            seed: 3,
            ..LoopConfig::new(ClusteringMode::Kmeans { k: 3, restarts: 1 })
        }
    }

    #[test]
    fn single_iteration_has_no_agreement() {
        let (inputs, _) = blob_inputs(1);
        let out = run_loop_with(&kmeans_config(1), inputs).unwrap();
        assert_eq!(out.reports.len(), 1);
        let r = &out.reports[0];
        assert_eq!(r.purity, None);
        assert_eq!(r.status, Some(LoopStatus::MaxIterationsReached));
        assert_eq!(r.test_top5, None);
        assert_eq!(r.seed, 3);
        assert!(!out.converged);
    }

    #[test]
    fn easy_blobs_converge_and_are_deterministic() {
        let (inputs, truth) = blob_inputs(2);
        let cfg = kmeans_config(5);
        let a = run_loop_with(&cfg, inputs.clone()).unwrap();
        let b = run_loop_with(&cfg, inputs).unwrap();
        assert!(a.converged);
        assert_eq!(a.reports.last().unwrap().status, Some(LoopStatus::Converged));
        assert_eq!(without_timing(&a.reports), without_timing(&b.reports));
        assert_eq!(purity(a.assignment(), &truth).unwrap(), 1.0);
        for (t, r) in a.reports.iter().enumerate() {
            assert_eq!(r.seed, 3 + t as u64);
        }
        assert_eq!(a.learner.classes(), a.assignment().k());
    }

    #[test]
    fn reports_round_trip_json() {
        let (inputs, _) = blob_inputs(3);
        let out = run_loop_with(&kmeans_config(2), inputs).unwrap();
        let back = reports_from_json(&reports_to_json(&out.reports)).unwrap();
        assert_eq!(back, out.reports);
        let csv = reports_to_csv(&out.reports);
        assert_eq!(csv.lines().count(), out.reports.len() + 1);
    }

    #[test]
    fn cover_classes_moves_missing_class() {
        let labels = ClusterAssignment::new(vec![0, 1, 1, 2], 3).unwrap();
        let mut split = SplitAssignment {
            tags: vec![Split::Train, Split::Test, Split::Train, Split::Val],
            seed: 0,
        };
        cover_classes(&mut split, &labels);
        assert_eq!(split.tags, vec![Split::Train, Split::Test, Split::Train, Split::Train]);
    }

    #[test]
    fn tree_needs_a_run() {
        let session = Session::new(kmeans_config(1));
        assert!(matches!(session.tree(&ApConfig::default()), Err(LdpoError::NoConvergedModel)));
    }

    #[test]
    fn two_cluster_run_gives_two_level_tree() {
        let centers = vec![vec![0.0, 0.0], vec![6.0, 6.0]];
        let (x, _) = blobs(&centers, 40, 1.0, 4).unwrap();
        let mut cfg = kmeans_config(3);
        cfg.clustering = ClusteringMode::Kmeans { k: 2, restarts: 1 };
        let mut session = Session::new(cfg);
        session
            .run_with(LoopInputs::from_features(FeatureMatrix::with_index_ids(x).unwrap()))
            .unwrap();
        let tree = session.tree(&ApConfig::default()).unwrap();
        assert_eq!(tree.widths(), vec![2, 1]);
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = LoopConfig::from_toml_str(
            r#"
            seed = 5
            max_iterations = 4
            [clustering]
            mode = "kmeans_rim"
            k_init = 20
            lambda = 1.0
            [learner]
            hidden = 32
            [next_features]
            kind = "external"
            template = "feats/iter_{iter}.fmat"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.clustering, ClusteringMode::KmeansRim { k_init: 20, lambda: 1.0 });
        assert_eq!(cfg.learner.hidden, 32);
        assert_eq!(cfg.learner.epochs, LearnerConfig::default().epochs);
        assert!(matches!(cfg.next_features, FeatureSource::External(_)));
        assert!(LoopConfig::from_toml_str("max_iterations = 0\n[clustering]\nmode = \"kmeans\"\nk = 3").is_err());
        assert!(LoopConfig::from_toml_str("[clustering]\nmode = \"kmeans\"\nk = 3\nbogus = 1").is_err());
        let bad = "[clustering]\nmode = \"kmeans\"\nk = 3\n[convergence]\npurity_min = 1.5";
        assert!(LoopConfig::from_toml_str(bad).is_err());
    }

    #[test]
    fn initial_labels_pretrain() {
        let spec = CorpusSpec::flat(3, 30, 3, 2);
        let corpus = generate_corpus(&spec, 8).unwrap();
        let inputs = LoopInputs {
            base: BaseInput::Features(corpus.features.clone()),
            initial_labels: Some(corpus.classes.clone()),
            truth: Some(corpus.classes.clone()),
        };
        let out = run_loop_with(&kmeans_config(2), inputs).unwrap();
        assert!(out.reports[0].truth_purity.is_some());
    }

    #[test]
    fn artifacts_round_trip() {
        let (inputs, _) = blob_inputs(5);
        let out = run_loop_with(&kmeans_config(2), inputs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outcome(&out, dir.path()).unwrap();
        let art = LoopArtifacts::load(dir.path()).unwrap();
        assert_eq!(&art.assignment, out.assignment());
        assert_eq!(art.split.tags, out.split.tags);
        let t1 = art.tree(&ApConfig::default()).unwrap();
        let t2 = run_tree(out.assignment(), &out.learner, &out.base, Some(&out.split), &ApConfig::default()).unwrap();
        assert_eq!(t1, t2);
        assert!(dir.path().join(iteration_assignments_file(0)).exists());
        write_tree(&t1, &dir.path().join(TREE_FILE)).unwrap();
        assert!(dir.path().join("tree.level0.affinity.fmat").exists());
    }
}

//! Corpus representation, matrix and label file I/O, and seeded splitting.
//!
//! Two on-disk matrix formats are supported:
//!
//! * `fmat`: the bytes `FMAT`, then little-endian `u32` version (1), `u32`
//!   rows and `u32` cols, followed by `rows * cols` little-endian `f64`
//!   values in row-major order. Item ids live in a sidecar file `<path>.ids`
//!   with one id per line.
//! * `csv`: a header `id,f0,...,f{D-1}` and one row per item.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{LdpoError, Result};

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const FMAT_VERSION: u32 = 1;
const FMAT_HEADER_LEN: usize = 16;

/// N items with D-dimensional real features and stable string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n == 0 {
            return Err(LdpoError::invalid("feature matrix has no rows"));
        }
        if d == 0 {
            return Err(LdpoError::invalid("feature matrix has no columns"));
        }
        if ids.len() != n {
            return Err(LdpoError::DimensionMismatch {
                expected: n,
                found: ids.len(),
            });
        }
        check_finite(values.view())?;
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(LdpoError::DuplicateId(id.clone()));
            }
        }
        Ok(FeatureMatrix { ids, values })
    }

    /// Builds a matrix whose ids are the row indices `"0"`, `"1"`, ...
    pub fn with_index_ids(values: Array2<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::new(ids, values)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_parts(self) -> (Vec<String>, Array2<f64>) {
        (self.ids, self.values)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureMatrix> {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        FeatureMatrix::new(ids, self.values.select(Axis(0), indices))
    }

    /// Reorders rows to follow `ids`. Every requested id must be present.
    pub fn align_to(&self, ids: &[String]) -> Result<FeatureMatrix> {
        let index = id_index(&self.ids);
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            match index.get(id.as_str()) {
                Some(&i) => rows.push(i),
                None => return Err(LdpoError::MissingId(id.clone())),
            }
        }
        self.select(&rows)
    }
}

pub(crate) fn id_index(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

fn check_finite(values: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(LdpoError::NonFinite { row, col });
        }
    }
    Ok(())
}

/// An s×s grid of d-dimensional local descriptors, stored location-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrid {
    pub id: String,
    side: usize,
    descriptors: Array2<f64>,
}

impl DescriptorGrid {
    pub fn new(id: impl Into<String>, side: usize, descriptors: Array2<f64>) -> Result<Self> {
        if side == 0 || descriptors.ncols() == 0 {
            return Err(LdpoError::invalid("descriptor grid must have s >= 1 and d >= 1"));
        }
        if descriptors.nrows() != side * side {
            return Err(LdpoError::DimensionMismatch {
                expected: side * side,
                found: descriptors.nrows(),
            });
        }
        check_finite(descriptors.view())?;
        Ok(DescriptorGrid {
            id: id.into(),
            side,
            descriptors,
        })
    }

    /// Unflattens `s*s*d` values (location-major, descriptor dimension fastest).
    pub fn from_flat(id: impl Into<String>, flat: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || flat.is_empty() || !flat.len().is_multiple_of(dim) {
            return Err(LdpoError::invalid(format!(
                "{} values cannot be split into descriptors of dimension {dim}",
                flat.len()
            )));
        }
        let locations = flat.len() / dim;
        let side = (locations as f64).sqrt().round() as usize;
        if side * side != locations {
            return Err(LdpoError::invalid(format!(
                "{locations} descriptors do not form a square grid"
            )));
        }
        let descriptors = Array2::from_shape_vec((locations, dim), flat.to_vec())
            .map_err(|e| LdpoError::invalid(e.to_string()))?;
        Self::new(id, side, descriptors)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.descriptors.ncols()
    }

    pub fn descriptors(&self) -> ArrayView2<'_, f64> {
        self.descriptors.view()
    }
}

/// Interprets each row of `m` as a flattened descriptor grid.
pub fn grids_from_matrix(m: &FeatureMatrix, dim: usize) -> Result<Vec<DescriptorGrid>> {
    m.ids()
        .iter()
        .zip(m.values().rows())
        .map(|(id, row)| DescriptorGrid::from_flat(id.clone(), &row.to_vec(), dim))
        .collect()
}

/// Stacks the descriptors of every grid into one matrix.
pub fn pool_descriptors(grids: &[DescriptorGrid]) -> Result<Array2<f64>> {
    let first = grids
        .first()
        .ok_or_else(|| LdpoError::invalid("no descriptor grids"))?;
    let views: Vec<_> = grids.iter().map(|g| g.descriptors()).collect();
    for v in &views {
        if v.ncols() != first.dim() {
            return Err(LdpoError::DimensionMismatch {
                expected: first.dim(),
                found: v.ncols(),
            });
        }
    }
    ndarray::concatenate(Axis(0), &views).map_err(|e| LdpoError::invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = LdpoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(LdpoError::invalid(format!("unknown split tag '{other}'"))),
        }
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(LdpoError::invalid("split ratios must be finite and nonnegative"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LdpoError::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub tags: Vec<Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.tags.iter().filter(|t| **t == split).count()
    }
}

/// Seeded shuffle of `0..n` into train/val/test. Val and test receive
/// `floor(n * ratio)` items; the remainder goes to train.
pub fn split_dataset(n: usize, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    // The epsilon absorbs representation error such as 0.7 * 100 = 70.00000000000001.
    let n_val = ((n as f64) * ratios.val + 1e-9).floor() as usize;
    let n_test = ((n as f64) * ratios.test + 1e-9).floor() as usize;
    let n_val = n_val.min(n);
    let n_test = n_test.min(n - n_val);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut tags = vec![Split::Train; n];
    for (pos, &item) in order.iter().enumerate() {
        tags[item] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(SplitAssignment { tags, seed })
}

/// Per-item documents as normalized token lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextCorpus {
    pub documents: BTreeMap<String, Vec<String>>,
}

impl TextCorpus {
    pub fn from_texts<I, S, T>(texts: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let documents = texts
            .into_iter()
            .map(|(id, text)| (id.into(), crate::labeling::tokenize(text.as_ref())))
            .collect();
        TextCorpus { documents }
    }

    /// Checks that every document id is a known item.
    pub fn validate_against(&self, ids: &[String]) -> Result<()> {
        let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
        for id in self.documents.keys() {
            if !known.contains(id.as_str()) {
                return Err(LdpoError::MissingId(id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Fmat,
    Csv,
}

impl MatrixFormat {
    /// `.csv` means csv; anything else is treated as fmat.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Fmat,
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = LdpoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fmat" => Ok(MatrixFormat::Fmat),
            "csv" => Ok(MatrixFormat::Csv),
            other => Err(LdpoError::invalid(format!("unknown matrix format '{other}'"))),
        }
    }
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Writes `path` by filling a temporary file in the same directory and renaming it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LdpoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| LdpoError::io(path, e))?;
    tmp.flush().map_err(|e| LdpoError::io(path, e))?;
    tmp.persist(path).map_err(|e| LdpoError::io(path, e.error))?;
    Ok(())
}

pub fn encode_fmat(values: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
    let (rows, cols) = values.dim();
    let rows32 = u32::try_from(rows).map_err(|_| LdpoError::invalid("too many rows for fmat"))?;
    let cols32 = u32::try_from(cols).map_err(|_| LdpoError::invalid("too many columns for fmat"))?;
    let mut out = Vec::with_capacity(FMAT_HEADER_LEN + rows * cols * 8);
    out.extend_from_slice(FMAT_MAGIC);
    out.extend_from_slice(&FMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fmat(path: &Path, bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < FMAT_HEADER_LEN || &bytes[..4] != FMAT_MAGIC {
        return Err(LdpoError::parse(path, "missing FMAT header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FMAT_VERSION {
        return Err(LdpoError::parse(path, format!("unsupported fmat version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = FMAT_HEADER_LEN + rows * cols * 8;
    if bytes.len() != expected {
        return Err(LdpoError::parse(
            path,
            format!("header declares {rows}x{cols} but payload has {} bytes", bytes.len() - FMAT_HEADER_LEN),
        ));
    }
    let values: Vec<f64> = bytes[FMAT_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(LdpoError::parse(
            path,
            format!("non-finite value at row {}, column {}", pos / cols.max(1), pos % cols.max(1)),
        ));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| LdpoError::parse(path, e.to_string()))
}

/// Reads a bare fmat matrix (no ids sidecar).
pub fn read_fmat(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| LdpoError::io(path, e))?;
    decode_fmat(path, &bytes)
}

/// Writes a bare fmat matrix (no ids sidecar).
pub fn write_fmat(path: &Path, values: ArrayView2<'_, f64>) -> Result<()> {
    write_atomic(path, &encode_fmat(values)?)
}

/// Loads a feature matrix. For fmat, ids come from `<path>.ids`; when the
/// sidecar is absent the row indices are used as ids.
pub fn load_feature_matrix(path: &Path, format: MatrixFormat) -> Result<FeatureMatrix> {
    match format {
        MatrixFormat::Fmat => {
            let values = read_fmat(path)?;
            let sidecar = ids_path(path);
            let ids = if sidecar.exists() {
                let text = fs::read_to_string(&sidecar).map_err(|e| LdpoError::io(&sidecar, e))?;
                text.lines().map(str::to_owned).collect()
            } else {
                (0..values.nrows()).map(|i| i.to_string()).collect()
            };
            FeatureMatrix::new(ids, values).map_err(|e| LdpoError::parse(path, e.to_string()))
        }
        MatrixFormat::Csv => load_feature_csv(path),
    }
}

fn load_feature_csv(path: &Path) -> Result<FeatureMatrix> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LdpoError::parse(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| LdpoError::parse(path, e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "id" {
        return Err(LdpoError::parse(path, "header must be `id,f0,...`"));
    }
    let dim = header.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LdpoError::parse(path, format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(LdpoError::parse(
                path,
                format!("row {row}: expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        ids.push(record[0].to_owned());
        for col in 0..dim {
            let v: f64 = record[col + 1].trim().parse().map_err(|_| {
                LdpoError::parse(path, format!("row {row}, column {col}: cannot parse '{}'", &record[col + 1]))
            })?;
            if !v.is_finite() {
                return Err(LdpoError::parse(path, format!("non-finite value at row {row}, column {col}")));
            }
            values.push(v);
        }
    }
    let n = ids.len();
    let values = Array2::from_shape_vec((n, dim), values).map_err(|e| LdpoError::parse(path, e.to_string()))?;
    FeatureMatrix::new(ids, values).map_err(|e| LdpoError::parse(path, e.to_string()))
}

pub fn save_feature_matrix(m: &FeatureMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Fmat => {
            write_fmat(path, m.view())?;
            let mut ids = m.ids().join("\n");
            ids.push('\n');
            write_atomic(&ids_path(path), ids.as_bytes())
        }
        MatrixFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["id".to_owned()];
            header.extend((0..m.dim()).map(|j| format!("f{j}")));
            writer.write_record(&header).map_err(|e| LdpoError::invalid(e.to_string()))?;
            for (id, row) in m.ids().iter().zip(m.values().rows()) {
                let mut record = vec![id.clone()];
                record.extend(row.iter().map(|v| format!("{v:.16e}")));
                writer.write_record(&record).map_err(|e| LdpoError::invalid(e.to_string()))?;
            }
            let bytes = writer.into_inner().map_err(|e| LdpoError::invalid(e.to_string()))?;
            write_atomic(path, &bytes)
        }
    }
}

/// Cluster labels paired with the ids they belong to, as read from an
/// assignment file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAssignment {
    pub ids: Vec<String>,
    pub assignment: ClusterAssignment,
}

impl LabeledAssignment {
    /// Reorders labels to follow `ids`; the item sets must be identical.
    pub fn align_to(&self, ids: &[String]) -> Result<ClusterAssignment> {
        if ids.len() != self.ids.len() {
            return Err(LdpoError::invalid(format!(
                "item sets differ: {} vs {} items",
                ids.len(),
                self.ids.len()
            )));
        }
        let index = id_index(&self.ids);
        let labels = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.assignment.labels()[i])
                    .ok_or_else(|| LdpoError::MissingId(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        ClusterAssignment::new(labels, self.assignment.k())
    }
}

pub fn write_assignments(path: &Path, ids: &[String], assignment: &ClusterAssignment) -> Result<()> {
    if ids.len() != assignment.len() {
        return Err(LdpoError::DimensionMismatch {
            expected: ids.len(),
            found: assignment.len(),
        });
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["id", "cluster"])
        .map_err(|e| LdpoError::invalid(e.to_string()))?;
    for (id, label) in ids.iter().zip(assignment.labels()) {
        writer
            .write_record([id.as_str(), &label.to_string()])
            .map_err(|e| LdpoError::invalid(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| LdpoError::invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_assignments(path: &Path) -> Result<LabeledAssignment> {
    let rows = read_two_column_csv(path, "cluster")?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut seen = HashSet::new();
    for (row, (id, value)) in rows.into_iter().enumerate() {
        let label: usize = value
            .trim()
            .parse()
            .map_err(|_| LdpoError::parse(path, format!("row {row}: bad cluster '{value}'")))?;
        if !seen.insert(id.clone()) {
            return Err(LdpoError::parse(path, format!("duplicate id '{id}'")));
        }
        ids.push(id);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(LdpoError::parse(path, "no assignments"));
    }
    let assignment = ClusterAssignment::from_labels(labels);
    Ok(LabeledAssignment { ids, assignment })
}

pub fn write_split(path: &Path, ids: &[String], split: &SplitAssignment) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["id", "split"])
        .map_err(|e| LdpoError::invalid(e.to_string()))?;
    for (id, tag) in ids.iter().zip(&split.tags) {
        writer
            .write_record([id.as_str(), tag.as_str()])
            .map_err(|e| LdpoError::invalid(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| LdpoError::invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_split(path: &Path) -> Result<(Vec<String>, Vec<Split>)> {
    let rows = read_two_column_csv(path, "split")?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut tags = Vec::with_capacity(rows.len());
    for (id, tag) in rows {
        ids.push(id);
        tags.push(tag.parse().map_err(|e: LdpoError| LdpoError::parse(path, e.to_string()))?);
    }
    Ok((ids, tags))
}

fn read_two_column_csv(path: &Path, second: &str) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LdpoError::parse(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| LdpoError::parse(path, e.to_string()))?
        .clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != second {
        return Err(LdpoError::parse(path, format!("header must be `id,{second}`")));
    }
    reader
        .records()
        .enumerate()
        .map(|(row, r)| {
            let r = r.map_err(|e| LdpoError::parse(path, format!("row {row}: {e}")))?;
            Ok((r[0].to_owned(), r[1].to_owned()))
        })
        .collect()
}

/// Reads a document csv with header `id,text`, tokenizing each text.
pub fn read_text_corpus(path: &Path) -> Result<TextCorpus> {
    let rows = read_two_column_csv(path, "text")?;
    Ok(TextCorpus::from_texts(rows))
}

/// Newline-delimited stoplist; blank lines are ignored and terms are lowercased.
pub fn read_stoplist(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| LdpoError::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

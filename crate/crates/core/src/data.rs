//! Sparse labeled datasets: LIBSVM parsing, [-1, 1] feature scaling and
//! single-pass streaming.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Binary class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn from_sign(y: f64) -> Label {
        if y > 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    /// +1.0 or -1.0.
    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Pos => write!(f, "+1"),
            Label::Neg => write!(f, "-1"),
        }
    }
}

/// Sparse vector with 0-based, strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from (0-based index, value) pairs; indices must be strictly increasing.
    pub fn from_pairs(pairs: Vec<(usize, f64)>) -> Option<Self> {
        if pairs.windows(2).any(|p| p[0].0 >= p[1].0) {
            return None;
        }
        let (indices, values) = pairs.into_iter().unzip();
        Some(Self { indices, values })
    }

    /// Keeps every nonzero entry of a dense slice.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut out = Self::new();
        for (j, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(j);
                out.values.push(v);
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    /// One past the largest stored index (0 when empty).
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&j| j + 1)
    }

    /// Value at a 0-based index, 0 when absent.
    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    /// Inner product with a dense vector; entries past its end are ignored.
    pub fn dot(&self, dense: ArrayView1<f64>) -> f64 {
        self.iter()
            .filter(|&(j, _)| j < dense.len())
            .map(|(j, v)| v * dense[j])
            .sum()
    }

    /// Dense copy of length `dim`; entries past `dim` are dropped.
    pub fn to_dense(&self, dim: usize) -> Array1<f64> {
        let mut out = Array1::zeros(dim);
        for (j, v) in self.iter().filter(|&(j, _)| j < dim) {
            out[j] = v;
        }
        out
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub features: SparseVector,
    pub label: Label,
}

impl Instance {
    pub fn new(features: SparseVector, label: Label) -> Self {
        Self { features, label }
    }

    /// Convenience constructor from a dense feature slice.
    pub fn dense(features: &[f64], label: Label) -> Self {
        Self::new(SparseVector::from_dense(features), label)
    }
}

/// An immutable, in-memory list of instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    dim: usize,
    pos_count: usize,
    neg_count: usize,
}

impl Dataset {
    /// The dimension is the largest feature index observed.
    pub fn new(instances: Vec<Instance>) -> Self {
        let dim = instances
            .iter()
            .map(|i| i.features.min_dim())
            .max()
            .unwrap_or(0);
        Self::with_dim(instances, dim)
    }

    /// Like [`Dataset::new`] but with a dimension at least `dim`.
    pub fn with_dim(instances: Vec<Instance>, dim: usize) -> Self {
        let observed = instances
            .iter()
            .map(|i| i.features.min_dim())
            .max()
            .unwrap_or(0);
        let pos_count = instances.iter().filter(|i| i.label == Label::Pos).count();
        let neg_count = instances.len() - pos_count;
        Self {
            instances,
            dim: dim.max(observed),
            pos_count,
            neg_count,
        }
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pos_count(&self) -> usize {
        self.pos_count
    }

    pub fn neg_count(&self) -> usize {
        self.neg_count
    }

    /// Sub-dataset from a list of positions, keeping this dataset's dimension.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        let instances = positions
            .iter()
            .map(|&i| self.instances[i].clone())
            .collect();
        Dataset::with_dim(instances, self.dim)
    }

    /// Visiting order for one pass: identity without a seed, otherwise a
    /// Fisher-Yates permutation drawn from the seed.
    pub fn stream_order(&self, shuffle_seed: Option<u64>) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.instances.len()).collect();
        if let Some(seed) = shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Yields each instance exactly once.
    pub fn stream(&self, shuffle_seed: Option<u64>) -> impl Iterator<Item = &Instance> + '_ {
        self.stream_order(shuffle_seed)
            .into_iter()
            .map(move |i| &self.instances[i])
    }
}

/// How label tokens decode to the binary label.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum LabelMap {
    /// `+1`/`1` are positive, `-1`/`0` are negative; anything else is an error.
    #[default]
    Binary,
    /// Listed labels are positive, every other numeric label negative.
    Positive(Vec<f64>),
}

impl LabelMap {
    fn decode(&self, token: &str) -> Result<Label, String> {
        let value: f64 = token
            .parse()
            .map_err(|_| format!("invalid label `{token}`"))?;
        match self {
            LabelMap::Binary => {
                if value == 1.0 {
                    Ok(Label::Pos)
                } else if value == -1.0 || value == 0.0 {
                    Ok(Label::Neg)
                } else {
                    Err(format!(
                        "label `{token}` is not binary (use a positive-label set)"
                    ))
                }
            }
            LabelMap::Positive(set) => Ok(if set.contains(&value) {
                Label::Pos
            } else {
                Label::Neg
            }),
        }
    }
}

/// Parses LIBSVM text: `<label> <idx>:<val> ...`, one instance per nonempty line.
pub fn parse_libsvm<R: BufRead>(reader: R, labels: &LabelMap) -> Result<Dataset, DataError> {
    let mut instances = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_number = lineno + 1;
        let err = |message: String| DataError::Parse {
            line: line_number,
            message,
        };
        let mut tokens = line.split_whitespace();
        let Some(label_token) = tokens.next() else {
            continue;
        };
        let label = labels.decode(label_token).map_err(err)?;
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for token in tokens {
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| err(format!("expected `index:value`, got `{token}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("invalid feature index `{idx}`")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("invalid feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value `{val}`")));
            }
            if let Some(&(prev, _)) = pairs.last() {
                if idx - 1 <= prev {
                    return Err(err(format!(
                        "feature index {idx} does not increase (previous {})",
                        prev + 1
                    )));
                }
            }
            pairs.push((idx - 1, val));
        }
        let features = SparseVector::from_pairs(pairs).expect("indices checked above");
        instances.push(Instance::new(features, label));
    }
    Ok(Dataset::new(instances))
}

pub fn parse_libsvm_str(text: &str, labels: &LabelMap) -> Result<Dataset, DataError> {
    parse_libsvm(text.as_bytes(), labels)
}

/// Writes LIBSVM text that [`parse_libsvm`] reads back into the same dataset.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    for inst in ds.instances() {
        write!(out, "{}", inst.label)?;
        for (j, v) in inst.features.iter() {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Per-feature [min, max] fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingParams {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl ScalingParams {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// (min, max) of a 0-based feature.
    pub fn range(&self, feature: usize) -> Option<(f64, f64)> {
        (feature < self.min.len()).then(|| (self.min[feature], self.max[feature]))
    }

    fn scale_value(&self, feature: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi > lo {
            (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    /// JSON object keyed by 1-based feature index: `{"3": [min, max]}`.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<usize, (f64, f64)> = (0..self.dim())
            .map(|j| (j + 1, (self.min[j], self.max[j])))
            .collect();
        serde_json::to_string_pretty(&map).expect("finite floats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let map: BTreeMap<usize, (f64, f64)> = serde_json::from_str(text)
            .map_err(|e| DataError::Format(format!("scaling params: {e}")))?;
        let dim = map.keys().copied().max().unwrap_or(0);
        if map.contains_key(&0) {
            return Err(DataError::Format(
                "scaling params: index 0 is invalid".into(),
            ));
        }
        let mut min = vec![0.0; dim];
        let mut max = vec![0.0; dim];
        for (k, (lo, hi)) in map {
            if lo > hi {
                return Err(DataError::Format(format!(
                    "scaling params: feature {k} has min > max"
                )));
            }
            min[k - 1] = lo;
            max[k - 1] = hi;
        }
        Ok(Self { min, max })
    }
}

/// Computes per-feature min/max over `train`, counting absent entries as 0.
pub fn fit_scaling(train: &Dataset) -> Result<ScalingParams, DataError> {
    if train.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let d = train.dim();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    let mut present = vec![0usize; d];
    for inst in train.instances() {
        for (j, v) in inst.features.iter() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
            present[j] += 1;
        }
    }
    for j in 0..d {
        if present[j] < train.len() {
            min[j] = min[j].min(0.0);
            max[j] = max[j].max(0.0);
        }
    }
    Ok(ScalingParams { min, max })
}

/// Maps every feature (absent ones read as 0) affinely into [-1, 1],
/// clamping out-of-range test values. Features unknown to `params` and
/// results that are exactly 0 are not stored.
pub fn apply_scaling(x: &Instance, params: &ScalingParams) -> Instance {
    let mut pairs = Vec::new();
    let mut stored = x.features.iter().peekable();
    for j in 0..params.dim() {
        let v = match stored.peek() {
            Some(&(k, v)) if k == j => {
                stored.next();
                v
            }
            _ => 0.0,
        };
        let s = params.scale_value(j, v);
        if s != 0.0 {
            pairs.push((j, s));
        }
    }
    Instance::new(
        SparseVector::from_pairs(pairs).expect("increasing by construction"),
        x.label,
    )
}

/// Applies `params` to every instance, keeping the dataset's dimension.
pub fn scale_dataset(ds: &Dataset, params: &ScalingParams) -> Dataset {
    let instances = ds
        .instances()
        .iter()
        .map(|x| apply_scaling(x, params))
        .collect();
    Dataset::with_dim(instances, ds.dim())
}

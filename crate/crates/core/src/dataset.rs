//! Labeled sample matrices and stratified fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("{rows} sample rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("{cols} columns but {names} feature names")]
    NameCount { cols: usize, names: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("duplicate feature name {0:?}")]
    DuplicateName(String),
    #[error("fold count {k} must be in [2, {samples}]")]
    BadFoldCount { k: usize, samples: usize },
    #[error("class {class} has {count} samples; at least {needed} are needed")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },
}

/// Samples × features matrix with integer class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    matrix: Matrix,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        matrix: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        n_classes: usize,
    ) -> Result<Self, DatasetError> {
        if matrix.rows() != labels.len() {
            return Err(DatasetError::LabelCount {
                rows: matrix.rows(),
                labels: labels.len(),
            });
        }
        if matrix.cols() != feature_names.len() {
            return Err(DatasetError::NameCount {
                cols: matrix.cols(),
                names: feature_names.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DatasetError::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        for (row, r) in matrix.row_iter().enumerate() {
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row, col });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for n in &feature_names {
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::DuplicateName(n.clone()));
            }
        }
        Ok(Self {
            matrix,
            labels,
            feature_names,
            n_classes,
        })
    }

    /// Like [`LabeledDataset::new`] with generated names `f0, f1, …` and the
    /// class count taken from the largest label.
    pub fn from_matrix(matrix: Matrix, labels: Vec<usize>) -> Result<Self, DatasetError> {
        let names = (0..matrix.cols()).map(|i| format!("f{i}")).collect();
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(matrix, labels, names, classes)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.matrix.col(j)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            feature_names: self.feature_names.clone(),
            n_classes: self.n_classes,
        }
    }

    pub fn select_features(&self, cols: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_columns(cols),
            labels: self.labels.clone(),
            feature_names: cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self, DatasetError> {
        Self::new(
            self.matrix.clone(),
            labels,
            self.feature_names.clone(),
            self.n_classes,
        )
    }

    pub fn with_matrix(&self, matrix: Matrix) -> Result<Self, DatasetError> {
        let names = if matrix.cols() == self.n_features() {
            self.feature_names.clone()
        } else {
            (0..matrix.cols()).map(|i| format!("c{i}")).collect()
        };
        Self::new(matrix, self.labels.clone(), names, self.n_classes)
    }
}

/// Assigns each sample to one of `k` folds, stratified by class.
///
/// Samples of each class are shuffled (seeded) and dealt round-robin, the
/// deal continuing across classes, so overall fold sizes differ by at most
/// one and every class is spread evenly. Every class needs at least two
/// samples so that each training split still contains it.
pub fn stratified_folds(
    labels: &[usize],
    n_classes: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, DatasetError> {
    let n = labels.len();
    if k < 2 || k > n {
        return Err(DatasetError::BadFoldCount { k, samples: n });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 2 {
            return Err(DatasetError::ClassTooSmall {
                class,
                count: members.len(),
                needed: 2,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; n];
    let mut slot = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = slot % k;
            slot += 1;
        }
    }
    Ok(folds)
}

/// Train/test index split for fold `f`.
pub fn fold_split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}

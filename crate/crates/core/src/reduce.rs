//! Linear dimensionality reduction: PCA, Fisher LDA, and PCA followed by LDA.
//!
//! Scatter matrices are unnormalized sums. LDA solves `S_b v = λ S_w v` by
//! whitening with the Cholesky factor of a lightly regularized `S_w`.

use thiserror::Error;

use crate::linalg::{
    canonical_sign, cholesky, dot, solve_lower, solve_lower_transposed, squared_distance, symmetric_eigen,
    LinalgError, Matrix,
};

#[derive(Debug, Error, PartialEq)]
pub enum ReduceError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("component count {m} not in [1, {max}]")]
    ComponentsOutOfRange { m: usize, max: usize },
    #[error("variance fraction {0} not in (0, 1]")]
    BadFraction(f64),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {class} has {count} samples; at least 2 are needed")]
    ClassTooSmall { class: usize, count: usize },
    #[error("requested {d} discriminant directions but at most {max} exist")]
    TooManyDims { d: usize, max: usize },
    #[error("{rows} samples but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("within-class scatter is singular even after regularization")]
    SingularScatter,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Components {
    Count(usize),
    /// Smallest count whose leading eigenvalues reach this share of the total.
    VarianceFraction(f64),
}

fn column_mean(x: &Matrix) -> Vec<f64> {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn centered(x: &[f64], mean: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).map(|(a, b)| a - b).collect()
}

/// `Σ (x − μ)(x − μ)ᵀ` over the rows of `x`.
pub fn total_scatter(x: &Matrix) -> Matrix {
    let mean = column_mean(x);
    let mut s = Matrix::zeros(x.cols(), x.cols());
    for r in x.row_iter() {
        s.add_outer(&centered(r, &mean), 1.0);
    }
    s
}

/// `Y = basisᵀ (x − mean)` for every row.
fn project(x: &Matrix, mean: &[f64], basis: &Matrix) -> Result<Matrix, ReduceError> {
    if x.cols() != mean.len() {
        return Err(ReduceError::DimensionMismatch {
            expected: mean.len(),
            got: x.cols(),
        });
    }
    let mut out = Matrix::zeros(x.rows(), basis.cols());
    for (i, r) in x.row_iter().enumerate() {
        let y = basis.tr_matvec(&centered(r, mean))?;
        out.row_mut(i).copy_from_slice(&y);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// features × m, orthonormal columns.
    pub basis: Matrix,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Full clamped spectrum of the scatter matrix.
    pub spectrum: Vec<f64>,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.basis.cols()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix, ReduceError> {
        project(x, &self.mean, &self.basis)
    }

    /// `mean + basis · y` for every row of `y`.
    pub fn reconstruct(&self, y: &Matrix) -> Result<Matrix, ReduceError> {
        let mut out = Matrix::zeros(y.rows(), self.n_features());
        for (i, r) in y.row_iter().enumerate() {
            let x = self.basis.matvec(r)?;
            for ((o, xv), m) in out.row_mut(i).iter_mut().zip(x).zip(&self.mean) {
                *o = xv + m;
            }
        }
        Ok(out)
    }
}

pub fn pca_fit(x: &Matrix, components: Components) -> Result<PcaModel, ReduceError> {
    let n = x.rows();
    if n < 2 {
        return Err(ReduceError::TooFewSamples(n));
    }
    let max = (n - 1).min(x.cols());
    let eig = symmetric_eigen(&total_scatter(x))?;
    let spectrum: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let m = match components {
        Components::Count(m) => {
            if m < 1 || m > max {
                return Err(ReduceError::ComponentsOutOfRange { m, max });
            }
            m
        }
        Components::VarianceFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ReduceError::BadFraction(f));
            }
            let total: f64 = spectrum.iter().sum();
            if f >= 1.0 || total == 0.0 {
                if f >= 1.0 { max } else { 1 }
            } else {
                let mut acc = 0.0;
                let mut m = max;
                for (i, l) in spectrum.iter().enumerate() {
                    acc += l;
                    if acc / total >= f {
                        m = i + 1;
                        break;
                    }
                }
                m.min(max)
            }
        }
    };
    let idx: Vec<usize> = (0..m).collect();
    Ok(PcaModel {
        mean: column_mean(x),
        basis: eig.vectors.select_columns(&idx),
        eigenvalues: spectrum[..m].to_vec(),
        spectrum,
    })
}

/// Within-class and between-class scatter. `S_b` sums the outer products of
/// class-mean offsets from the overall mean, one term per class.
pub fn class_scatter(x: &Matrix, labels: &[usize], n_classes: usize) -> (Matrix, Matrix) {
    let p = x.cols();
    let mut sums = vec![vec![0.0; p]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (r, &l) in x.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(r) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| v / c.max(1) as f64).collect())
        .collect();
    let overall = column_mean(x);
    let mut sw = Matrix::zeros(p, p);
    for (r, &l) in x.row_iter().zip(labels) {
        sw.add_outer(&centered(r, &means[l]), 1.0);
    }
    let mut sb = Matrix::zeros(p, p);
    for (m, &c) in means.iter().zip(&counts) {
        if c > 0 {
            sb.add_outer(&centered(m, &overall), 1.0);
        }
    }
    (sw, sb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// Overall training mean; inputs are centered on it before projection.
    pub mean: Vec<f64>,
    /// features × d discriminant directions scaled to unit pooled
    /// within-class variance: `vᵀ S_w v = n − c`.
    pub basis: Matrix,
    /// Generalized eigenvalues of the retained directions, descending.
    pub eigenvalues: Vec<f64>,
    /// Projected centroid of each class (c × d).
    pub class_means: Matrix,
}

impl LdaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_dims(&self) -> usize {
        self.basis.cols()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix, ReduceError> {
        project(x, &self.mean, &self.basis)
    }

    /// Nearest projected class mean; lowest class on ties.
    pub fn classify_projected(&self, y: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, m) in self.class_means.row_iter().enumerate() {
            let d = squared_distance(y, m);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    pub fn classify(&self, x: &Matrix) -> Result<Vec<usize>, ReduceError> {
        let y = self.transform(x)?;
        Ok(y.row_iter().map(|r| self.classify_projected(r)).collect())
    }
}

pub fn lda_fit(x: &Matrix, labels: &[usize], n_classes: usize, d: usize) -> Result<LdaModel, ReduceError> {
    if labels.len() != x.rows() {
        return Err(ReduceError::LabelCount {
            rows: x.rows(),
            labels: labels.len(),
        });
    }
    if n_classes < 2 {
        return Err(ReduceError::TooFewClasses(n_classes));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some((class, &count)) = counts.iter().enumerate().find(|&(_, &c)| c < 2) {
        return Err(ReduceError::ClassTooSmall { class, count });
    }
    let max = (n_classes - 1).min(x.cols());
    if d < 1 || d > max {
        return Err(ReduceError::TooManyDims { d, max });
    }
    let p = x.cols();
    let (mut sw, sb) = class_scatter(x, labels, n_classes);
    let eps = 1e-8 * sw.trace() / p as f64;
    for i in 0..p {
        sw[(i, i)] += eps;
    }
    let l = cholesky(&sw).map_err(|e| match e {
        LinalgError::NotPositiveDefinite { .. } => ReduceError::SingularScatter,
        other => other.into(),
    })?;
    // M = L⁻¹ S_b L⁻ᵀ
    let mut z = Matrix::zeros(p, p);
    for j in 0..p {
        let col = solve_lower(&l, &sb.col(j));
        for i in 0..p {
            z[(j, i)] = col[i];
        }
    }
    let mut m = Matrix::zeros(p, p);
    for j in 0..p {
        let col = solve_lower(&l, &z.col(j));
        for i in 0..p {
            m[(i, j)] = col[i];
        }
    }
    for i in 0..p {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let eig = symmetric_eigen(&m)?;
    let mut basis = Matrix::zeros(p, d);
    let scale = ((x.rows() - n_classes) as f64).max(1.0).sqrt();
    for k in 0..d {
        let mut v = solve_lower_transposed(&l, &eig.vectors.col(k));
        canonical_sign(&mut v);
        for i in 0..p {
            basis[(i, k)] = scale * v[i];
        }
    }
    let mean = column_mean(x);
    let projected = project(x, &mean, &basis)?;
    let mut class_means = Matrix::zeros(n_classes, d);
    for (r, &c) in projected.row_iter().zip(labels) {
        for (o, v) in class_means.row_mut(c).iter_mut().zip(r) {
            *o += v / counts[c] as f64;
        }
    }
    Ok(LdaModel {
        mean,
        basis,
        eigenvalues: eig.values[..d].iter().map(|&v| v.max(0.0)).collect(),
        class_means,
    })
}

/// Ratio of between-class to within-class scatter of 1-D projections `x·w`.
pub fn separation_ratio(x: &Matrix, labels: &[usize], n_classes: usize, w: &[f64]) -> f64 {
    let proj = Matrix::from_vec(x.rows(), 1, x.row_iter().map(|r| dot(r, w)).collect());
    let (sw, sb) = class_scatter(&proj, labels, n_classes);
    sb[(0, 0)] / sw[(0, 0)]
}

/// Trace ratio `tr(S_b) / tr(S_w)` of an already projected data set.
pub fn trace_ratio(y: &Matrix, labels: &[usize], n_classes: usize) -> f64 {
    let (sw, sb) = class_scatter(y, labels, n_classes);
    sb.trace() / sw.trace()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaLdaModel {
    pub pca: PcaModel,
    pub lda: LdaModel,
}

impl PcaLdaModel {
    pub fn transform(&self, x: &Matrix) -> Result<Matrix, ReduceError> {
        self.lda.transform(&self.pca.transform(x)?)
    }

    pub fn classify(&self, x: &Matrix) -> Result<Vec<usize>, ReduceError> {
        self.lda.classify(&self.pca.transform(x)?)
    }
}

pub fn pca_lda_fit(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    variance_fraction: f64,
    d: usize,
) -> Result<PcaLdaModel, ReduceError> {
    let pca = pca_fit(x, Components::VarianceFraction(variance_fraction))?;
    let lda = lda_fit(&pca.transform(x)?, labels, n_classes, d)?;
    Ok(PcaLdaModel { pca, lda })
}

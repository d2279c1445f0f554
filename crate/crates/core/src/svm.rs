//! Kernel support vector machines trained on the dual problem
//!
//! ```text
//! maximize   Σ aᵢ − ½ ΣΣ yᵢ yⱼ aᵢ aⱼ K(xᵢ, xⱼ)
//! subject to Σ aᵢ yᵢ = 0,  0 ≤ aᵢ ≤ C
//! ```
//!
//! with a sequential-minimal-optimization solver that updates the maximal
//! KKT-violating pair each step. Multi-class problems are reduced
//! one-vs-rest.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{dot, squared_distance, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("C must be positive and finite, got {0}")]
    InvalidC(f64),
    #[error("labels must be ±1, got {0}")]
    InvalidLabel(f64),
    #[error("training needs both classes present")]
    SingleClass,
    #[error("training set is empty")]
    Empty,
    #[error("SMO did not converge after {iterations} pair updates (max KKT violation {max_violation:e})")]
    NotConverged { iterations: u64, max_violation: f64 },
    #[error("class {class}: {source}")]
    Class {
        class: usize,
        #[source]
        source: Box<SvmError>,
    },
    #[error("multi-class training needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

impl SvmError {
    /// Strips class annotations.
    pub fn root(&self) -> &SvmError {
        match self {
            SvmError::Class { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Polynomial { degree: u32, coef: f64 },
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn validate(&self) -> Result<(), SvmError> {
        match *self {
            Kernel::Linear => Ok(()),
            Kernel::Polynomial { degree, coef } => {
                if degree == 0 {
                    Err(SvmError::InvalidKernel("polynomial degree must be >= 1".into()))
                } else if !coef.is_finite() {
                    Err(SvmError::InvalidKernel("polynomial coef must be finite".into()))
                } else {
                    Ok(())
                }
            }
            Kernel::Rbf { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(SvmError::InvalidKernel(format!("rbf gamma must be > 0, got {gamma}")))
                }
            }
        }
    }

    /// Unchecked evaluation; callers guarantee equal lengths.
    #[inline]
    pub fn apply(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(x, z),
            Kernel::Polynomial { degree, coef } => (dot(x, z) + coef).powi(degree as i32),
            Kernel::Rbf { gamma } => (-gamma * squared_distance(x, z)).exp(),
        }
    }
}

pub fn kernel_eval(kernel: &Kernel, x: &[f64], z: &[f64]) -> Result<f64, SvmError> {
    if x.len() != z.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            actual: z.len(),
        });
    }
    Ok(kernel.apply(x, z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    /// Maximal KKT violation accepted at termination.
    pub tol: f64,
    /// Cap on pair updates.
    pub max_iter: u64,
    /// Seeds the working-set scan order (only affects tie-breaking).
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: Kernel::Linear,
            c: 10.0,
            tol: 1e-3,
            max_iter: 1_000_000,
            seed: 0,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<(), SvmError> {
        self.kernel.validate()?;
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::InvalidC(self.c));
        }
        Ok(())
    }
}

/// A trained two-class machine. Only samples with positive dual
/// coefficient are retained.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmBinaryModel {
    pub support_vectors: Matrix,
    pub sv_labels: Vec<f64>,
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
    pub c: f64,
}

impl SvmBinaryModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.cols()
    }

    pub fn n_support(&self) -> usize {
        self.alphas.len()
    }

    /// `Σ aᵢ yᵢ K(svᵢ, x) + b`
    pub fn decision_value(&self, x: &[f64]) -> Result<f64, SvmError> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self.decision_unchecked(x))
    }

    fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .row_iter()
            .zip(self.alphas.iter().zip(&self.sv_labels))
            .map(|(sv, (&a, &y))| a * y * self.kernel.apply(sv, x))
            .sum::<f64>()
            + self.bias
    }

    /// Primal weight vector `w = Σ aᵢ yᵢ xᵢ`, available for the linear kernel.
    pub fn linear_weights(&self) -> Option<Vec<f64>> {
        if self.kernel != Kernel::Linear {
            return None;
        }
        let coef: Vec<f64> = self.alphas.iter().zip(&self.sv_labels).map(|(a, y)| a * y).collect();
        self.support_vectors.tr_matvec(&coef).ok()
    }

    /// Dual objective over the retained support vectors.
    pub fn dual_objective(&self) -> f64 {
        let n = self.n_support();
        let mut quad = 0.0;
        for i in 0..n {
            let si = self.support_vectors.row(i);
            let ci = self.alphas[i] * self.sv_labels[i];
            for j in 0..n {
                let cj = self.alphas[j] * self.sv_labels[j];
                quad += ci * cj * self.kernel.apply(si, self.support_vectors.row(j));
            }
        }
        self.alphas.iter().sum::<f64>() - 0.5 * quad
    }

    /// The same machine with the sign of every decision value flipped.
    pub fn negated(&self) -> Self {
        Self {
            support_vectors: self.support_vectors.clone(),
            sv_labels: self.sv_labels.iter().map(|y| -y).collect(),
            alphas: self.alphas.clone(),
            bias: -self.bias,
            kernel: self.kernel,
            c: self.c,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: u64,
}

const TAU: f64 = 1e-12;

/// SMO on a precomputed kernel matrix (row-major `n × n`).
pub(crate) fn solve_dual(
    kmat: &[f64],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: u64,
    seed: u64,
    warm_start: Option<&[f64]>,
) -> Result<DualSolution, SvmError> {
    let n = y.len();
    debug_assert_eq!(kmat.len(), n * n);
    let k = |i: usize, j: usize| kmat[i * n + j];

    let mut alpha = match warm_start {
        Some(a) => a.iter().map(|&v| v.clamp(0.0, c)).collect(),
        None => vec![0.0; n],
    };
    // G = Q a − 1, Q_ij = y_i y_j K_ij
    let mut grad = vec![-1.0; n];
    for j in 0..n {
        if alpha[j] != 0.0 {
            for i in 0..n {
                grad[i] += y[i] * y[j] * k(i, j) * alpha[j];
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);

    let dual = |alpha: &[f64], grad: &[f64]| -> f64 {
        0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (1.0 - g)).sum::<f64>()
    };
    let mut objective = if cfg!(debug_assertions) { dual(&alpha, &grad) } else { 0.0 };

    let mut iterations = 0u64;
    let (m_up, m_low) = loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for &t in &order {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break (gmax, gmin);
        }
        if iterations >= max_iter {
            return Err(SvmError::NotConverged {
                iterations,
                max_violation: gmax - gmin,
            });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = k(i, j);
        if y[i] != y[j] {
            let quad = (k(i, i) + k(j, j) + 2.0 * kij * y[i] * y[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k(i, i) + k(j, j) - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        alpha[i] = alpha[i].clamp(0.0, c);
        alpha[j] = alpha[j].clamp(0.0, c);

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k(t, i) * di + y[j] * k(t, j) * dj);
        }

        if cfg!(debug_assertions) {
            let next = dual(&alpha, &grad);
            debug_assert!(
                next >= objective - 1e-9 * objective.abs().max(1.0),
                "dual objective decreased: {objective} -> {next}"
            );
            objective = next;
        }
    };

    // b from free support vectors, else the midpoint of the feasible interval
    let (mut sum, mut free) = (0.0, 0usize);
    for t in 0..n {
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += -y[t] * grad[t];
            free += 1;
        }
    }
    let bias = if free > 0 {
        sum / free as f64
    } else if m_up.is_finite() && m_low.is_finite() {
        0.5 * (m_up + m_low)
    } else if m_up.is_finite() {
        m_up
    } else {
        m_low
    };
    Ok(DualSolution {
        alpha,
        bias,
        iterations,
    })
}

fn kernel_matrix(kernel: &Kernel, x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.apply(x.row(i), x.row(j));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn check_binary_labels(y: &[f64]) -> Result<(), SvmError> {
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClass);
    }
    Ok(())
}

fn train_binary_warm(
    x: &Matrix,
    y: &[f64],
    params: &SvmParams,
    warm_start: Option<&[f64]>,
) -> Result<SvmBinaryModel, SvmError> {
    params.validate()?;
    if x.rows() == 0 {
        return Err(SvmError::Empty);
    }
    if x.rows() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    check_binary_labels(y)?;
    let kmat = kernel_matrix(&params.kernel, x);
    let sol = solve_dual(&kmat, y, params.c, params.tol, params.max_iter, params.seed, warm_start)?;
    log::debug!("SMO converged after {} pair updates", sol.iterations);

    let keep: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(SvmBinaryModel {
        support_vectors: x.select_rows(&keep),
        sv_labels: keep.iter().map(|&i| y[i]).collect(),
        alphas: keep.iter().map(|&i| sol.alpha[i]).collect(),
        bias: sol.bias,
        kernel: params.kernel,
        c: params.c,
    })
}

/// Trains a two-class machine; `y` holds ±1 labels.
pub fn train_binary(x: &Matrix, y: &[f64], params: &SvmParams) -> Result<SvmBinaryModel, SvmError> {
    train_binary_warm(x, y, params, None)
}

/// Checks the KKT conditions of `model` on its training set at tolerance `tol`.
/// Returns the largest violation found (0 when every condition holds exactly).
pub fn max_kkt_violation(model: &SvmBinaryModel, x: &Matrix, y: &[f64], alphas: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in x.row_iter().enumerate() {
        let margin = y[i] * model.decision_unchecked(row);
        let a = alphas[i];
        let v = if a <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if a >= model.c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Per-sample dual coefficients of `model` aligned with a training matrix
/// (zero for rows that are not support vectors).
pub fn alphas_for(model: &SvmBinaryModel, x: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; x.rows()];
    let mut used = vec![false; model.n_support()];
    for (i, row) in x.row_iter().enumerate() {
        if let Some(s) = (0..model.n_support())
            .find(|&s| !used[s] && model.support_vectors.row(s) == row)
        {
            used[s] = true;
            out[i] = model.alphas[s];
        }
    }
    out
}

/// One-vs-rest ensemble: machine `k` separates class `k` from the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmMulticlassModel {
    pub machines: Vec<SvmBinaryModel>,
}

impl SvmMulticlassModel {
    pub fn n_classes(&self) -> usize {
        self.machines.len()
    }

    pub fn dim(&self) -> usize {
        self.machines.first().map_or(0, |m| m.dim())
    }

    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        self.machines.iter().map(|m| m.decision_value(x)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, SvmError> {
        Ok(argmax(&self.decision_values(x)?))
    }

    pub fn predict_all(&self, x: &Matrix) -> Result<Vec<usize>, SvmError> {
        x.row_iter().map(|r| self.predict(r)).collect()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn one_vs_rest_labels(labels: &[usize], class: usize) -> Vec<f64> {
    labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect()
}

fn check_multiclass(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<(), SvmError> {
    if n_classes < 2 {
        return Err(SvmError::TooFewClasses(n_classes));
    }
    if x.rows() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.rows(),
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(SvmError::LabelOutOfRange {
            label,
            classes: n_classes,
        });
    }
    Ok(())
}

/// Trains `n_classes` one-vs-rest machines. With two classes a single
/// machine is trained and the class-0 machine is its negation, so the
/// argmax reduces exactly to the sign of one decision function.
pub fn train_multiclass(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &SvmParams,
) -> Result<SvmMulticlassModel, SvmError> {
    check_multiclass(x, labels, n_classes)?;
    let annotate = |class: usize| move |e: SvmError| SvmError::Class { class, source: Box::new(e) };
    if n_classes == 2 {
        let m = train_binary(x, &one_vs_rest_labels(labels, 1), params).map_err(annotate(1))?;
        return Ok(SvmMulticlassModel {
            machines: vec![m.negated(), m],
        });
    }
    let machines = (0..n_classes)
        .into_par_iter()
        .map(|k| train_binary(x, &one_vs_rest_labels(labels, k), params).map_err(annotate(k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SvmMulticlassModel { machines })
}

fn retrain_machine(
    machine: &SvmBinaryModel,
    new_x: &Matrix,
    new_y: &[f64],
    params: &SvmParams,
) -> Result<SvmBinaryModel, SvmError> {
    let mut rows: Vec<Vec<f64>> = machine.support_vectors.row_iter().map(<[f64]>::to_vec).collect();
    rows.extend(new_x.row_iter().map(<[f64]>::to_vec));
    let x = Matrix::from_rows(&rows).map_err(|_| SvmError::DimensionMismatch {
        expected: machine.dim(),
        actual: new_x.cols(),
    })?;
    let mut y = machine.sv_labels.clone();
    y.extend_from_slice(new_y);
    let mut warm = machine.alphas.clone();
    warm.resize(y.len(), 0.0);
    let params = SvmParams {
        kernel: machine.kernel,
        c: machine.c,
        ..params.clone()
    };
    train_binary_warm(&x, &y, &params, Some(&warm))
}

/// Re-solves every machine over its retained support vectors plus the new
/// samples, warm-starting from the previous dual coefficients.
pub fn retrain_incremental(
    model: &SvmMulticlassModel,
    new_x: &Matrix,
    new_labels: &[usize],
    params: &SvmParams,
) -> Result<SvmMulticlassModel, SvmError> {
    let c = model.n_classes();
    check_multiclass(new_x, new_labels, c)?;
    if new_x.rows() > 0 && new_x.cols() != model.dim() {
        return Err(SvmError::DimensionMismatch {
            expected: model.dim(),
            actual: new_x.cols(),
        });
    }
    let new_x = if new_x.rows() == 0 {
        Matrix::zeros(0, model.dim())
    } else {
        new_x.clone()
    };
    let annotate = |class: usize| move |e: SvmError| SvmError::Class { class, source: Box::new(e) };
    if c == 2 {
        let m = retrain_machine(&model.machines[1], &new_x, &one_vs_rest_labels(new_labels, 1), params)
            .map_err(annotate(1))?;
        return Ok(SvmMulticlassModel {
            machines: vec![m.negated(), m],
        });
    }
    let machines = model
        .machines
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            retrain_machine(m, &new_x, &one_vs_rest_labels(new_labels, k), params).map_err(annotate(k))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SvmMulticlassModel { machines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let rbf = Kernel::Rbf { gamma: 0.5 };
        assert_eq!(kernel_eval(&rbf, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
        assert_eq!(kernel_eval(&Kernel::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!((kernel_eval(&rbf, &[0.0, 0.0], &[2.0, 0.0]).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!((kernel_eval(&rbf, &[0.0, 0.0], &[2.0, 0.0]).unwrap() - 0.1353).abs() < 1e-4);
        let poly = Kernel::Polynomial { degree: 2, coef: 1.0 };
        assert_eq!(kernel_eval(&poly, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 144.0);
        assert!(matches!(
            kernel_eval(&Kernel::Linear, &[1.0], &[1.0, 2.0]),
            Err(SvmError::DimensionMismatch { expected: 1, actual: 2 })
        ));
        assert!(Kernel::Rbf { gamma: 0.0 }.validate().is_err());
        assert!(Kernel::Polynomial { degree: 0, coef: 0.0 }.validate().is_err());
    }

    /// 2-variable dual solved by hand: with x = ∓1, a₁ = a₂ = a and the
    /// objective 2a − ½·a²·(1 + 1 + 2) = 2a − 2a² peaks at a = ½, giving
    /// w = ½·1 + ½·1 = 1 and b = 0.
    #[test]
    fn two_point_analytic() {
        let x = mat(&[&[-1.0], &[1.0]]);
        let y = [-1.0, 1.0];
        let params = SvmParams { c: 1e6, ..Default::default() };
        let m = train_binary(&x, &y, &params).unwrap();
        assert_eq!(m.n_support(), 2);
        for &a in &m.alphas {
            assert!((a - 0.5).abs() < 1e-12);
        }
        assert!((m.linear_weights().unwrap()[0] - 1.0).abs() < 1e-12);
        assert!(m.bias.abs() < 1e-12);
        assert!(m.decision_value(&[0.0]).unwrap().abs() < 1e-12);
        assert!((m.decision_value(&[1.0]).unwrap() - 1.0).abs() < 10.0 * params.tol);
        assert!((m.decision_value(&[-1.0]).unwrap() + 1.0).abs() < 10.0 * params.tol);
        assert!(m.decision_value(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn label_preconditions() {
        let x = mat(&[&[0.0], &[1.0]]);
        assert_eq!(train_binary(&x, &[1.0, 1.0], &SvmParams::default()).unwrap_err(), SvmError::SingleClass);
        assert_eq!(train_binary(&x, &[1.0, 0.0], &SvmParams::default()).unwrap_err(), SvmError::InvalidLabel(0.0));
        let bad_c = SvmParams { c: 0.0, ..Default::default() };
        assert_eq!(train_binary(&x, &[1.0, -1.0], &bad_c).unwrap_err(), SvmError::InvalidC(0.0));
    }

    #[test]
    fn xor_with_rbf() {
        let x = mat(&[&[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let y = [1.0, 1.0, -1.0, -1.0];
        let params = SvmParams {
            kernel: Kernel::Rbf { gamma: 1.0 },
            c: 10.0,
            ..Default::default()
        };
        let m = train_binary(&x, &y, &params).unwrap();
        assert!(m.n_support() > 0);
        for (row, &yi) in x.row_iter().zip(&y) {
            // decision values re-evaluated straight from the kernel expansion
            let direct: f64 = m
                .support_vectors
                .row_iter()
                .zip(m.alphas.iter().zip(&m.sv_labels))
                .map(|(sv, (a, ys))| a * ys * (-squared_distance(sv, row)).exp())
                .sum::<f64>()
                + m.bias;
            assert!((direct - m.decision_value(row).unwrap()).abs() < 1e-12);
            assert!(direct * yi > 0.0);
        }
        let sum: f64 = m.alphas.iter().zip(&m.sv_labels).map(|(a, y)| a * y).sum();
        assert!(sum.abs() < 1e-8);
    }

    #[test]
    fn iteration_cap_reports_violation() {
        let x = mat(&[&[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let y = [1.0, 1.0, -1.0, -1.0];
        let params = SvmParams {
            kernel: Kernel::Rbf { gamma: 1.0 },
            max_iter: 1,
            tol: 1e-12,
            ..Default::default()
        };
        match train_binary(&x, &y, &params) {
            Err(SvmError::NotConverged { iterations: 1, max_violation }) => assert!(max_violation > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn blobs(seed: u64, per: usize, centers: &[[f64; 2]], sd: f64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
                labels.push(k);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn kkt_and_feasibility_on_soft_margin_data() {
        let (x, labels) = blobs(7, 30, &[[0.0, 0.0], [1.0, 1.0]], 0.6);
        let y = one_vs_rest_labels(&labels, 1);
        let params = SvmParams { c: 2.0, ..Default::default() };
        let m = train_binary(&x, &y, &params).unwrap();
        let a = alphas_for(&m, &x);
        assert!(max_kkt_violation(&m, &x, &y, &a) <= params.tol);
        assert!(a.iter().all(|&v| (0.0..=params.c).contains(&v)));
        let s: f64 = a.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(s.abs() < 1e-8);
    }

    #[test]
    fn three_blobs_held_out() {
        let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let (x, labels) = blobs(11, 30, &centers, 0.5);
        let m = train_multiclass(&x, &labels, 3, &SvmParams::default()).unwrap();
        assert_eq!(m.n_classes(), 3);
        let (tx, tl) = blobs(12, 20, &centers, 0.5);
        assert_eq!(m.predict_all(&tx).unwrap(), tl);
    }

    #[test]
    fn two_class_reduces_to_sign() {
        let (x, labels) = blobs(3, 20, &[[0.0, 0.0], [2.0, 2.0]], 0.8);
        let m = train_multiclass(&x, &labels, 2, &SvmParams::default()).unwrap();
        let direct = train_binary(&x, &one_vs_rest_labels(&labels, 1), &SvmParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let p = [rng.random_range(-2.0..4.0), rng.random_range(-2.0..4.0)];
            let f = direct.decision_value(&p).unwrap();
            if f != 0.0 {
                assert_eq!(m.predict(&p).unwrap(), usize::from(f > 0.0));
            }
        }
    }

    #[test]
    fn argmax_ties_and_scaling() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[-1.0, 0.3, 0.3]), 1);
        let v = [0.2, -0.7, 0.9, 0.1];
        for s in [0.5, 3.0, 1e6] {
            let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
            assert_eq!(argmax(&scaled), argmax(&v));
        }
    }

    #[test]
    fn multiclass_errors_annotated() {
        let x = mat(&[&[0.0], &[1.0], &[2.0]]);
        assert_eq!(
            train_multiclass(&x, &[0, 1, 2], 1, &SvmParams::default()).unwrap_err(),
            SvmError::TooFewClasses(1)
        );
        // class 2 never appears, so its machine sees a single label
        let err = train_multiclass(&x, &[0, 1, 1], 3, &SvmParams::default()).unwrap_err();
        assert!(matches!(err, SvmError::Class { class: 2, .. }));
        assert_eq!(err.root(), &SvmError::SingleClass);
    }

    fn probe_grid() -> Vec<[f64; 2]> {
        let mut g = Vec::new();
        for i in 0..11 {
            for j in 0..11 {
                g.push([-2.0 + 0.6 * i as f64, -2.0 + 0.6 * j as f64]);
            }
        }
        g
    }

    #[test]
    fn incremental_matches_batch() {
        let params = SvmParams {
            kernel: Kernel::Rbf { gamma: 0.5 },
            c: 5.0,
            ..Default::default()
        };
        let centers = [[0.0, 0.0], [2.0, 1.0], [0.0, 2.5]];
        let (x, labels) = blobs(21, 15, &centers, 0.7);
        let model = train_multiclass(&x, &labels, 3, &params).unwrap();

        // no new data: already optimal
        let same = retrain_incremental(&model, &Matrix::zeros(0, 2), &[], &params).unwrap();
        for (a, b) in same.machines.iter().zip(&model.machines) {
            assert_eq!(a.alphas, b.alphas);
            assert!((a.bias - b.bias).abs() < params.tol);
        }

        let (nx, nl) = blobs(22, 5, &centers, 0.7);
        let inc = retrain_incremental(&model, &nx, &nl, &params).unwrap();
        for (k, machine) in model.machines.iter().enumerate() {
            let mut rows: Vec<Vec<f64>> = machine.support_vectors.row_iter().map(|r| r.to_vec()).collect();
            rows.extend(nx.row_iter().map(|r| r.to_vec()));
            let mut y = machine.sv_labels.clone();
            y.extend(one_vs_rest_labels(&nl, k));
            let batch = train_binary(&Matrix::from_rows(&rows).unwrap(), &y, &params).unwrap();
            for p in probe_grid() {
                let d_inc = inc.machines[k].decision_value(&p).unwrap();
                let d_batch = batch.decision_value(&p).unwrap();
                assert!((d_inc - d_batch).abs() <= 10.0 * params.tol, "class {k} at {p:?}");
            }
        }
    }

    #[test]
    fn duplicate_interior_point_leaves_function_unchanged() {
        let params = SvmParams::default();
        let (x, labels) = blobs(5, 20, &[[0.0, 0.0], [3.0, 3.0]], 0.5);
        let model = train_multiclass(&x, &labels, 2, &params).unwrap();
        // the point furthest on the positive side is well outside the margin
        let (far, _) = x
            .row_iter()
            .enumerate()
            .map(|(i, r)| (i, model.machines[1].decision_value(r).unwrap()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let dup = x.select_rows(&[far]);
        let inc = retrain_incremental(&model, &dup, &[labels[far]], &params).unwrap();
        for p in probe_grid() {
            let a = model.machines[1].decision_value(&p).unwrap();
            let b = inc.machines[1].decision_value(&p).unwrap();
            assert!((a - b).abs() <= 10.0 * params.tol);
        }
    }
}

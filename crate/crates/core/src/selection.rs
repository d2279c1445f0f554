//! Feature ranking and subset selection.
//!
//! * [`ttest_rank`]: pooled-variance two-sample t-test per feature.
//! * [`forward_select`]: t-test filter (p below a cutoff for any class pair)
//!   followed by a greedy forward wrapper driven by a validation-error callback.
//! * [`svm_rfe`]: recursive feature elimination with a linear SVM, removing
//!   one feature per round.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::{fold_split, stratified_folds, DatasetError, LabeledDataset};
use crate::linalg::Matrix;
use crate::stats::student_t_two_tailed_p;
use crate::svm::{train_multiclass, Kernel, SvmError, SvmParams};
use crate::textfmt::sig9;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("class {class} has {count} samples; the t-test needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("class id {0} out of range")]
    UnknownClass(usize),
    #[error("selection needs at least 2 classes")]
    TooFewClasses,
    #[error("target feature count {target} not in [1, {features}]")]
    BadTarget { target: usize, features: usize },
    #[error("SVM training failed at elimination step {step}: {source}")]
    RfeTraining {
        step: usize,
        #[source]
        source: SvmError,
    },
    #[error("validation evaluator failed: {0}")]
    Evaluator(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Per-column min-max scaling into `[0, 1]`; constant columns map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaling {
    pub ranges: Vec<(f64, f64)>,
}

impl ColumnScaling {
    pub fn fit(x: &Matrix) -> Self {
        let ranges = (0..x.cols())
            .map(|j| {
                x.row_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[j]), hi.max(r[j]))
                })
            })
            .collect();
        Self { ranges }
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Affine map fitted on training data; values outside the fitted range
    /// extrapolate rather than clamp.
    pub fn apply_value(&self, col: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[col];
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.apply_value(j, v)).collect()
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = self.apply_value(j, *v);
            }
        }
        out
    }
}

/// Scales every column to `[0, 1]`, returning the scaled data and the
/// per-column ranges for reuse at prediction time.
pub fn normalize_columns(ds: &LabeledDataset) -> (LabeledDataset, ColumnScaling) {
    let scaling = ColumnScaling::fit(ds.matrix());
    let scaled = ds
        .with_matrix(scaling.apply(ds.matrix()))
        .expect("min-max scaling of finite data stays finite");
    (scaled, scaling)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    TTest,
    Forward,
    Rfe,
}

/// One logged event of a selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    pub step: usize,
    pub feature: usize,
    pub score: f64,
    pub p_value: Option<f64>,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub method: SelectionMethod,
    /// Selected feature indices, in selection order (t-test: ascending p;
    /// forward: order of addition; RFE: ascending index).
    pub kept: Vec<usize>,
    /// Per-feature statistic: t for the t-test paths, the ranking criterion for RFE.
    pub scores: Vec<f64>,
    /// Per-feature two-tailed p-value (t-test paths only).
    pub p_values: Option<Vec<f64>>,
    pub history: Vec<SelectionStep>,
    /// Set when the t-test filter left nothing for the wrapper to consider.
    pub empty_pool: bool,
}

impl SelectionReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,feature,score,p,error\n");
        for h in &self.history {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                h.step,
                h.feature,
                sig9(h.score),
                h.p_value.map(sig9).unwrap_or_default(),
                h.error.map(sig9).unwrap_or_default()
            );
        }
        s
    }

    pub fn to_table(&self, names: &[String]) -> String {
        let name = |f: usize| names.get(f).cloned().unwrap_or_else(|| format!("f{f}"));
        let width = self
            .history
            .iter()
            .map(|h| name(h.feature).len())
            .chain([7])
            .max()
            .unwrap_or(7);
        let mut s = format!(
            "{:>4}  {:<width$}  {:>14}  {:>14}  {:>14}\n",
            "step", "feature", "score", "p", "error"
        );
        for h in &self.history {
            let _ = writeln!(
                s,
                "{:>4}  {:<width$}  {:>14}  {:>14}  {:>14}",
                h.step,
                name(h.feature),
                sig9(h.score),
                h.p_value.map(sig9).unwrap_or_else(|| "-".into()),
                h.error.map(sig9).unwrap_or_else(|| "-".into())
            );
        }
        let kept: Vec<String> = self.kept.iter().map(|&f| name(f)).collect();
        let _ = writeln!(s, "kept ({}): {}", kept.len(), kept.join(", "));
        if self.empty_pool {
            s.push_str("note: no feature passed the t-test cutoff\n");
        }
        s
    }
}

/// Pooled-variance two-sample t statistic and two-tailed p for one column.
pub fn pooled_t_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let df = na + nb - 2.0;
    let sp2 = (ss(a, ma) + ss(b, mb)) / df;
    let diff = ma - mb;
    let scale = ma.abs().max(mb.abs());
    // a variance at rounding level of the means counts as zero
    if sp2.sqrt() <= 1e-13 * scale || sp2 == 0.0 {
        return if diff.abs() <= 1e-13 * scale {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
    }
    let t = diff / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
    (t, student_t_two_tailed_p(t, df))
}

fn class_columns(ds: &LabeledDataset, class: usize, feature: usize) -> Vec<f64> {
    ds.matrix()
        .row_iter()
        .zip(ds.labels())
        .filter(|&(_, &l)| l == class)
        .map(|(r, _)| r[feature])
        .collect()
}

fn ttest_all(ds: &LabeledDataset, a: usize, b: usize) -> Result<Vec<(f64, f64)>, SelectionError> {
    let counts = ds.class_counts();
    for c in [a, b] {
        let count = *counts.get(c).ok_or(SelectionError::UnknownClass(c))?;
        if count < 2 {
            return Err(SelectionError::ClassTooSmall { class: c, count });
        }
    }
    Ok((0..ds.n_features())
        .map(|f| pooled_t_test(&class_columns(ds, a, f), &class_columns(ds, b, f)))
        .collect())
}

fn rank_by_p(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
    order
}

/// Ranks every feature by the two-tailed p-value of class `a` vs class `b`.
pub fn ttest_rank(ds: &LabeledDataset, class_a: usize, class_b: usize) -> Result<SelectionReport, SelectionError> {
    let res = ttest_all(ds, class_a, class_b)?;
    let scores: Vec<f64> = res.iter().map(|r| r.0).collect();
    let p: Vec<f64> = res.iter().map(|r| r.1).collect();
    let kept = rank_by_p(&p);
    let history = kept
        .iter()
        .enumerate()
        .map(|(step, &f)| SelectionStep {
            step,
            feature: f,
            score: scores[f],
            p_value: Some(p[f]),
            error: None,
        })
        .collect();
    Ok(SelectionReport {
        method: SelectionMethod::TTest,
        kept,
        scores,
        p_values: Some(p),
        history,
        empty_pool: false,
    })
}

/// Smallest p over all class pairs per feature, with the matching t.
pub fn min_pairwise_p(ds: &LabeledDataset) -> Result<(Vec<f64>, Vec<f64>), SelectionError> {
    let c = ds.n_classes();
    if c < 2 {
        return Err(SelectionError::TooFewClasses);
    }
    let mut best_p = vec![f64::INFINITY; ds.n_features()];
    let mut best_t = vec![0.0; ds.n_features()];
    for a in 0..c {
        for b in a + 1..c {
            for (f, (t, p)) in ttest_all(ds, a, b)?.into_iter().enumerate() {
                if p < best_p[f] {
                    best_p[f] = p;
                    best_t[f] = t;
                }
            }
        }
    }
    Ok((best_t, best_p))
}

/// Minimum error improvement for the forward wrapper to accept a feature.
pub const FORWARD_TOL: f64 = 1e-6;

/// t-test filter followed by greedy forward selection.
///
/// The candidate pool holds every feature with `p < p_cutoff` for at least
/// one class pair. Starting from the empty set, the candidate whose addition
/// gives the lowest `evaluator` error is added (smaller t-test p, then lower
/// index, on ties); the search stops once no candidate improves the error by
/// more than [`FORWARD_TOL`].
pub fn forward_select<F>(ds: &LabeledDataset, mut evaluator: F, p_cutoff: f64) -> Result<SelectionReport, SelectionError>
where
    F: FnMut(&[usize]) -> Result<f64, SelectionError>,
{
    let (t, p) = min_pairwise_p(ds)?;
    let pool: Vec<usize> = (0..ds.n_features()).filter(|&f| p[f] < p_cutoff).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut current = f64::INFINITY;

    loop {
        let mut best: Option<(usize, f64)> = None;
        for &f in pool.iter().filter(|f| !kept.contains(f)) {
            let mut trial = kept.clone();
            trial.push(f);
            let err = evaluator(&trial)?;
            // equal errors go to the smaller p, then the lower index
            if best.is_none_or(|(b, e)| err < e || (err == e && p[f] < p[b])) {
                best = Some((f, err));
            }
        }
        match best {
            Some((f, err)) if current - err > FORWARD_TOL => {
                kept.push(f);
                current = err;
                history.push(SelectionStep {
                    step: history.len(),
                    feature: f,
                    score: t[f],
                    p_value: Some(p[f]),
                    error: Some(err),
                });
            }
            _ => break,
        }
    }
    Ok(SelectionReport {
        method: SelectionMethod::Forward,
        kept,
        scores: t,
        p_values: Some(p),
        history,
        empty_pool: pool.is_empty(),
    })
}

/// Stratified k-fold misclassification rate of a one-vs-rest SVM restricted
/// to the given columns. Fold assignment is fixed once per evaluator.
pub fn cv_error_evaluator<'a>(
    ds: &'a LabeledDataset,
    params: SvmParams,
    k: usize,
    seed: u64,
) -> Result<impl FnMut(&[usize]) -> Result<f64, SelectionError> + 'a, SelectionError> {
    let folds = stratified_folds(ds.labels(), ds.n_classes(), k, seed)?;
    Ok(move |cols: &[usize]| {
        let sub = ds.matrix().select_columns(cols);
        let mut wrong = 0usize;
        for f in 0..k {
            let (train, test) = fold_split(&folds, f);
            let tl: Vec<usize> = train.iter().map(|&i| ds.labels()[i]).collect();
            let model = train_multiclass(&sub.select_rows(&train), &tl, ds.n_classes(), &params)
                .map_err(|e| SelectionError::Evaluator(e.to_string()))?;
            for &i in &test {
                let pred = model
                    .predict(sub.row(i))
                    .map_err(|e| SelectionError::Evaluator(e.to_string()))?;
                wrong += usize::from(pred != ds.labels()[i]);
            }
        }
        Ok(wrong as f64 / ds.n_samples() as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RfeCriterion {
    /// Remove the feature with the smallest `Σₖ wₖᵢ²` over the one-vs-rest machines.
    #[default]
    WeightSquared,
    /// Remove the feature whose removal minimizes the soft radius-margin
    /// bound `R² Σₖ (‖wₖ‖² + 2C Σᵢ ξₖᵢ)` after retraining (one training per
    /// candidate). On separable data this is the classic `R²‖w‖²`.
    RadiusMargin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfeConfig {
    pub c: f64,
    pub tol: f64,
    pub seed: u64,
    pub criterion: RfeCriterion,
}

impl Default for RfeConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            tol: 1e-3,
            seed: 0,
            criterion: RfeCriterion::WeightSquared,
        }
    }
}

impl RfeConfig {
    fn svm_params(&self) -> SvmParams {
        SvmParams {
            kernel: Kernel::Linear,
            c: self.c,
            tol: self.tol,
            seed: self.seed,
            ..SvmParams::default()
        }
    }
}

/// Per-surviving-feature `Σₖ wₖᵢ²` and the soft-margin objective
/// `Σₖ (‖wₖ‖² + 2C Σᵢ ξₖᵢ)` over the one-vs-rest machines.
fn linear_weights(ds: &LabeledDataset, cols: &[usize], params: &SvmParams) -> Result<(Vec<f64>, f64), SvmError> {
    let x = ds.matrix().select_columns(cols);
    let model = train_multiclass(&x, ds.labels(), ds.n_classes(), params)?;
    // two-class ensembles hold a machine and its negation; count it once
    let first = usize::from(ds.n_classes() == 2);
    let mut crit = vec![0.0; cols.len()];
    let mut objective = 0.0;
    for (k, m) in model.machines.iter().enumerate().skip(first) {
        let w = m.linear_weights().expect("linear kernel");
        for (c, wi) in crit.iter_mut().zip(&w) {
            *c += wi * wi;
        }
        let mut hinge = 0.0;
        for (r, &l) in x.row_iter().zip(ds.labels()) {
            let y = if l == k { 1.0 } else { -1.0 };
            hinge += (1.0 - y * m.decision_value(r)?).max(0.0);
        }
        objective += w.iter().map(|v| v * v).sum::<f64>() + 2.0 * params.c * hinge;
    }
    Ok((crit, objective))
}

fn radius_squared(x: &Matrix) -> f64 {
    let n = x.rows() as f64;
    let mut centroid = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for (c, v) in centroid.iter_mut().zip(r) {
            *c += v / n;
        }
    }
    x.row_iter()
        .map(|r| crate::linalg::squared_distance(r, &centroid))
        .fold(0.0, f64::max)
}

/// Index (into `crit`) of the feature to eliminate: smallest criterion,
/// the later position on exact ties.
fn weakest(crit: &[f64]) -> usize {
    let mut w = 0;
    for (i, &c) in crit.iter().enumerate() {
        if c <= crit[w] {
            w = i;
        }
    }
    w
}

/// Recursive feature elimination with a linear SVM down to `target` features.
pub fn svm_rfe(ds: &LabeledDataset, cfg: &RfeConfig, target: usize) -> Result<SelectionReport, SelectionError> {
    let nf = ds.n_features();
    if target < 1 || target > nf {
        return Err(SelectionError::BadTarget { target, features: nf });
    }
    if ds.n_classes() < 2 {
        return Err(SelectionError::TooFewClasses);
    }
    let params = cfg.svm_params();
    let mut alive: Vec<usize> = (0..nf).collect();
    let mut scores = vec![0.0; nf];
    let mut history = Vec::new();

    while alive.len() > target {
        let step = history.len();
        let wrap = |source| SelectionError::RfeTraining { step, source };
        let crit = match cfg.criterion {
            RfeCriterion::WeightSquared => linear_weights(ds, &alive, &params).map_err(wrap)?.0,
            RfeCriterion::RadiusMargin => {
                let mut bounds = Vec::with_capacity(alive.len());
                for skip in 0..alive.len() {
                    let rest: Vec<usize> = alive.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &f)| f).collect();
                    let (_, obj) = linear_weights(ds, &rest, &params).map_err(wrap)?;
                    bounds.push(radius_squared(&ds.matrix().select_columns(&rest)) * obj);
                }
                bounds
            }
        };
        for (&f, &c) in alive.iter().zip(&crit) {
            scores[f] = c;
        }
        let pos = weakest(&crit);
        let feature = alive.remove(pos);
        history.push(SelectionStep {
            step,
            feature,
            score: crit[pos],
            p_value: None,
            error: None,
        });
    }
    Ok(SelectionReport {
        method: SelectionMethod::Rfe,
        kept: alive,
        scores,
        p_values: None,
        history,
        empty_pool: false,
    })
}

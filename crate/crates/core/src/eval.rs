//! Error-rate metrics, cross-validation and the method comparison table.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{fold_split, stratified_folds, DatasetError, LabeledDataset};
use crate::linalg::{squared_distance, Matrix};
use crate::pipeline::{fit, PipelineConfig, PipelineError, SelectionConfig};
use crate::selection::{forward_select, cv_error_evaluator, svm_rfe, ColumnScaling, RfeConfig};
use crate::textfmt::{percent, sig9};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    Empty,
    #[error("rate denominator is zero")]
    ZeroDenominator,
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Counts of one binary (positive vs rest) reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Region size in pixels for pixel-normalized rates.
    pub region_size: Option<u64>,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperRates {
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub error_rate: f64,
    pub correct_rate: f64,
}

fn clamp_unit(name: &str, v: f64) -> f64 {
    if !(0.0..=1.0).contains(&v) {
        log::warn!("{name} {v} outside [0, 1]; clamped");
    }
    v.clamp(0.0, 1.0)
}

/// Combines FP and FN rates: `error = FP + FN`, `correct = 1 − error`.
pub fn combine_rates(fp_rate: f64, fn_rate: f64) -> PaperRates {
    let fp_rate = clamp_unit("FP rate", fp_rate);
    let fn_rate = clamp_unit("FN rate", fn_rate);
    let error_rate = clamp_unit("error rate", fp_rate + fn_rate);
    PaperRates {
        fp_rate,
        fn_rate,
        error_rate,
        correct_rate: 1.0 - error_rate,
    }
}

/// FP and FN counts divided by the region size when one is given (pixel
/// counts), otherwise by the sample total of the reduction.
pub fn paper_rates(counts: &ConfusionCounts) -> Result<PaperRates, EvalError> {
    let denom = counts.region_size.unwrap_or_else(|| counts.total());
    if denom == 0 {
        return Err(EvalError::ZeroDenominator);
    }
    let d = denom as f64;
    Ok(combine_rates(counts.fp as f64 / d, counts.fn_ as f64 / d))
}

/// `c × c` counts, rows are true classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self, EvalError> {
        if truth.len() != predicted.len() {
            return Err(EvalError::LengthMismatch {
                truth: truth.len(),
                predicted: predicted.len(),
            });
        }
        let mut counts = vec![vec![0; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Class `c` against the rest.
    pub fn binary(&self, c: usize) -> ConfusionCounts {
        let tp = self.counts[c][c];
        let fn_ = self.counts[c].iter().sum::<u64>() - tp;
        let fp = (0..self.n_classes()).map(|r| self.counts[r][c]).sum::<u64>() - tp;
        ConfusionCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fn_ - fp,
            region_size: None,
        }
    }

    pub fn accuracy(&self) -> Result<f64, EvalError> {
        match self.total() {
            0 => Err(EvalError::Empty),
            t => Ok(self.correct() as f64 / t as f64),
        }
    }

    /// Precision of class `c`; 0 when nothing was predicted as `c`.
    pub fn precision(&self, c: usize) -> f64 {
        let b = self.binary(c);
        ratio(b.tp, b.tp + b.fp)
    }

    /// Recall of class `c`; 0 when the class never occurs.
    pub fn recall(&self, c: usize) -> f64 {
        let b = self.binary(c);
        ratio(b.tp, b.tp + b.fn_)
    }

    /// One-vs-rest sample-normalized rates averaged over classes.
    pub fn macro_paper_rates(&self) -> Result<PaperRates, EvalError> {
        let c = self.n_classes() as f64;
        let (mut fp, mut fn_) = (0.0, 0.0);
        for k in 0..self.n_classes() {
            let r = paper_rates(&self.binary(k))?;
            fp += r.fp_rate / c;
            fn_ += r.fn_rate / c;
        }
        Ok(combine_rates(fp, fn_))
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64, EvalError> {
    let n_classes = truth.iter().chain(predicted).max().map_or(0, |m| m + 1);
    ConfusionMatrix::from_predictions(truth, predicted, n_classes)?.accuracy()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<usize>,
    pub fold_accuracy: Vec<f64>,
    /// Out-of-fold prediction for every sample.
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

impl CvReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.fold_accuracy.iter().sum::<f64>() / self.fold_accuracy.len() as f64
    }

    /// Sample standard deviation of the fold accuracies.
    pub fn std_accuracy(&self) -> f64 {
        let k = self.fold_accuracy.len() as f64;
        if k < 2.0 {
            return 0.0;
        }
        let m = self.mean_accuracy();
        (self.fold_accuracy.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (k - 1.0)).sqrt()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("fold  accuracy\n");
        for (f, a) in self.fold_accuracy.iter().enumerate() {
            let _ = writeln!(s, "{f:>4}  {}", sig9(*a));
        }
        let _ = writeln!(s, "mean  {}", sig9(self.mean_accuracy()));
        let _ = writeln!(s, "std   {}", sig9(self.std_accuracy()));
        s
    }
}

/// Stratified k-fold evaluation of any fit-and-predict procedure. Every
/// fold trains only on its own training split; folds run concurrently and
/// are merged by fold index.
pub fn cross_validate_with<F>(ds: &LabeledDataset, k: usize, seed: u64, fit_predict: F) -> Result<CvReport, EvalError>
where
    F: Fn(&LabeledDataset, &Matrix) -> Result<Vec<usize>, EvalError> + Sync,
{
    let folds = stratified_folds(ds.labels(), ds.n_classes(), k, seed)?;
    let per_fold = (0..k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = fold_split(&folds, f);
            let pred = fit_predict(&ds.select_rows(&train), &ds.matrix().select_rows(&test))?;
            Ok((test, pred))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut predictions = vec![0; ds.n_samples()];
    let mut fold_accuracy = Vec::with_capacity(k);
    for (test, pred) in per_fold {
        let truth: Vec<usize> = test.iter().map(|&i| ds.labels()[i]).collect();
        fold_accuracy.push(accuracy(&truth, &pred)?);
        for (&i, p) in test.iter().zip(pred) {
            predictions[i] = p;
        }
    }
    let confusion = ConfusionMatrix::from_predictions(ds.labels(), &predictions, ds.n_classes())?;
    Ok(CvReport {
        folds,
        fold_accuracy,
        predictions,
        confusion,
    })
}

/// Cross-validates the full pipeline, refitting every stage per fold.
pub fn cross_validate(ds: &LabeledDataset, cfg: &PipelineConfig, k: usize, seed: u64) -> Result<CvReport, EvalError> {
    cross_validate_with(ds, k, seed, |train, test| Ok(fit(train, cfg)?.model.predict(test)?))
}

/// k-nearest-neighbour vote with Euclidean distance. Vote ties go to the
/// tied class holding the nearest neighbour.
pub fn knn_predict(train: &Matrix, labels: &[usize], n_classes: usize, k: usize, x: &[f64]) -> usize {
    let mut d: Vec<(f64, usize)> = train.row_iter().map(|r| squared_distance(r, x)).zip(0..).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; n_classes];
    let mut nearest = vec![f64::INFINITY; n_classes];
    for &(dist, i) in d.iter().take(k) {
        let c = labels[i];
        votes[c] += 1;
        nearest[c] = nearest[c].min(dist);
    }
    let mut best = 0;
    for c in 1..n_classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && nearest[c] < nearest[best]) {
            best = c;
        }
    }
    best
}

pub const KNN_K: usize = 5;

/// Scaled-feature KNN, optionally restricted to the columns chosen by the
/// given selection stage (fitted on the training split).
fn knn_fit_predict(
    train: &LabeledDataset,
    test: &Matrix,
    selection: SelectionConfig,
    cfg: &PipelineConfig,
) -> Result<Vec<usize>, EvalError> {
    let scaling = ColumnScaling::fit(train.matrix());
    let scaled = train.with_matrix(scaling.apply(train.matrix()))?;
    let cols: Vec<usize> = match selection {
        SelectionConfig::None => (0..train.n_features()).collect(),
        SelectionConfig::Forward { p_cutoff } => {
            let k = cfg.inner_folds.min(scaled.n_samples());
            let eval = cv_error_evaluator(&scaled, crate::svm::SvmParams {
                kernel: cfg.kernel.resolve(scaled.n_features()),
                c: cfg.c,
                tol: cfg.tol,
                seed: cfg.seed,
                ..Default::default()
            }, k, cfg.seed)
            .map_err(PipelineError::from)?;
            forward_select(&scaled, eval, p_cutoff).map_err(PipelineError::from)?.kept
        }
        SelectionConfig::Rfe { target } => {
            let rfe = RfeConfig { c: cfg.c, tol: cfg.tol, seed: cfg.seed, ..Default::default() };
            svm_rfe(&scaled, &rfe, target).map_err(PipelineError::from)?.kept
        }
    };
    let cols = if cols.is_empty() { (0..train.n_features()).collect() } else { cols };
    let tr = scaled.matrix().select_columns(&cols);
    let te = scaling.apply(test).select_columns(&cols);
    Ok(te
        .row_iter()
        .map(|r| knn_predict(&tr, train.labels(), train.n_classes(), KNN_K, r))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub correct_rate: f64,
    pub with_fs: f64,
    pub without_fs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_HEADERS: [&str; 6] = ["Classification accuracy", "FP", "FN", "Correct rate", "With FS", "Without FS"];

/// Published figures for the clinical data set, shown for orientation only.
const REFERENCE_ROWS: [(&str, &str, &str, &str, &str, &str); 2] = [
    ("Proposed method", "1.00%", "2.50%", "97.82%", "98.87%", "98.77%"),
    ("KNN", "2.75%", "7.51%", "93.50%", "98.48%", "95.47%"),
];

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.method.len()).chain([COMPARISON_HEADERS[0].len()]).max().unwrap_or(0);
        let mut s = format!(
            "{:<w$}  {:>8}  {:>8}  {:>12}  {:>8}  {:>10}\n",
            COMPARISON_HEADERS[0], COMPARISON_HEADERS[1], COMPARISON_HEADERS[2], COMPARISON_HEADERS[3],
            COMPARISON_HEADERS[4], COMPARISON_HEADERS[5]
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>8}  {:>8}  {:>12}  {:>8}  {:>10}",
                r.method,
                percent(r.fp_rate),
                percent(r.fn_rate),
                percent(r.correct_rate),
                percent(r.with_fs),
                percent(r.without_fs)
            );
        }
        s.push_str("\nPublished values on clinical MR data (reference only, not reproduced by this run):\n");
        for (m, fp, fneg, cr, with, without) in REFERENCE_ROWS {
            let _ = writeln!(s, "{m:<w$}  {fp:>8}  {fneg:>8}  {cr:>12}  {with:>8}  {without:>10}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = COMPARISON_HEADERS.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.method,
                sig9(r.fp_rate),
                sig9(r.fn_rate),
                sig9(r.correct_rate),
                sig9(r.with_fs),
                sig9(r.without_fs)
            );
        }
        s
    }
}

/// Evaluates the configured pipeline and a KNN baseline, each with the
/// `fs` selection stage and without any. FP, FN and correct rate come from
/// the with-selection run.
pub fn compare_methods(
    ds: &LabeledDataset,
    cfg: &PipelineConfig,
    fs: SelectionConfig,
    k: usize,
    seed: u64,
) -> Result<ComparisonTable, EvalError> {
    let with_cfg = PipelineConfig { selection: fs, ..cfg.clone() };
    let without_cfg = PipelineConfig { selection: SelectionConfig::None, ..cfg.clone() };
    let proposed_fs = cross_validate(ds, &with_cfg, k, seed)?;
    let proposed = cross_validate(ds, &without_cfg, k, seed)?;
    let knn_fs = cross_validate_with(ds, k, seed, |tr, te| knn_fit_predict(tr, te, fs, cfg))?;
    let knn = cross_validate_with(ds, k, seed, |tr, te| knn_fit_predict(tr, te, SelectionConfig::None, cfg))?;
    let row = |method: &str, a: &CvReport, b: &CvReport| -> Result<ComparisonRow, EvalError> {
        let r = a.confusion.macro_paper_rates()?;
        Ok(ComparisonRow {
            method: method.into(),
            fp_rate: r.fp_rate,
            fn_rate: r.fn_rate,
            correct_rate: r.correct_rate,
            with_fs: a.confusion.accuracy()?,
            without_fs: b.confusion.accuracy()?,
        })
    };
    Ok(ComparisonTable {
        rows: vec![row("Proposed method", &proposed_fs, &proposed)?, row("KNN", &knn_fs, &knn)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{KernelChoice, Stages};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rate_examples() {
        let perfect = ConfusionCounts { tp: 5, tn: 5, ..Default::default() };
        let r = paper_rates(&perfect).unwrap();
        assert_eq!((r.fp_rate, r.fn_rate, r.correct_rate), (0.0, 0.0, 1.0));

        let r = combine_rates(0.010, 0.025);
        assert!((r.error_rate - 0.035).abs() < 1e-12);
        assert!((r.correct_rate - 0.965).abs() < 1e-12);

        // every positive pixel missed in a region of 400 pixels
        let missed = ConfusionCounts { fn_: 37, tn: 363, region_size: Some(400), ..Default::default() };
        assert_eq!(paper_rates(&missed).unwrap().fn_rate, 37.0 / 400.0);
        assert!(matches!(paper_rates(&ConfusionCounts::default()), Err(EvalError::ZeroDenominator)));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1, 2, 2], &[1; 6]).unwrap(), 1.0 / 3.0);
        // positives are class 1
        assert_eq!(accuracy(&[1, 0, 0], &[1, 1, 0]).unwrap(), 2.0 / 3.0);
        assert!(matches!(accuracy(&[], &[]), Err(EvalError::Empty)));
        let m = ConfusionMatrix::from_predictions(&[0, 0, 1], &[0, 0, 0], 3).unwrap();
        assert_eq!(m.precision(2), 0.0);
        assert_eq!(m.recall(2), 0.0);
        assert_eq!(m.precision(0), 2.0 / 3.0);
    }

    proptest::proptest! {
        #[test]
        fn sample_normalized_rates_never_clamp(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = ConfusionMatrix::from_predictions(&t, &p, 4).unwrap();
            for c in 0..4 {
                let b = m.binary(c);
                proptest::prop_assert_eq!(b.total(), m.total());
                let r = paper_rates(&b).unwrap();
                proptest::prop_assert!(r.fp_rate + r.fn_rate <= 1.0);
            }
            let wrong = m.total() - m.correct();
            proptest::prop_assert!((m.accuracy().unwrap() - (1.0 - wrong as f64 / m.total() as f64)).abs() <= 1e-15);
        }
    }

    #[test]
    fn knn_votes_and_tiebreak() {
        let train = Matrix::from_rows(&[[0.0], [0.1], [1.0], [1.1], [5.0]]).unwrap();
        let labels = [0, 0, 1, 1, 2];
        assert_eq!(knn_predict(&train, &labels, 3, 3, &[0.05]), 0);
        // two votes each for 0 and 1; class 1 holds the nearest neighbour
        assert_eq!(knn_predict(&train, &labels, 3, 4, &[0.9]), 1);
    }

    fn blobs(seed: u64, per: usize, shift: f64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..per {
                let mut r: Vec<f64> = (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                r[c] += shift;
                rows.push(r);
                labels.push(c);
            }
        }
        LabeledDataset::from_matrix(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn cross_validate_is_deterministic_and_consistent() {
        let ds = blobs(3, 12, 4.0);
        let cfg = PipelineConfig::default();
        let a = cross_validate(&ds, &cfg, 4, 9).unwrap();
        let b = cross_validate(&ds, &cfg, 4, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_accuracy() > 0.9);
        let recomputed: f64 = a.fold_accuracy.iter().sum::<f64>() / 4.0;
        assert!((recomputed - a.mean_accuracy()).abs() <= 1e-12);

        let loo = cross_validate(&ds, &PipelineConfig { stages: Stages::SvmOnly, ..cfg }, 36, 1).unwrap();
        assert_eq!(loo.fold_accuracy.len(), 36);
    }

    /// With shuffled labels the out-of-fold accuracy must fall to chance,
    /// which it would not if any stage saw the held-out fold.
    #[test]
    fn shuffled_labels_score_chance() {
        let ds = blobs(5, 20, 3.0);
        let cfg = PipelineConfig {
            kernel: KernelChoice::Linear,
            ..Default::default()
        };
        let mut accs = Vec::new();
        for seed in 0..20 {
            let mut labels = ds.labels().to_vec();
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled = ds.with_labels(labels).unwrap();
            accs.push(cross_validate(&shuffled, &cfg, 5, seed).unwrap().confusion.accuracy().unwrap());
        }
        let mean = accs.iter().sum::<f64>() / 20.0;
        // binomial σ of one run is √(p(1−p)/n); the mean over 20 runs is tighter
        let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / 60.0f64).sqrt() / 20f64.sqrt();
        assert!((mean - 1.0 / 3.0).abs() <= 3.0 * sigma, "{mean}");
    }

    #[test]
    fn comparison_table_shape() {
        let ds = blobs(7, 15, 4.0);
        let t = compare_methods(&ds, &PipelineConfig::default(), SelectionConfig::Forward { p_cutoff: 0.01 }, 3, 2).unwrap();
        assert_eq!(t.rows.len(), 2);
        let p = &t.rows[0];
        assert!(p.with_fs >= p.without_fs - 0.02);
        let text = t.to_text();
        let header = text.lines().next().unwrap();
        for h in COMPARISON_HEADERS {
            assert!(header.contains(h));
        }
        assert!(text.contains("98.87%") && text.contains("98.48%"));
        assert!(t.to_csv().starts_with("Classification accuracy,FP,FN,Correct rate,With FS,Without FS\n"));
        assert_eq!(t, compare_methods(&ds, &PipelineConfig::default(), SelectionConfig::Forward { p_cutoff: 0.01 }, 3, 2).unwrap());
    }
}

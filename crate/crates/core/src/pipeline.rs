//! The full classification chain: column scaling, optional feature
//! selection, optional PCA/LDA reduction, and a one-vs-rest SVM.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::linalg::Matrix;
use crate::reduce::{lda_fit, pca_fit, Components, LdaModel, PcaModel, ReduceError};
use crate::selection::{
    cv_error_evaluator, forward_select, svm_rfe, ColumnScaling, RfeConfig, SelectionError, SelectionReport,
};
use crate::svm::{argmax, train_multiclass, Kernel, SvmError, SvmMulticlassModel, SvmParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("feature selection: {0}")]
    Selection(#[from] SelectionError),
    #[error("reduction: {0}")]
    Reduce(#[from] ReduceError),
    #[error("svm: {0}")]
    Svm(#[from] SvmError),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stages {
    SvmOnly,
    PcaSvm,
    LdaSvm,
    #[default]
    PcaLdaSvm,
}

impl Stages {
    pub fn has_pca(self) -> bool {
        matches!(self, Stages::PcaSvm | Stages::PcaLdaSvm)
    }

    pub fn has_lda(self) -> bool {
        matches!(self, Stages::LdaSvm | Stages::PcaLdaSvm)
    }
}

impl FromStr for Stages {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "svm-only" | "svm" => Ok(Stages::SvmOnly),
            "pca+svm" => Ok(Stages::PcaSvm),
            "lda+svm" => Ok(Stages::LdaSvm),
            "pca+lda+svm" => Ok(Stages::PcaLdaSvm),
            _ => Err(format!(
                "unknown pipeline {s:?} (expected svm-only, pca+svm, lda+svm or pca+lda+svm)"
            )),
        }
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stages::SvmOnly => "svm-only",
            Stages::PcaSvm => "pca+svm",
            Stages::LdaSvm => "lda+svm",
            Stages::PcaLdaSvm => "pca+lda+svm",
        })
    }
}

/// Kernel as configured; an RBF without explicit gamma resolves to
/// `1 / input dimension` at fit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    Linear,
    Polynomial { degree: u32, coef: f64 },
    Rbf { gamma: Option<f64> },
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Rbf { gamma: None }
    }
}

impl KernelChoice {
    pub fn resolve(self, dim: usize) -> Kernel {
        match self {
            KernelChoice::Linear => Kernel::Linear,
            KernelChoice::Polynomial { degree, coef } => Kernel::Polynomial { degree, coef },
            KernelChoice::Rbf { gamma } => Kernel::Rbf {
                gamma: gamma.unwrap_or(1.0 / dim.max(1) as f64),
            },
        }
    }
}

/// Accepts `linear`, `rbf`, `rbf:<gamma>`, `poly:<degree>` and
/// `poly:<degree>:<coef>`.
impl FromStr for KernelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("bad kernel parameter {v:?} in {s:?}"));
        match parts.as_slice() {
            ["linear"] => Ok(KernelChoice::Linear),
            ["rbf"] => Ok(KernelChoice::Rbf { gamma: None }),
            ["rbf", g] => Ok(KernelChoice::Rbf { gamma: Some(num(g)?) }),
            ["poly", d] | ["poly", d, _] => {
                let degree = d.parse().map_err(|_| format!("bad polynomial degree {d:?}"))?;
                let coef = if let [_, _, c] = parts.as_slice() { num(c)? } else { 1.0 };
                Ok(KernelChoice::Polynomial { degree, coef })
            }
            _ => Err(format!("unknown kernel {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SelectionConfig {
    #[default]
    None,
    /// t-test filter at this p cutoff, then the forward wrapper.
    Forward { p_cutoff: f64 },
    /// SVM-RFE down to this many features.
    Rfe { target: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stages: Stages,
    pub kernel: KernelChoice,
    pub c: f64,
    pub tol: f64,
    pub selection: SelectionConfig,
    pub variance_fraction: f64,
    /// LDA output dimension; defaults to `classes − 1` capped by the input width.
    pub d: Option<usize>,
    /// Folds of the validation loop inside forward selection.
    pub inner_folds: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: Stages::default(),
            kernel: KernelChoice::default(),
            c: 10.0,
            tol: 1e-3,
            selection: SelectionConfig::None,
            variance_fraction: 0.9999,
            d: None,
            inner_folds: 5,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    fn svm_params(&self, dim: usize) -> SvmParams {
        SvmParams {
            kernel: self.kernel.resolve(dim),
            c: self.c,
            tol: self.tol,
            seed: self.seed,
            ..SvmParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub scaling: ColumnScaling,
    /// Columns kept by selection, in selection order. `None` when no selection stage ran.
    pub selected: Option<Vec<usize>>,
    pub pca: Option<PcaModel>,
    pub lda: Option<LdaModel>,
    pub svm: SvmMulticlassModel,
}

/// A fitted model plus what the fit learned along the way.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: PipelineModel,
    pub selection: Option<SelectionReport>,
}

fn select(scaled: &LabeledDataset, cfg: &PipelineConfig) -> Result<Option<SelectionReport>, PipelineError> {
    match cfg.selection {
        SelectionConfig::None => Ok(None),
        SelectionConfig::Forward { p_cutoff } => {
            let k = cfg.inner_folds.min(scaled.n_samples());
            let eval = cv_error_evaluator(scaled, cfg.svm_params(scaled.n_features()), k, cfg.seed)?;
            Ok(Some(forward_select(scaled, eval, p_cutoff)?))
        }
        SelectionConfig::Rfe { target } => {
            let rfe = RfeConfig {
                c: cfg.c,
                tol: cfg.tol,
                seed: cfg.seed,
                ..RfeConfig::default()
            };
            Ok(Some(svm_rfe(scaled, &rfe, target)?))
        }
    }
}

/// Fits every configured stage on `ds`. Class names default to the label ids.
pub fn fit(ds: &LabeledDataset, cfg: &PipelineConfig) -> Result<FitOutcome, PipelineError> {
    let scaling = ColumnScaling::fit(ds.matrix());
    let scaled = ds
        .with_matrix(scaling.apply(ds.matrix()))
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let report = select(&scaled, cfg)?;
    let selected = report.as_ref().map(|r| {
        if r.kept.is_empty() {
            log::warn!("feature selection kept nothing; falling back to all features");
            (0..ds.n_features()).collect()
        } else {
            r.kept.clone()
        }
    });
    let mut x = match &selected {
        Some(cols) => scaled.matrix().select_columns(cols),
        None => scaled.matrix().clone(),
    };

    let pca = if cfg.stages.has_pca() {
        let m = pca_fit(&x, Components::VarianceFraction(cfg.variance_fraction))?;
        x = m.transform(&x)?;
        Some(m)
    } else {
        None
    };
    let lda = if cfg.stages.has_lda() {
        let d = cfg.d.unwrap_or_else(|| (ds.n_classes() - 1).min(x.cols()));
        let m = lda_fit(&x, ds.labels(), ds.n_classes(), d)?;
        x = m.transform(&x)?;
        Some(m)
    } else {
        None
    };
    let svm = train_multiclass(&x, ds.labels(), ds.n_classes(), &cfg.svm_params(x.cols()))?;
    Ok(FitOutcome {
        model: PipelineModel {
            feature_names: ds.feature_names().to_vec(),
            class_names: (0..ds.n_classes()).map(|c| c.to_string()).collect(),
            scaling,
            selected,
            pca,
            lda,
            svm,
        },
        selection: report,
    })
}

impl PipelineModel {
    pub fn n_features(&self) -> usize {
        self.scaling.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.svm.n_classes()
    }

    /// Raw feature rows to the SVM input space.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix, PipelineError> {
        if x.cols() != self.n_features() {
            return Err(PipelineError::DimensionMismatch {
                expected: self.n_features(),
                got: x.cols(),
            });
        }
        let mut y = self.scaling.apply(x);
        if let Some(cols) = &self.selected {
            y = y.select_columns(cols);
        }
        if let Some(p) = &self.pca {
            y = p.transform(&y)?;
        }
        if let Some(l) = &self.lda {
            y = l.transform(&y)?;
        }
        Ok(y)
    }

    /// Per-row one-vs-rest decision values.
    pub fn decision_values(&self, x: &Matrix) -> Result<Vec<Vec<f64>>, PipelineError> {
        let y = self.transform(x)?;
        y.row_iter()
            .map(|r| self.svm.decision_values(r).map_err(PipelineError::from))
            .collect()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>, PipelineError> {
        Ok(self.decision_values(x)?.iter().map(|d| argmax(d)).collect())
    }

    pub fn stage_names(&self) -> Vec<&'static str> {
        let mut s = vec!["scaling"];
        if self.selected.is_some() {
            s.push("selection");
        }
        if self.pca.is_some() {
            s.push("pca");
        }
        if self.lda.is_some() {
            s.push("lda");
        }
        s.push("svm");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, per: usize, p: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..per {
                let mut r: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                r[c] += 5.0;
                rows.push(r);
                labels.push(c);
            }
        }
        LabeledDataset::from_matrix(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn parse_config_values() {
        assert_eq!("pca+lda+svm".parse(), Ok(Stages::PcaLdaSvm));
        assert!("lda+pca".parse::<Stages>().is_err());
        assert_eq!("rbf:0.5".parse(), Ok(KernelChoice::Rbf { gamma: Some(0.5) }));
        assert_eq!("poly:3".parse(), Ok(KernelChoice::Polynomial { degree: 3, coef: 1.0 }));
        assert_eq!("poly:2:0".parse(), Ok(KernelChoice::Polynomial { degree: 2, coef: 0.0 }));
        assert!("sigmoid".parse::<KernelChoice>().is_err());
        assert_eq!(KernelChoice::Rbf { gamma: None }.resolve(4), Kernel::Rbf { gamma: 0.25 });
    }

    #[test]
    fn every_stage_combination_separates_blobs() {
        let ds = blobs(1, 20, 5);
        for stages in [Stages::SvmOnly, Stages::PcaSvm, Stages::LdaSvm, Stages::PcaLdaSvm] {
            for selection in [SelectionConfig::None, SelectionConfig::Rfe { target: 3 }, SelectionConfig::Forward { p_cutoff: 0.01 }] {
                let cfg = PipelineConfig {
                    stages,
                    selection,
                    ..Default::default()
                };
                let fit = fit(&ds, &cfg).unwrap();
                let pred = fit.model.predict(ds.matrix()).unwrap();
                assert_eq!(pred, ds.labels(), "{stages} {selection:?}");
                assert_eq!(fit.model.stage_names().contains(&"lda"), stages.has_lda());
            }
        }
    }

    #[test]
    fn lda_output_is_c_minus_one() {
        let ds = blobs(2, 15, 15);
        let m = fit(&ds, &PipelineConfig::default()).unwrap().model;
        assert_eq!(m.transform(ds.matrix()).unwrap().cols(), 2);
        let err = m.transform(&Matrix::zeros(1, 14)).unwrap_err();
        assert_eq!(err.to_string(), "expected 15 features, got 14");
    }
}

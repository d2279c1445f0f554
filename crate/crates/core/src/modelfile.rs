//! Binary persistence of a fitted [`PipelineModel`].
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "TPM1" | u32 version | u64 payload length | payload | u32 CRC32(payload)
//! payload = block*, block = u8 stage id | u64 length | bytes
//! ```
//!
//! Stage ids appear in increasing order: 1 scaling, 2 selection, 3 PCA,
//! 4 LDA, 5 SVM. Scaling and SVM are mandatory.

use std::path::Path;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::pipeline::PipelineModel;
use crate::reduce::{LdaModel, PcaModel};
use crate::selection::ColumnScaling;
use crate::svm::{Kernel, SvmBinaryModel, SvmMulticlassModel};

pub const MAGIC: &[u8; 4] = b"TPM1";
pub const VERSION: u32 = 1;

const STAGE_SCALING: u8 = 1;
const STAGE_SELECTION: u8 = 2;
const STAGE_PCA: u8 = 3;
const STAGE_LDA: u8 = 4;
const STAGE_SVM: u8 = 5;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot access model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unknown stage id {0}")]
    UnknownStage(u8),
    #[error("stage {0} out of order or repeated")]
    StageOrder(u8),
    #[error("required stage {0} missing")]
    MissingStage(&'static str),
    #[error("malformed model: {0}")]
    Malformed(String),
}

impl ModelFileError {
    /// True for every error except failing to read or write the file.
    pub fn is_corrupt(&self) -> bool {
        !matches!(self, ModelFileError::Io(_))
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn reals(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &Matrix) {
        self.len(m.rows());
        self.len(m.cols());
        m.as_slice().iter().for_each(|&x| self.f64(x));
    }
    fn block(&mut self, id: u8, body: Writer) {
        self.u8(id);
        self.len(body.0.len());
        self.0.extend_from_slice(&body.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        if self.buf.len() < n {
            return Err(ModelFileError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelFileError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, ModelFileError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, ModelFileError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    /// A count whose elements occupy at least `elem` bytes each, so absurd
    /// lengths are rejected before allocating.
    fn len(&mut self, elem: usize) -> Result<usize, ModelFileError> {
        let n = self.u64()?;
        if n.saturating_mul(elem as u64) > self.buf.len() as u64 {
            return Err(ModelFileError::Truncated);
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String, ModelFileError> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelFileError::Malformed("invalid UTF-8 string".into()))
    }
    fn reals(&mut self) -> Result<Vec<f64>, ModelFileError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<Matrix, ModelFileError> {
        let rows = self.len(0)?;
        let cols = self.len(0)?;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n.saturating_mul(8) <= self.buf.len())
            .ok_or(ModelFileError::Truncated)?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<_, _>>()?;
        Ok(Matrix::from_vec(rows, cols, data))
    }
    fn finish(&self) -> Result<(), ModelFileError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(ModelFileError::Malformed(format!("{} trailing bytes in block", self.buf.len())))
        }
    }
}

fn write_kernel(w: &mut Writer, k: &Kernel) {
    match *k {
        Kernel::Linear => w.u8(0),
        Kernel::Polynomial { degree, coef } => {
            w.u8(1);
            w.u32(degree);
            w.f64(coef);
        }
        Kernel::Rbf { gamma } => {
            w.u8(2);
            w.f64(gamma);
        }
    }
}

fn read_kernel(r: &mut Reader) -> Result<Kernel, ModelFileError> {
    let k = match r.u8()? {
        0 => Kernel::Linear,
        1 => Kernel::Polynomial {
            degree: r.u32()?,
            coef: r.f64()?,
        },
        2 => Kernel::Rbf { gamma: r.f64()? },
        t => return Err(ModelFileError::Malformed(format!("unknown kernel tag {t}"))),
    };
    k.validate().map_err(|e| ModelFileError::Malformed(e.to_string()))?;
    Ok(k)
}

pub fn to_bytes(m: &PipelineModel) -> Vec<u8> {
    let mut payload = Writer::default();

    let mut b = Writer::default();
    b.len(m.feature_names.len());
    for n in &m.feature_names {
        b.str(n);
    }
    for &(lo, hi) in &m.scaling.ranges {
        b.f64(lo);
        b.f64(hi);
    }
    payload.block(STAGE_SCALING, b);

    if let Some(sel) = &m.selected {
        let mut b = Writer::default();
        b.len(sel.len());
        sel.iter().for_each(|&i| b.u64(i as u64));
        payload.block(STAGE_SELECTION, b);
    }
    if let Some(p) = &m.pca {
        let mut b = Writer::default();
        b.reals(&p.mean);
        b.matrix(&p.basis);
        b.reals(&p.eigenvalues);
        b.reals(&p.spectrum);
        payload.block(STAGE_PCA, b);
    }
    if let Some(l) = &m.lda {
        let mut b = Writer::default();
        b.reals(&l.mean);
        b.matrix(&l.basis);
        b.reals(&l.eigenvalues);
        b.matrix(&l.class_means);
        payload.block(STAGE_LDA, b);
    }

    let mut b = Writer::default();
    b.len(m.class_names.len());
    for n in &m.class_names {
        b.str(n);
    }
    b.len(m.svm.machines.len());
    for mc in &m.svm.machines {
        write_kernel(&mut b, &mc.kernel);
        b.f64(mc.c);
        b.f64(mc.bias);
        b.matrix(&mc.support_vectors);
        b.reals(&mc.sv_labels);
        b.reals(&mc.alphas);
    }
    payload.block(STAGE_SVM, b);

    let mut out = Writer::default();
    out.0.extend_from_slice(MAGIC);
    out.u32(VERSION);
    out.len(payload.0.len());
    out.0.extend_from_slice(&payload.0);
    out.u32(crc32fast::hash(&payload.0));
    out.0
}

fn malformed(msg: impl Into<String>) -> ModelFileError {
    ModelFileError::Malformed(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<PipelineModel, ModelFileError> {
    let mut r = Reader { buf: bytes };
    if r.take(4).map_err(|_| ModelFileError::BadMagic)? != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelFileError::UnsupportedVersion(version));
    }
    let n = r.len(1)?;
    let payload = r.take(n)?;
    let stored = r.u32()?;
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(ModelFileError::ChecksumMismatch { stored, computed });
    }
    r.finish().map_err(|_| malformed("trailing bytes after checksum"))?;

    let mut p = Reader { buf: payload };
    let mut last = 0u8;
    let mut scaling = None;
    let mut selected = None;
    let mut pca = None;
    let mut lda = None;
    let mut svm = None;
    while !p.buf.is_empty() {
        let id = p.u8()?;
        if !(STAGE_SCALING..=STAGE_SVM).contains(&id) {
            return Err(ModelFileError::UnknownStage(id));
        }
        if id <= last {
            return Err(ModelFileError::StageOrder(id));
        }
        last = id;
        let len = p.len(1)?;
        let mut b = Reader { buf: p.take(len)? };
        match id {
            STAGE_SCALING => {
                let nf = b.len(8)?;
                let names = (0..nf).map(|_| b.str()).collect::<Result<Vec<_>, _>>()?;
                let ranges = (0..nf).map(|_| Ok((b.f64()?, b.f64()?))).collect::<Result<Vec<_>, ModelFileError>>()?;
                scaling = Some((names, ColumnScaling { ranges }));
            }
            STAGE_SELECTION => {
                let k = b.len(8)?;
                selected = Some((0..k).map(|_| Ok(b.u64()? as usize)).collect::<Result<Vec<_>, ModelFileError>>()?);
            }
            STAGE_PCA => {
                pca = Some(PcaModel {
                    mean: b.reals()?,
                    basis: b.matrix()?,
                    eigenvalues: b.reals()?,
                    spectrum: b.reals()?,
                });
            }
            STAGE_LDA => {
                lda = Some(LdaModel {
                    mean: b.reals()?,
                    basis: b.matrix()?,
                    eigenvalues: b.reals()?,
                    class_means: b.matrix()?,
                });
            }
            _ => {
                let nc = b.len(1)?;
                let names = (0..nc).map(|_| b.str()).collect::<Result<Vec<_>, _>>()?;
                let nm = b.len(1)?;
                let mut machines = Vec::with_capacity(nm);
                for _ in 0..nm {
                    machines.push(SvmBinaryModel {
                        kernel: read_kernel(&mut b)?,
                        c: b.f64()?,
                        bias: b.f64()?,
                        support_vectors: b.matrix()?,
                        sv_labels: b.reals()?,
                        alphas: b.reals()?,
                    });
                }
                svm = Some((names, SvmMulticlassModel { machines }));
            }
        }
        b.finish()?;
    }
    let (feature_names, scaling) = scaling.ok_or(ModelFileError::MissingStage("scaling"))?;
    let (class_names, svm) = svm.ok_or(ModelFileError::MissingStage("svm"))?;
    let model = PipelineModel {
        feature_names,
        class_names,
        scaling,
        selected,
        pca,
        lda,
        svm,
    };
    check_dimensions(&model)?;
    Ok(model)
}

/// Every stage must accept the width the previous stage produces.
fn check_dimensions(m: &PipelineModel) -> Result<(), ModelFileError> {
    let nf = m.scaling.dim();
    let mut width = nf;
    if let Some(sel) = &m.selected {
        if sel.iter().any(|&i| i >= nf) {
            return Err(malformed("selected feature index out of range"));
        }
        width = sel.len();
    }
    if let Some(p) = &m.pca {
        if p.mean.len() != width || p.basis.rows() != width || p.eigenvalues.len() != p.basis.cols() {
            return Err(malformed("PCA stage dimensions inconsistent"));
        }
        width = p.basis.cols();
    }
    if let Some(l) = &m.lda {
        if l.mean.len() != width || l.basis.rows() != width || l.class_means.cols() != l.basis.cols() {
            return Err(malformed("LDA stage dimensions inconsistent"));
        }
        width = l.basis.cols();
    }
    let c = m.class_names.len();
    if m.svm.machines.len() != c || c < 2 {
        return Err(malformed("SVM machine count does not match class names"));
    }
    for mc in &m.svm.machines {
        let k = mc.support_vectors.rows();
        if mc.support_vectors.cols() != width || mc.sv_labels.len() != k || mc.alphas.len() != k {
            return Err(malformed("SVM machine dimensions inconsistent"));
        }
    }
    Ok(())
}

pub fn save(path: &Path, m: &PipelineModel) -> Result<(), ModelFileError> {
    std::fs::write(path, to_bytes(m))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PipelineModel, ModelFileError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledDataset;
    use crate::pipeline::{fit, KernelChoice, PipelineConfig, SelectionConfig, Stages};

    fn model(stages: Stages, selection: SelectionConfig) -> PipelineModel {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let c = (i % 3) as f64;
                vec![c + 0.1 * (i as f64).sin(), (i as f64 * 0.7).cos(), 2.0 * c + 0.05 * i as f64]
            })
            .collect();
        let labels = (0..30).map(|i| i % 3).collect();
        let ds = LabeledDataset::from_matrix(Matrix::from_rows(&rows).unwrap(), labels).unwrap();
        let cfg = PipelineConfig {
            stages,
            selection,
            kernel: KernelChoice::Polynomial { degree: 2, coef: 1.0 },
            ..Default::default()
        };
        fit(&ds, &cfg).unwrap().model
    }

    #[test]
    fn round_trip_all_stage_sets() {
        for (stages, sel) in [
            (Stages::SvmOnly, SelectionConfig::None),
            (Stages::PcaLdaSvm, SelectionConfig::Rfe { target: 2 }),
            (Stages::PcaSvm, SelectionConfig::None),
            (Stages::LdaSvm, SelectionConfig::None),
        ] {
            let m = model(stages, sel);
            let bytes = to_bytes(&m);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&model(Stages::PcaLdaSvm, SelectionConfig::None));
        for cut in [0, 3, 10, 16, bytes.len() / 2, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.is_corrupt(), "{cut}: {err}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(from_bytes(&flipped), Err(ModelFileError::ChecksumMismatch { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(from_bytes(&magic), Err(ModelFileError::BadMagic)));
    }

    /// Re-frames a hand-built payload with a valid header and checksum.
    fn framed(payload: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(payload);
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        out
    }

    #[test]
    fn unknown_and_misordered_stages_rejected() {
        let mut w = Writer::default();
        w.block(9, Writer::default());
        assert!(matches!(from_bytes(&framed(&w.0)), Err(ModelFileError::UnknownStage(9))));
        let mut w = Writer::default();
        w.block(STAGE_PCA, Writer::default());
        w.block(STAGE_SELECTION, Writer::default());
        assert!(from_bytes(&framed(&w.0)).unwrap_err().is_corrupt());
        assert!(matches!(from_bytes(&framed(&[])), Err(ModelFileError::MissingStage("scaling"))));
    }
}

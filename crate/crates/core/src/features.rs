//! Intensity, shape and co-occurrence texture features over a masked region.

use std::f64::consts::PI;

use thiserror::Error;

use crate::imaging::{GrayImage, RegionMask};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("region mask is empty")]
    EmptyMask,
    #[error("mask is {mask_w}x{mask_h} but image is {img_w}x{img_h}")]
    ShapeMismatch {
        mask_w: usize,
        mask_h: usize,
        img_w: usize,
        img_h: usize,
    },
    #[error("GLCM level count must be in [2, 256], got {0}")]
    InvalidLevels(usize),
    #[error("GLCM offset must be nonzero")]
    ZeroOffset,
    #[error("empty GLCM: no pixel pair with both endpoints in the mask")]
    EmptyGlcm,
    #[error("GLCM distance must be at least 1")]
    ZeroDistance,
}

/// Named feature values, aligned 1:1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    fn from_pairs<const N: usize>(names: [&str; N], values: [f64; N]) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            values: values.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    fn extend_prefixed(&mut self, prefix: &str, other: FeatureVector) {
        self.names
            .extend(other.names.into_iter().map(|n| format!("{prefix}{n}")));
        self.values.extend(other.values);
    }
}

pub const INTENSITY_NAMES: [&str; 6] = ["mean", "variance", "std_dev", "median", "skewness", "kurtosis"];
pub const SHAPE_NAMES: [&str; 5] = ["area", "perimeter", "circularity", "irregularity", "shape_index"];
pub const TEXTURE_NAMES: [&str; 7] = [
    "contrast",
    "correlation",
    "entropy",
    "energy",
    "homogeneity",
    "cluster_shade",
    "sum_sq_variance",
];

fn check_mask(img: &GrayImage, mask: &RegionMask) -> Result<(), FeatureError> {
    if !mask.same_shape(img) {
        return Err(FeatureError::ShapeMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            img_w: img.width(),
            img_h: img.height(),
        });
    }
    if mask.count() == 0 {
        return Err(FeatureError::EmptyMask);
    }
    Ok(())
}

/// Mean, population variance, standard deviation, lower median, skewness and
/// non-excess kurtosis of the masked pixels. Zero-variance regions report
/// skewness and kurtosis as 0.
pub fn intensity_features(img: &GrayImage, mask: &RegionMask) -> Result<FeatureVector, FeatureError> {
    check_mask(img, mask)?;
    let mut vals: Vec<f64> = img
        .pixels()
        .iter()
        .zip(mask.bits())
        .filter_map(|(&p, &m)| m.then_some(p))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in &vals {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };
    vals.sort_by(f64::total_cmp);
    let median = vals[(vals.len() - 1) / 2];
    Ok(FeatureVector::from_pairs(
        INTENSITY_NAMES,
        [mean, m2, m2.sqrt(), median, skew, kurt],
    ))
}

/// Normalized symmetric gray-level co-occurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    levels: usize,
    probs: Vec<f64>,
    offset: (isize, isize),
}

impl GlcmMatrix {
    /// Wraps a precomputed probability table (row-major, `levels²` entries).
    pub fn from_probs(levels: usize, probs: Vec<f64>, offset: (isize, isize)) -> Result<Self, FeatureError> {
        if !(2..=256).contains(&levels) || probs.len() != levels * levels {
            return Err(FeatureError::InvalidLevels(levels));
        }
        Ok(Self { levels, probs, offset })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn offset(&self) -> (isize, isize) {
        self.offset
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.levels + j]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Uniform quantization of a unit-interval intensity into `levels` bins.
#[inline]
pub fn quantize(p: f64, levels: usize) -> usize {
    ((p.clamp(0.0, 1.0) * levels as f64) as usize).min(levels - 1)
}

/// Builds the co-occurrence matrix for `offset = (dy, dx)` over pixel pairs
/// whose both endpoints lie inside the mask. Each pair is counted in both
/// directions.
pub fn glcm(
    img: &GrayImage,
    mask: &RegionMask,
    levels: usize,
    offset: (isize, isize),
) -> Result<GlcmMatrix, FeatureError> {
    if !(2..=256).contains(&levels) {
        return Err(FeatureError::InvalidLevels(levels));
    }
    if offset == (0, 0) {
        return Err(FeatureError::ZeroOffset);
    }
    check_mask(img, mask)?;
    let (dy, dx) = offset;
    let mut counts = vec![0u64; levels * levels];
    let mut total = 0u64;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !mask.contains(x, y) {
                continue;
            }
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if !mask.contains_signed(nx, ny) {
                continue;
            }
            let a = quantize(img.get(x, y), levels);
            let b = quantize(img.get(nx as usize, ny as usize), levels);
            counts[a * levels + b] += 1;
            counts[b * levels + a] += 1;
            total += 2;
        }
    }
    if total == 0 {
        return Err(FeatureError::EmptyGlcm);
    }
    let inv = 1.0 / total as f64;
    Ok(GlcmMatrix {
        levels,
        probs: counts.iter().map(|&c| c as f64 * inv).collect(),
        offset,
    })
}

/// The seven Haralick-style statistics of a co-occurrence matrix.
pub fn texture_features(g: &GlcmMatrix) -> FeatureVector {
    let l = g.levels;
    let (mut mu_x, mut mu_y) = (0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = g.p(i, j);
            mu_x += i as f64 * p;
            mu_y += j as f64 * p;
        }
    }
    let (mut var_x, mut var_y) = (0.0, 0.0);
    let mut contrast = 0.0;
    let mut cov = 0.0;
    let mut entropy = 0.0;
    let mut energy = 0.0;
    let mut homogeneity = 0.0;
    let mut shade = 0.0;
    for i in 0..l {
        let di = i as f64 - mu_x;
        for j in 0..l {
            let p = g.p(i, j);
            if p == 0.0 {
                continue;
            }
            let dj = j as f64 - mu_y;
            let diff = i as f64 - j as f64;
            var_x += di * di * p;
            var_y += dj * dj * p;
            contrast += diff * diff * p;
            cov += di * dj * p;
            entropy -= p * p.log2();
            energy += p * p;
            homogeneity += p / (1.0 + diff.abs());
            shade += (di + dj).powi(3) * p;
        }
    }
    let sd = (var_x * var_y).sqrt();
    let correlation = if sd > 0.0 { cov / sd } else { 0.0 };
    FeatureVector::from_pairs(
        TEXTURE_NAMES,
        [contrast, correlation, entropy, energy, homogeneity, shade, var_x],
    )
}

/// Area, exposed-edge perimeter, circularity `4πA/P²`, irregularity `P²/(4πA)`
/// and shape index `P/(4√A)` of the mask.
pub fn shape_features(mask: &RegionMask) -> Result<FeatureVector, FeatureError> {
    let area = mask.count();
    if area == 0 {
        return Err(FeatureError::EmptyMask);
    }
    let mut perimeter = 0usize;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.contains(x, y) {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            perimeter += [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .filter(|&&(dx, dy)| !mask.contains_signed(xi + dx, yi + dy))
                .count();
        }
    }
    let a = area as f64;
    let p = perimeter as f64;
    Ok(FeatureVector::from_pairs(
        SHAPE_NAMES,
        [
            a,
            p,
            4.0 * PI * a / (p * p),
            p * p / (4.0 * PI * a),
            p / (4.0 * a.sqrt()),
        ],
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    /// One block of texture features per level count.
    pub levels: Vec<usize>,
    /// Pixel distance for the four GLCM directions.
    pub distance: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            levels: vec![8],
            distance: 1,
        }
    }
}

impl ExtractionConfig {
    /// The 0°, 45°, 90° and 135° offsets as `(dy, dx)`.
    pub fn offsets(&self) -> [(isize, isize); 4] {
        let d = self.distance as isize;
        [(0, d), (-d, d), (-d, 0), (-d, -d)]
    }

    pub fn feature_count(&self) -> usize {
        INTENSITY_NAMES.len() + SHAPE_NAMES.len() + TEXTURE_NAMES.len() * self.levels.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = INTENSITY_NAMES.iter().map(|n| format!("intensity_{n}")).collect();
        names.extend(SHAPE_NAMES.iter().map(|n| format!("shape_{n}")));
        for &l in &self.levels {
            let prefix = self.texture_prefix(l);
            names.extend(TEXTURE_NAMES.iter().map(|n| format!("{prefix}{n}")));
        }
        names
    }

    fn texture_prefix(&self, levels: usize) -> String {
        if self.distance == 1 {
            format!("glcm{levels}_")
        } else {
            format!("glcm{levels}d{}_", self.distance)
        }
    }
}

/// Texture features averaged over the four directions. Directions with no
/// in-mask pair are skipped; if none has a pair the GLCM is empty.
pub fn directional_texture(
    img: &GrayImage,
    mask: &RegionMask,
    levels: usize,
    offsets: &[(isize, isize)],
) -> Result<FeatureVector, FeatureError> {
    let mut sum = [0.0; TEXTURE_NAMES.len()];
    let mut used = 0usize;
    for &off in offsets {
        match glcm(img, mask, levels, off) {
            Ok(g) => {
                for (s, v) in sum.iter_mut().zip(texture_features(&g).values) {
                    *s += v;
                }
                used += 1;
            }
            Err(FeatureError::EmptyGlcm) => continue,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(FeatureError::EmptyGlcm);
    }
    Ok(FeatureVector::from_pairs(
        TEXTURE_NAMES,
        sum.map(|s| s / used as f64),
    ))
}

/// Intensity (6) + shape (5) + direction-averaged texture (7 per level count).
pub fn extract_all(
    img: &GrayImage,
    mask: &RegionMask,
    cfg: &ExtractionConfig,
) -> Result<FeatureVector, FeatureError> {
    if cfg.distance == 0 {
        return Err(FeatureError::ZeroDistance);
    }
    let mut out = FeatureVector::default();
    out.extend_prefixed("intensity_", intensity_features(img, mask)?);
    out.extend_prefixed("shape_", shape_features(mask)?);
    let offsets = cfg.offsets();
    for &l in &cfg.levels {
        let prefix = cfg.texture_prefix(l);
        out.extend_prefixed(&prefix, directional_texture(img, mask, l, &offsets)?);
    }
    debug_assert!(out.values.iter().all(|v| v.is_finite()));
    Ok(out)
}

//! Grayscale rasters, PGM input, and the blur → edge → threshold preprocessing
//! chain used to derive a region of interest.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported magic number {found:?} at byte 0 (expected P2 or P5)")]
    UnsupportedMagic { found: String },
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("invalid maxval {value} at byte {offset}")]
    InvalidMaxval { offset: usize, value: u64 },
    #[error("truncated payload at byte {offset}: expected {expected} samples, got {got}")]
    Truncated {
        offset: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample {value} exceeds maxval {maxval} at byte {offset}")]
    SampleOutOfRange {
        offset: usize,
        value: u32,
        maxval: u32,
    },
    #[error("pixel buffer of length {len} does not match {width}x{height}")]
    SizeMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("gaussian sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("image {width}x{height} is smaller than the 3x3 operator")]
    TooSmall { width: usize, height: usize },
    #[error("image is empty")]
    Empty,
}

/// Row-major grayscale raster of real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::SizeMismatch {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            })
    }
}

/// Binary region of interest aligned with a [`GrayImage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImageError> {
        if bits.len() != width * height {
            return Err(ImageError::SizeMismatch {
                width,
                height,
                len: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    /// Interprets a grayscale image as a mask: any pixel above 0.5 is inside.
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            bits: img.pixels.iter().map(|&p| p > 0.5).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Bounds-checked lookup with signed coordinates; outside the raster is `false`.
    #[inline]
    pub fn contains_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.contains(x as usize, y as usize)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, img: &GrayImage) -> bool {
        self.width == img.width && self.height == img.height
    }
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

/// Reads a P2 or P5 graymap, scaling samples by `1/maxval` into `[0, 1]`.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pgm(&bytes)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Reads an unsigned decimal token, returning it with its starting offset.
    fn number(&mut self, what: &str) -> Result<(u64, usize), ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or_else(|| ImageError::MalformedHeader {
                    offset: start,
                    reason: format!("{what} overflows"),
                })?;
            self.pos += 1;
        }
        if self.pos == start {
            let reason = match self.bytes.get(start) {
                None => format!("unexpected end of file while reading {what}"),
                Some(b) => format!("expected {what}, found byte 0x{b:02x}"),
            };
            return Err(ImageError::MalformedHeader {
                offset: start,
                reason,
            });
        }
        Ok((value, start))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let magic = bytes.get(..2).unwrap_or(bytes);
    let ascii = match magic {
        b"P2" => true,
        b"P5" => false,
        other => {
            return Err(ImageError::UnsupportedMagic {
                found: String::from_utf8_lossy(other).into_owned(),
            })
        }
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(ImageError::MalformedHeader {
            offset: 2,
            reason: "missing whitespace after magic number".into(),
        });
    }
    let (width, woff) = cur.number("width")?;
    let (height, hoff) = cur.number("height")?;
    let (maxval, moff) = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader {
            offset: if width == 0 { woff } else { hoff },
            reason: "zero image dimension".into(),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::InvalidMaxval {
            offset: moff,
            value: maxval,
        });
    }
    let (width, height) = (width as usize, height as usize);
    let count = width
        .checked_mul(height)
        .ok_or_else(|| ImageError::MalformedHeader {
            offset: woff,
            reason: "image dimensions overflow".into(),
        })?;
    let maxval = maxval as u32;
    let scale = 1.0 / f64::from(maxval);
    let mut pixels = Vec::with_capacity(count.min(1 << 24));

    if ascii {
        for got in 0..count {
            let (v, off) = cur.number("sample").map_err(|e| match e {
                ImageError::MalformedHeader { offset, .. } if offset >= bytes.len() => {
                    ImageError::Truncated {
                        offset,
                        expected: count,
                        got,
                    }
                }
                other => other,
            })?;
            if v > u64::from(maxval) {
                return Err(ImageError::SampleOutOfRange {
                    offset: off,
                    value: v.min(u64::from(u32::MAX)) as u32,
                    maxval,
                });
            }
            pixels.push(v as f64 * scale);
        }
    } else {
        // exactly one whitespace byte separates maxval from the raster
        let Some(sep) = bytes.get(cur.pos) else {
            return Err(ImageError::Truncated {
                offset: cur.pos,
                expected: count,
                got: 0,
            });
        };
        if !sep.is_ascii_whitespace() {
            return Err(ImageError::MalformedHeader {
                offset: cur.pos,
                reason: "missing whitespace after maxval".into(),
            });
        }
        let start = cur.pos + 1;
        let bps = if maxval < 256 { 1 } else { 2 };
        let raster = &bytes[start..];
        let available = raster.len() / bps;
        if available < count {
            return Err(ImageError::Truncated {
                offset: start + available * bps,
                expected: count,
                got: available,
            });
        }
        for i in 0..count {
            let v = if bps == 1 {
                u32::from(raster[i])
            } else {
                u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
            };
            if v > maxval {
                return Err(ImageError::SampleOutOfRange {
                    offset: start + i * bps,
                    value: v,
                    maxval,
                });
            }
            pixels.push(f64::from(v) * scale);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Encodes an image as 8-bit binary PGM, quantizing `[0,1]` to `0..=255`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a mask as a 0/255 PGM.
pub fn write_mask_pgm(mask: &RegionMask, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let img = GrayImage {
        width: mask.width,
        height: mask.height,
        pixels: mask
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect(),
    };
    write_pgm(&img, path)
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Min-max rescale into `[0, 1]`. A constant image maps to all zeros.
pub fn minmax_normalize(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    let pixels = if range > 0.0 {
        img.pixels.iter().map(|&p| (p - lo) / range).collect()
    } else {
        vec![0.0; img.pixels.len()]
    };
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian blur, radius `ceil(3σ)`, clamp-to-edge borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage, ImageError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(ImageError::InvalidSigma(sigma));
    }
    if img.pixels.is_empty() {
        return Err(ImageError::Empty);
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let (lo, hi) = img.min_max();

    let mut tmp = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let xx = (x + k as isize - r).clamp(0, w - 1);
                acc += kw * img.pixels[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let yy = (y + k as isize - r).clamp(0, h - 1);
                acc += kw * tmp[(yy * w + x) as usize];
            }
            // rounding can overshoot a convex combination by an ulp
            out[(y * w + x) as usize] = acc.clamp(lo, hi);
        }
    }
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    })
}

/// Sobel gradient magnitude on interior pixels (border 0), min-max normalized.
pub fn sobel_edges(img: &GrayImage) -> Result<GrayImage, ImageError> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(ImageError::TooSmall {
            width: w,
            height: h,
        });
    }
    let mut mag = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| {
                img.get((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            mag[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(minmax_normalize(&GrayImage {
        width: w,
        height: h,
        pixels: mag,
    }))
}

pub const HISTOGRAM_BINS: usize = 256;

/// Histogram bin of a unit-interval intensity.
#[inline]
pub fn intensity_bin(p: f64) -> usize {
    ((p.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

/// Otsu's threshold bin over a 256-bin histogram.
///
/// Pixels whose bin is strictly greater than the returned value form the
/// foreground. When only one bin is occupied there is no split, and the
/// occupied bin itself is returned (empty foreground).
pub fn otsu_threshold(img: &GrayImage) -> usize {
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &p in &img.pixels {
        hist[intensity_bin(p)] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut best: Option<(usize, f64)> = None;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for (t, &c) in hist.iter().enumerate().take(HISTOGRAM_BINS - 1) {
        w0 += c;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t, between));
        }
    }
    match best {
        Some((t, _)) => t,
        None => hist.iter().rposition(|&c| c > 0).unwrap_or(0),
    }
}

/// Otsu segmentation: foreground is every pixel strictly above the threshold.
/// Never returns an empty mask; the brightest pixel is used as a fallback.
pub fn threshold_segment(img: &GrayImage) -> RegionMask {
    let t = otsu_threshold(img);
    let mut bits: Vec<bool> = img.pixels.iter().map(|&p| intensity_bin(p) > t).collect();
    if !bits.iter().any(|&b| b) && !bits.is_empty() {
        let mut brightest = 0;
        for (i, &p) in img.pixels.iter().enumerate() {
            if p > img.pixels[brightest] {
                brightest = i;
            }
        }
        bits[brightest] = true;
    }
    RegionMask {
        width: img.width,
        height: img.height,
        bits,
    }
}

/// normalize → blur → Otsu. Used when no mask is supplied for an image.
pub fn segment_region(img: &GrayImage, sigma: f64) -> Result<RegionMask, ImageError> {
    let blurred = gaussian_blur(&minmax_normalize(img), sigma)?;
    Ok(threshold_segment(&blurred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, p: &[f64]) -> GrayImage {
        GrayImage::new(w, h, p.to_vec()).unwrap()
    }

    #[test]
    fn pgm_binary_8bit() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 255, 0]);
        let g = parse_pgm(&bytes).unwrap();
        assert_eq!(g.pixels(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!((g.width(), g.height()), (2, 2));
    }

    #[test]
    fn pgm_maxval_100() {
        let mut bytes = b"P5 3 1 100\n".to_vec();
        bytes.extend([0u8, 50, 100]);
        assert_eq!(parse_pgm(&bytes).unwrap().pixels(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn pgm_ascii_with_comments() {
        let g = parse_pgm(b"P2\n# a comment\n3 1\n# another\n4\n0 2\n4\n").unwrap();
        assert_eq!(g.pixels(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn pgm_sixteen_bit_big_endian() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        assert_eq!(parse_pgm(&bytes).unwrap().pixels(), &[1.0, 0.0]);
    }

    #[test]
    fn pgm_maxval_zero_rejected() {
        let err = parse_pgm(b"P5 1 1 0\n\0").unwrap_err();
        assert!(matches!(err, ImageError::InvalidMaxval { offset: 7, value: 0 }));
        assert!(err.to_string().contains("invalid maxval"));
    }

    #[test]
    fn pgm_truncated_and_magic() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend([1u8, 2, 3]);
        assert!(matches!(
            parse_pgm(&bytes),
            Err(ImageError::Truncated { offset: 14, expected: 4, got: 3 })
        ));
        assert!(matches!(
            parse_pgm(b"P6 1 1 255\n\0\0\0"),
            Err(ImageError::UnsupportedMagic { .. })
        ));
        assert!(matches!(
            parse_pgm(b"P2 2 x 255\n"),
            Err(ImageError::MalformedHeader { offset: 5, .. })
        ));
        assert!(matches!(
            parse_pgm(b"P2 2 1 255\n3"),
            Err(ImageError::Truncated { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn pgm_encode_roundtrip() {
        let g = img(3, 2, &[0.0, 1.0, 0.2, 0.4, 0.6, 0.8]);
        let back = parse_pgm(&encode_pgm(&g)).unwrap();
        for (a, b) in g.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(minmax_normalize(&img(3, 1, &[10.0, 20.0, 30.0])).pixels(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&img(3, 1, &[7.0, 7.0, 7.0])).pixels(), &[0.0, 0.0, 0.0]);
        assert_eq!(minmax_normalize(&img(2, 1, &[0.0, 1.0])).pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn blur_constant_and_bad_sigma() {
        let g = img(4, 3, &[0.3; 12]);
        let b = gaussian_blur(&g, 1.5).unwrap();
        assert!(b.pixels().iter().all(|&p| p == 0.3));
        assert!(matches!(gaussian_blur(&g, 0.0), Err(ImageError::InvalidSigma(_))));
        assert!(gaussian_blur(&g, -1.0).is_err());
    }

    /// Direct 2-D convolution with the outer-product kernel, no separability.
    fn dense_blur_oracle(g: &GrayImage, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let mut weights = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                weights.push((dx, dy, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
            }
        }
        let total: f64 = weights.iter().map(|w| w.2).sum();
        let (w, h) = (g.width() as isize, g.height() as isize);
        let mut out = vec![0.0; g.pixels().len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for &(dx, dy, k) in &weights {
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    acc += k * g.get(xx, yy);
                }
                out[(y * w + x) as usize] = acc / total;
            }
        }
        out
    }

    #[test]
    fn blur_single_bright_pixel() {
        let g = GrayImage::from_fn(15, 15, |x, y| if x == 7 && y == 7 { 1.0 } else { 0.0 });
        let b = gaussian_blur(&g, 1.0).unwrap();
        assert!(b.get(7, 7) < 1.0);
        // kernel support (radius 3) stays inside: mass is conserved
        let sum: f64 = b.pixels().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let oracle = dense_blur_oracle(&g, 1.0);
        for (a, o) in b.pixels().iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn sobel_examples() {
        let c = img(4, 4, &[0.4; 16]);
        assert!(sobel_edges(&c).unwrap().pixels().iter().all(|&p| p == 0.0));
        assert!(matches!(sobel_edges(&img(2, 2, &[0.0; 4])), Err(ImageError::TooSmall { .. })));

        // hand-applied kernels: the columns either side of the step see |Gx| = 4,
        // everything else 0
        let step = GrayImage::from_fn(6, 5, |x, _| if x >= 3 { 1.0 } else { 0.0 });
        let e = sobel_edges(&step).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let expect = if (1..4).contains(&y) && (x == 2 || x == 3) { 1.0 } else { 0.0 };
                assert_eq!(e.get(x, y), expect, "({x},{y})");
            }
        }
    }

    /// Between-class variance of a split computed straight from the pixels.
    fn brute_force_otsu(g: &GrayImage) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..255 {
            let (lo, hi): (Vec<f64>, Vec<f64>) = g
                .pixels()
                .iter()
                .map(|&p| intensity_bin(p) as f64)
                .partition(|&b| b <= t as f64);
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            let v = lo.len() as f64 * hi.len() as f64 * (m0 - m1).powi(2);
            if best.is_none_or(|(_, b)| v > b * (1.0 + 1e-12)) {
                best = Some((t, v));
            }
        }
        best.map(|b| b.0)
    }

    #[test]
    fn otsu_examples() {
        let bi = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 0.1 } else { 0.9 });
        let m = threshold_segment(&bi);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.contains(x, y), x >= 4);
            }
        }
        assert_eq!(Some(otsu_threshold(&bi)), brute_force_otsu(&bi));

        let c = img(3, 3, &[0.5; 9]);
        assert_eq!(threshold_segment(&c).count(), 1);

        let two = img(2, 1, &[0.0, 1.0]);
        assert_eq!(threshold_segment(&two).bits(), &[false, true]);
    }

    proptest! {
        #[test]
        fn normalize_idempotent(p in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let g = img(p.len(), 1, &p);
            let once = minmax_normalize(&g);
            prop_assert!(once.pixels().iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert_eq!(minmax_normalize(&once), once);
        }

        #[test]
        fn blur_stays_in_range(p in proptest::collection::vec(0.0f64..1.0, 20), sigma in 0.2f64..3.0) {
            let g = img(5, 4, &p);
            let (lo, hi) = g.min_max();
            let b = gaussian_blur(&g, sigma).unwrap();
            prop_assert!(b.pixels().iter().all(|&x| x >= lo && x <= hi));
        }

        #[test]
        fn otsu_matches_sweep_and_mask_nonempty(
            p in proptest::collection::vec(0.0f64..=1.0, 1..64),
        ) {
            let g = img(p.len(), 1, &p);
            prop_assert!(threshold_segment(&g).count() >= 1);
            if let Some(t) = brute_force_otsu(&g) {
                // the sweep and the histogram agree on the maximal variance
                let t_impl = otsu_threshold(&g);
                let var = |t: usize| {
                    let (lo, hi): (Vec<f64>, Vec<f64>) = g.pixels().iter()
                        .map(|&p| intensity_bin(p) as f64).partition(|&b| b <= t as f64);
                    let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
                    let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
                    lo.len() as f64 * hi.len() as f64 * (m0 - m1).powi(2)
                };
                prop_assert!((var(t_impl) - var(t)).abs() <= 1e-9 * var(t));
            }
        }
    }
}

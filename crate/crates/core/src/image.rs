//! Pixel-level primitives: grayscale rasters, binary masks, histograms and
//! the small amount of mask algebra the pipeline needs.

use crate::error::{McdError, Result};

/// 8-bit single-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(McdError::InvalidArgument(format!(
                "image must be nonempty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(McdError::InvalidArgument(format!(
                "pixel buffer has {} entries, expected {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniform image. Panics on a zero dimension.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image must be nonempty");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image must be nonempty");
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

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Sum of all intensities, exact.
    pub fn intensity_sum(&self) -> u64 {
        self.pixels.iter().map(|&v| v as u64).sum()
    }
}

/// Row-major boolean grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(McdError::InvalidArgument(format!(
                "mask buffer has {} entries, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
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

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// Membership test for real coordinates; rounds to the nearest pixel and
    /// treats anything outside the grid as background.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let xi = round_half_away(x);
        let yi = round_half_away(y);
        if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
            return false;
        }
        self.get(xi as usize, yi as usize)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Mean (x, y) of the set pixels, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    sx += x as u64;
                    sy += y as u64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx as f64 / n as f64, sy as f64 / n as f64))
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// 0/255 grayscale rendering, the on-disk mask convention.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    /// Any nonzero pixel is foreground.
    pub fn from_gray(g: &GrayImage) -> BinaryMask {
        BinaryMask {
            width: g.width(),
            height: g.height(),
            bits: g.pixels().iter().map(|&v| v != 0).collect(),
        }
    }
}

/// Round half away from zero; the single rounding rule used wherever a real
/// coordinate becomes a pixel index.
#[inline]
pub fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

/// Interleaved 8-bit raster with 1 or more channels, as decoded from disk.
#[derive(Clone, Debug)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Luminance conversion with 0.299/0.587/0.114 weights, rounded to nearest.
/// Single-channel input passes through unchanged.
pub fn to_gray(raster: &Raster) -> Result<GrayImage> {
    if raster.width == 0 || raster.height == 0 {
        return Err(McdError::InvalidArgument("empty raster".into()));
    }
    let n = raster.width * raster.height;
    if raster.data.len() != n * raster.channels {
        return Err(McdError::InvalidArgument(format!(
            "raster buffer has {} bytes, expected {}",
            raster.data.len(),
            n * raster.channels
        )));
    }
    let pixels = match raster.channels {
        1 => raster.data.clone(),
        3 => raster
            .data
            .chunks_exact(3)
            .map(|p| {
                let weighted = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                ((weighted + 500) / 1000) as u8
            })
            .collect(),
        c => return Err(McdError::UnsupportedChannels(c)),
    };
    GrayImage::new(raster.width, raster.height, pixels)
}

/// 256-bin intensity histogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram256 {
    pub counts: [u64; 256],
    pub total: u64,
}

impl Histogram256 {
    pub fn from_counts(counts: [u64; 256]) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    /// Σ v·counts[v], exact.
    pub fn weighted_sum(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(v, &c)| v as u64 * c)
            .sum()
    }

    pub fn distinct_levels(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn histogram(g: &GrayImage) -> Histogram256 {
    let mut counts = [0u64; 256];
    for &v in g.pixels() {
        counts[v as usize] += 1;
    }
    Histogram256 {
        counts,
        total: g.pixels().len() as u64,
    }
}

/// Pixels strictly brighter than the image mean. The comparison
/// `v·n > Σ` is done in integers so no rounding is involved.
pub fn mean_threshold_mask(g: &GrayImage) -> BinaryMask {
    let sum = g.intensity_sum();
    let n = g.pixels().len() as u64;
    BinaryMask {
        width: g.width(),
        height: g.height(),
        bits: g.pixels().iter().map(|&v| v as u64 * n > sum).collect(),
    }
}

fn check_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(McdError::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

pub(crate) fn ensure_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    check_same_dims(expected, actual)
}

pub fn mask_and(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    check_same_dims(a.dims(), b.dims())?;
    Ok(BinaryMask {
        width: a.width,
        height: a.height,
        bits: a.bits.iter().zip(&b.bits).map(|(&p, &q)| p && q).collect(),
    })
}

pub fn mask_or(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    check_same_dims(a.dims(), b.dims())?;
    Ok(BinaryMask {
        width: a.width,
        height: a.height,
        bits: a.bits.iter().zip(&b.bits).map(|(&p, &q)| p || q).collect(),
    })
}

/// 3×3 dilation. Out-of-grid neighbours are ignored.
pub fn dilate3(m: &BinaryMask) -> BinaryMask {
    morph3(m, true)
}

/// 3×3 erosion. Out-of-grid neighbours are ignored, so the image border
/// does not erode a mask that touches it.
pub fn erode3(m: &BinaryMask) -> BinaryMask {
    morph3(m, false)
}

/// Sets every false pixel that is not 4-connected to the image border.
pub fn fill_holes(m: &BinaryMask) -> BinaryMask {
    let (w, h) = m.dims();
    let mut outside = vec![false; w * h];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !m.get(x, y) && !outside[y * w + x] {
                outside[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbours {
            if nx < w && ny < h && !m.get(nx, ny) && !outside[ny * w + nx] {
                outside[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        }
    }
    BinaryMask::new(w, h, outside.into_iter().map(|o| !o).collect()).expect("same dimensions")
}

/// Dilation followed by erosion with a 3×3 square element.
pub fn close3(m: &BinaryMask) -> BinaryMask {
    erode3(&dilate3(m))
}

fn morph3(m: &BinaryMask, dilate: bool) -> BinaryMask {
    let (w, h) = m.dims();
    let mut out = vec![false; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(1);
        let y1 = (y + 1).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(w - 1);
            let mut acc = !dilate;
            'win: for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let b = m.bits[yy * w + xx];
                    if dilate && b {
                        acc = true;
                        break 'win;
                    }
                    if !dilate && !b {
                        acc = false;
                        break 'win;
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits: out,
    }
}

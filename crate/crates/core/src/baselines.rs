//! Global-threshold detectors (Otsu, Isodata) used as comparators.

use crate::boxes::Detection;
use crate::components::Connectivity;
use crate::error::{McdError, Result};
use crate::image::{ensure_dims, histogram, BinaryMask, GrayImage, Histogram256};
use crate::mirp::{boxes_for_blobs, bright_mask, otsu_threshold, validate_size_bounds, AcRestriction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMethod {
    Otsu,
    Isodata,
}

impl std::str::FromStr for ThresholdMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "otsu" => Ok(ThresholdMethod::Otsu),
            "isodata" => Ok(ThresholdMethod::Isodata),
            other => Err(format!("unknown threshold method {other:?}")),
        }
    }
}

impl std::fmt::Display for ThresholdMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdMethod::Otsu => "Otsu",
            ThresholdMethod::Isodata => "Isodata",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub method: ThresholdMethod,
    pub s_min: usize,
    pub s_max: usize,
    pub box_w: usize,
    pub box_h: usize,
    pub connectivity: Connectivity,
}

impl BaselineConfig {
    pub fn new(method: ThresholdMethod, s_min: usize) -> Self {
        Self {
            method,
            s_min,
            s_max: 25,
            box_w: 10,
            box_h: 10,
            connectivity: Connectivity::Eight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_size_bounds(self.s_min, self.s_max, self.box_w, self.box_h)
    }

    pub fn label(&self) -> String {
        format!("{}({})", self.method, self.s_min)
    }
}

const ISODATA_MAX_ITERATIONS: usize = 256;

/// Iterative intermeans (Ridler–Calvard) threshold.
///
/// Starts from the floor of the global mean and repeats
/// `T ← midpoint(mean{v ≤ T}, mean{v > T})` until it stops moving. Class
/// means are exact rationals; the midpoint is rounded to the nearest level
/// with exact halves going down, which keeps `T` strictly below the maximum
/// occupied level so both classes stay nonempty. If the sequence cycles, or
/// after 256 iterations, the smallest level on the cycle is returned.
pub fn isodata_threshold(h: &Histogram256) -> Result<u8> {
    if h.total == 0 || h.distinct_levels() < 2 {
        return Err(McdError::DegenerateHistogram(
            "isodata needs at least two distinct intensities".into(),
        ));
    }
    let mut t = (h.weighted_sum() / h.total) as usize;
    let mut seen = Vec::new();
    for _ in 0..ISODATA_MAX_ITERATIONS {
        let next = isodata_step(h, t);
        if next == t {
            return Ok(t as u8);
        }
        if let Some(pos) = seen.iter().position(|&s| s == next) {
            let cycle_min = seen[pos..].iter().copied().chain([t]).min().unwrap();
            log::warn!("isodata threshold cycles; using {cycle_min}");
            return Ok(cycle_min as u8);
        }
        seen.push(t);
        t = next;
    }
    log::warn!("isodata threshold did not settle after {ISODATA_MAX_ITERATIONS} iterations");
    Ok(t as u8)
}

/// One intermeans update. Requires both classes split at `t` to be nonempty.
pub(crate) fn isodata_step(h: &Histogram256, t: usize) -> usize {
    let (mut n_lo, mut s_lo, mut n_hi, mut s_hi) = (0u128, 0u128, 0u128, 0u128);
    for (v, &c) in h.counts.iter().enumerate() {
        let c = c as u128;
        if v <= t {
            n_lo += c;
            s_lo += c * v as u128;
        } else {
            n_hi += c;
            s_hi += c * v as u128;
        }
    }
    debug_assert!(n_lo > 0 && n_hi > 0);
    // midpoint = (s_lo/n_lo + s_hi/n_hi) / 2 = num / den
    let num = s_lo * n_hi + s_hi * n_lo;
    let den = 2 * n_lo * n_hi;
    let q = num / den;
    let r = num % den;
    // round to nearest, halves down
    if 2 * r > den {
        (q + 1) as usize
    } else {
        q as usize
    }
}

/// Threshold the image, restrict components to the chamber by centroid,
/// filter by area and emit boxes scored by component area.
pub fn detect_threshold(g: &GrayImage, ac_mask: &BinaryMask, cfg: &BaselineConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    ensure_dims(g.dims(), ac_mask.dims())?;
    let h = histogram(g);
    let threshold = match cfg.method {
        ThresholdMethod::Otsu => otsu_threshold(&h),
        ThresholdMethod::Isodata => match isodata_threshold(&h) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{}: {e}; no detections", cfg.label());
                return Ok(Vec::new());
            }
        },
    };
    let bright = bright_mask(g, threshold as f64);
    let boxes = boxes_for_blobs(
        g,
        &bright,
        ac_mask,
        cfg.s_min,
        cfg.s_max,
        cfg.box_w,
        cfg.box_h,
        cfg.connectivity,
        AcRestriction::Centroid,
    )?;
    Ok(boxes
        .into_iter()
        .map(|(bbox, blob)| Detection {
            bbox,
            score: blob.area as f64,
        })
        .collect())
}

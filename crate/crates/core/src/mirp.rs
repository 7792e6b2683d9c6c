//! Minuscule region proposal.
//!
//! Otsu's between-class-variance scan gives an initial threshold, scaled by
//! the adjustment factor λ. Bright components whose centroid lies inside the
//! chamber mask and whose area is within `[s_min, s_max]` each yield one
//! fixed-size candidate box centered on the component centroid.

use crate::boxes::CandidateBox;
use crate::components::{connected_components, Connectivity};
use crate::error::{McdError, Result};
use crate::image::{ensure_dims, histogram, BinaryMask, GrayImage, Histogram256};

/// How the chamber mask restricts bright components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AcRestriction {
    /// Keep a whole component iff its centroid pixel is inside the mask.
    #[default]
    Centroid,
    /// Clip component pixels to the mask before measuring area and centroid.
    ClipPixels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MirpConfig {
    pub lambda: f64,
    pub s_min: usize,
    pub s_max: usize,
    pub box_w: usize,
    pub box_h: usize,
    pub connectivity: Connectivity,
    pub restriction: AcRestriction,
}

impl Default for MirpConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            s_min: 1,
            s_max: 25,
            box_w: 10,
            box_h: 10,
            connectivity: Connectivity::Eight,
            restriction: AcRestriction::Centroid,
        }
    }
}

impl MirpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.5) {
            return Err(McdError::InvalidArgument(format!(
                "lambda must be in (0, 1.5], got {}",
                self.lambda
            )));
        }
        validate_size_bounds(self.s_min, self.s_max, self.box_w, self.box_h)
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }
}

pub(crate) fn validate_size_bounds(s_min: usize, s_max: usize, box_w: usize, box_h: usize) -> Result<()> {
    if s_min < 1 || s_min > s_max {
        return Err(McdError::InvalidArgument(format!(
            "size bounds must satisfy 1 <= s_min <= s_max, got [{s_min}, {s_max}]"
        )));
    }
    if box_w == 0 || box_h == 0 {
        return Err(McdError::InvalidArgument("box dimensions must be at least 1".into()));
    }
    Ok(())
}

/// Threshold maximizing ω₁ω₂(μ₁−μ₂)² over k = 0..=255, computed from
/// normalized cumulative sums. The first maximizer wins; a histogram with a
/// single occupied level returns 0.
pub fn otsu_threshold(h: &Histogram256) -> u8 {
    if h.total == 0 {
        return 0;
    }
    let total = h.total as f64;
    let mut omega = [0f64; 256];
    let mut mu = [0f64; 256];
    let (mut acc_w, mut acc_m) = (0f64, 0f64);
    for k in 0..256 {
        let p = h.counts[k] as f64 / total;
        acc_w += p;
        acc_m += p * k as f64;
        omega[k] = acc_w;
        mu[k] = acc_m;
    }
    let mu_t = mu[255];

    let mut t_init = 0u8;
    let mut best = 0f64;
    for k in 0..256 {
        let w1 = omega[k];
        let w2 = 1.0 - w1;
        if w1 > 0.0 && w2 > 0.0 {
            let m1 = mu[k] / w1;
            let m2 = (mu_t - mu[k]) / w2;
            let var = w1 * w2 * (m1 - m2) * (m1 - m2);
            if var > best {
                t_init = k as u8;
                best = var;
            }
        }
    }
    t_init
}

/// λ-scaled threshold, kept real-valued.
#[inline]
pub fn effective_threshold(t_init: u8, lambda: f64) -> f64 {
    t_init as f64 * lambda
}

/// Pixels strictly brighter than `threshold`.
pub fn bright_mask(g: &GrayImage, threshold: f64) -> BinaryMask {
    BinaryMask::new(
        g.width(),
        g.height(),
        g.pixels().iter().map(|&v| v as f64 > threshold).collect(),
    )
    .expect("same dimensions as the image")
}

/// A size-filtered, chamber-restricted bright component.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub label: u32,
    pub area: usize,
    pub centroid: (f64, f64),
}

/// Component analysis shared by the proposal stage and the threshold
/// baselines. Returned in label order.
pub(crate) fn chamber_blobs(
    bright: &BinaryMask,
    ac_mask: &BinaryMask,
    s_min: usize,
    s_max: usize,
    connectivity: Connectivity,
    restriction: AcRestriction,
) -> Result<Vec<Blob>> {
    ensure_dims(bright.dims(), ac_mask.dims())?;
    let candidates = match restriction {
        AcRestriction::Centroid => {
            let cc = connected_components(bright, connectivity);
            (0..cc.count)
                .filter(|&k| {
                    let (cx, cy) = cc.centroids[k];
                    ac_mask.contains_point(cx, cy)
                })
                .map(|k| Blob {
                    label: k as u32 + 1,
                    area: cc.areas[k],
                    centroid: cc.centroids[k],
                })
                .collect::<Vec<_>>()
        }
        AcRestriction::ClipPixels => {
            let clipped = crate::image::mask_and(bright, ac_mask)?;
            let cc = connected_components(&clipped, connectivity);
            (0..cc.count)
                .map(|k| Blob {
                    label: k as u32 + 1,
                    area: cc.areas[k],
                    centroid: cc.centroids[k],
                })
                .collect()
        }
    };
    Ok(candidates
        .into_iter()
        .filter(|b| b.area >= s_min && b.area <= s_max)
        .collect())
}

/// Candidate boxes for one image, in component label order.
pub fn propose(g: &GrayImage, ac_mask: &BinaryMask, cfg: &MirpConfig) -> Result<Vec<CandidateBox>> {
    Ok(propose_blobs(g, ac_mask, cfg)?
        .into_iter()
        .map(|(bx, _)| bx)
        .collect())
}

/// Like [`propose`] but keeps the component each box came from.
pub fn propose_blobs(g: &GrayImage, ac_mask: &BinaryMask, cfg: &MirpConfig) -> Result<Vec<(CandidateBox, Blob)>> {
    cfg.validate()?;
    ensure_dims(g.dims(), ac_mask.dims())?;
    let t_init = otsu_threshold(&histogram(g));
    let bright = bright_mask(g, effective_threshold(t_init, cfg.lambda));
    boxes_for_blobs(g, &bright, ac_mask, cfg.s_min, cfg.s_max, cfg.box_w, cfg.box_h, cfg.connectivity, cfg.restriction)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn boxes_for_blobs(
    g: &GrayImage,
    bright: &BinaryMask,
    ac_mask: &BinaryMask,
    s_min: usize,
    s_max: usize,
    box_w: usize,
    box_h: usize,
    connectivity: Connectivity,
    restriction: AcRestriction,
) -> Result<Vec<(CandidateBox, Blob)>> {
    let blobs = chamber_blobs(bright, ac_mask, s_min, s_max, connectivity, restriction)?;
    Ok(blobs
        .into_iter()
        .map(|b| {
            let bx = CandidateBox::centered(b.centroid, box_w, box_h, g.width(), g.height());
            (bx, b)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_from(pairs: &[(usize, u64)]) -> Histogram256 {
        let mut counts = [0u64; 256];
        for &(v, c) in pairs {
            counts[v] += c;
        }
        Histogram256::from_counts(counts)
    }

    #[test]
    fn bimodal_returns_first_maximizer() {
        // Every k in [10, 199] separates the two modes equally well.
        assert_eq!(otsu_threshold(&hist_from(&[(10, 50), (200, 50)])), 10);
    }

    #[test]
    fn constant_histogram_returns_zero() {
        assert_eq!(otsu_threshold(&hist_from(&[(77, 400)])), 0);
    }

    #[test]
    fn effective_threshold_cases() {
        assert_eq!(effective_threshold(100, 1.0), 100.0);
        assert!((effective_threshold(100, 0.85) - 85.0).abs() < 1e-12);
        let t = effective_threshold(128, 0.7);
        assert!((t - 89.6).abs() < 1e-12);
        let g = GrayImage::new(2, 1, vec![90, 89]).unwrap();
        assert_eq!(bright_mask(&g, t).bits(), &[true, false]);
    }

    /// Dark 40x40 field, AC covers the left half.
    fn fixture(blob: &[(usize, usize)], value: u8) -> (GrayImage, BinaryMask) {
        let mut g = GrayImage::from_fn(40, 40, |_, y| if y < 4 { 220 } else { 20 });
        for &(x, y) in blob {
            g.set(x, y, value);
        }
        let ac = BinaryMask::from_fn(40, 40, |x, y| x < 20 && y >= 4);
        (g, ac)
    }

    #[test]
    fn single_blob_inside_chamber() {
        let (g, ac) = fixture(&[(10, 20), (11, 20), (10, 21)], 230);
        let boxes = propose(&g, &ac, &MirpConfig::default()).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        // centroid (31/3, 61/3) = (10.33, 20.33); tl = round(5.33, 15.33)
        assert_eq!(b.corners(), (5, 15, 15, 25));
        assert!((b.source_centroid.0 - 31.0 / 3.0).abs() < 1e-12);
        assert_eq!(b.area(), 100);
    }

    #[test]
    fn blob_outside_chamber_is_dropped() {
        let (g, ac) = fixture(&[(30, 20), (31, 20), (30, 21)], 230);
        assert!(propose(&g, &ac, &MirpConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn oversized_blob_is_dropped() {
        let pts: Vec<_> = (0..30).map(|i| (5 + i % 6, 20 + i / 6)).collect();
        let (g, ac) = fixture(&pts, 230);
        assert!(propose(&g, &ac, &MirpConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn empty_chamber_gives_no_boxes() {
        let (g, _) = fixture(&[(10, 20)], 230);
        let none = BinaryMask::filled(40, 40, false);
        assert!(propose(&g, &none, &MirpConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn pixel_clipping_mode_splits_border_blob() {
        // Blob straddles the chamber border at x = 20; centroid at 20.0 is outside.
        let (g, ac) = fixture(&[(19, 20), (20, 20), (21, 20)], 230);
        assert!(propose(&g, &ac, &MirpConfig::default()).unwrap().is_empty());
        let clip = MirpConfig {
            restriction: AcRestriction::ClipPixels,
            ..Default::default()
        };
        let boxes = propose(&g, &ac, &clip).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].source_centroid, (19.0, 20.0));
    }

    #[test]
    fn rejects_bad_config_and_dims() {
        let (g, ac) = fixture(&[], 0);
        let bad = MirpConfig {
            s_min: 0,
            ..Default::default()
        };
        assert!(propose(&g, &ac, &bad).is_err());
        let bad = MirpConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(propose(&g, &ac, &bad).is_err());
        let wrong = BinaryMask::filled(39, 40, true);
        assert!(matches!(
            propose(&g, &wrong, &MirpConfig::default()),
            Err(McdError::DimensionMismatch { .. })
        ));
    }
}

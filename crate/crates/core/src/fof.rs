//! Field of focus: locate the anterior chamber.
//!
//! Prompt points are derived from the centroid of the anterior segment (the
//! bright band around the chamber). A [`Segmenter`] then turns image plus
//! prompts into a chamber mask. Two segmenters ship here: an adapter that
//! loads masks produced elsewhere (for example by a promptable foundation
//! model) and a classical region-growing fallback.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;

use crate::components::{connected_components, Connectivity};
use crate::error::{McdError, Result};
use crate::image::{close3, ensure_dims, fill_holes, mean_threshold_mask, round_half_away, BinaryMask, GrayImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PromptPoint {
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct I2acpConfig {
    /// Second-largest / largest area ratio above which the two largest
    /// bright components are merged into one anterior segment.
    pub merge_ratio: f64,
    /// (dx, dy) offsets from the segment centroid, as fractions of image width.
    pub offsets: Vec<(f64, f64)>,
    pub connectivity: Connectivity,
}

impl Default for I2acpConfig {
    fn default() -> Self {
        Self {
            merge_ratio: 0.65,
            offsets: vec![(0.0, 0.1), (0.0, -0.1)],
            connectivity: Connectivity::Eight,
        }
    }
}

impl I2acpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.merge_ratio > 0.0 && self.merge_ratio <= 1.0) {
            return Err(McdError::InvalidArgument(format!(
                "merge ratio must be in (0, 1], got {}",
                self.merge_ratio
            )));
        }
        if self.offsets.is_empty() {
            return Err(McdError::InvalidArgument("at least one prompt offset is required".into()));
        }
        if self.offsets.iter().any(|&(dx, dy)| !dx.is_finite() || !dy.is_finite()) {
            return Err(McdError::InvalidArgument("prompt offsets must be finite".into()));
        }
        Ok(())
    }
}

/// Mean-threshold the image, keep the largest bright component, and merge the
/// second-largest into it when their area ratio exceeds `merge_ratio`.
pub fn anterior_segment_mask(g: &GrayImage, cfg: &I2acpConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let bright = mean_threshold_mask(g);
    let cc = connected_components(&bright, cfg.connectivity);
    if cc.count == 0 {
        return Err(McdError::NoAnteriorSegment);
    }
    // Stable sort: equal areas keep discovery order.
    let mut order: Vec<usize> = (0..cc.count).collect();
    order.sort_by(|&a, &b| cc.areas[b].cmp(&cc.areas[a]));
    let largest = order[0] as u32 + 1;
    let mut keep_second = None;
    if let Some(&second) = order.get(1) {
        let ratio = cc.areas[second] as f64 / cc.areas[order[0]] as f64;
        if ratio > cfg.merge_ratio {
            keep_second = Some(second as u32 + 1);
        }
    }
    let bits = cc
        .labels
        .iter()
        .map(|&l| l != 0 && (l == largest || Some(l) == keep_second))
        .collect();
    BinaryMask::new(g.width(), g.height(), bits)
}

/// Centroid of the segment mask plus each configured offset (scaled by image
/// width), rounded half away from zero and clamped into the image.
pub fn prompt_points(segment_mask: &BinaryMask, cfg: &I2acpConfig) -> Result<Vec<PromptPoint>> {
    cfg.validate()?;
    let (cx, cy) = segment_mask
        .centroid()
        .ok_or_else(|| McdError::InvalidArgument("segment mask is empty".into()))?;
    let (w, h) = segment_mask.dims();
    let scale = w as f64;
    Ok(cfg
        .offsets
        .iter()
        .map(|&(dx, dy)| PromptPoint {
            x: round_half_away(cx + dx * scale).clamp(0, w as i64 - 1) as usize,
            y: round_half_away(cy + dy * scale).clamp(0, h as i64 - 1) as usize,
        })
        .collect())
}

/// Produces an anterior-chamber mask from an image and prompt points.
pub trait Segmenter: Send + Sync {
    /// `stem` is the image id, used by adapters that look up per-image files.
    fn segment(&self, g: &GrayImage, stem: &str, prompts: &[PromptPoint]) -> Result<BinaryMask>;
}

/// Loads a mask produced out of process. `template` may contain `{stem}`.
#[derive(Clone, Debug)]
pub struct ExternalMaskSegmenter {
    pub template: String,
}

impl ExternalMaskSegmenter {
    pub fn path_for(&self, stem: &str) -> PathBuf {
        PathBuf::from(self.template.replace("{stem}", stem))
    }
}

impl Segmenter for ExternalMaskSegmenter {
    fn segment(&self, g: &GrayImage, stem: &str, prompts: &[PromptPoint]) -> Result<BinaryMask> {
        if prompts.is_empty() {
            return Err(McdError::InvalidArgument("no prompt points".into()));
        }
        let path = self.path_for(stem);
        let mask = crate::io::load_mask(&path)?;
        ensure_dims(g.dims(), mask.dims())?;
        Ok(mask)
    }
}

/// Region-growing segmenter; see [`flood_fill_fallback`].
#[derive(Clone, Copy, Debug, Default)]
pub struct FloodFillSegmenter;

impl Segmenter for FloodFillSegmenter {
    fn segment(&self, g: &GrayImage, _stem: &str, prompts: &[PromptPoint]) -> Result<BinaryMask> {
        flood_fill_fallback(g, prompts)
    }
}

/// Grows the 8-connected region of at-or-below-mean pixels from the dark
/// prompts, closes it with a 3×3 element and fills enclosed holes, so bright
/// specks inside the chamber belong to it.
pub fn flood_fill_fallback(g: &GrayImage, prompts: &[PromptPoint]) -> Result<BinaryMask> {
    if prompts.is_empty() {
        return Err(McdError::InvalidArgument("no prompt points".into()));
    }
    let (w, h) = g.dims();
    let dark = mean_threshold_mask(g).not();
    let mut grown = BinaryMask::filled(w, h, false);
    let mut queue = VecDeque::new();
    let mut seeded = 0;
    for p in prompts {
        if p.x >= w || p.y >= h {
            log::warn!("prompt ({}, {}) outside {}x{} image skipped", p.x, p.y, w, h);
            continue;
        }
        if !dark.get(p.x, p.y) {
            log::debug!("prompt ({}, {}) on a bright pixel skipped", p.x, p.y);
            continue;
        }
        seeded += 1;
        if !grown.get(p.x, p.y) {
            grown.set(p.x, p.y, true);
            queue.push_back((p.x, p.y));
        }
    }
    if seeded == 0 {
        return Err(McdError::PromptsOutsideDarkRegion);
    }
    while let Some((x, y)) = queue.pop_front() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if dark.get(nx, ny) && !grown.get(nx, ny) {
                    grown.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(fill_holes(&close3(&grown)))
}

/// Declarative segmenter selection, as read from configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SegmenterSpec {
    ExternalMask { template: String },
    FloodFillFallback,
}

impl SegmenterSpec {
    /// Builds a spec from a kind name and its key-value parameters.
    /// Recognized kinds: `external-mask` (needs `template`) and
    /// `flood-fill-fallback`.
    pub fn from_kind(kind: &str, params: &BTreeMap<String, String>) -> Result<Self> {
        match kind {
            "external-mask" => {
                let template = params.get("template").cloned().ok_or_else(|| {
                    McdError::InvalidArgument("external-mask segmenter needs a `template` parameter".into())
                })?;
                Ok(SegmenterSpec::ExternalMask { template })
            }
            "flood-fill-fallback" => Ok(SegmenterSpec::FloodFillFallback),
            other => Err(McdError::InvalidArgument(format!("unknown segmenter kind {other:?}"))),
        }
    }

    pub fn build(&self) -> Box<dyn Segmenter> {
        match self {
            SegmenterSpec::ExternalMask { template } => Box::new(ExternalMaskSegmenter {
                template: template.clone(),
            }),
            SegmenterSpec::FloodFillFallback => Box::new(FloodFillSegmenter),
        }
    }
}

pub fn segment_ac(g: &GrayImage, prompts: &[PromptPoint], spec: &SegmenterSpec, stem: &str) -> Result<BinaryMask> {
    spec.build().segment(g, stem, prompts)
}

/// Anterior segment → prompts → chamber mask.
pub fn field_of_focus(g: &GrayImage, cfg: &I2acpConfig, segmenter: &dyn Segmenter, stem: &str) -> Result<BinaryMask> {
    let segment = anterior_segment_mask(g, cfg)?;
    let prompts = prompt_points(&segment, cfg)?;
    segmenter.segment(g, stem, &prompts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::mask_or;

    fn blobs(w: usize, h: usize, rects: &[(usize, usize, usize, usize)]) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            if rects
                .iter()
                .any(|&(x0, y0, rw, rh)| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
            {
                200
            } else {
                10
            }
        })
    }

    fn rect_mask(w: usize, h: usize, r: (usize, usize, usize, usize)) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3)
    }

    #[test]
    fn single_blob_is_the_segment() {
        let r = (5, 5, 8, 6);
        let g = blobs(40, 30, &[r]);
        let m = anterior_segment_mask(&g, &I2acpConfig::default()).unwrap();
        assert_eq!(m, rect_mask(40, 30, r));
    }

    #[test]
    fn merge_ratio_above_threshold_keeps_both() {
        // areas 100 and 70: 0.7 > 0.65
        let a = (2, 2, 10, 10);
        let b = (30, 2, 10, 7);
        let g = blobs(60, 30, &[a, b]);
        let m = anterior_segment_mask(&g, &I2acpConfig::default()).unwrap();
        let expected = mask_or(&rect_mask(60, 30, a), &rect_mask(60, 30, b)).unwrap();
        assert_eq!(m, expected);
    }

    #[test]
    fn merge_ratio_at_or_below_threshold_keeps_largest() {
        // areas 100 and 60: 0.6 <= 0.65
        let a = (2, 2, 10, 10);
        let b = (30, 2, 10, 6);
        let g = blobs(60, 30, &[a, b]);
        let m = anterior_segment_mask(&g, &I2acpConfig::default()).unwrap();
        assert_eq!(m, rect_mask(60, 30, a));
    }

    #[test]
    fn dark_image_has_no_segment() {
        let g = GrayImage::filled(20, 20, 0);
        assert!(matches!(
            anterior_segment_mask(&g, &I2acpConfig::default()),
            Err(McdError::NoAnteriorSegment)
        ));
    }

    #[test]
    fn prompts_from_centered_square() {
        // 10x10 square at 45..55 has centroid (49.5, 49.5) -> rounds to 50.
        let m = rect_mask(100, 100, (45, 45, 10, 10));
        let pts = prompt_points(&m, &I2acpConfig::default()).unwrap();
        assert_eq!(pts, vec![PromptPoint { x: 50, y: 60 }, PromptPoint { x: 50, y: 40 }]);
    }

    #[test]
    fn zero_offset_is_centroid() {
        let m = rect_mask(20, 20, (4, 6, 3, 3));
        let cfg = I2acpConfig {
            offsets: vec![(0.0, 0.0)],
            ..Default::default()
        };
        assert_eq!(prompt_points(&m, &cfg).unwrap(), vec![PromptPoint { x: 5, y: 7 }]);
    }

    #[test]
    fn prompts_clamp_to_image() {
        let m = rect_mask(100, 100, (40, 0, 20, 4));
        let pts = prompt_points(&m, &I2acpConfig::default()).unwrap();
        assert_eq!(pts[1].y, 0);
        assert_eq!(pts[0].y, 12);
    }

    #[test]
    fn empty_segment_rejected() {
        let m = BinaryMask::filled(5, 5, false);
        assert!(prompt_points(&m, &I2acpConfig::default()).is_err());
    }

    #[test]
    fn flood_fill_rejects_bright_only_prompts() {
        let g = blobs(20, 20, &[(5, 5, 5, 5)]);
        let err = flood_fill_fallback(&g, &[PromptPoint { x: 6, y: 6 }]).unwrap_err();
        assert!(matches!(err, McdError::PromptsOutsideDarkRegion));
    }

    #[test]
    fn flood_fill_stays_inside_enclosure() {
        // Bright ring around a dark 6x6 interior; dark exterior must not leak in.
        let g = GrayImage::from_fn(20, 20, |x, y| {
            let ring = (4..16).contains(&x) && (4..16).contains(&y);
            let inner = (6..14).contains(&x) && (6..14).contains(&y);
            if ring && !inner {
                220
            } else {
                10
            }
        });
        let m = flood_fill_fallback(&g, &[PromptPoint { x: 10, y: 10 }]).unwrap();
        assert_eq!(m, rect_mask(20, 20, (6, 6, 8, 8)));
    }

    #[test]
    fn external_mask_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        let mask = rect_mask(12, 9, (1, 2, 3, 4));
        crate::io::save_mask_png(&dir.path().join("img7.png"), &mask).unwrap();
        let template = format!("{}/{{stem}}.png", dir.path().display());
        let spec = SegmenterSpec::ExternalMask { template };
        let g = GrayImage::filled(12, 9, 0);
        let out = segment_ac(&g, &[PromptPoint { x: 0, y: 0 }], &spec, "img7").unwrap();
        assert_eq!(out, mask);

        // Wrong size is a data error.
        let big = GrayImage::filled(13, 9, 0);
        assert!(matches!(
            segment_ac(&big, &[PromptPoint { x: 0, y: 0 }], &spec, "img7"),
            Err(McdError::DimensionMismatch { .. })
        ));
        // Missing file too.
        assert!(segment_ac(&g, &[PromptPoint { x: 0, y: 0 }], &spec, "nope").is_err());
    }

    #[test]
    fn spec_from_kind() {
        let mut p = BTreeMap::new();
        assert_eq!(
            SegmenterSpec::from_kind("flood-fill-fallback", &p).unwrap(),
            SegmenterSpec::FloodFillFallback
        );
        assert!(SegmenterSpec::from_kind("external-mask", &p).is_err());
        p.insert("template".into(), "m/{stem}.png".into());
        assert!(SegmenterSpec::from_kind("external-mask", &p).is_ok());
        assert!(SegmenterSpec::from_kind("sam", &p).is_err());
    }
}

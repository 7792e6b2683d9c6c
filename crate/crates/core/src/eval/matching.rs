use std::cmp::Ordering;

use crate::boxes::{CandidateBox, Detection};
use crate::error::{McdError, Result};
use crate::eval::metrics::box_iou;

/// When a prediction counts as hitting a ground-truth cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatchCriterion {
    /// The prediction box contains the annotated click point (edges included).
    Point,
    /// Box IoU strictly above the threshold.
    Iou(f64),
}

impl MatchCriterion {
    pub const IOU10: MatchCriterion = MatchCriterion::Iou(0.10);
    pub const IOU30: MatchCriterion = MatchCriterion::Iou(0.30);

    pub fn all() -> [MatchCriterion; 3] {
        [MatchCriterion::Point, Self::IOU10, Self::IOU30]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MatchCriterion::Point => Ok(()),
            MatchCriterion::Iou(t) if t > 0.0 && t < 1.0 => Ok(()),
            MatchCriterion::Iou(t) => Err(McdError::InvalidArgument(format!(
                "IoU threshold must be in (0, 1), got {t}"
            ))),
        }
    }

    /// Short key used in reports: `point`, `iou10`, `iou30`.
    pub fn key(&self) -> String {
        match *self {
            MatchCriterion::Point => "point".into(),
            MatchCriterion::Iou(t) => format!("iou{}", (t * 100.0).round() as i64),
        }
    }
}

impl std::str::FromStr for MatchCriterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "point" {
            return Ok(MatchCriterion::Point);
        }
        let digits = s
            .strip_prefix("iou-")
            .or_else(|| s.strip_prefix("iou"))
            .ok_or_else(|| format!("unknown criterion {s:?}"))?;
        let pct: u32 = digits.parse().map_err(|_| format!("unknown criterion {s:?}"))?;
        let c = MatchCriterion::Iou(pct as f64 / 100.0);
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

/// Ground truth for one image: click points and the boxes centered on them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthAnnotation {
    pub image_id: String,
    pub points: Vec<(f64, f64)>,
    pub boxes: Vec<CandidateBox>,
}

impl GroundTruthAnnotation {
    /// Builds boxes from click points with the centering rule, clamped into a
    /// `width`×`height` image.
    pub fn from_points(
        image_id: impl Into<String>,
        points: Vec<(f64, f64)>,
        box_w: usize,
        box_h: usize,
        width: usize,
        height: usize,
    ) -> Self {
        let boxes = points
            .iter()
            .map(|&p| CandidateBox::centered(p, box_w, box_h, width, height))
            .collect();
        Self {
            image_id: image_id.into(),
            points,
            boxes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    /// (prediction, ground-truth index)
    pub pairs: Vec<(Detection, usize)>,
    pub unmatched_preds: Vec<Detection>,
    pub unmatched_gts: Vec<usize>,
}

impl Matching {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_preds.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_gts.len()
    }
}

/// Descending score, then raster order of the top-left corner, then the
/// bottom-right corner.
fn processing_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.y_tl.cmp(&b.bbox.y_tl))
        .then(a.bbox.x_tl.cmp(&b.bbox.x_tl))
        .then(a.bbox.y_br.cmp(&b.bbox.y_br))
        .then(a.bbox.x_br.cmp(&b.bbox.x_br))
}

/// Greedy one-to-one matching. Each ground-truth cell is consumed by the
/// first prediction that claims it, so duplicates become false positives.
///
/// Under the point criterion a prediction containing several unmatched
/// points takes the one nearest to its box center; under an IoU criterion it
/// takes the highest-IoU unmatched box. Remaining ties go to the lower
/// ground-truth index.
pub fn match_detections(preds: &[Detection], gts: &GroundTruthAnnotation, crit: MatchCriterion) -> Matching {
    let mut order: Vec<&Detection> = preds.iter().collect();
    order.sort_by(|a, b| processing_order(a, b));

    let mut taken = vec![false; gts.len()];
    let mut out = Matching::default();
    for det in order {
        let mut best: Option<(usize, f64)> = None;
        for gi in 0..gts.len() {
            if taken[gi] {
                continue;
            }
            // Larger key is better.
            let key = match crit {
                MatchCriterion::Point => {
                    let (px, py) = gts.points[gi];
                    if !det.bbox.contains_point(px, py) {
                        continue;
                    }
                    let (cx, cy) = det.bbox.center();
                    -((px - cx).powi(2) + (py - cy).powi(2))
                }
                MatchCriterion::Iou(t) => {
                    let iou = box_iou(&det.bbox, &gts.boxes[gi]);
                    if iou <= t {
                        continue;
                    }
                    iou
                }
            };
            if best.is_none_or(|(_, k)| key > k) {
                best = Some((gi, key));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                out.pairs.push((*det, gi));
            }
            None => out.unmatched_preds.push(*det),
        }
    }
    out.unmatched_gts = (0..gts.len()).filter(|&i| !taken[i]).collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x: i64, y: i64, score: f64) -> Detection {
        Detection {
            bbox: CandidateBox::from_corners(x, y, x + 10, y + 10),
            score,
        }
    }

    fn gt(points: &[(f64, f64)]) -> GroundTruthAnnotation {
        GroundTruthAnnotation::from_points("img", points.to_vec(), 10, 10, 200, 200)
    }

    #[test]
    fn exact_hit_matches_under_every_criterion() {
        let g = gt(&[(50.0, 50.0)]);
        let p = [det(45, 45, 1.0)];
        for c in MatchCriterion::all() {
            let m = match_detections(&p, &g, c);
            assert_eq!((m.tp(), m.fp(), m.fn_()), (1, 0, 0), "{c:?}");
        }
    }

    #[test]
    fn duplicate_predictions_are_not_double_counted() {
        let g = gt(&[(50.0, 50.0)]);
        let p = [det(45, 45, 0.9), det(46, 44, 0.8)];
        for c in MatchCriterion::all() {
            let m = match_detections(&p, &g, c);
            assert_eq!((m.tp(), m.fp(), m.fn_()), (1, 1, 0), "{c:?}");
            // Higher score wins the cell.
            assert_eq!(m.pairs[0].0.score, 0.9);
        }
    }

    #[test]
    fn iou_threshold_semantics() {
        // Offset (4, 4): intersection 36, union 164, IoU ~ 0.22.
        let g = gt(&[(50.0, 50.0)]);
        let p = [det(49, 49, 1.0)];
        assert!((box_iou(&p[0].bbox, &g.boxes[0]) - 36.0 / 164.0).abs() < 1e-12);
        assert_eq!(match_detections(&p, &g, MatchCriterion::IOU10).tp(), 1);
        assert_eq!(match_detections(&p, &g, MatchCriterion::IOU30).tp(), 0);
    }

    #[test]
    fn point_tie_goes_to_nearest_center() {
        // Box 40..50 centered at (45, 45); both points inside, second is nearer.
        let g = gt(&[(41.0, 41.0), (46.0, 44.0)]);
        let m = match_detections(&[det(40, 40, 1.0)], &g, MatchCriterion::Point);
        assert_eq!(m.pairs[0].1, 1);
        assert_eq!(m.unmatched_gts, vec![0]);
    }

    #[test]
    fn boundary_point_counts() {
        let g = gt(&[(50.0, 50.0)]);
        let m = match_detections(&[det(40, 40, 1.0)], &g, MatchCriterion::Point);
        assert_eq!(m.tp(), 1);
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("point".parse::<MatchCriterion>().unwrap(), MatchCriterion::Point);
        assert_eq!("iou10".parse::<MatchCriterion>().unwrap(), MatchCriterion::IOU10);
        assert_eq!("IoU-30".parse::<MatchCriterion>().unwrap(), MatchCriterion::IOU30);
        assert!("iou0".parse::<MatchCriterion>().is_err());
        assert!("area".parse::<MatchCriterion>().is_err());
        assert_eq!(MatchCriterion::IOU30.key(), "iou30");
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Detection>, Vec<(f64, f64)>)> {
        let dets = proptest::collection::vec((0i64..40, 0i64..40, 0u8..4), 0..10)
            .prop_map(|v| v.into_iter().map(|(x, y, s)| det(x, y, s as f64)).collect::<Vec<_>>());
        let pts = proptest::collection::vec((0u8..50, 0u8..50), 0..8)
            .prop_map(|v| v.into_iter().map(|(x, y)| (x as f64, y as f64)).collect::<Vec<_>>());
        (dets, pts)
    }

    fn canonical(m: &Matching) -> (Vec<(i64, i64, i64, i64, u64, usize)>, Vec<(i64, i64, i64, i64, u64)>, Vec<usize>) {
        let mut pairs: Vec<_> = m
            .pairs
            .iter()
            .map(|(d, g)| {
                let (a, b, c, e) = d.bbox.corners();
                (a, b, c, e, d.score.to_bits(), *g)
            })
            .collect();
        pairs.sort();
        let mut fps: Vec<_> = m
            .unmatched_preds
            .iter()
            .map(|d| {
                let (a, b, c, e) = d.bbox.corners();
                (a, b, c, e, d.score.to_bits())
            })
            .collect();
        fps.sort();
        (pairs, fps, m.unmatched_gts.clone())
    }

    proptest! {
        #[test]
        fn order_independent((dets, pts) in arb_case(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let g = gt(&pts);
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for c in MatchCriterion::all() {
                prop_assert_eq!(
                    canonical(&match_detections(&dets, &g, c)),
                    canonical(&match_detections(&shuffled, &g, c))
                );
            }
        }

        #[test]
        fn counts_are_bounded((dets, pts) in arb_case()) {
            let g = gt(&pts);
            for c in MatchCriterion::all() {
                let m = match_detections(&dets, &g, c);
                prop_assert!(m.tp() <= dets.len().min(pts.len()));
                prop_assert_eq!(m.tp() + m.fn_(), pts.len());
                prop_assert_eq!(m.tp() + m.fp(), dets.len());
            }
        }
    }
}

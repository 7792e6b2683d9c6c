use crate::boxes::CandidateBox;
use crate::error::Result;
use crate::image::{ensure_dims, BinaryMask};

/// Pixel-overlap IoU and Dice between a predicted and a reference mask.
/// Two empty masks agree perfectly: (1.0, 1.0).
pub fn seg_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64)> {
    ensure_dims(gt.dims(), pred.dims())?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok((1.0, 1.0));
    }
    let iou = tp as f64 / (tp + fp + fn_) as f64;
    let dice = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    Ok((iou, dice))
}

/// Intersection over union with half-open pixel extents.
pub fn box_iou(a: &CandidateBox, b: &CandidateBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::McdError;
    use proptest::prelude::*;

    fn square(x0: usize, y0: usize, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(30, 30, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
    }

    #[test]
    fn identical_and_disjoint_masks() {
        let a = square(2, 2, 10, 10);
        assert_eq!(seg_metrics(&a, &a).unwrap(), (1.0, 1.0));
        assert_eq!(seg_metrics(&a, &square(15, 15, 5, 5)).unwrap(), (0.0, 0.0));
        let empty = BinaryMask::filled(30, 30, false);
        assert_eq!(seg_metrics(&empty, &empty).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn half_overlapping_squares() {
        // 10x10 squares offset by 5 columns share a 5x10 strip.
        let (iou, dice) = seg_metrics(&square(0, 0, 10, 10), &square(5, 0, 10, 10)).unwrap();
        assert_eq!(iou, 50.0 / 150.0);
        assert_eq!(dice, 100.0 / 200.0);
    }

    #[test]
    fn seg_metrics_dimension_mismatch() {
        let a = BinaryMask::filled(3, 3, true);
        let b = BinaryMask::filled(3, 4, true);
        assert!(matches!(seg_metrics(&a, &b), Err(McdError::DimensionMismatch { .. })));
    }

    #[test]
    fn box_iou_cases() {
        let a = CandidateBox::from_corners(0, 0, 10, 10);
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&a, &CandidateBox::from_corners(10, 0, 20, 10)), 0.0);
        assert_eq!(box_iou(&a, &CandidateBox::from_corners(5, 0, 15, 10)), 1.0 / 3.0);
    }

    fn arb_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            let bits = || proptest::collection::vec(any::<bool>(), w * h);
            (bits(), bits()).prop_map(move |(a, b)| {
                (BinaryMask::new(w, h, a).unwrap(), BinaryMask::new(w, h, b).unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn dice_dominates_iou((a, b) in arb_pair()) {
            let (iou, dice) = seg_metrics(&a, &b).unwrap();
            prop_assert!(dice >= iou);
            let boundary = iou == 0.0 || iou == 1.0;
            prop_assert_eq!(dice == iou, boundary);
        }
    }
}

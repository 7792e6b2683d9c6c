//! Spatial attention patch classifier: tensors, layers with hand-written
//! backward passes, training with early stopping, and inference over
//! candidate boxes.

pub mod checkpoint;
pub mod data;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use data::{build_training_set, crop, LabeledImage, Patch, PatchLabel, PosNegRatio};
pub use network::{backward, forward, predict, Architecture, Mode, NetworkParams, CELL};
pub use tensor::Tensor;
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

use crate::boxes::CandidateBox;
use crate::error::Result;
use crate::image::GrayImage;

const CLASSIFY_CHUNK: usize = 256;

/// Cell probability for each box, in input order. A box is a cell iff its
/// probability exceeds 0.5.
pub fn classify(params: &NetworkParams, g: &GrayImage, boxes: &[CandidateBox]) -> Result<Vec<(CandidateBox, f64)>> {
    let arch = params.architecture();
    let mut out = Vec::with_capacity(boxes.len());
    for chunk in boxes.chunks(CLASSIFY_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * arch.patch_w * arch.patch_h);
        for b in chunk {
            data.extend(crop(g, b, arch.patch_w, arch.patch_h));
        }
        let x = Tensor::from_vec(&[chunk.len(), 1, arch.patch_h, arch.patch_w], data)?;
        let probs = predict(params, &x)?;
        out.extend(chunk.iter().enumerate().map(|(i, b)| (*b, probs.data()[i * 2 + CELL])));
    }
    Ok(out)
}

/// Probability above which a patch is called a cell.
pub const CELL_THRESHOLD: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_duplicate_boxes() {
        let p = NetworkParams::init(Architecture::default(), 1);
        let g = GrayImage::from_fn(30, 30, |x, y| (x * y % 256) as u8);
        assert!(classify(&p, &g, &[]).unwrap().is_empty());
        let b = CandidateBox::from_corners(5, 5, 15, 15);
        let r = classify(&p, &g, &[b, b]).unwrap();
        assert_eq!(r[0].1, r[1].1);
    }
}

//! Full detection: chamber mask → MiRP candidates → patch classification.

use std::collections::HashMap;

use crate::boxes::{CandidateBox, Detection};
use crate::error::Result;
use crate::image::{BinaryMask, GrayImage};
use crate::mirp::{propose, MirpConfig};
use crate::san::{classify, NetworkParams, CELL_THRESHOLD};

/// Candidates at `mirp_cfg.lambda` that the classifier calls cells, scored
/// by cell probability, in proposal order.
pub fn detect_mcd(g: &GrayImage, ac_mask: &BinaryMask, mirp_cfg: &MirpConfig, params: &NetworkParams) -> Result<Vec<Detection>> {
    let boxes = propose(g, ac_mask, mirp_cfg)?;
    Ok(classify(params, g, &boxes)?
        .into_iter()
        .filter(|&(_, p)| p > CELL_THRESHOLD)
        .map(|(bbox, score)| Detection { bbox, score })
        .collect())
}

/// Remembers the cell probability of every box already classified in one
/// image. Crops depend only on box position, so sweeping λ re-uses most
/// classifications.
#[derive(Default)]
pub struct ClassificationCache {
    probs: HashMap<(i64, i64, i64, i64), f64>,
}

impl ClassificationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Same result as [`detect_mcd`].
    pub fn detect(
        &mut self,
        g: &GrayImage,
        ac_mask: &BinaryMask,
        mirp_cfg: &MirpConfig,
        params: &NetworkParams,
    ) -> Result<Vec<Detection>> {
        let boxes = propose(g, ac_mask, mirp_cfg)?;
        let mut missing: Vec<CandidateBox> = boxes
            .iter()
            .filter(|b| !self.probs.contains_key(&b.corners()))
            .copied()
            .collect();
        missing.dedup_by_key(|b| b.corners());
        for (b, p) in classify(params, g, &missing)? {
            self.probs.insert(b.corners(), p);
        }
        Ok(boxes
            .into_iter()
            .filter_map(|bbox| {
                let score = self.probs[&bbox.corners()];
                (score > CELL_THRESHOLD).then_some(Detection { bbox, score })
            })
            .collect())
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::network::{Architecture, CELL};
use super::tensor::Tensor;
use crate::boxes::CandidateBox;
use crate::error::{McdError, Result};
use crate::eval::GroundTruthAnnotation;
use crate::image::{ensure_dims, BinaryMask, GrayImage};
use crate::mirp::{propose, MirpConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatchLabel {
    Background,
    Cell,
}

impl PatchLabel {
    pub fn class_index(self) -> usize {
        match self {
            PatchLabel::Background => 1 - CELL,
            PatchLabel::Cell => CELL,
        }
    }
}

/// A box crop with intensities scaled to `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub label: PatchLabel,
}

/// Crops `bbox` from `g` as a `w`×`h` patch. Pixels of the box that fall
/// outside the image read as zero.
pub fn crop(g: &GrayImage, bbox: &CandidateBox, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for py in 0..h {
        let y = bbox.y_tl + py as i64;
        if y < 0 || y >= g.height() as i64 || py as i64 >= bbox.height() {
            continue;
        }
        for px in 0..w {
            let x = bbox.x_tl + px as i64;
            if x < 0 || x >= g.width() as i64 || px as i64 >= bbox.width() {
                continue;
            }
            out[py * w + px] = g.get(x as usize, y as usize) as f64 / 255.0;
        }
    }
    out
}

/// Packs patches into a `[N, 1, h, w]` batch and their class indices.
pub fn to_batch(patches: &[&Patch], arch: Architecture) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::with_capacity(patches.len() * arch.patch_w * arch.patch_h);
    let mut labels = Vec::with_capacity(patches.len());
    for p in patches {
        if (p.width, p.height) != (arch.patch_w, arch.patch_h) {
            return Err(McdError::DimensionMismatch {
                expected: (arch.patch_w, arch.patch_h),
                actual: (p.width, p.height),
            });
        }
        data.extend_from_slice(&p.pixels);
        labels.push(p.label.class_index());
    }
    let t = Tensor::from_vec(&[patches.len(), 1, arch.patch_h, arch.patch_w], data)?;
    Ok((t, labels))
}

/// One annotated training image with its chamber mask.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub gray: GrayImage,
    pub ac_mask: BinaryMask,
    pub gt: GroundTruthAnnotation,
}

/// Sampling ratio of positives to negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PosNegRatio {
    pub pos: usize,
    pub neg: usize,
}

impl Default for PosNegRatio {
    fn default() -> Self {
        Self { pos: 1, neg: 5 }
    }
}

impl PosNegRatio {
    pub fn validate(&self) -> Result<()> {
        if self.pos < 1 || self.pos >= self.neg {
            return Err(McdError::InvalidArgument(format!(
                "sampling ratio must satisfy 1 <= pos < neg, got {}:{}",
                self.pos, self.neg
            )));
        }
        Ok(())
    }

    pub fn negatives_for(&self, positives: usize) -> usize {
        positives * self.neg / self.pos
    }
}

/// Random placements tried per missing negative before giving up.
const PLACEMENT_ATTEMPTS: usize = 200;

/// Positives are crops at every ground-truth box. Each image then gets
/// `ratio.neg / ratio.pos` negatives per positive: MiRP candidates that
/// contain no ground-truth point first, in shuffled order, then boxes at
/// random chamber pixels that do not overlap any ground-truth box.
pub fn build_training_set(
    images: &[LabeledImage],
    mirp_cfg: &MirpConfig,
    ratio: PosNegRatio,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Patch>> {
    mirp_cfg.validate()?;
    ratio.validate()?;
    let (w, h) = (mirp_cfg.box_w, mirp_cfg.box_h);
    let mut patches = Vec::new();
    for img in images {
        ensure_dims(img.gray.dims(), img.ac_mask.dims())?;
        let (width, height) = img.gray.dims();
        if let Some(b) = img.gt.boxes.iter().find(|b| !b.within(width, height)) {
            return Err(McdError::InvalidArgument(format!(
                "ground-truth box {:?} of {:?} lies outside the {width}x{height} image",
                b.corners(),
                img.gt.image_id
            )));
        }
        for b in &img.gt.boxes {
            patches.push(Patch {
                width: w,
                height: h,
                pixels: crop(&img.gray, b, w, h),
                label: PatchLabel::Cell,
            });
        }
        let wanted = ratio.negatives_for(img.gt.boxes.len());
        if wanted == 0 {
            continue;
        }
        let mut hard: Vec<CandidateBox> = propose(&img.gray, &img.ac_mask, mirp_cfg)?
            .into_iter()
            .filter(|b| !img.gt.points.iter().any(|&(x, y)| b.contains_point(x, y)))
            .collect();
        hard.shuffle(rng);
        hard.truncate(wanted);
        let mut negatives = hard;
        if negatives.len() < wanted {
            let ac: Vec<(usize, usize)> = (0..height)
                .flat_map(|y| (0..width).map(move |x| (x, y)))
                .filter(|&(x, y)| img.ac_mask.get(x, y))
                .collect();
            if ac.is_empty() {
                log::warn!("image {:?}: empty chamber mask, negatives skipped", img.gt.image_id);
            } else {
                let mut attempts = 0;
                while negatives.len() < wanted && attempts < PLACEMENT_ATTEMPTS * wanted {
                    attempts += 1;
                    let (x, y) = ac[rng.random_range(0..ac.len())];
                    let b = CandidateBox::centered((x as f64, y as f64), w, h, width, height);
                    if img.gt.boxes.iter().all(|g| g.intersection_area(&b) == 0) {
                        negatives.push(b);
                    }
                }
                if negatives.len() < wanted {
                    log::warn!(
                        "image {:?}: placed {} of {wanted} negatives",
                        img.gt.image_id,
                        negatives.len()
                    );
                }
            }
        }
        for b in &negatives {
            patches.push(Patch {
                width: w,
                height: h,
                pixels: crop(&img.gray, b, w, h),
                label: PatchLabel::Background,
            });
        }
    }
    Ok(patches)
}

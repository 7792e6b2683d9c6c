//! Annotated image collections on disk (`images/`, `annotations/`, and
//! optionally `masks_ac/`), as written by the synthetic generator.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{McdError, Result};
use crate::eval::annotations::read_records_any;
use crate::eval::GroundTruthAnnotation;
use crate::fof::{field_of_focus, I2acpConfig, Segmenter};
use crate::image::{ensure_dims, BinaryMask, GrayImage};
use crate::io::{file_stem, list_images, load_gray, load_mask};
use crate::san::LabeledImage;
use crate::synth::{AC_MASKS_DIR, ANNOTATIONS_DIR, IMAGES_DIR};

#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub id: String,
    pub gray: GrayImage,
    /// Chamber mask shipped with the corpus, if any.
    pub ac_mask: Option<BinaryMask>,
    pub gt: GroundTruthAnnotation,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub items: Vec<CorpusItem>,
}

/// Where chamber masks come from when turning a corpus into training or
/// evaluation images.
pub enum AcSource<'a> {
    /// The corpus' own `masks_ac/`; falls back to `fallback` when missing.
    Stored { fallback: Option<(&'a I2acpConfig, &'a dyn Segmenter)> },
    /// Always recompute with the field-of-focus stage.
    FieldOfFocus(&'a I2acpConfig, &'a dyn Segmenter),
}

impl Corpus {
    /// Loads every image under `images/` with its annotation record. An
    /// image without a record is an error; records without an image are
    /// ignored with a warning.
    pub fn load(root: &Path) -> Result<Self> {
        let image_dir = root.join(IMAGES_DIR);
        let paths = list_images(&image_dir)?;
        if paths.is_empty() {
            return Err(McdError::format("corpus", image_dir.display().to_string(), "no images"));
        }
        let records = read_records_any(&root.join(ANNOTATIONS_DIR))?;
        let mut by_id: HashMap<String, GroundTruthAnnotation> = HashMap::new();
        for r in records {
            let id = r.image_id.clone();
            if by_id.insert(id.clone(), r.to_ground_truth()).is_some() {
                return Err(McdError::format("corpus", root.display().to_string(), format!("duplicate annotation for {id:?}")));
            }
        }
        let mask_dir = root.join(AC_MASKS_DIR);
        let items = paths
            .par_iter()
            .map(|p| {
                let id = file_stem(p);
                let gray = load_gray(p)?;
                let gt = by_id.get(&id).cloned().ok_or_else(|| {
                    McdError::format("corpus", p.display().to_string(), format!("no annotation record for {id:?}"))
                })?;
                let mask_path = mask_dir.join(format!("{id}.png"));
                let ac_mask = if mask_path.is_file() {
                    let m = load_mask(&mask_path)?;
                    ensure_dims(gray.dims(), m.dims())?;
                    Some(m)
                } else {
                    None
                };
                Ok(CorpusItem { id, gray, ac_mask, gt })
            })
            .collect::<Result<Vec<_>>>()?;
        let known: std::collections::HashSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
        for id in by_id.keys().filter(|k| !known.contains(k.as_str())) {
            log::warn!("annotation for {id:?} has no image");
        }
        Ok(Self {
            root: root.to_path_buf(),
            items,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    /// Pairs each image with a chamber mask.
    pub fn labeled(&self, source: &AcSource<'_>) -> Result<Vec<LabeledImage>> {
        self.items.par_iter().map(|item| labeled_item(item, source)).collect()
    }
}

pub fn labeled_item(item: &CorpusItem, source: &AcSource<'_>) -> Result<LabeledImage> {
    let ac_mask = match (source, &item.ac_mask) {
        (AcSource::Stored { .. }, Some(m)) => m.clone(),
        (AcSource::Stored { fallback: Some((cfg, seg)) }, None) | (AcSource::FieldOfFocus(cfg, seg), _) => {
            field_of_focus(&item.gray, cfg, *seg, &item.id)?
        }
        (AcSource::Stored { fallback: None }, None) => {
            return Err(McdError::format(
                "corpus",
                item.id.clone(),
                "no chamber mask and no segmenter configured",
            ))
        }
    };
    Ok(LabeledImage {
        gray: item.gray.clone(),
        ac_mask,
        gt: item.gt.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fof::FloodFillSegmenter;
    use crate::synth::{generate, write_corpus, Span, SynthConfig};

    #[test]
    fn loads_written_corpus() {
        let cfg = SynthConfig {
            width: 200,
            height: 180,
            band_axes: (75.0, 55.0),
            band_axes_jitter: 4.0,
            band_thickness: Span::new(12.0, 14.0),
            center_jitter: 5.0,
            cell_count: Span::new(1, 3),
            ..SynthConfig::default()
        };
        let samples = generate(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &cfg, &samples).unwrap();
        let c = Corpus::load(dir.path()).unwrap();
        assert_eq!(c.ids(), vec!["synth_0000", "synth_0001", "synth_0002"]);
        for (item, s) in c.items.iter().zip(&samples) {
            assert_eq!(item.gray, s.image);
            assert_eq!(item.gt, s.cells_gt);
            assert_eq!(item.ac_mask.as_ref(), Some(&s.ac_mask_gt));
        }
        let fof = I2acpConfig::default();
        let seg = FloodFillSegmenter;
        let l = c.labeled(&AcSource::FieldOfFocus(&fof, &seg)).unwrap();
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn missing_images_dir_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = Corpus::load(dir.path()).unwrap_err();
        assert_eq!(e.class(), crate::error::ErrorClass::Data);
    }
}

use std::collections::HashMap;

use crate::boxes::Detection;
use crate::error::{McdError, Result};
use crate::eval::annotations::ImageRecord;
use crate::eval::matching::{match_detections, GroundTruthAnnotation, MatchCriterion};
use crate::kv::KeyValues;

/// Per-image counts for one criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub image_id: String,
    pub n_pred: usize,
    pub n_gt: usize,
    /// Same order as the criteria passed to the evaluation.
    pub counts: Vec<Counts>,
}

impl ImageResult {
    pub fn evaluate(image_id: &str, preds: &[Detection], gt: &GroundTruthAnnotation, criteria: &[MatchCriterion]) -> Self {
        let counts = criteria
            .iter()
            .map(|&c| {
                let m = match_detections(preds, gt, c);
                Counts {
                    tp: m.tp(),
                    fp: m.fp(),
                    fn_: m.fn_(),
                }
            })
            .collect();
        Self {
            image_id: image_id.to_string(),
            n_pred: preds.len(),
            n_gt: gt.len(),
            counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionMetrics {
    pub criterion: MatchCriterion,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mae_c: f64,
    /// Set when a precision/recall/F1 denominator was zero and the metric
    /// was reported as 0.
    pub zero_denominator: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentationSummary {
    pub images: usize,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub mae_all: f64,
    pub criteria: Vec<CriterionMetrics>,
    pub segmentation: Option<SegmentationSummary>,
    pub per_image: Vec<ImageResult>,
}

impl EvalReport {
    pub fn criterion(&self, c: MatchCriterion) -> Option<&CriterionMetrics> {
        self.criteria.iter().find(|m| m.criterion == c)
    }

    pub fn f1(&self, c: MatchCriterion) -> f64 {
        self.criterion(c).map_or(0.0, |m| m.f1)
    }
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Folds per-image results into corpus metrics. Precision, recall and F1
/// come from corpus-summed counts; MAE values are per-image means.
pub fn detection_metrics(results: &[ImageResult], criteria: &[MatchCriterion]) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(McdError::InvalidArgument("evaluation corpus is empty".into()));
    }
    let n = results.len() as f64;
    let mae_all = results
        .iter()
        .map(|r| (r.n_pred as f64 - r.n_gt as f64).abs())
        .sum::<f64>()
        / n;

    let mut metrics = Vec::with_capacity(criteria.len());
    for (ci, &criterion) in criteria.iter().enumerate() {
        let mut total = Counts::default();
        let mut mae_c = 0.0;
        for r in results {
            let c = r.counts[ci];
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_ += c.fn_;
            mae_c += (c.tp as f64 - r.n_gt as f64).abs();
        }
        let mut flag = false;
        let precision = ratio(total.tp, total.tp + total.fp, &mut flag);
        let recall = ratio(total.tp, total.tp + total.fn_, &mut flag);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            flag = true;
            0.0
        };
        metrics.push(CriterionMetrics {
            criterion,
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            precision,
            recall,
            f1,
            mae_c: mae_c / n,
            zero_denominator: flag,
        });
    }
    Ok(EvalReport {
        images: results.len(),
        mae_all,
        criteria: metrics,
        segmentation: None,
        per_image: results.to_vec(),
    })
}

/// Matches predictions against ground truth image by image. Images present
/// in the ground truth but absent from the predictions count as having no
/// predictions; prediction records for unknown images are ignored.
pub fn evaluate_records(preds: &[ImageRecord], gts: &[ImageRecord], criteria: &[MatchCriterion]) -> Result<EvalReport> {
    for c in criteria {
        c.validate()?;
    }
    let mut by_id: HashMap<&str, &ImageRecord> = HashMap::new();
    for p in preds {
        if by_id.insert(p.image_id.as_str(), p).is_some() {
            return Err(McdError::InvalidArgument(format!(
                "duplicate prediction record for {}",
                p.image_id
            )));
        }
    }
    let known: std::collections::HashSet<&str> = gts.iter().map(|g| g.image_id.as_str()).collect();
    for p in preds {
        if !known.contains(p.image_id.as_str()) {
            log::warn!("prediction for unknown image {} ignored", p.image_id);
        }
    }
    let results: Vec<ImageResult> = gts
        .iter()
        .map(|g| {
            let dets = by_id.get(g.image_id.as_str()).map(|p| p.to_detections()).unwrap_or_default();
            ImageResult::evaluate(&g.image_id, &dets, &g.to_ground_truth(), criteria)
        })
        .collect();
    detection_metrics(&results, criteria)
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl EvalReport {
    /// Machine-readable form. Keys are stable; values use full precision.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("images", self.images);
        kv.set("mae_all", self.mae_all);
        for m in &self.criteria {
            let k = m.criterion.key();
            kv.set(format!("{k}.tp"), m.tp);
            kv.set(format!("{k}.fp"), m.fp);
            kv.set(format!("{k}.fn"), m.fn_);
            kv.set(format!("{k}.precision"), m.precision);
            kv.set(format!("{k}.recall"), m.recall);
            kv.set(format!("{k}.f1"), m.f1);
            kv.set(format!("{k}.mae_c"), m.mae_c);
            kv.set(format!("{k}.zero_denominator"), m.zero_denominator);
        }
        if let Some(s) = &self.segmentation {
            kv.set("segmentation.images", s.images);
            kv.set("segmentation.iou", s.iou);
            kv.set("segmentation.dice", s.dice);
        }
        for r in &self.per_image {
            let id = &r.image_id;
            kv.set(format!("image.{id}.pred"), r.n_pred);
            kv.set(format!("image.{id}.gt"), r.n_gt);
            for (m, c) in self.criteria.iter().zip(&r.counts) {
                kv.set(
                    format!("image.{id}.{}", m.criterion.key()),
                    format!("{} {} {}", c.tp, c.fp, c.fn_),
                );
            }
        }
        kv
    }

    /// Human-readable table: one row per method, MAE columns followed by
    /// precision / recall / F1 (percent) for each criterion.
    pub fn to_table(&self, method: &str) -> String {
        format_detection_table(&[(method.to_string(), self)])
    }
}

pub fn format_detection_table(rows: &[(String, &EvalReport)]) -> String {
    let mut out = String::new();
    let Some((_, first)) = rows.first() else {
        return out;
    };
    let mut header = format!("{:<18} {:>8}", "Method", "MAE_all");
    for m in &first.criteria {
        header.push_str(&format!(" {:>9}", format!("MAE_{}", m.criterion.key())));
    }
    for m in &first.criteria {
        let k = m.criterion.key();
        header.push_str(&format!(" {:>8} {:>8} {:>8}", format!("P_{k}"), format!("R_{k}"), format!("F1_{k}")));
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for (name, r) in rows {
        let mut line = format!("{:<18} {:>8.3}", name, r.mae_all);
        for m in &r.criteria {
            line.push_str(&format!(" {:>9.3}", m.mae_c));
        }
        for m in &r.criteria {
            line.push_str(&format!(" {:>8} {:>8} {:>8}", pct(m.precision), pct(m.recall), pct(m.f1)));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn format_segmentation_table(rows: &[(String, SegmentationSummary)]) -> String {
    let mut out = format!("{:<18} {:>8} {:>8}\n", "Method", "IoU", "Dice");
    out.push_str(&"-".repeat(36));
    out.push('\n');
    for (name, s) in rows {
        out.push_str(&format!("{:<18} {:>8} {:>8}\n", name, pct(s.iou), pct(s.dice)));
    }
    out
}

//! Validation sweep of the threshold adjustment factor λ.

use rayon::prelude::*;

use crate::error::{McdError, Result};
use crate::eval::{detection_metrics, ImageResult, MatchCriterion};
use crate::kv::KeyValues;
use crate::mirp::MirpConfig;
use crate::pipeline::ClassificationCache;
use crate::san::{LabeledImage, NetworkParams};

/// Inclusive grid `lo, lo + step, …, hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            lo: 0.7,
            hi: 1.0,
            step: 0.01,
        }
    }
}

impl LambdaGrid {
    /// Grid values generated from the integer index and snapped to 1e-9, so
    /// `0.7 + 20·0.01` is exactly the double nearest 0.9.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(McdError::InvalidArgument(format!(
                "lambda grid needs 0 < lo <= hi and step > 0, got {self:?}"
            )));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|k| ((self.lo + k as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub f1_point: f64,
    pub precision_point: f64,
    pub recall_point: f64,
    pub mae_all: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    pub best_f1: f64,
    pub table: Vec<SweepRow>,
}

impl LambdaSearch {
    pub fn evaluations(&self) -> usize {
        self.table.len()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("best.lambda", format!("{:.2}", self.best_lambda));
        kv.set("best.point.f1", format!("{:.6}", self.best_f1));
        kv.set("evaluations", self.table.len().to_string());
        for r in &self.table {
            let l = format!("{:.2}", r.lambda);
            kv.set(format!("lambda.{l}.point.f1"), format!("{:.6}", r.f1_point));
            kv.set(format!("lambda.{l}.point.precision"), format!("{:.6}", r.precision_point));
            kv.set(format!("lambda.{l}.point.recall"), format!("{:.6}", r.recall_point));
            kv.set(format!("lambda.{l}.mae_all"), format!("{:.6}", r.mae_all));
        }
        kv
    }
}

/// Picks the λ whose full detection (MiRP + classifier) maximizes F1 under
/// the point criterion on `val`; ties go to the largest λ.
pub fn search_lambda(
    val: &[LabeledImage],
    params: &NetworkParams,
    mirp_cfg: &MirpConfig,
    grid: &LambdaGrid,
) -> Result<LambdaSearch> {
    if val.is_empty() {
        return Err(McdError::InvalidArgument("lambda search needs a nonempty validation set".into()));
    }
    let lambdas = grid.values()?;
    let criteria = [MatchCriterion::Point];
    // results[image][lambda]
    let per_image: Vec<Vec<ImageResult>> = val
        .par_iter()
        .map(|img| {
            let mut cache = ClassificationCache::new();
            lambdas
                .iter()
                .map(|&l| {
                    let dets = cache.detect(&img.gray, &img.ac_mask, &mirp_cfg.with_lambda(l), params)?;
                    Ok(ImageResult::evaluate(&img.gt.image_id, &dets, &img.gt, &criteria))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut table = Vec::with_capacity(lambdas.len());
    for (k, &lambda) in lambdas.iter().enumerate() {
        let results: Vec<ImageResult> = per_image.iter().map(|r| r[k].clone()).collect();
        let report = detection_metrics(&results, &criteria)?;
        let m = report.criterion(MatchCriterion::Point).expect("point criterion evaluated");
        table.push(SweepRow {
            lambda,
            f1_point: m.f1,
            precision_point: m.precision,
            recall_point: m.recall,
            mae_all: report.mae_all,
        });
    }
    let best = select_best(&table);
    Ok(LambdaSearch {
        best_lambda: table[best].lambda,
        best_f1: table[best].f1_point,
        table,
    })
}

/// Index of the maximal F1; the last one wins ties.
fn select_best(table: &[SweepRow]) -> usize {
    let mut best = 0;
    for (i, r) in table.iter().enumerate() {
        if r.f1_point >= table[best].f1_point {
            best = i;
        }
    }
    best
}

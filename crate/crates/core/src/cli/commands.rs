use std::ffi::OsString;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::settings::Settings;
use super::*;
use crate::boxes::CandidateBox;
use crate::corpus::{AcSource, Corpus};
use crate::error::{McdError, Result};
use crate::eval::annotations::{read_records, read_records_any, write_records};
use crate::eval::{evaluate_records, seg_metrics, ImageRecord, MatchCriterion, SegmentationSummary, SplitRatios};
use crate::experiment::{run_experiment, train_split, ExperimentConfig};
use crate::fof::{field_of_focus, ExternalMaskSegmenter, FloodFillSegmenter, I2acpConfig, Segmenter};
use crate::image::{ensure_dims, BinaryMask, GrayImage};
use crate::io::{file_stem, list_images, load_gray, load_mask, save_gray_png, save_mask_png};
use crate::kv::KeyValues;
use crate::mirp::{propose, MirpConfig};
use crate::pipeline::detect_mcd;
use crate::san::{checkpoint, LabeledImage, NetworkParams, PosNegRatio, TrainConfig};
use crate::synth::{generate, write_corpus, SynthConfig};
use crate::tuning::{search_lambda, LambdaGrid};

/// Gray levels of overlay outlines.
pub const OVERLAY_PRED: u8 = 255;
pub const OVERLAY_GT: u8 = 160;

pub(super) fn dispatch(cli: &Cli) -> Result<()> {
    let s = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => synth(&s, a),
        Command::Segment(a) => segment(&s, a),
        Command::Propose(a) => propose_cmd(&s, a),
        Command::Train(a) => train_cmd(&s, a),
        Command::Detect(a) => detect(&s, a),
        Command::Eval(a) => eval(&s, a),
        Command::SearchLambda(a) => search(&s, a),
        Command::Overlay(a) => overlay(&s, a),
        Command::Experiment(a) => experiment(&s, a),
    }
}

fn synth(s: &Settings, a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::from_kv(s.file())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(f) = a.dim_cell_fraction {
        cfg.dim_cell_fraction = f;
    }
    let count: usize = s.req(a.count, "count")?;
    let out: PathBuf = s.req(a.out.clone(), "out")?;
    let samples = generate(&cfg, count)?;
    write_corpus(&out, &cfg, &samples)?;
    log::info!("wrote {count} samples to {}", out.display());
    Ok(())
}

/// Every image under `dir`, in file-name order.
fn load_images(dir: &Path) -> Result<Vec<(String, GrayImage)>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(McdError::format("image directory", dir.display().to_string(), "no images"));
    }
    paths.par_iter().map(|p| Ok((file_stem(p), load_gray(p)?))).collect()
}

/// Chamber masks from `dir/<stem>.png`, or from the fallback segmenter.
fn chamber_masks(images: &[(String, GrayImage)], dir: Option<&Path>) -> Result<Vec<BinaryMask>> {
    let fof = I2acpConfig::default();
    images
        .par_iter()
        .map(|(id, g)| match dir {
            Some(d) => {
                let m = load_mask(&d.join(format!("{id}.png")))?;
                ensure_dims(g.dims(), m.dims())?;
                Ok(m)
            }
            None => field_of_focus(g, &fof, &FloodFillSegmenter, id),
        })
        .collect()
}

fn mirp_config(s: &Settings, a: &MirpArgs, base: MirpConfig) -> Result<MirpConfig> {
    let cfg = MirpConfig {
        s_min: s.or(a.s_min, "s_min", base.s_min)?,
        s_max: s.or(a.s_max, "s_max", base.s_max)?,
        box_w: s.or(a.box_w, "box_w", base.box_w)?,
        box_h: s.or(a.box_h, "box_h", base.box_h)?,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Candidate settings for a trained model: boxes default to its patch size
/// and must match it.
fn mirp_for_model(s: &Settings, a: &MirpArgs, params: &NetworkParams, lambda: f64) -> Result<MirpConfig> {
    let arch = params.architecture();
    let base = MirpConfig {
        lambda,
        box_w: arch.patch_w,
        box_h: arch.patch_h,
        ..MirpConfig::default()
    };
    let cfg = mirp_config(s, a, base)?;
    if (cfg.box_w, cfg.box_h) != (arch.patch_w, arch.patch_h) {
        return Err(McdError::InvalidArgument(format!(
            "box size {}x{} does not match the model's {}x{} patches",
            cfg.box_w, cfg.box_h, arch.patch_w, arch.patch_h
        )));
    }
    Ok(cfg)
}

fn segment(s: &Settings, a: &SegmentArgs) -> Result<()> {
    let images_dir: PathBuf = s.req(a.images.clone(), "images")?;
    let out: PathBuf = s.req(a.out.clone(), "out")?;
    let template: Option<String> = if a.fallback { None } else { s.opt(a.external_masks.clone(), "external_masks")? };
    let cfg = I2acpConfig {
        merge_ratio: s.or(a.merge_ratio, "merge_ratio", I2acpConfig::default().merge_ratio)?,
        ..I2acpConfig::default()
    };
    cfg.validate()?;
    let segmenter: Box<dyn Segmenter> = match template {
        Some(template) => Box::new(ExternalMaskSegmenter { template }),
        None => Box::new(FloodFillSegmenter),
    };
    let images = load_images(&images_dir)?;
    let masks: Vec<BinaryMask> = images
        .par_iter()
        .map(|(id, g)| field_of_focus(g, &cfg, segmenter.as_ref(), id))
        .collect::<Result<_>>()?;
    for ((id, _), m) in images.iter().zip(&masks) {
        save_mask_png(&out.join(format!("{id}.png")), m)?;
    }
    log::info!("segmented {} images into {}", images.len(), out.display());
    Ok(())
}

fn propose_cmd(s: &Settings, a: &ProposeArgs) -> Result<()> {
    let images_dir: PathBuf = s.req(a.images.clone(), "images")?;
    let out: PathBuf = s.req(a.out.clone(), "out")?;
    let ac_dir: Option<PathBuf> = s.opt(a.ac_masks.clone(), "ac_masks")?;
    let lambda = s.or(a.lambda, "lambda", MirpConfig::default().lambda)?;
    let cfg = mirp_config(s, &a.mirp, MirpConfig::default().with_lambda(lambda))?;
    let images = load_images(&images_dir)?;
    let masks = chamber_masks(&images, ac_dir.as_deref())?;
    let records: Vec<ImageRecord> = images
        .par_iter()
        .zip(&masks)
        .map(|((id, g), m)| {
            let boxes: Vec<CandidateBox> = propose(g, m, &cfg)?;
            Ok(ImageRecord {
                image_id: id.clone(),
                points: boxes.iter().map(|b| b.center()).collect(),
                boxes,
                scores: None,
            })
        })
        .collect::<Result<_>>()?;
    write_records(&out, &records)
}

fn sidecar(model: &Path, ext: &str) -> PathBuf {
    let mut p = OsString::from(model.as_os_str());
    p.push(".");
    p.push(ext);
    PathBuf::from(p)
}

fn corpus_images(dir: &Path) -> Result<Vec<LabeledImage>> {
    let corpus = Corpus::load(dir)?;
    let fof = I2acpConfig::default();
    let seg = FloodFillSegmenter;
    corpus.labeled(&AcSource::Stored {
        fallback: Some((&fof, &seg)),
    })
}

fn train_cmd(s: &Settings, a: &TrainArgs) -> Result<()> {
    let corpus: PathBuf = s.req(a.corpus.clone(), "corpus")?;
    let out: PathBuf = s.req(a.out.clone(), "out")?;
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        patience: s.or(a.patience, "patience", defaults.patience)?,
        max_epochs: s.or(a.max_epochs, "max_epochs", defaults.max_epochs)?,
        batch_size: s.or(a.batch_size, "batch_size", defaults.batch_size)?,
        learning_rate: s.or(a.learning_rate, "learning_rate", defaults.learning_rate)?,
        ratio: PosNegRatio {
            pos: 1,
            neg: s.or(a.negatives, "negatives", defaults.ratio.neg)?,
        },
        ..defaults
    };
    train.validate()?;
    let cfg = ExperimentConfig {
        ratios: s.or(a.split, "split", SplitRatios::default())?,
        seed: s.or(a.seed, "seed", 0)?,
        mirp: mirp_config(s, &a.mirp, MirpConfig::default())?,
        train,
        ..ExperimentConfig::default()
    };
    let repetition = s.or(a.repetition, "repetition", 0)?;
    let images = corpus_images(&corpus)?;
    let trained = train_split(&images, &cfg, repetition)?;
    checkpoint::save(&trained.params, &out)?;

    let mut split = KeyValues::new();
    split.set("split", cfg.ratios);
    split.set("seed", cfg.seed);
    split.set("repetition", repetition);
    split.set("epochs", trained.log.len());
    split.set("best_epoch", trained.best_epoch);
    split.set("train", trained.train_ids.join(" "));
    split.set("val", trained.val_ids.join(" "));
    split.set("test", trained.test_ids.join(" "));
    split.save(&sidecar(&out, "split"))?;
    let log_text: String = std::iter::once("epoch,train_loss,val_loss\n".to_string())
        .chain(trained.log.iter().map(|r| format!("{r}\n")))
        .collect();
    let log_path = sidecar(&out, "log");
    std::fs::write(&log_path, log_text).map_err(|e| McdError::io(&log_path, e))?;
    log::info!(
        "trained {} epochs (best {}), model at {}",
        trained.log.len(),
        trained.best_epoch,
        out.display()
    );
    Ok(())
}

fn detect(s: &Settings, a: &DetectArgs) -> Result<()> {
    let images_dir: PathBuf = s.req(a.images.clone(), "images")?;
    let model: PathBuf = s.req(a.model.clone(), "model")?;
    let out: PathBuf = s.req(a.out.clone(), "out")?;
    let ac_dir: Option<PathBuf> = s.opt(a.ac_masks.clone(), "ac_masks")?;
    let lambda: f64 = s.req(a.lambda, "lambda")?;
    let images = load_images(&images_dir)?;
    let params = checkpoint::load(&model)?;
    let cfg = mirp_for_model(s, &a.mirp, &params, lambda)?;
    let masks = chamber_masks(&images, ac_dir.as_deref())?;
    let records: Vec<ImageRecord> = images
        .par_iter()
        .zip(&masks)
        .map(|((id, g), m)| Ok(ImageRecord::from_detections(id.clone(), &detect_mcd(g, m, &cfg, &params)?)))
        .collect::<Result<_>>()?;
    write_records(&out, &records)
}

fn parse_criteria(list: &str) -> Result<Vec<MatchCriterion>> {
    list.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<MatchCriterion>().map_err(McdError::InvalidArgument))
        .collect()
}

fn segmentation_summary(pred_dir: &Path, gt_dir: &Path) -> Result<SegmentationSummary> {
    let gts = list_images(gt_dir)?;
    if gts.is_empty() {
        return Err(McdError::format("mask directory", gt_dir.display().to_string(), "no masks"));
    }
    let scores: Vec<(f64, f64)> = gts
        .par_iter()
        .map(|p| {
            let gt = load_mask(p)?;
            let pred = load_mask(&pred_dir.join(format!("{}.png", file_stem(p))))?;
            seg_metrics(&pred, &gt)
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok(SegmentationSummary {
        images: scores.len(),
        iou: scores.iter().map(|s| s.0).sum::<f64>() / n,
        dice: scores.iter().map(|s| s.1).sum::<f64>() / n,
    })
}

fn eval(s: &Settings, a: &EvalArgs) -> Result<()> {
    let pred: Option<PathBuf> = s.opt(a.pred.clone(), "pred")?;
    let gt: Option<PathBuf> = s.opt(a.gt.clone(), "gt")?;
    let pred_masks: Option<PathBuf> = s.opt(a.pred_masks.clone(), "pred_masks")?;
    let gt_masks: Option<PathBuf> = s.opt(a.gt_masks.clone(), "gt_masks")?;
    let report_path: Option<PathBuf> = s.opt(a.report.clone(), "report")?;
    let criteria = parse_criteria(&s.or(a.criteria.clone(), "criteria", "point,iou10,iou30".to_string())?)?;
    if criteria.is_empty() {
        return Err(McdError::InvalidArgument("--criteria lists no criterion".into()));
    }

    let mut kv = KeyValues::new();
    let mut printed = false;
    match (pred, gt) {
        (Some(p), Some(g)) => {
            let report = evaluate_records(&read_records_any(&p)?, &read_records_any(&g)?, &criteria)?;
            print!("{}", report.to_table("predictions"));
            for (k, v) in report.to_kv().iter() {
                kv.set(k, v);
            }
            printed = true;
        }
        (None, None) => {}
        _ => return Err(McdError::InvalidArgument("--pred and --gt go together".into())),
    }
    match (pred_masks, gt_masks) {
        (Some(p), Some(g)) => {
            let seg = segmentation_summary(&p, &g)?;
            println!(
                "segmentation: {} images, IoU {:.4}, Dice {:.4}",
                seg.images, seg.iou, seg.dice
            );
            kv.set("segmentation.images", seg.images);
            kv.set("segmentation.iou", seg.iou);
            kv.set("segmentation.dice", seg.dice);
            printed = true;
        }
        (None, None) => {}
        _ => return Err(McdError::InvalidArgument("--pred-masks and --gt-masks go together".into())),
    }
    if !printed {
        return Err(McdError::InvalidArgument(
            "nothing to evaluate: give --pred/--gt and/or --pred-masks/--gt-masks".into(),
        ));
    }
    if let Some(r) = report_path {
        kv.save(&r)?;
    }
    Ok(())
}

fn search(s: &Settings, a: &SearchLambdaArgs) -> Result<()> {
    let corpus: PathBuf = s.req(a.corpus.clone(), "corpus")?;
    let model: PathBuf = s.req(a.model.clone(), "model")?;
    let report: PathBuf = s.req(a.report.clone(), "report")?;
    let params = checkpoint::load(&model)?;
    let defaults = LambdaGrid::default();
    let grid = LambdaGrid {
        lo: s.or(a.lambda_lo, "lambda_lo", defaults.lo)?,
        hi: s.or(a.lambda_hi, "lambda_hi", defaults.hi)?,
        step: s.or(a.lambda_step, "lambda_step", defaults.step)?,
    };
    let cfg = mirp_for_model(s, &a.mirp, &params, 1.0)?;
    let mut images = corpus_images(&corpus)?;
    if !s.flag(a.all_images, "all_images")? {
        let split_path = s.or(a.split_file.clone(), "split_file", sidecar(&model, "split"))?;
        if split_path.is_file() {
            let split = KeyValues::load(&split_path)?;
            let val: Vec<&str> = split.get("val").unwrap_or("").split_whitespace().collect();
            images.retain(|i| val.contains(&i.gt.image_id.as_str()));
            if images.is_empty() {
                return Err(McdError::format(
                    "split file",
                    split_path.display().to_string(),
                    "no validation image of this corpus",
                ));
            }
        } else {
            log::warn!("{} not found; sweeping on every corpus image", split_path.display());
        }
    }
    let result = search_lambda(&images, &params, &cfg, &grid)?;
    println!(
        "best lambda {:.2} (point F1 {:.4}) over {} images",
        result.best_lambda,
        result.best_f1,
        images.len()
    );
    result.to_kv().save(&report)
}

/// Outline of `b` clipped to the image.
fn draw_box(g: &mut GrayImage, b: &CandidateBox, level: u8) {
    let (w, h) = g.dims();
    let (x0, y0) = (b.x_tl.max(0), b.y_tl.max(0));
    let (x1, y1) = (b.x_br.min(w as i64) - 1, b.y_br.min(h as i64) - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for x in x0..=x1 {
        for y in [b.y_tl, b.y_br - 1] {
            if (y0..=y1).contains(&y) {
                g.set(x as usize, y as usize, level);
            }
        }
    }
    for y in y0..=y1 {
        for x in [b.x_tl, b.x_br - 1] {
            if (x0..=x1).contains(&x) {
                g.set(x as usize, y as usize, level);
            }
        }
    }
}

fn record_for(records: Vec<ImageRecord>, id: &str, origin: &Path) -> Option<ImageRecord> {
    let found = records.into_iter().find(|r| r.image_id == id);
    if found.is_none() {
        log::warn!("{} has no record for {id}", origin.display());
    }
    found
}

fn overlay(s: &Settings, a: &OverlayArgs) -> Result<()> {
    let image: PathBuf = s.req(a.image.clone(), "image")?;
    let out: PathBuf = s.req(a.out.clone(), "out")?;
    let pred: Option<PathBuf> = s.opt(a.pred.clone(), "pred")?;
    let gt: Option<PathBuf> = s.opt(a.gt.clone(), "gt")?;
    let id = file_stem(&image);
    let mut g = load_gray(&image)?;
    if let Some(p) = gt {
        if let Some(r) = record_for(read_records_any(&p)?, &id, &p) {
            for b in &r.to_ground_truth().boxes {
                draw_box(&mut g, b, OVERLAY_GT);
            }
        }
    }
    if let Some(p) = pred {
        if let Some(r) = record_for(read_records(&p)?, &id, &p) {
            for b in &r.boxes {
                draw_box(&mut g, b, OVERLAY_PRED);
            }
        }
    }
    save_gray_png(&out, &g)
}

fn experiment(s: &Settings, a: &ExperimentArgs) -> Result<()> {
    let corpus: PathBuf = s.req(a.corpus.clone(), "corpus")?;
    let report: Option<PathBuf> = s.opt(a.report.clone(), "report")?;
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        ratios: s.or(a.split, "split", defaults.ratios)?,
        repetitions: s.or(a.repetitions, "repetitions", defaults.repetitions)?,
        seed: s.or(a.seed, "seed", defaults.seed)?,
        train: TrainConfig {
            max_epochs: s.or(a.max_epochs, "max_epochs", defaults.train.max_epochs)?,
            ..defaults.train.clone()
        },
        ..defaults
    };
    if cfg.repetitions == 0 {
        return Err(McdError::InvalidArgument("--repetitions must be at least 1".into()));
    }
    let images = corpus_images(&corpus)?;
    let result = run_experiment(&images, &cfg)?;
    print!("{}", result.to_table());
    if let Some(r) = report {
        result.to_kv().save(&r)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_outline_is_clipped() {
        let mut g = GrayImage::filled(8, 8, 0);
        draw_box(&mut g, &CandidateBox::from_corners(-2, 1, 4, 5), 9);
        let lit: Vec<(usize, usize)> = (0..8)
            .flat_map(|y| (0..8).map(move |x| (x, y)))
            .filter(|&(x, y)| g.get(x, y) == 9)
            .collect();
        assert!(lit.contains(&(0, 1)) && lit.contains(&(3, 1)) && lit.contains(&(3, 4)) && lit.contains(&(0, 4)));
        assert!(!lit.contains(&(0, 2)), "left edge lies outside the image");
        assert!(lit.contains(&(3, 2)));
        assert_eq!(lit.len(), 4 + 4 + 2);
    }

    #[test]
    fn criteria_lists() {
        assert_eq!(parse_criteria("point,iou30").unwrap(), vec![MatchCriterion::Point, MatchCriterion::IOU30]);
        assert!(parse_criteria("point,bogus").is_err());
    }

    #[test]
    fn sidecar_appends_extension() {
        assert_eq!(sidecar(Path::new("out/m.mcdw"), "log"), PathBuf::from("out/m.mcdw.log"));
    }
}

//! Repeated-split comparison of the full detector against the threshold
//! baselines: train on one share, tune λ on the next, test on the rest.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{detect_threshold, BaselineConfig, ThresholdMethod};
use crate::error::Result;
use crate::eval::{detection_metrics, split_corpus, EvalReport, ImageResult, MatchCriterion, SplitRatios};
use crate::kv::KeyValues;
use crate::mirp::MirpConfig;
use crate::pipeline::detect_mcd;
use crate::san::{build_training_set, train, Architecture, LabeledImage, NetworkParams, TrainConfig};
use crate::tuning::{search_lambda, LambdaGrid, LambdaSearch};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub ratios: SplitRatios,
    pub repetitions: usize,
    pub seed: u64,
    pub mirp: MirpConfig,
    pub train: TrainConfig,
    pub grid: LambdaGrid,
    /// Baseline component-size floors to evaluate.
    pub baseline_s_min: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default(),
            repetitions: 5,
            seed: 0,
            mirp: MirpConfig::default(),
            train: TrainConfig::default(),
            grid: LambdaGrid::default(),
            baseline_s_min: (1..=5).collect(),
        }
    }
}

/// Everything `train` produces for one split, before testing.
pub struct TrainedSplit {
    pub params: NetworkParams,
    pub log: Vec<crate::san::EpochRecord>,
    pub best_epoch: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Sampling and training seeds for repetition `r`.
fn split_seeds(seed: u64, repetition: usize) -> (u64, u64) {
    let base = seed.wrapping_mul(1_000_003).wrapping_add(repetition as u64);
    (base.wrapping_mul(2), base.wrapping_mul(2) + 1)
}

/// Splits `images`, builds patch sets for the train and validation shares,
/// and trains the classifier.
pub fn train_split(images: &[LabeledImage], cfg: &ExperimentConfig, repetition: usize) -> Result<TrainedSplit> {
    let idx: Vec<usize> = (0..images.len()).collect();
    let split = split_corpus(&idx, cfg.ratios, cfg.seed, repetition as u64)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
    let names = |ids: &[usize]| ids.iter().map(|&i| images[i].gt.image_id.clone()).collect::<Vec<_>>();
    let (sample_seed, train_seed) = split_seeds(cfg.seed, repetition);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let train_patches = build_training_set(&pick(&split.train), &cfg.mirp, cfg.train.ratio, &mut rng)?;
    let val_patches = build_training_set(&pick(&split.val), &cfg.mirp, cfg.train.ratio, &mut rng)?;
    log::info!(
        "repetition {repetition}: {} training and {} validation patches",
        train_patches.len(),
        val_patches.len()
    );
    let arch = Architecture::new(cfg.mirp.box_w, cfg.mirp.box_h)?;
    let tcfg = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let out = train(&train_patches, &val_patches, arch, &tcfg)?;
    Ok(TrainedSplit {
        params: out.params,
        log: out.log,
        best_epoch: out.best_epoch,
        train_ids: names(&split.train),
        val_ids: names(&split.val),
        test_ids: names(&split.test),
    })
}

pub struct SplitResult {
    pub repetition: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub search: LambdaSearch,
    pub params: NetworkParams,
    pub mcd: EvalReport,
    /// `(method, s_min, report)`.
    pub baselines: Vec<(ThresholdMethod, usize, EvalReport)>,
}

/// Averages of per-split metrics for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub label: String,
    pub mae_all: f64,
    /// `(criterion, precision, recall, f1, mae_c)`, in `MatchCriterion::all` order.
    pub criteria: Vec<(MatchCriterion, f64, f64, f64, f64)>,
}

impl MethodSummary {
    fn from_reports(label: String, reports: &[&EvalReport]) -> Self {
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        let criteria = MatchCriterion::all()
            .iter()
            .map(|&c| {
                let get = |r: &EvalReport| r.criterion(c).cloned().expect("criterion evaluated");
                (
                    c,
                    mean(&|r| get(r).precision),
                    mean(&|r| get(r).recall),
                    mean(&|r| get(r).f1),
                    mean(&|r| get(r).mae_c),
                )
            })
            .collect();
        Self {
            label,
            mae_all: mean(&|r| r.mae_all),
            criteria,
        }
    }

    pub fn metric(&self, c: MatchCriterion) -> (f64, f64, f64, f64) {
        self.criteria
            .iter()
            .find(|e| e.0 == c)
            .map(|e| (e.1, e.2, e.3, e.4))
            .expect("criterion summarized")
    }

    pub fn f1(&self, c: MatchCriterion) -> f64 {
        self.metric(c).2
    }
}

pub struct ExperimentResult {
    pub splits: Vec<SplitResult>,
    pub mcd: MethodSummary,
    pub baselines: Vec<(ThresholdMethod, usize, MethodSummary)>,
}

impl ExperimentResult {
    pub fn baseline(&self, method: ThresholdMethod, s_min: usize) -> Option<&MethodSummary> {
        self.baselines
            .iter()
            .find(|(m, s, _)| *m == method && *s == s_min)
            .map(|(_, _, r)| r)
    }

    /// Table with one row per method: MAE^all, then P/R/F1/MAE^c for each
    /// criterion, all averaged over the splits.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>8}", "method", "MAE_all"));
        for c in MatchCriterion::all() {
            let k = c.key();
            out.push_str(&format!(
                " {:>9} {:>9} {:>9} {:>9}",
                format!("P_{k}"),
                format!("R_{k}"),
                format!("F1_{k}"),
                format!("MAEc_{k}")
            ));
        }
        out.push('\n');
        for m in std::iter::once(&self.mcd).chain(self.baselines.iter().map(|b| &b.2)) {
            out.push_str(&format!("{:<14} {:>8.3}", m.label, m.mae_all));
            for &(_, p, r, f, mae) in &m.criteria {
                out.push_str(&format!(" {:>9.2} {:>9.2} {:>9.2} {:>9.3}", p * 100.0, r * 100.0, f * 100.0, mae));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("splits", self.splits.len());
        for s in &self.splits {
            kv.set(format!("split.{}.lambda", s.repetition), format!("{:.2}", s.search.best_lambda));
            kv.set(format!("split.{}.epochs", s.repetition), s.epochs);
            kv.set(format!("split.{}.best_epoch", s.repetition), s.best_epoch);
        }
        for m in std::iter::once(&self.mcd).chain(self.baselines.iter().map(|b| &b.2)) {
            let key = m.label.to_lowercase().replace(['(', ')'], "");
            kv.set(format!("{key}.mae_all"), format!("{:.6}", m.mae_all));
            for &(c, p, r, f, mae) in &m.criteria {
                let k = c.key();
                kv.set(format!("{key}.{k}.precision"), format!("{p:.6}"));
                kv.set(format!("{key}.{k}.recall"), format!("{r:.6}"));
                kv.set(format!("{key}.{k}.f1"), format!("{f:.6}"));
                kv.set(format!("{key}.{k}.mae_c"), format!("{mae:.6}"));
            }
        }
        kv
    }
}

fn evaluate_on<F>(images: &[&LabeledImage], detect: F) -> Result<EvalReport>
where
    F: Fn(&LabeledImage) -> Result<Vec<crate::boxes::Detection>> + Sync,
{
    let criteria = MatchCriterion::all();
    let results = images
        .par_iter()
        .map(|img| Ok(ImageResult::evaluate(&img.gt.image_id, &detect(img)?, &img.gt, &criteria)))
        .collect::<Result<Vec<_>>>()?;
    detection_metrics(&results, &criteria)
}

/// Runs every repetition and averages the per-split test metrics.
pub fn run_experiment(images: &[LabeledImage], cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut splits = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let trained = train_split(images, cfg, rep)?;
        let by_id = |ids: &[String]| -> Vec<&LabeledImage> {
            ids.iter()
                .map(|id| images.iter().find(|i| &i.gt.image_id == id).expect("split of these images"))
                .collect()
        };
        let val: Vec<LabeledImage> = by_id(&trained.val_ids).into_iter().cloned().collect();
        let search = search_lambda(&val, &trained.params, &cfg.mirp, &cfg.grid)?;
        log::info!(
            "repetition {rep}: {} epochs (best {}), lambda {:.2}, validation F1 {:.4}",
            trained.log.len(),
            trained.best_epoch,
            search.best_lambda,
            search.best_f1
        );
        let test = by_id(&trained.test_ids);
        let mirp = cfg.mirp.with_lambda(search.best_lambda);
        let mcd = evaluate_on(&test, |img| detect_mcd(&img.gray, &img.ac_mask, &mirp, &trained.params))?;
        let mut baselines = Vec::new();
        for method in [ThresholdMethod::Isodata, ThresholdMethod::Otsu] {
            for &s_min in &cfg.baseline_s_min {
                let bcfg = BaselineConfig {
                    s_max: cfg.mirp.s_max,
                    box_w: cfg.mirp.box_w,
                    box_h: cfg.mirp.box_h,
                    connectivity: cfg.mirp.connectivity,
                    ..BaselineConfig::new(method, s_min)
                };
                let report = evaluate_on(&test, |img| detect_threshold(&img.gray, &img.ac_mask, &bcfg))?;
                baselines.push((method, s_min, report));
            }
        }
        splits.push(SplitResult {
            repetition: rep,
            epochs: trained.log.len(),
            best_epoch: trained.best_epoch,
            search,
            params: trained.params,
            mcd,
            baselines,
        });
    }
    let mcd_reports: Vec<&EvalReport> = splits.iter().map(|s| &s.mcd).collect();
    let mcd = MethodSummary::from_reports("MCD".into(), &mcd_reports);
    let mut baselines = Vec::new();
    for method in [ThresholdMethod::Isodata, ThresholdMethod::Otsu] {
        for &s_min in &cfg.baseline_s_min {
            let reports: Vec<&EvalReport> = splits
                .iter()
                .map(|s| {
                    s.baselines
                        .iter()
                        .find(|b| b.0 == method && b.1 == s_min)
                        .map(|b| &b.2)
                        .expect("baseline evaluated")
                })
                .collect();
            let label = BaselineConfig::new(method, s_min).label();
            baselines.push((method, s_min, MethodSummary::from_reports(label, &reports)));
        }
    }
    Ok(ExperimentResult { splits, mcd, baselines })
}

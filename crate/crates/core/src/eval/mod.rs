//! Segmentation and detection metrics, greedy matching, annotation files
//! and corpus splitting.

pub mod annotations;
pub mod matching;
pub mod metrics;
pub mod report;
pub mod split;

pub use annotations::ImageRecord;
pub use matching::{match_detections, GroundTruthAnnotation, MatchCriterion, Matching};
pub use metrics::{box_iou, seg_metrics};
pub use report::{detection_metrics, evaluate_records, CriterionMetrics, EvalReport, ImageResult, SegmentationSummary};
pub use split::{split_corpus, CorpusSplit, SplitRatios};

//! Line-oriented annotation / detection files.
//!
//! ```text
//! # mcd annotations v1
//! image_id,points,boxes,scores
//! eye_0001,412 300;99.5 71,407 295 417 305;95 66 105 76,0.98;0.61
//! eye_0002,,,
//! ```
//!
//! One record per image. Fields are comma-separated in fixed order; list
//! entries are separated by `;` and coordinates by spaces. Boxes are
//! `x_tl y_tl x_br y_br` (half-open). `scores` may be empty, meaning every
//! box scores 1. Lines starting with `#` are comments. The header line is
//! required.

use std::path::{Path, PathBuf};

use crate::boxes::{CandidateBox, Detection};
use crate::error::{McdError, Result};
use crate::eval::matching::GroundTruthAnnotation;

pub const HEADER: &str = "image_id,points,boxes,scores";
const BANNER: &str = "# mcd annotations v1";
/// Extension used for per-image annotation files inside a directory.
pub const EXTENSION: &str = "csv";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub points: Vec<(f64, f64)>,
    pub boxes: Vec<CandidateBox>,
    pub scores: Option<Vec<f64>>,
}

impl ImageRecord {
    pub fn from_ground_truth(gt: &GroundTruthAnnotation) -> Self {
        Self {
            image_id: gt.image_id.clone(),
            points: gt.points.clone(),
            boxes: gt.boxes.clone(),
            scores: None,
        }
    }

    /// Points are written as box centers.
    pub fn from_detections(image_id: impl Into<String>, dets: &[Detection]) -> Self {
        Self {
            image_id: image_id.into(),
            points: dets.iter().map(|d| d.bbox.center()).collect(),
            boxes: dets.iter().map(|d| d.bbox).collect(),
            scores: Some(dets.iter().map(|d| d.score).collect()),
        }
    }

    pub fn to_detections(&self) -> Vec<Detection> {
        self.boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Detection {
                bbox: *b,
                score: self.scores.as_ref().map_or(1.0, |s| s[i]),
            })
            .collect()
    }

    /// Ground-truth view. Box `i` is taken to be the box of point `i`; when
    /// the record carries points only, 10×10 boxes are centered on them
    /// without clamping.
    pub fn to_ground_truth(&self) -> GroundTruthAnnotation {
        let boxes = if self.boxes.len() == self.points.len() {
            self.boxes
                .iter()
                .zip(&self.points)
                .map(|(b, &p)| CandidateBox { source_centroid: p, ..*b })
                .collect()
        } else {
            self.points
                .iter()
                .map(|&p| CandidateBox::centered(p, 10, 10, usize::MAX / 4, usize::MAX / 4))
                .collect()
        };
        GroundTruthAnnotation {
            image_id: self.image_id.clone(),
            points: self.points.clone(),
            boxes,
        }
    }

    fn to_line(&self) -> String {
        let points = self
            .points
            .iter()
            .map(|(x, y)| format!("{x} {y}"))
            .collect::<Vec<_>>()
            .join(";");
        let boxes = self
            .boxes
            .iter()
            .map(|b| format!("{} {} {} {}", b.x_tl, b.y_tl, b.x_br, b.y_br))
            .collect::<Vec<_>>()
            .join(";");
        let scores = self
            .scores
            .as_ref()
            .map(|s| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        format!("{},{points},{boxes},{scores}", self.image_id)
    }
}

fn parse_list<'a>(field: &'a str) -> impl Iterator<Item = &'a str> {
    field.split(';').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_record(line: &str, location: &str) -> Result<ImageRecord> {
    let bad = |detail: String| McdError::format("annotation record", location, detail);
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 4 {
        return Err(bad(format!("expected 4 comma-separated fields, found {}", fields.len())));
    }
    let image_id = fields[0].trim().to_string();
    if image_id.is_empty() {
        return Err(bad("empty image id".into()));
    }

    let mut points = Vec::new();
    for item in parse_list(fields[1]) {
        let v: Vec<f64> = item
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("point {item:?}: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != 2 || !v.iter().all(|c| c.is_finite()) {
            return Err(bad(format!("point {item:?} must be two finite numbers")));
        }
        points.push((v[0], v[1]));
    }

    let mut boxes = Vec::new();
    for item in parse_list(fields[2]) {
        let v: Vec<i64> = item
            .split_whitespace()
            .map(|t| t.parse::<i64>().map_err(|e| bad(format!("box {item:?}: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(bad(format!("box {item:?} must have four integers")));
        }
        if v[0] >= v[2] || v[1] >= v[3] {
            return Err(bad(format!("box {item:?} is empty")));
        }
        boxes.push(CandidateBox::from_corners(v[0], v[1], v[2], v[3]));
    }

    let scores = if fields[3].trim().is_empty() {
        None
    } else {
        let s: Vec<f64> = parse_list(fields[3])
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("score {t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if s.len() != boxes.len() {
            return Err(bad(format!("{} scores for {} boxes", s.len(), boxes.len())));
        }
        Some(s)
    };

    Ok(ImageRecord {
        image_id,
        points,
        boxes,
        scores,
    })
}

pub fn parse_records(text: &str, origin: &str) -> Result<Vec<ImageRecord>> {
    let mut header_seen = false;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let location = format!("{origin}:{}", n + 1);
        if !header_seen {
            if line != HEADER {
                return Err(McdError::format(
                    "annotation file",
                    location,
                    format!("expected header {HEADER:?}"),
                ));
            }
            header_seen = true;
            continue;
        }
        out.push(parse_record(line, &location)?);
    }
    if !header_seen {
        return Err(McdError::format("annotation file", origin, "missing header line"));
    }
    Ok(out)
}

pub fn format_records(records: &[ImageRecord]) -> String {
    let mut s = String::new();
    s.push_str(BANNER);
    s.push('\n');
    s.push_str(HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

pub fn write_records(path: &Path, records: &[ImageRecord]) -> Result<()> {
    crate::io::ensure_parent(path)?;
    std::fs::write(path, format_records(records)).map_err(|e| McdError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<ImageRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| McdError::io(path, e))?;
    parse_records(&text, &path.display().to_string())
}

/// Reads a single file, or every `*.csv` file in a directory (sorted by name).
pub fn read_records_any(path: &Path) -> Result<Vec<ImageRecord>> {
    if !path.is_dir() {
        return read_records(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| McdError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(EXTENSION))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_records(&f)?);
    }
    Ok(out)
}

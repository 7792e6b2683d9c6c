//! Axis-aligned pixel boxes shared by proposals, detections and ground truth.

use crate::image::round_half_away;

/// Half-open pixel box: covers columns `x_tl..x_br` and rows `y_tl..y_br`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateBox {
    pub x_tl: i64,
    pub y_tl: i64,
    pub x_br: i64,
    pub y_br: i64,
    /// Centroid of the component (or click point) the box was built from.
    pub source_centroid: (f64, f64),
}

impl CandidateBox {
    pub fn from_corners(x_tl: i64, y_tl: i64, x_br: i64, y_br: i64) -> Self {
        Self {
            x_tl,
            y_tl,
            x_br,
            y_br,
            source_centroid: ((x_tl + x_br) as f64 / 2.0, (y_tl + y_br) as f64 / 2.0),
        }
    }

    /// A `w`×`h` box centered on `center`, translated (not truncated) so that
    /// it lies inside a `width`×`height` image. If the image is smaller than
    /// the box along an axis the box is cut to the image extent.
    pub fn centered(center: (f64, f64), w: usize, h: usize, width: usize, height: usize) -> Self {
        let (x_tl, x_br) = place_axis(center.0, w, width);
        let (y_tl, y_br) = place_axis(center.1, h, height);
        Self {
            x_tl,
            y_tl,
            x_br,
            y_br,
            source_centroid: center,
        }
    }

    #[inline]
    pub fn width(&self) -> i64 {
        self.x_br - self.x_tl
    }

    #[inline]
    pub fn height(&self) -> i64 {
        self.y_br - self.y_tl
    }

    #[inline]
    pub fn area(&self) -> i64 {
        self.width().max(0) * self.height().max(0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_tl + self.x_br) as f64 / 2.0,
            (self.y_tl + self.y_br) as f64 / 2.0,
        )
    }

    /// Point containment including the boundary.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_tl as f64 && x <= self.x_br as f64 && y >= self.y_tl as f64 && y <= self.y_br as f64
    }

    pub fn intersection_area(&self, other: &CandidateBox) -> i64 {
        let w = self.x_br.min(other.x_br) - self.x_tl.max(other.x_tl);
        let h = self.y_br.min(other.y_br) - self.y_tl.max(other.y_tl);
        w.max(0) * h.max(0)
    }

    pub fn corners(&self) -> (i64, i64, i64, i64) {
        (self.x_tl, self.y_tl, self.x_br, self.y_br)
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x_tl >= 0 && self.y_tl >= 0 && self.x_br <= width as i64 && self.y_br <= height as i64
    }
}

fn place_axis(center: f64, size: usize, extent: usize) -> (i64, i64) {
    let size = size as i64;
    let extent = extent as i64;
    if size >= extent {
        return (0, extent);
    }
    let lo = round_half_away(center - size as f64 / 2.0).clamp(0, extent - size);
    (lo, lo + size)
}

/// A scored box. Scores order predictions during matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: CandidateBox,
    pub score: f64,
}

//! Synthetic AS-OCT-like images with complete ground truth.
//!
//! Each image shows a bright elliptical band (the anterior segment) around a
//! dark elliptical chamber. Cells are small Gaussian spots inside the
//! chamber whose peak sits relative to the Otsu threshold of the rendered
//! image. Speckles and short horizontal streaks with similar intensities are
//! scattered inside and outside the chamber, away from every cell.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::boxes::CandidateBox;
use crate::components::{connected_components, Connectivity};
use crate::error::{McdError, Result};
use crate::eval::annotations::{write_records, EXTENSION};
use crate::eval::{GroundTruthAnnotation, ImageRecord};
use crate::image::{histogram, BinaryMask, GrayImage};
use crate::io::{save_gray_png, save_mask_png};
use crate::kv::KeyValues;
use crate::mirp::otsu_threshold;

/// Closed interval `[lo, hi]` used for every randomized quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy + PartialOrd + std::fmt::Display> Span<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.lo > self.hi {
            return Err(McdError::InvalidArgument(format!("{what}: {} > {}", self.lo, self.hi)));
        }
        Ok(())
    }
}

impl<T: std::fmt::Display> std::fmt::Display for Span<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

impl<T: std::str::FromStr> std::str::FromStr for Span<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got {s:?}"))?;
        let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad number {v:?}"));
        Ok(Self { lo: p(a)?, hi: p(b)? })
    }
}

fn draw_f(rng: &mut ChaCha8Rng, s: Span<f64>) -> f64 {
    if s.lo == s.hi {
        s.lo
    } else {
        rng.random_range(s.lo..=s.hi)
    }
}

fn draw_u(rng: &mut ChaCha8Rng, s: Span<usize>) -> usize {
    rng.random_range(s.lo..=s.hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub cell_count: Span<usize>,
    /// Cell peak intensity as a multiple of the Otsu threshold.
    pub cell_peak: Span<f64>,
    /// Gaussian spread of a cell, in pixels.
    pub cell_sigma: Span<f64>,
    /// Share of cells whose peak lies just below the Otsu threshold, so only
    /// λ < 1 reveals them.
    pub dim_cell_fraction: f64,
    pub dim_cell_peak: Span<f64>,
    /// Minimum distance between cell centers.
    pub cell_spacing: f64,
    pub speckles_inside: Span<usize>,
    pub streaks_inside: Span<usize>,
    pub speckles_outside: Span<usize>,
    pub streaks_outside: Span<usize>,
    pub speckle_area: Span<usize>,
    pub streak_length: Span<usize>,
    /// Noise intensity as a multiple of the Otsu threshold.
    pub noise_peak: Span<f64>,
    pub background: f64,
    pub chamber_level: f64,
    pub pixel_noise_sd: f64,
    pub band_edge: f64,
    pub band_peak: f64,
    /// Outer semi-axes of the band ellipse.
    pub band_axes: (f64, f64),
    pub band_axes_jitter: f64,
    pub band_thickness: Span<f64>,
    pub center_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 800,
            height: 730,
            cell_count: Span::new(2, 10),
            cell_peak: Span::new(1.05, 1.7),
            cell_sigma: Span::new(0.8, 2.2),
            dim_cell_fraction: 0.0,
            dim_cell_peak: Span::new(0.93, 0.98),
            cell_spacing: 14.0,
            speckles_inside: Span::new(8, 20),
            streaks_inside: Span::new(2, 6),
            speckles_outside: Span::new(10, 25),
            streaks_outside: Span::new(3, 8),
            speckle_area: Span::new(1, 4),
            streak_length: Span::new(3, 14),
            noise_peak: Span::new(0.7, 1.8),
            background: 20.0,
            chamber_level: 12.0,
            pixel_noise_sd: 4.0,
            band_edge: 55.0,
            band_peak: 185.0,
            band_axes: (300.0, 210.0),
            band_axes_jitter: 15.0,
            band_thickness: Span::new(32.0, 40.0),
            center_jitter: 20.0,
            seed: 0,
        }
    }
}

/// Attempts at drawing a consistent sample before giving up.
const SAMPLE_ATTEMPTS: usize = 20;
/// Position draws per cell or noise blob.
const PLACEMENT_ATTEMPTS: usize = 2000;
/// Distance a cell center keeps from the chamber boundary, in pixels.
const CELL_MARGIN: f64 = 10.0;
/// Cell box size used for noise suppression and ground-truth boxes.
const CELL_BOX: usize = 10;
/// Parameter draws per cell before the sample is declared infeasible.
const CELL_ATTEMPTS: usize = 200;
/// Extra pixels around a cell box that a spot may touch.
const SPOT_REACH: i64 = 10;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(McdError::InvalidArgument(m));
        if self.width < 64 || self.height < 64 {
            return bad(format!("image must be at least 64x64, got {}x{}", self.width, self.height));
        }
        self.cell_count.check("cell_count")?;
        self.cell_peak.check("cell_peak")?;
        self.cell_sigma.check("cell_sigma")?;
        self.dim_cell_peak.check("dim_cell_peak")?;
        self.speckles_inside.check("speckles_inside")?;
        self.streaks_inside.check("streaks_inside")?;
        self.speckles_outside.check("speckles_outside")?;
        self.streaks_outside.check("streaks_outside")?;
        self.speckle_area.check("speckle_area")?;
        self.streak_length.check("streak_length")?;
        self.noise_peak.check("noise_peak")?;
        self.band_thickness.check("band_thickness")?;
        if self.cell_peak.lo <= 1.0 {
            return bad(format!("cell peaks must exceed the threshold, got {}", self.cell_peak));
        }
        if !(0.0..=1.0).contains(&self.dim_cell_fraction) {
            return bad(format!("dim_cell_fraction must be in [0, 1], got {}", self.dim_cell_fraction));
        }
        if self.dim_cell_peak.lo <= 0.9 || self.dim_cell_peak.hi >= 1.0 {
            return bad(format!("dim cell peaks must lie in (0.9, 1), got {}", self.dim_cell_peak));
        }
        if self.cell_sigma.lo <= 0.0 || self.speckle_area.lo < 1 || self.streak_length.lo < 1 {
            return bad("cell sigma and noise sizes must be positive".into());
        }
        let (a, b) = self.band_axes;
        let margin = self.band_axes_jitter + self.center_jitter + 2.0;
        if a + margin > self.width as f64 / 2.0 || b + margin > self.height as f64 / 2.0 {
            return bad(format!("band axes {a}x{b} do not fit a {}x{} image", self.width, self.height));
        }
        if self.band_thickness.hi + 2.0 * CELL_MARGIN >= b.min(a) - self.band_axes_jitter {
            return bad("band too thick for its axes".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv.set("cell_count", self.cell_count);
        kv.set("cell_peak", self.cell_peak);
        kv.set("cell_sigma", self.cell_sigma);
        kv.set("dim_cell_fraction", self.dim_cell_fraction);
        kv.set("dim_cell_peak", self.dim_cell_peak);
        kv.set("cell_spacing", self.cell_spacing);
        kv.set("speckles_inside", self.speckles_inside);
        kv.set("streaks_inside", self.streaks_inside);
        kv.set("speckles_outside", self.speckles_outside);
        kv.set("streaks_outside", self.streaks_outside);
        kv.set("speckle_area", self.speckle_area);
        kv.set("streak_length", self.streak_length);
        kv.set("noise_peak", self.noise_peak);
        kv.set("background", self.background);
        kv.set("chamber_level", self.chamber_level);
        kv.set("pixel_noise_sd", self.pixel_noise_sd);
        kv.set("band_edge", self.band_edge);
        kv.set("band_peak", self.band_peak);
        kv.set("band_axes", Span::new(self.band_axes.0, self.band_axes.1));
        kv.set("band_axes_jitter", self.band_axes_jitter);
        kv.set("band_thickness", self.band_thickness);
        kv.set("center_jitter", self.center_jitter);
        kv.set("seed", self.seed);
        kv
    }

    /// Defaults overridden by whichever keys `kv` has; keys this config
    /// does not know are ignored.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! field {
            ($key:literal, $slot:expr) => {
                if let Some(v) = kv.parsed($key)? {
                    $slot = v;
                }
            };
        }
        field!("width", c.width);
        field!("height", c.height);
        field!("cell_count", c.cell_count);
        field!("cell_peak", c.cell_peak);
        field!("cell_sigma", c.cell_sigma);
        field!("dim_cell_fraction", c.dim_cell_fraction);
        field!("dim_cell_peak", c.dim_cell_peak);
        field!("cell_spacing", c.cell_spacing);
        field!("speckles_inside", c.speckles_inside);
        field!("streaks_inside", c.streaks_inside);
        field!("speckles_outside", c.speckles_outside);
        field!("streaks_outside", c.streaks_outside);
        field!("speckle_area", c.speckle_area);
        field!("streak_length", c.streak_length);
        field!("noise_peak", c.noise_peak);
        field!("background", c.background);
        field!("chamber_level", c.chamber_level);
        field!("pixel_noise_sd", c.pixel_noise_sd);
        field!("band_edge", c.band_edge);
        field!("band_peak", c.band_peak);
        if let Some(s) = kv.parsed::<Span<f64>>("band_axes")? {
            c.band_axes = (s.lo, s.hi);
        }
        field!("band_axes_jitter", c.band_axes_jitter);
        field!("band_thickness", c.band_thickness);
        field!("center_jitter", c.center_jitter);
        field!("seed", c.seed);
        c.validate()?;
        Ok(c)
    }
}

/// A planted cell: its click point and spot parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedCell {
    pub center: (f64, f64),
    pub peak: f64,
    pub sigma: f64,
    pub dim: bool,
    /// Pixels of the cell's component at the threshold it is meant to pass
    /// (the Otsu threshold, or 0.9 of it for dim cells).
    pub area: usize,
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub id: String,
    pub image: GrayImage,
    pub ac_mask_gt: BinaryMask,
    pub segment_mask_gt: BinaryMask,
    pub cells_gt: GroundTruthAnnotation,
    pub cells: Vec<PlantedCell>,
    /// Centers of the planted noise blobs.
    pub noise_points: Vec<(f64, f64)>,
    /// Otsu threshold of the final image.
    pub otsu: u8,
}

pub fn sample_id(index: usize) -> String {
    format!("synth_{index:04}")
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

impl Ellipse {
    /// Normalized radius; 1 on the boundary.
    fn rho(&self, x: f64, y: f64) -> f64 {
        (((x - self.cx) / self.a).powi(2) + ((y - self.cy) / self.b).powi(2)).sqrt()
    }

    fn shrunk(&self, d: f64) -> Ellipse {
        Ellipse {
            a: self.a - d,
            b: self.b - d,
            ..*self
        }
    }
}

struct Geometry {
    outer: Ellipse,
    inner: Ellipse,
    /// Angular phase of the band brightness modulation.
    phase: f64,
}

struct Blob {
    pixels: Vec<(usize, usize)>,
    level: f64,
}

/// Generates `n` samples; sample `i` draws from stream `i` of the seed, so
/// any subset can be regenerated independently.
pub fn generate(cfg: &SynthConfig, n: usize) -> Result<Vec<SynthSample>> {
    if n == 0 {
        return Err(McdError::InvalidArgument("sample count must be at least 1".into()));
    }
    cfg.validate()?;
    (0..n).into_par_iter().map(|i| generate_one(cfg, i)).collect()
}

pub fn generate_one(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut last_err = None;
    for _ in 0..SAMPLE_ATTEMPTS {
        match try_sample(cfg, index, &mut rng) {
            Ok(s) => return Ok(s),
            Err(e @ McdError::Infeasible(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    Err(McdError::Infeasible(format!(
        "sample {index}: no consistent rendering after {SAMPLE_ATTEMPTS} attempts ({})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn try_sample(cfg: &SynthConfig, index: usize, rng: &mut ChaCha8Rng) -> Result<SynthSample> {
    let (w, h) = (cfg.width, cfg.height);
    let geo = draw_geometry(cfg, rng);
    let pixel_noise = Normal::new(0.0, cfg.pixel_noise_sd.max(1e-9)).unwrap();
    let mut field = Field {
        width: w,
        height: h,
        values: vec![0.0f64; w * h],
    };
    let mut ac = vec![false; w * h];
    let mut band = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let ro = geo.outer.rho(fx, fy);
            let ri = geo.inner.rho(fx, fy);
            let base = if ri <= 1.0 {
                ac[y * w + x] = true;
                cfg.chamber_level
            } else if ro <= 1.0 {
                band[y * w + x] = true;
                // Fraction of the way across the band along the ray from the center.
                let t = ((ri - 1.0) / (ri / ro - 1.0)).clamp(0.0, 1.0);
                let theta = (fy - geo.outer.cy).atan2(fx - geo.outer.cx);
                let peak = cfg.band_peak + 20.0 * (2.0 * theta + geo.phase).cos();
                cfg.band_edge + (peak - cfg.band_edge) * (std::f64::consts::PI * t).sin()
            } else {
                cfg.background
            };
            field[y * w + x] = base + pixel_noise.sample(rng);
        }
    }
    let ac_mask = BinaryMask::new(w, h, ac)?;
    let segment_mask = BinaryMask::new(w, h, band)?;

    let n_cells = draw_u(rng, cfg.cell_count);
    let centers = place_cells(cfg, &geo, n_cells, rng)?;
    let cell_boxes: Vec<CandidateBox> = centers
        .iter()
        .map(|&c| CandidateBox::centered(c, CELL_BOX, CELL_BOX, w, h))
        .collect();

    let mut noise = Vec::new();
    let chamber_zone = geo.inner.shrunk(3.0);
    let outside_zone = |x: f64, y: f64| geo.inner.rho(x, y) > 1.05;
    for (count, streak, inside) in [
        (cfg.speckles_inside, false, true),
        (cfg.streaks_inside, true, true),
        (cfg.speckles_outside, false, false),
        (cfg.streaks_outside, true, false),
    ] {
        for _ in 0..draw_u(rng, count) {
            let shape = if streak {
                streak_shape(rng, cfg.streak_length)
            } else {
                speckle_shape(rng, cfg.speckle_area)
            };
            let placed = place_blob(w, h, &shape, rng, |x, y| {
                let ok_zone = if inside {
                    chamber_zone.rho(x as f64, y as f64) <= 1.0
                } else {
                    outside_zone(x as f64, y as f64)
                };
                ok_zone && !cell_boxes.iter().any(|b| b.contains_point(x as f64, y as f64))
            });
            if let Some(pixels) = placed {
                noise.push(Blob { pixels, level: 0.0 });
            }
        }
    }

    // Noise and cell levels are relative to the threshold of the image
    // without them; the final threshold is re-checked below.
    let base_img = quantize(&field, w, h);
    let t0 = otsu_threshold(&histogram(&base_img)) as f64;
    let mut noise_points = Vec::with_capacity(noise.len());
    for blob in &mut noise {
        blob.level = draw_f(rng, cfg.noise_peak) * t0;
        let n = blob.pixels.len() as f64;
        let (sx, sy) = blob
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        noise_points.push((sx / n, sy / n));
        for &(x, y) in &blob.pixels {
            let jitter = rng.random_range(-0.05..0.05) * blob.level;
            field[y * w + x] = blob.level + jitter;
        }
    }
    let mut cells = Vec::with_capacity(centers.len());
    for (&center, bx) in centers.iter().zip(&cell_boxes) {
        let dim = cfg.dim_cell_fraction > 0.0 && rng.random::<f64>() < cfg.dim_cell_fraction;
        let mut planted = None;
        for _ in 0..CELL_ATTEMPTS {
            let peak = draw_f(rng, if dim { cfg.dim_cell_peak } else { cfg.cell_peak }) * t0;
            let sigma = draw_f(rng, cfg.cell_sigma);
            let saved = field.clone_region(bx, SPOT_REACH);
            render_spot(&mut field, w, h, center, peak, sigma);
            let read = |x: usize, y: usize| field[y * w + x].round().clamp(0.0, 255.0);
            if let Some(area) = cell_area(dim, bx, t0, read) {
                planted = Some(PlantedCell {
                    center,
                    peak,
                    sigma,
                    dim,
                    area,
                });
                break;
            }
            field.restore_region(saved);
        }
        cells.push(planted.ok_or_else(|| {
            McdError::Infeasible(format!(
                "no cell parameters within the configured ranges render a 1 to 25 pixel component at {center:?}"
            ))
        })?);
    }

    let image = quantize(&field, w, h);
    let otsu = otsu_threshold(&histogram(&image));
    for (cell, bx) in cells.iter_mut().zip(&cell_boxes) {
        let area = cell_area(cell.dim, bx, otsu as f64, |x, y| image.get(x, y) as f64).ok_or_else(|| {
            McdError::InvalidArgument(format!("cell at {:?} changed shape at the final threshold {otsu}", cell.center))
        })?;
        cell.area = area;
    }
    let id = sample_id(index);
    let cells_gt = GroundTruthAnnotation::from_points(id.clone(), centers, CELL_BOX, CELL_BOX, w, h);
    Ok(SynthSample {
        id,
        image,
        ac_mask_gt: ac_mask,
        segment_mask_gt: segment_mask,
        cells_gt,
        cells,
        noise_points,
        otsu,
    })
}

fn draw_geometry(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Geometry {
    let j = |rng: &mut ChaCha8Rng, s: f64| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
    let cx = cfg.width as f64 / 2.0 + j(rng, cfg.center_jitter);
    let cy = cfg.height as f64 / 2.0 + j(rng, cfg.center_jitter);
    let a = cfg.band_axes.0 + j(rng, cfg.band_axes_jitter);
    let b = cfg.band_axes.1 + j(rng, cfg.band_axes_jitter);
    let thickness = draw_f(rng, cfg.band_thickness);
    let outer = Ellipse { cx, cy, a, b };
    Geometry {
        outer,
        inner: outer.shrunk(thickness),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    }
}

fn place_cells(cfg: &SynthConfig, geo: &Geometry, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64)>> {
    let zone = geo.inner.shrunk(CELL_MARGIN);
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(n);
    for k in 0..n {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = rng.random_range(zone.cx - zone.a..zone.cx + zone.a);
            let y = rng.random_range(zone.cy - zone.b..zone.cy + zone.b);
            if zone.rho(x, y) > 1.0 {
                continue;
            }
            if centers
                .iter()
                .all(|&(px, py)| (px - x).hypot(py - y) >= cfg.cell_spacing)
            {
                centers.push((x, y));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(McdError::Infeasible(format!(
                "could only place {k} of {n} cells {} px apart in the chamber",
                cfg.cell_spacing
            )));
        }
    }
    Ok(centers)
}

/// Random 8-connected cluster of `area` pixels, relative to its origin.
fn speckle_shape(rng: &mut ChaCha8Rng, area: Span<usize>) -> Vec<(i64, i64)> {
    let target = draw_u(rng, area);
    let mut pts = vec![(0i64, 0i64)];
    while pts.len() < target {
        let (bx, by) = pts[rng.random_range(0..pts.len())];
        let next = (bx + rng.random_range(-1..=1), by + rng.random_range(-1..=1));
        if !pts.contains(&next) {
            pts.push(next);
        }
    }
    pts
}

fn streak_shape(rng: &mut ChaCha8Rng, length: Span<usize>) -> Vec<(i64, i64)> {
    let len = draw_u(rng, length) as i64;
    let rows = rng.random_range(1..=2);
    (0..rows).flat_map(|r| (0..len).map(move |c| (c, r))).collect()
}

fn place_blob(
    w: usize,
    h: usize,
    shape: &[(i64, i64)],
    rng: &mut ChaCha8Rng,
    allowed: impl Fn(usize, usize) -> bool,
) -> Option<Vec<(usize, usize)>> {
    for _ in 0..PLACEMENT_ATTEMPTS {
        let ox = rng.random_range(0..w as i64);
        let oy = rng.random_range(0..h as i64);
        let pixels: Option<Vec<(usize, usize)>> = shape
            .iter()
            .map(|&(dx, dy)| {
                let (x, y) = (ox + dx, oy + dy);
                (x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && allowed(x as usize, y as usize))
                    .then_some((x as usize, y as usize))
            })
            .collect();
        if pixels.is_some() {
            return pixels;
        }
    }
    None
}

/// Blends a Gaussian spot over the existing field: the local value moves
/// towards `peak` by the spot's weight.
fn render_spot(field: &mut Field, w: usize, h: usize, center: (f64, f64), peak: f64, sigma: f64) {
    let reach = (4.0 * sigma).ceil() as i64;
    let (cx, cy) = center;
    for y in (cy.floor() as i64 - reach)..=(cy.floor() as i64 + reach + 1) {
        for x in (cx.floor() as i64 - reach)..=(cx.floor() as i64 + reach + 1) {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let g = (-d2 / (2.0 * sigma * sigma)).exp();
            let v = &mut field[y as usize * w + x as usize];
            *v = *v * (1.0 - g) + peak * g;
        }
    }
}

fn quantize(field: &Field, w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, field.values.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect())
        .expect("field matches image size")
}

/// Area of the cell inside its box if it forms exactly one component of
/// 1 to 25 pixels at the threshold it should pass (`t`, or `0.9·t` for dim
/// cells), stays below `t` when dim, and stays within 25 pixels at `0.9·t`.
fn cell_area(dim: bool, bx: &CandidateBox, t: f64, read: impl Fn(usize, usize) -> f64) -> Option<usize> {
    let (area_t, n_t) = spot_component(bx, t, &read);
    let (area_low, n_low) = spot_component(bx, 0.9 * t, &read);
    let ok = if dim {
        n_t == 0 && n_low == 1 && (1..=25).contains(&area_low)
    } else {
        n_t == 1 && (1..=25).contains(&area_t) && n_low == 1 && area_low <= 25
    };
    ok.then_some(if dim { area_low } else { area_t })
}

/// Size of the largest component strictly above `threshold` inside `bx`,
/// and the number of components there.
fn spot_component(bx: &CandidateBox, threshold: f64, read: &impl Fn(usize, usize) -> f64) -> (usize, usize) {
    let (bw, bh) = (bx.width() as usize, bx.height() as usize);
    let m = BinaryMask::from_fn(bw, bh, |x, y| read(bx.x_tl as usize + x, bx.y_tl as usize + y) > threshold);
    let cc = connected_components(&m, Connectivity::Eight);
    (cc.areas.iter().copied().max().unwrap_or(0), cc.count)
}

/// Rendering canvas: a real-valued image kept row-major.
struct Field {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl std::ops::IndexMut<usize> for Field {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

struct Region {
    x0: usize,
    y0: usize,
    w: usize,
    values: Vec<f64>,
}

impl Field {
    fn clone_region(&self, bx: &CandidateBox, margin: i64) -> Region {
        let x0 = (bx.x_tl - margin).max(0) as usize;
        let y0 = (bx.y_tl - margin).max(0) as usize;
        let x1 = ((bx.x_br + margin) as usize).min(self.width);
        let y1 = ((bx.y_br + margin) as usize).min(self.height);
        let mut values = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x1]);
        }
        Region {
            x0,
            y0,
            w: x1 - x0,
            values,
        }
    }

    fn restore_region(&mut self, r: Region) {
        for (row, chunk) in r.values.chunks(r.w).enumerate() {
            let start = (r.y0 + row) * self.width + r.x0;
            self.values[start..start + r.w].copy_from_slice(chunk);
        }
    }
}

pub const IMAGES_DIR: &str = "images";
pub const AC_MASKS_DIR: &str = "masks_ac";
pub const SEGMENT_MASKS_DIR: &str = "masks_segment";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const MANIFEST: &str = "manifest.txt";

/// Writes `images/<id>.png`, `masks_ac/<id>.png`, `masks_segment/<id>.png`,
/// `annotations/<id>.csv` and a manifest listing the ids and the config.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig, samples: &[SynthSample]) -> Result<()> {
    let sub = |name: &str, id: &str, ext: &str| -> PathBuf { dir.join(name).join(format!("{id}.{ext}")) };
    samples.par_iter().try_for_each(|s| -> Result<()> {
        save_gray_png(&sub(IMAGES_DIR, &s.id, "png"), &s.image)?;
        save_mask_png(&sub(AC_MASKS_DIR, &s.id, "png"), &s.ac_mask_gt)?;
        save_mask_png(&sub(SEGMENT_MASKS_DIR, &s.id, "png"), &s.segment_mask_gt)?;
        write_records(
            &sub(ANNOTATIONS_DIR, &s.id, EXTENSION),
            &[ImageRecord::from_ground_truth(&s.cells_gt)],
        )
    })?;
    let mut manifest = KeyValues::new();
    manifest.set("count", samples.len());
    manifest.set(
        "ids",
        samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(","),
    );
    for (k, v) in cfg.to_kv().iter() {
        manifest.set(format!("config.{k}"), v);
    }
    manifest.save(&dir.join(MANIFEST))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 200,
            height: 180,
            band_axes: (75.0, 55.0),
            band_axes_jitter: 4.0,
            band_thickness: Span::new(12.0, 14.0),
            center_jitter: 5.0,
            cell_count: Span::new(1, 4),
            speckles_inside: Span::new(2, 4),
            streaks_inside: Span::new(1, 2),
            speckles_outside: Span::new(2, 4),
            streaks_outside: Span::new(1, 2),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_cells_give_empty_annotation() {
        let cfg = SynthConfig {
            cell_count: Span::new(0, 0),
            ..small()
        };
        let s = generate(&cfg, 1).unwrap();
        assert!(s[0].cells_gt.is_empty());
    }

    #[test]
    fn deterministic_and_index_addressable() {
        let a = generate(&small(), 3).unwrap();
        let b = generate(&small(), 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.cells_gt, y.cells_gt);
        }
        assert_eq!(generate_one(&small(), 2).unwrap().image, a[2].image);
    }

    #[test]
    fn cells_respect_size_and_chamber() {
        for s in generate(&small(), 6).unwrap() {
            for (c, p) in s.cells.iter().zip(&s.cells_gt.points) {
                assert!((1..=25).contains(&c.area));
                assert!(c.peak > s.otsu as f64 * 0.9);
                assert!(s.ac_mask_gt.contains_point(p.0, p.1));
            }
        }
    }

    #[test]
    fn crowded_chamber_is_infeasible() {
        let cfg = SynthConfig {
            cell_count: Span::new(400, 400),
            ..small()
        };
        assert!(matches!(generate(&cfg, 1), Err(McdError::Infeasible(_))));
    }

    #[test]
    fn kv_round_trip() {
        let cfg = SynthConfig {
            seed: 42,
            dim_cell_fraction: 0.25,
            ..small()
        };
        assert_eq!(SynthConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn span_parsing() {
        assert_eq!("2,10".parse::<Span<usize>>().unwrap(), Span::new(2, 10));
        assert!("2".parse::<Span<usize>>().is_err());
    }
}

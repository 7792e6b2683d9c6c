//! Connected-component labeling (two-pass, union-find) with per-component
//! area, centroid and bounding rectangle.

use crate::image::BinaryMask;

/// Pixel adjacency used when growing components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl std::str::FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "4" | "four" => Ok(Connectivity::Four),
            "8" | "eight" => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other:?}")),
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

#[derive(Clone, Debug)]
pub struct ComponentLabeling {
    pub width: usize,
    pub height: usize,
    /// Row-major labels, 0 = background, components are 1..=count.
    pub labels: Vec<u32>,
    pub count: usize,
    /// Indexed by `label - 1`.
    pub areas: Vec<usize>,
    pub centroids: Vec<(f64, f64)>,
    pub bounds: Vec<PixelRect>,
}

impl ComponentLabeling {
    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Mask of the pixels carrying `label`.
    pub fn component_mask(&self, label: u32) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == label).collect(),
        )
        .expect("labeling dimensions are consistent")
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // Keep the smaller provisional label as root.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels maximal connected sets of `true` pixels. Final labels follow
/// raster-scan discovery order: the component containing the first set pixel
/// in row-major order is 1, and so on.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let (w, h) = mask.dims();
    let bits = mask.bits();
    let mut provisional = vec![0u32; w * h];
    // provisional label 0 is reserved for background
    let mut sets = DisjointSet { parent: vec![0] };

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[i - 1]);
            }
            if y > 0 {
                push(provisional[i - w]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(provisional[i - w - 1]);
                    }
                    if x + 1 < w {
                        push(provisional[i - w + 1]);
                    }
                }
            }
            if n == 0 {
                provisional[i] = sets.make();
            } else {
                let first = neighbours[0];
                provisional[i] = first;
                for &other in &neighbours[1..n] {
                    sets.union(first, other);
                }
            }
        }
    }

    // Resolve roots and renumber in order of first appearance.
    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut count = 0u32;
    let mut areas = Vec::new();
    let mut sums: Vec<(u64, u64)> = Vec::new();
    let mut bounds: Vec<PixelRect> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let p = provisional[i];
            if p == 0 {
                continue;
            }
            let root = sets.find(p);
            let mut label = final_of_root[root as usize];
            if label == 0 {
                count += 1;
                label = count;
                final_of_root[root as usize] = label;
                areas.push(0);
                sums.push((0, 0));
                bounds.push(PixelRect {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                });
            }
            labels[i] = label;
            let k = (label - 1) as usize;
            areas[k] += 1;
            sums[k].0 += x as u64;
            sums[k].1 += y as u64;
            let b = &mut bounds[k];
            b.x_min = b.x_min.min(x);
            b.x_max = b.x_max.max(x);
            b.y_max = b.y_max.max(y);
        }
    }

    let centroids = sums
        .iter()
        .zip(&areas)
        .map(|(&(sx, sy), &a)| (sx as f64 / a as f64, sy as f64 / a as f64))
        .collect();

    ComponentLabeling {
        width: w,
        height: h,
        labels,
        count: count as usize,
        areas,
        centroids,
        bounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_has_no_components() {
        let cc = connected_components(&BinaryMask::filled(6, 4, false), Connectivity::Eight);
        assert_eq!(cc.count, 0);
        assert!(cc.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn diagonal_pair_depends_on_connectivity() {
        let m = BinaryMask::from_fn(2, 2, |x, y| x == y);
        assert_eq!(connected_components(&m, Connectivity::Four).count, 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).count, 1);
    }

    #[test]
    fn l_shaped_blob_area_and_centroid() {
        let pts = [(1, 1), (1, 2), (1, 3), (2, 3), (3, 3)];
        let m = BinaryMask::from_fn(5, 5, |x, y| pts.contains(&(x, y)));
        let cc = connected_components(&m, Connectivity::Eight);
        assert_eq!(cc.count, 1);
        assert_eq!(cc.areas, vec![5]);
        let (cx, cy) = cc.centroids[0];
        assert!((cx - 8.0 / 5.0).abs() < 1e-12);
        assert!((cy - 12.0 / 5.0).abs() < 1e-12);
        assert_eq!(
            cc.bounds[0],
            PixelRect {
                x_min: 1,
                y_min: 1,
                x_max: 3,
                y_max: 3
            }
        );
    }

    #[test]
    fn labels_follow_raster_discovery() {
        // A U-shape whose right arm is discovered first on row 0 only after
        // the left arm; both arms merge at the bottom.
        let rows = ["#.#.#", "#.#..", "###.."];
        let m = BinaryMask::from_fn(5, 3, |x, y| rows[y].as_bytes()[x] == b'#');
        let cc = connected_components(&m, Connectivity::Four);
        assert_eq!(cc.count, 2);
        assert_eq!(cc.label_at(0, 0), 1);
        assert_eq!(cc.label_at(2, 0), 1);
        assert_eq!(cc.label_at(4, 0), 2);
        assert_eq!(cc.areas, vec![7, 1]);
    }
}

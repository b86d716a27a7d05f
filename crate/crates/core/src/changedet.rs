//! Growth detection between two timestamps.
//!
//! A per-pixel volume proxy (density x height in meters) is differenced,
//! strictly positive growth is thresholded at a nearest-rank percentile
//! pooled over the whole area, and the resulting mask is turned into
//! 8-connected pixel-edge polygons.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::raster::QuadRaster;

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthField {
    pub spec: GridSpec,
    /// `proxy_later - proxy_earlier`; meaningless where `valid` is false.
    pub delta: Vec<f32>,
    pub valid: Vec<bool>,
}

/// Volume-proxy change `d1*h1 - d0*h0` with heights in meters.
pub fn volume_delta(
    d0: &QuadRaster,
    h0: &QuadRaster,
    d1: &QuadRaster,
    h1: &QuadRaster,
) -> Result<GrowthField> {
    let spec = *d0.spec();
    for r in [h0, d1, h1] {
        if *r.spec() != spec {
            return Err(Error::Argument("volume_delta inputs are not aligned".into()));
        }
    }
    let layers = [d0.band(0), h0.band(0), d1.band(0), h1.band(0)];
    let n = spec.len();
    let mut delta = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let [Some(a), Some(b), Some(c), Some(d)] = layers.map(|l| l.get(i)) else {
            continue;
        };
        let v = c as f64 * d as f64 - a as f64 * b as f64;
        delta[i] = v as f32;
        valid[i] = v.is_finite();
    }
    Ok(GrowthField { spec, delta, valid })
}

/// 1-based nearest rank `ceil(p * n / 100)` for an integer percentile.
pub fn nearest_rank(percentile: u32, n: usize) -> usize {
    let p = percentile.min(100) as usize;
    ((p * n).div_ceil(100)).max(1)
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank_percentile(sorted: &[f32], percentile: u32) -> Option<f32> {
    (!sorted.is_empty()).then(|| sorted[nearest_rank(percentile, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthMask {
    pub mask: Vec<bool>,
    /// `None` when there was no positive growth at all.
    pub threshold: Option<f32>,
    pub positive_cells: usize,
}

impl GrowthMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Masks cells whose growth is at least the nearest-rank `percentile` of
/// all strictly positive deltas.
pub fn growth_mask(field: &GrowthField, percentile: u32) -> GrowthMask {
    let mut positives: Vec<f32> = field
        .delta
        .iter()
        .zip(&field.valid)
        .filter(|&(&d, &ok)| ok && d > 0.0)
        .map(|(&d, _)| d)
        .collect();
    positives.sort_by(f32::total_cmp);
    let threshold = nearest_rank_percentile(&positives, percentile);
    let mask = match threshold {
        None => vec![false; field.delta.len()],
        Some(t) => field
            .delta
            .iter()
            .zip(&field.valid)
            .map(|(&d, &ok)| ok && d > 0.0 && d >= t)
            .collect(),
    };
    GrowthMask {
        mask,
        threshold,
        positive_cells: positives.len(),
    }
}

pub fn growth_mask_p95(field: &GrowthField) -> GrowthMask {
    growth_mask(field, 95)
}

/// 8-connected component labels: 0 for background, components numbered
/// from 1 in order of their first pixel in row-major order.
pub fn label_components(mask: &[bool], width: usize, height: usize) -> Result<(Vec<u32>, usize)> {
    if mask.len() != width * height {
        return Err(Error::Shape(format!(
            "mask has {} cells, grid is {width}x{height}",
            mask.len()
        )));
    }
    // two-pass union-find over provisional labels
    let mut parent: Vec<u32> = vec![0];
    let mut labels = vec![0u32; mask.len()];
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let up = parent[parent[x as usize] as usize];
            parent[x as usize] = up;
            x = up;
        }
        x
    }
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if !mask[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut k = 0;
            if c > 0 {
                neighbours[k] = labels[i - 1];
                k += 1;
            }
            if r > 0 {
                let up = i - width;
                if c > 0 {
                    neighbours[k] = labels[up - 1];
                    k += 1;
                }
                neighbours[k] = labels[up];
                k += 1;
                if c + 1 < width {
                    neighbours[k] = labels[up + 1];
                    k += 1;
                }
            }
            let mut root = 0u32;
            for &l in neighbours[..k].iter().filter(|&&l| l != 0) {
                let lr = find(&mut parent, l);
                root = match root {
                    0 => lr,
                    cur => {
                        let cur = find(&mut parent, cur);
                        let (lo, hi) = if cur < lr { (cur, lr) } else { (lr, cur) };
                        parent[hi as usize] = lo;
                        lo
                    }
                };
            }
            if root == 0 {
                root = parent.len() as u32;
                parent.push(root);
            }
            labels[i] = root;
        }
    }
    let mut canonical = vec![0u32; parent.len()];
    let mut next = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if canonical[root] == 0 {
            next += 1;
            canonical[root] = next;
        }
        *l = canonical[root];
    }
    Ok((labels, next as usize))
}

/// One 8-connected growth region traced along pixel edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangePolygon {
    /// Closed, counter-clockwise, map coordinates.
    pub exterior: Vec<(f64, f64)>,
    /// Closed, clockwise.
    pub holes: Vec<Vec<(f64, f64)>>,
    pub area_m2: f64,
    pub pixel_count: usize,
    /// Row-major cell indices of the component.
    pub pixels: Vec<usize>,
}

// Headings in map orientation (y up), counter-clockwise order.
const EAST: u8 = 0;
const NORTH: u8 = 1;
const WEST: u8 = 2;
const SOUTH: u8 = 3;

fn step(vx: usize, vy: usize, dir: u8) -> (usize, usize) {
    // vertex rows grow downwards, so map-north is vy - 1
    match dir {
        EAST => (vx + 1, vy),
        NORTH => (vx, vy - 1),
        WEST => (vx - 1, vy),
        _ => (vx, vy + 1),
    }
}

/// Cell on the left of an edge leaving `(vx, vy)` in direction `dir`.
fn left_cell(vx: usize, vy: usize, dir: u8) -> (usize, usize) {
    match dir {
        EAST => (vy - 1, vx),
        NORTH => (vy - 1, vx - 1),
        WEST => (vy, vx - 1),
        _ => (vy, vx),
    }
}

fn signed_area(ring: &[(f64, f64)]) -> f64 {
    let (x0, y0) = ring[0];
    let mut acc = 0.0;
    for w in ring.windows(2) {
        let (ax, ay) = (w[0].0 - x0, w[0].1 - y0);
        let (bx, by) = (w[1].0 - x0, w[1].1 - y0);
        acc += ax * by - bx * ay;
    }
    0.5 * acc
}

/// Vectorizes a mask into one polygon per 8-connected component.
///
/// Boundaries follow pixel edges exactly. At vertices where two cells touch
/// only diagonally the tracer turns so that the cells stay in one ring, which
/// keeps foreground 8-connected and background (holes) 4-connected.
pub fn vectorize_8conn(mask: &[bool], spec: &GridSpec) -> Result<Vec<ChangePolygon>> {
    let (w, h) = (spec.width, spec.height);
    let (labels, count) = label_components(mask, w, h)?;
    let vw = w + 1;
    let fg = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask[r as usize * w + c as usize]
    };
    let mut out_dirs = vec![0u8; vw * (h + 1)];
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            if !fg(ri + 1, ci) {
                out_dirs[(r + 1) * vw + c] |= 1 << EAST;
            }
            if !fg(ri, ci + 1) {
                out_dirs[(r + 1) * vw + c + 1] |= 1 << NORTH;
            }
            if !fg(ri - 1, ci) {
                out_dirs[r * vw + c + 1] |= 1 << WEST;
            }
            if !fg(ri, ci - 1) {
                out_dirs[r * vw + c] |= 1 << SOUTH;
            }
        }
    }

    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            pixels[l as usize - 1].push(i);
        }
    }
    let mut exteriors: Vec<Option<Vec<(f64, f64)>>> = vec![None; count];
    let mut holes: Vec<Vec<Vec<(f64, f64)>>> = vec![Vec::new(); count];
    let to_map = |vx: usize, vy: usize| {
        (
            spec.origin_x + vx as f64 * spec.pixel_size,
            spec.origin_y - vy as f64 * spec.pixel_size,
        )
    };

    let mut used = vec![0u8; out_dirs.len()];
    for start in 0..out_dirs.len() {
        while out_dirs[start] & !used[start] != 0 {
            let free = out_dirs[start] & !used[start];
            let start_dir = free.trailing_zeros() as u8;
            let (svx, svy) = (start % vw, start / vw);
            let (lr, lc) = left_cell(svx, svy, start_dir);
            let comp = labels[lr * w + lc] as usize - 1;

            let mut verts: Vec<(usize, usize, u8)> = Vec::new();
            let (mut vx, mut vy, mut dir) = (svx, svy, start_dir);
            loop {
                used[vy * vw + vx] |= 1 << dir;
                verts.push((vx, vy, dir));
                let (nx, ny) = step(vx, vy, dir);
                let avail = out_dirs[ny * vw + nx];
                let right = (dir + 3) % 4;
                let left = (dir + 1) % 4;
                let next = [right, dir, left]
                    .into_iter()
                    .find(|d| avail & (1 << d) != 0)
                    .expect("boundary edges form closed rings");
                if (nx, ny) == (svx, svy) && next == start_dir {
                    break;
                }
                (vx, vy, dir) = (nx, ny, next);
            }
            // keep only vertices where the heading changes
            let n = verts.len();
            let mut ring: Vec<(f64, f64)> = (0..n)
                .filter(|&i| verts[i].2 != verts[(i + n - 1) % n].2)
                .map(|i| to_map(verts[i].0, verts[i].1))
                .collect();
            ring.push(ring[0]);
            if signed_area(&ring) > 0.0 {
                debug_assert!(exteriors[comp].is_none());
                exteriors[comp] = Some(ring);
            } else {
                holes[comp].push(ring);
            }
        }
    }

    let mut polys = Vec::with_capacity(count);
    for ((ext, hs), px) in exteriors.into_iter().zip(holes).zip(pixels) {
        let exterior = ext.expect("every component has an outer ring");
        let area_m2 = signed_area(&exterior) + hs.iter().map(|r| signed_area(r)).sum::<f64>();
        polys.push(ChangePolygon {
            exterior,
            holes: hs,
            area_m2,
            pixel_count: px.len(),
            pixels: px,
        });
    }
    Ok(polys)
}

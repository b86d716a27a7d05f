//! Training label generation: quad/tile indexing, per-quad label rasters
//! and quad-level dataset splits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{
    downsample_average, quad_bounds, GeoBox, GridSpec, QuadId, OUTPUT_FACTOR, QUAD_PIXELS,
};
use crate::raster::{bounds_in_mercator, merge_crop, warp_bilinear, warp_nearest, Crs, QuadRaster};

/// Sentinel for missing label cells.
pub const LABEL_NODATA: f32 = -1.0;
/// Heights at or above this map to normalized height 1.
pub const MAX_HEIGHT_M: f32 = 100.0;

/// Extent of one source tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileFootprint {
    pub id: String,
    /// Web Mercator meters.
    pub bbox: GeoBox,
    pub source: String,
}

pub type QuadIndex = BTreeMap<QuadId, Vec<TileFootprint>>;

/// Maps each quad to the tiles overlapping it with positive area.
/// Every requested quad gets an entry, possibly empty.
pub fn build_quad_index(quads: &[QuadId], tiles: &[TileFootprint]) -> QuadIndex {
    quads
        .iter()
        .map(|&q| {
            let qb = quad_bounds(q);
            let hits = tiles
                .iter()
                .filter(|t| t.bbox.intersects(&qb))
                .cloned()
                .collect();
            (q, hits)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeightUnits {
    #[default]
    Meters,
    /// Already mapped to `[0, 1]` via `clip(h, 0, 100) / 100`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelResampling {
    #[default]
    Bilinear,
    Nearest,
}

/// A gridded source tile: band 0 is building density, band 1 building height.
#[derive(Debug, Clone)]
pub struct LabelSource {
    pub raster: QuadRaster,
    pub height_units: HeightUnits,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LabelConfig {
    pub resampling: LabelResampling,
}

/// Per-quad training labels on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelQuad {
    pub quad: QuadId,
    pub size: usize,
    pub density: Vec<f32>,
    pub height_norm: Vec<f32>,
}

impl LabelQuad {
    pub fn empty(quad: QuadId, size: usize) -> Self {
        Self {
            quad,
            size,
            density: vec![LABEL_NODATA; size * size],
            height_norm: vec![LABEL_NODATA; size * size],
        }
    }

    /// Sum of the valid density cells.
    pub fn density_sum(&self) -> f64 {
        self.density
            .iter()
            .filter(|&&v| v != LABEL_NODATA)
            .map(|&v| v as f64)
            .sum()
    }

    /// Two-band raster (density, normalized height) with nodata −1.
    pub fn to_raster(&self) -> QuadRaster {
        let mut data = self.density.clone();
        data.extend_from_slice(&self.height_norm);
        QuadRaster::new(
            GridSpec::for_quad(self.quad, self.size),
            2,
            data,
            LABEL_NODATA,
            Crs::WebMercator,
        )
        .expect("label grid is square and complete")
    }

    pub fn from_raster(quad: QuadId, r: &QuadRaster) -> Result<Self> {
        if r.bands() != 2 || r.width() != r.height() {
            return Err(Error::Shape("label rasters are square with two bands".into()));
        }
        let r = r.clone().with_nodata(LABEL_NODATA);
        Ok(Self {
            quad,
            size: r.width(),
            density: r.band(0).data.to_vec(),
            height_norm: r.band(1).data.to_vec(),
        })
    }
}

/// Builds the 512 x 512 label quad for `q` from overlapping source tiles.
///
/// Each source is resampled onto the quad's 4096-pixel grid (only the part
/// it covers), the pieces are mosaicked onto the quad bounds in list order,
/// pooled 8 x 8 ignoring nodata, then density is clamped to `[0, 1]` and
/// height mapped through `clip(h, 0, 100) / 100`. Cells nothing covers stay −1.
pub fn make_label_quad(q: QuadId, sources: &[LabelSource], cfg: &LabelConfig) -> Result<LabelQuad> {
    let qb = quad_bounds(q);
    let full = GridSpec::for_quad(q, QUAD_PIXELS);
    let mut pieces = Vec::new();
    for src in sources {
        if src.raster.bands() != 2 {
            return Err(Error::Shape(format!(
                "label source needs 2 bands, got {}",
                src.raster.bands()
            )));
        }
        let ext = bounds_in_mercator(&src.raster.spec().bounds(), src.raster.crs())?;
        let Some(ix) = ext.intersection(&qb) else {
            continue;
        };
        let sub = covering_subgrid(&full, &ix);
        let mut meters = src.raster.clone().with_nodata(LABEL_NODATA);
        if src.height_units == HeightUnits::Normalized {
            for v in meters.band_mut(1) {
                if *v != LABEL_NODATA {
                    *v *= MAX_HEIGHT_M;
                }
            }
        }
        let piece = match cfg.resampling {
            LabelResampling::Bilinear => warp_bilinear(&meters, &sub, Crs::WebMercator)?,
            LabelResampling::Nearest => warp_nearest(&meters, &sub, Crs::WebMercator)?,
        };
        pieces.push(piece);
    }
    let size = QUAD_PIXELS / OUTPUT_FACTOR;
    if pieces.is_empty() {
        return Ok(LabelQuad::empty(q, size));
    }
    let merged = merge_crop(&pieces, qb)?;
    drop(pieces);
    let pooled = downsample_average(&merged, OUTPUT_FACTOR)?;
    let density = pooled
        .band(0)
        .data
        .iter()
        .map(|&v| if v == LABEL_NODATA { v } else { v.clamp(0.0, 1.0) })
        .collect();
    let height_norm = pooled
        .band(1)
        .data
        .iter()
        .map(|&v| {
            if v == LABEL_NODATA {
                v
            } else {
                v.clamp(0.0, MAX_HEIGHT_M) / MAX_HEIGHT_M
            }
        })
        .collect();
    Ok(LabelQuad {
        quad: q,
        size,
        density,
        height_norm,
    })
}

/// Smallest block of `full` cells covering `b`.
fn covering_subgrid(full: &GridSpec, b: &GeoBox) -> GridSpec {
    let ps = full.pixel_size;
    let clampw = |v: f64| v.clamp(0.0, full.width as f64) as usize;
    let clamph = |v: f64| v.clamp(0.0, full.height as f64) as usize;
    let c0 = clampw(libm::floor((b.min_x - full.origin_x) / ps));
    let c1 = clampw(libm::ceil((b.max_x - full.origin_x) / ps)).max(c0 + 1);
    let r0 = clamph(libm::floor((full.origin_y - b.max_y) / ps));
    let r1 = clamph(libm::ceil((full.origin_y - b.min_y) / ps)).max(r0 + 1);
    GridSpec {
        origin_x: full.origin_x + c0 as f64 * ps,
        origin_y: full.origin_y - r0 as f64 * ps,
        pixel_size: ps,
        width: c1 - c0,
        height: r1 - r0,
    }
}

/// Train/validation/test partition of quads.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuadSplit {
    pub train: Vec<QuadId>,
    pub val: Vec<QuadId>,
    pub test: Vec<QuadId>,
}

/// Split sizes for `n` items by largest-remainder rounding; ties go to the
/// earlier part.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let quotas = fractions.map(|f| f * n as f64);
    let mut sizes = quotas.map(|q| libm::floor(q) as usize);
    let mut left = n.saturating_sub(sizes.iter().sum());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    Ok(sizes)
}

/// Randomly assigns whole quads to train/val/test. Deterministic in `seed`.
pub fn split_quads(quads: &[QuadId], fractions: [f64; 3], seed: u64) -> Result<QuadSplit> {
    let [a, b, _] = split_sizes(quads.len(), fractions)?;
    let mut shuffled = quads.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(a + b);
    let val = shuffled.split_off(a);
    Ok(QuadSplit {
        train: shuffled,
        val,
        test,
    })
}

//! Web Mercator quad-grid arithmetic.
//!
//! The global basemap is a 2048 x 2048 grid of quads, each 4096 x 4096
//! pixels at the zoom-15 pixel size. Quad (0, 0) sits at the north-west
//! corner of the Mercator square; x grows east, y grows south.
//!
//! All containment tests are half-open, `[min, max)` on both axes, so a
//! point on a shared edge belongs to exactly one quad or pixel.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::{self, is_nodata, QuadRaster};

pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// Half the side of the Mercator square, `pi * R`.
pub const HALF_EXTENT_M: f64 = core::f64::consts::PI * EARTH_RADIUS_M;
pub const QUADS_PER_AXIS: u32 = 2048;
/// Pixels along one side of a basemap quad.
pub const QUAD_PIXELS: usize = 4096;
/// Side of one quad in meters. `QUADS_PER_AXIS` is a power of two, so
/// every quad edge `-HALF + i * QUAD_SIDE_M` is computed without rounding
/// drift and the outermost edges land exactly on `+-HALF_EXTENT_M`.
pub const QUAD_SIDE_M: f64 = 2.0 * HALF_EXTENT_M / QUADS_PER_AXIS as f64;
/// Zoom-15 pixel size at the equator (about 4.777 m).
pub const BASE_PIXEL_SIZE_M: f64 = QUAD_SIDE_M / QUAD_PIXELS as f64;
/// Pooling factor between basemap pixels and output pixels.
pub const OUTPUT_FACTOR: usize = 8;
/// Output pixels along one side of a quad.
pub const OUTPUT_PIXELS: usize = QUAD_PIXELS / OUTPUT_FACTOR;

const QUAD_PREFIX: &str = "L15";

/// Column/row address of one basemap quad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuadId {
    x: u32,
    y: u32,
}

impl QuadId {
    pub fn new(x: u32, y: u32) -> Result<Self> {
        for (what, v) in [("quad column", x), ("quad row", y)] {
            if v >= QUADS_PER_AXIS {
                return Err(Error::OutOfRange {
                    what,
                    value: v as u64,
                    limit: QUADS_PER_AXIS as u64,
                });
            }
        }
        Ok(Self { x, y })
    }

    pub fn x(self) -> u32 {
        self.x
    }

    pub fn y(self) -> u32 {
        self.y
    }

    /// Formats as `L15-XXXXE-YYYYN`.
    pub fn name(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for QuadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{QUAD_PREFIX}-{:04}E-{:04}N", self.x, self.y)
    }
}

impl FromStr for QuadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_quad_id(s)
    }
}

/// Parses a quad name of the form `L15-{x:04}E-{y:04}N`.
pub fn parse_quad_id(name: &str) -> Result<QuadId> {
    let bad = |token: &str| Error::Parse {
        input: name.to_string(),
        token: token.to_string(),
    };
    let mut parts = name.split('-');
    let prefix = parts.next().unwrap_or("");
    if prefix != QUAD_PREFIX {
        return Err(bad(prefix));
    }
    let x = parse_axis(parts.next().ok_or_else(|| bad(""))?, 'E').map_err(bad)?;
    let y = parse_axis(parts.next().ok_or_else(|| bad(""))?, 'N').map_err(bad)?;
    if let Some(extra) = parts.next() {
        return Err(bad(extra));
    }
    QuadId::new(x, y)
}

fn parse_axis(token: &str, suffix: char) -> core::result::Result<u32, &str> {
    let digits = token.strip_suffix(suffix).ok_or(token)?;
    if digits.len() != 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(token);
    }
    digits.parse().map_err(|_| token)
}

/// Axis-aligned box in Web Mercator meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl GeoBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let b = Self {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        let lim = HALF_EXTENT_M * (1.0 + 1e-12);
        let inside = [min_x, min_y, max_x, max_y]
            .iter()
            .all(|v| v.is_finite() && v.abs() <= lim);
        if !(min_x < max_x && min_y < max_y && inside) {
            return Err(Error::Argument(format!("invalid box {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// Half-open containment in grid index order: `[min_x, max_x)` going
    /// east and `(min_y, max_y]` going south, so the northwest corner of a
    /// cell belongs to it, matching `GridSpec::cell_at`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x < self.max_x && y > self.min_y && y <= self.max_y
    }

    /// Overlap with positive area; boxes that only share an edge do not intersect.
    pub fn intersects(&self, other: &GeoBox) -> bool {
        self.min_x.max(other.min_x) < self.max_x.min(other.max_x)
            && self.min_y.max(other.min_y) < self.max_y.min(other.max_y)
    }

    pub fn intersection(&self, other: &GeoBox) -> Option<GeoBox> {
        self.intersects(other).then(|| GeoBox {
            min_x: self.min_x.max(other.min_x),
            min_y: self.min_y.max(other.min_y),
            max_x: self.max_x.min(other.max_x),
            max_y: self.max_y.min(other.max_y),
        })
    }
}

/// North-up pixel grid: `origin` is the outer corner of the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let spec = Self {
            origin_x,
            origin_y,
            pixel_size,
            width,
            height,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::Argument(format!(
                "pixel size must be positive, got {}",
                self.pixel_size
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Shape(format!(
                "empty grid {}x{}",
                self.width, self.height
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::Argument("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Square grid of `pixels` per side covering exactly one quad.
    pub fn for_quad(q: QuadId, pixels: usize) -> Self {
        let b = quad_bounds(q);
        Self {
            origin_x: b.min_x,
            origin_y: b.max_y,
            pixel_size: QUAD_SIDE_M / pixels as f64,
            width: pixels,
            height: pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> GeoBox {
        GeoBox {
            min_x: self.origin_x,
            min_y: self.origin_y - self.height as f64 * self.pixel_size,
            max_x: self.origin_x + self.width as f64 * self.pixel_size,
            max_y: self.origin_y,
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Pixel containing `(x, y)`, if any.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = libm::floor((x - self.origin_x) / self.pixel_size);
        let row = libm::floor((self.origin_y - y) / self.pixel_size);
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// The grid obtained by pooling `factor x factor` blocks.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "{}x{} grid is not divisible by factor {factor}",
                self.width, self.height
            )));
        }
        Ok(Self {
            pixel_size: self.pixel_size * factor as f64,
            width: self.width / factor,
            height: self.height / factor,
            ..*self
        })
    }
}

fn edge_x(i: u32) -> f64 {
    -HALF_EXTENT_M + i as f64 * QUAD_SIDE_M
}

fn edge_y(j: u32) -> f64 {
    HALF_EXTENT_M - j as f64 * QUAD_SIDE_M
}

/// Bounds of a quad. Neighbouring quads share bit-identical edges.
pub fn quad_bounds(q: QuadId) -> GeoBox {
    GeoBox {
        min_x: edge_x(q.x),
        max_x: edge_x(q.x + 1),
        max_y: edge_y(q.y),
        min_y: edge_y(q.y + 1),
    }
}

/// Quad whose bounds contain the projected point.
pub fn quad_for_point(lon: f64, lat: f64) -> Result<QuadId> {
    // wrap so that +180 maps onto the western edge
    let lon = if lon >= 180.0 { lon - 360.0 } else { lon };
    let (mx, my) = raster::lonlat_to_mercator(lon, lat)?;
    let guess = |v: f64| {
        let i = libm::floor(v / QUAD_SIDE_M);
        i.clamp(0.0, (QUADS_PER_AXIS - 1) as f64) as u32
    };
    let mut x = guess(mx + HALF_EXTENT_M);
    let mut y = guess(HALF_EXTENT_M - my);
    // settle floating-point ties against the exact edge values
    while x > 0 && mx < edge_x(x) {
        x -= 1;
    }
    while x + 1 < QUADS_PER_AXIS && mx >= edge_x(x + 1) {
        x += 1;
    }
    while y + 1 < QUADS_PER_AXIS && my <= edge_y(y + 1) {
        y += 1;
    }
    while y > 0 && my > edge_y(y) {
        y -= 1;
    }
    let q = QuadId::new(x, y)?;
    if !quad_bounds(q).contains(mx, my) {
        return Err(Error::Domain {
            what: "mercator coordinate",
            value: mx,
        });
    }
    Ok(q)
}

/// Block mean over `factor x factor` cells, skipping nodata.
///
/// A block made only of nodata cells stays nodata. Sums are accumulated in
/// `f64` in row-major order within each block.
pub fn downsample_average(r: &QuadRaster, factor: usize) -> Result<QuadRaster> {
    let spec = r.spec();
    let out_spec = spec.coarsen(factor)?;
    let nodata = r.nodata();
    let (ow, oh) = (out_spec.width, out_spec.height);
    let mut out = vec![nodata; ow * oh * r.bands()];
    for b in 0..r.bands() {
        let src = r.band(b).data;
        let dst = &mut out[b * ow * oh..(b + 1) * ow * oh];
        for orow in 0..oh {
            for ocol in 0..ow {
                let mut sum = 0.0f64;
                let mut n = 0usize;
                for dr in 0..factor {
                    let row = orow * factor + dr;
                    let base = row * spec.width + ocol * factor;
                    for &v in &src[base..base + factor] {
                        if !is_nodata(v, nodata) {
                            sum += v as f64;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    dst[orow * ow + ocol] = (sum / n as f64) as f32;
                }
            }
        }
    }
    QuadRaster::new(out_spec, r.bands(), out, nodata, r.crs())
}

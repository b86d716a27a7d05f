//! In-memory georeferenced rasters and the operations that move values
//! between grids: mosaicking, bilinear resampling and the spherical
//! Mercator projection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{GeoBox, GridSpec, EARTH_RADIUS_M, HALF_EXTENT_M};

/// Largest latitude representable in Web Mercator, `atan(sinh(pi))`.
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Crs {
    /// EPSG:3857
    WebMercator,
    /// EPSG:4326
    Wgs84,
}

impl Crs {
    pub fn epsg(self) -> u32 {
        match self {
            Crs::WebMercator => 3857,
            Crs::Wgs84 => 4326,
        }
    }

    pub fn from_epsg(code: u32) -> Option<Self> {
        match code {
            3857 => Some(Crs::WebMercator),
            4326 => Some(Crs::Wgs84),
            _ => None,
        }
    }
}

#[inline]
pub fn is_nodata(v: f32, nodata: f32) -> bool {
    v == nodata || (nodata.is_nan() && v.is_nan())
}

/// Borrowed view of a single band together with its nodata sentinel.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub data: &'a [f32],
    pub nodata: f32,
}

impl<'a> Layer<'a> {
    pub fn new(data: &'a [f32], nodata: f32) -> Self {
        Self { data, nodata }
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<f32> {
        let v = self.data[i];
        (!is_nodata(v, self.nodata)).then_some(v)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A float32 grid with one or more bands stored band-sequentially,
/// each band row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRaster {
    spec: GridSpec,
    bands: usize,
    data: Vec<f32>,
    nodata: f32,
    crs: Crs,
}

impl QuadRaster {
    pub fn new(spec: GridSpec, bands: usize, data: Vec<f32>, nodata: f32, crs: Crs) -> Result<Self> {
        spec.validate()?;
        if bands == 0 {
            return Err(Error::Shape("raster needs at least one band".into()));
        }
        let expected = spec.len() * bands;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                spec.width,
                spec.height,
                bands
            )));
        }
        Ok(Self {
            spec,
            bands,
            data,
            nodata,
            crs,
        })
    }

    pub fn filled(spec: GridSpec, bands: usize, value: f32, nodata: f32, crs: Crs) -> Result<Self> {
        Self::new(spec, bands, vec![value; spec.len() * bands], nodata, crs)
    }

    /// Stacks single-band rasters that share a grid into one multi-band raster.
    pub fn stack(layers: &[&QuadRaster]) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Argument("nothing to stack".into()))?;
        let mut data = Vec::with_capacity(first.spec.len() * layers.len());
        let mut bands = 0;
        for l in layers {
            if l.spec != first.spec || l.crs != first.crs {
                return Err(Error::Shape("stacked layers must share a grid".into()));
            }
            data.extend_from_slice(&l.data);
            bands += l.bands;
        }
        Self::new(first.spec, bands, data, first.nodata, first.crs)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn crs(&self) -> Crs {
        self.crs
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, b: usize) -> Layer<'_> {
        let n = self.spec.len();
        Layer::new(&self.data[b * n..(b + 1) * n], self.nodata)
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.spec.len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Copies band `b` into a new single-band raster.
    pub fn extract_band(&self, b: usize) -> QuadRaster {
        QuadRaster {
            spec: self.spec,
            bands: 1,
            data: self.band(b).data.to_vec(),
            nodata: self.nodata,
            crs: self.crs,
        }
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[band * self.spec.len() + row * self.spec.width + col]
    }

    /// Rewrites every nodata cell with a new sentinel.
    pub fn with_nodata(mut self, nodata: f32) -> Self {
        let old = self.nodata;
        for v in &mut self.data {
            if is_nodata(*v, old) {
                *v = nodata;
            }
        }
        self.nodata = nodata;
        self
    }

    /// Applies `f` to every valid cell.
    pub fn map_valid(mut self, mut f: impl FnMut(f32) -> f32) -> Self {
        let nd = self.nodata;
        for v in &mut self.data {
            if !is_nodata(*v, nd) {
                *v = f(*v);
            }
        }
        self
    }

    /// Checks that every valid cell lies in `[0, 1]`.
    pub fn validate_unit_range(&self) -> Result<()> {
        let nd = self.nodata;
        match self
            .data
            .iter()
            .position(|&v| !is_nodata(v, nd) && !(0.0..=1.0).contains(&v))
        {
            None => Ok(()),
            Some(i) => Err(Error::Argument(format!(
                "value {} at index {i} outside [0, 1]",
                self.data[i]
            ))),
        }
    }
}

/// Mosaics `tiles` onto a grid that covers exactly `target` at the finest
/// input pixel size.
///
/// Each output cell takes the value of the tile cell containing its center.
/// Tiles are applied in list order and a later tile's valid value replaces
/// an earlier one; nodata never overwrites. Cells no tile covers are nodata.
pub fn merge_crop(tiles: &[QuadRaster], target: GeoBox) -> Result<QuadRaster> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::Argument("merge_crop needs at least one tile".into()))?;
    for t in tiles {
        if t.crs != first.crs || t.bands != first.bands || !same_sentinel(t.nodata, first.nodata) {
            return Err(Error::Argument(
                "tiles must share CRS, band count and nodata".into(),
            ));
        }
    }
    let ps = tiles
        .iter()
        .map(|t| t.spec.pixel_size)
        .fold(f64::INFINITY, f64::min);
    let width = libm::round(target.width() / ps).max(1.0) as usize;
    let height = libm::round(target.height() / ps).max(1.0) as usize;
    let spec = GridSpec::new(target.min_x, target.max_y, ps, width, height)?;
    let nodata = first.nodata;
    let bands = first.bands;
    let n = spec.len();
    let mut out = vec![nodata; n * bands];

    for t in tiles {
        let ts = &t.spec;
        let cols: Vec<Option<usize>> = (0..width)
            .map(|c| {
                let (x, _) = spec.cell_center(0, c);
                let tc = libm::floor((x - ts.origin_x) / ts.pixel_size);
                (tc >= 0.0 && tc < ts.width as f64).then_some(tc as usize)
            })
            .collect();
        for r in 0..height {
            let (_, y) = spec.cell_center(r, 0);
            let tr = libm::floor((ts.origin_y - y) / ts.pixel_size);
            if tr < 0.0 || tr >= ts.height as f64 {
                continue;
            }
            let tr = tr as usize;
            for (c, tc) in cols.iter().enumerate() {
                let Some(tc) = *tc else { continue };
                for b in 0..bands {
                    let v = t.data[b * ts.len() + tr * ts.width + tc];
                    if !is_nodata(v, nodata) {
                        out[b * n + r * width + c] = v;
                    }
                }
            }
        }
    }
    QuadRaster::new(spec, bands, out, nodata, first.crs)
}

fn same_sentinel(a: f32, b: f32) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

// fractional positions this close to a cell center are snapped onto it
const SNAP_EPS: f64 = 1e-9;

/// Bilinear weights for one axis: `(i0, i1, w1)` with the sample at
/// `(1 - w1) * v[i0] + w1 * v[i1]`. `u` is in cell-center units.
fn axis_weights(u: f64, n: usize) -> (usize, usize, f64) {
    let near = libm::round(u);
    let u = if (u - near).abs() < SNAP_EPS { near } else { u };
    let u = u.clamp(0.0, (n - 1) as f64);
    let i0 = libm::floor(u) as usize;
    let frac = u - i0 as f64;
    if i0 + 1 >= n || frac == 0.0 {
        (i0, i0, 0.0)
    } else {
        (i0, i0 + 1, frac)
    }
}

/// Bilinear sample of band `b` at map coordinate `(x, y)`.
///
/// Points outside the raster extent give `None`. Within the extent but
/// beyond the outermost cell centers the edge cells are clamped. If any
/// neighbour carrying a non-zero weight is nodata the result is `None`.
pub fn sample_bilinear(r: &QuadRaster, b: usize, x: f64, y: f64) -> Option<f32> {
    let s = &r.spec;
    if !s.bounds().contains(x, y) {
        return None;
    }
    let u = (x - s.origin_x) / s.pixel_size - 0.5;
    let v = (s.origin_y - y) / s.pixel_size - 0.5;
    let (c0, c1, fx) = axis_weights(u, s.width);
    let (r0, r1, fy) = axis_weights(v, s.height);
    let band = r.band(b);
    let mut acc = 0.0f64;
    for (row, wy) in [(r0, 1.0 - fy), (r1, fy)] {
        for (col, wx) in [(c0, 1.0 - fx), (c1, fx)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let val = band.get(row * s.width + col)?;
            acc += w * val as f64;
        }
    }
    Some(acc as f32)
}

/// Resamples onto `out` (same CRS) by bilinear interpolation.
pub fn resample_bilinear(r: &QuadRaster, out: &GridSpec) -> Result<QuadRaster> {
    warp_bilinear(r, out, r.crs)
}

/// Bilinear resampling onto a grid in `out_crs`; each output cell center is
/// transformed into the source CRS before sampling.
pub fn warp_bilinear(r: &QuadRaster, out: &GridSpec, out_crs: Crs) -> Result<QuadRaster> {
    out.validate()?;
    let n = out.len();
    let mut data = vec![r.nodata; n * r.bands];
    for row in 0..out.height {
        for col in 0..out.width {
            let (x, y) = out.cell_center(row, col);
            let Some((sx, sy)) = transform(x, y, out_crs, r.crs) else {
                continue;
            };
            for b in 0..r.bands {
                if let Some(v) = sample_bilinear(r, b, sx, sy) {
                    data[b * n + row * out.width + col] = v;
                }
            }
        }
    }
    QuadRaster::new(*out, r.bands, data, r.nodata, out_crs)
}

/// Nearest-neighbour counterpart of [`warp_bilinear`]: each output cell takes
/// the source cell containing its transformed center.
pub fn warp_nearest(r: &QuadRaster, out: &GridSpec, out_crs: Crs) -> Result<QuadRaster> {
    out.validate()?;
    let n = out.len();
    let src_n = r.spec.len();
    let mut data = vec![r.nodata; n * r.bands];
    for row in 0..out.height {
        for col in 0..out.width {
            let (x, y) = out.cell_center(row, col);
            let Some((sx, sy)) = transform(x, y, out_crs, r.crs) else {
                continue;
            };
            let Some((sr, sc)) = r.spec.cell_at(sx, sy) else {
                continue;
            };
            for b in 0..r.bands {
                data[b * n + row * out.width + col] = r.data[b * src_n + sr * r.spec.width + sc];
            }
        }
    }
    QuadRaster::new(*out, r.bands, data, r.nodata, out_crs)
}

fn transform(x: f64, y: f64, from: Crs, to: Crs) -> Option<(f64, f64)> {
    match (from, to) {
        (a, b) if a == b => Some((x, y)),
        (Crs::WebMercator, Crs::Wgs84) => mercator_to_lonlat(x, y).ok(),
        (Crs::Wgs84, Crs::WebMercator) => lonlat_to_mercator(x, y).ok(),
        _ => None,
    }
}

/// Bounding box of `b` (given in `crs`) expressed in Web Mercator meters.
pub fn bounds_in_mercator(b: &GeoBox, crs: Crs) -> Result<GeoBox> {
    match crs {
        Crs::WebMercator => Ok(*b),
        Crs::Wgs84 => {
            let clamp = |lat: f64| lat.clamp(-MAX_LATITUDE, MAX_LATITUDE);
            let (x0, y0) = lonlat_to_mercator(b.min_x, clamp(b.min_y))?;
            let (x1, y1) = lonlat_to_mercator(b.max_x, clamp(b.max_y))?;
            Ok(GeoBox {
                min_x: x0,
                min_y: y0,
                max_x: x1,
                max_y: y1,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// degrees (lon, lat) to meters (x, y)
    Forward,
    /// meters (x, y) to degrees (lon, lat)
    Inverse,
}

/// Spherical Mercator with `R = 6378137 m`.
pub fn project(a: f64, b: f64, direction: Direction) -> Result<(f64, f64)> {
    match direction {
        Direction::Forward => lonlat_to_mercator(a, b),
        Direction::Inverse => mercator_to_lonlat(a, b),
    }
}

pub fn lonlat_to_mercator(lon: f64, lat: f64) -> Result<(f64, f64)> {
    if !(lat.abs() <= MAX_LATITUDE) {
        return Err(Error::Domain {
            what: "latitude",
            value: lat,
        });
    }
    if !(lon.abs() <= 180.0) {
        return Err(Error::Domain {
            what: "longitude",
            value: lon,
        });
    }
    let x = EARTH_RADIUS_M * lon.to_radians();
    // atanh(sin) is odd and exact at the equator, unlike ln(tan(pi/4 + lat/2)).
    let y = EARTH_RADIUS_M * libm::atanh(libm::sin(lat.to_radians()));
    Ok((x, y))
}

pub fn mercator_to_lonlat(x: f64, y: f64) -> Result<(f64, f64)> {
    let lim = HALF_EXTENT_M * (1.0 + 1e-12);
    for (what, v) in [("mercator x", x), ("mercator y", y)] {
        if !(v.abs() <= lim) {
            return Err(Error::Domain { what, value: v });
        }
    }
    let lon = (x / EARTH_RADIUS_M).to_degrees();
    let lat = libm::atan(libm::sinh(y / EARTH_RADIUS_M)).to_degrees();
    Ok((lon, lat))
}

//! Post-processing of raw quarterly predictions into the smoothed product.
//!
//! The per-quad order is: clarity scoring of the current quarter's usable
//! data mask, rolling four-quarter aggregation of density and height,
//! masking of water and very high terrain, and finally density/height
//! agreement.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{downsample_average, GridSpec, OUTPUT_FACTOR};
use crate::labelgen::MAX_HEIGHT_M;
use crate::raster::{is_nodata, QuadRaster};

/// GSW transition classes treated as water: permanent, new permanent,
/// seasonal, new seasonal, seasonal to permanent, permanent to seasonal.
pub const WATER_CODES: [u8; 6] = [1, 2, 4, 5, 7, 8];

/// Tunable thresholds of the post-processing chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocConfig {
    /// UDM confidence (percent) above which a pixel is high-confidence.
    pub conf_threshold: f32,
    /// Pooled clarity at or above which a 2-2 vote keeps the maximum.
    pub clarity_split: f32,
    /// Density above which a pixel counts as a building.
    pub density_floor: f32,
    pub min_height_m: f32,
    pub elevation_cap_m: f32,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 95.0,
            clarity_split: 3.5,
            density_floor: 2.0 / 255.0,
            min_height_m: 2.4,
            elevation_cap_m: 5100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum UdmClass {
    Clear = 0,
    Cloud = 1,
    Haze = 2,
    Shadow = 3,
    Snow = 4,
    Missing = 5,
}

impl UdmClass {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => UdmClass::Clear,
            1 => UdmClass::Cloud,
            2 => UdmClass::Haze,
            3 => UdmClass::Shadow,
            4 => UdmClass::Snow,
            5 => UdmClass::Missing,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Usable data mask at basemap resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct UdmQuad {
    pub spec: GridSpec,
    pub class: Vec<UdmClass>,
    /// Percent, `[0, 100]`.
    pub confidence: Vec<f32>,
}

impl UdmQuad {
    pub fn new(spec: GridSpec, class: Vec<UdmClass>, confidence: Vec<f32>) -> Result<Self> {
        if class.len() != spec.len() || confidence.len() != spec.len() {
            return Err(Error::Shape("UDM layers must match the grid".into()));
        }
        Ok(Self {
            spec,
            class,
            confidence,
        })
    }

    /// Reads a two-band (class code, confidence) raster. Nodata class cells
    /// become `Missing`.
    pub fn from_raster(r: &QuadRaster) -> Result<Self> {
        if r.bands() != 2 {
            return Err(Error::Shape(format!("UDM needs 2 bands, got {}", r.bands())));
        }
        let codes = r.band(0);
        let mut class = Vec::with_capacity(codes.len());
        for i in 0..codes.len() {
            let c = match codes.get(i) {
                None => UdmClass::Missing,
                Some(v) => {
                    let code = (libm::truncf(v) == v && (0.0..=255.0).contains(&v))
                        .then_some(v as u8)
                        .and_then(UdmClass::from_code);
                    code.ok_or_else(|| {
                        Error::Argument(format!("invalid UDM class {v} at index {i}"))
                    })?
                }
            };
            class.push(c);
        }
        let conf = r.band(1);
        let confidence = (0..conf.len())
            .map(|i| conf.get(i).unwrap_or(100.0))
            .collect();
        Self::new(*r.spec(), class, confidence)
    }
}

/// Pooled per-output-pixel clarity in `[1, 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClarityRaster(pub QuadRaster);

impl ClarityRaster {
    pub fn value(&self, i: usize) -> Option<f32> {
        self.0.band(0).get(i).filter(|v| !v.is_nan())
    }
}

/// Integer clarity of one basemap pixel.
pub fn clarity_score(class: UdmClass, confidence: f32, conf_threshold: f32) -> u8 {
    let high = confidence > conf_threshold;
    match (class, high) {
        (UdmClass::Missing, _) => 1,
        (UdmClass::Clear, true) => 4,
        (UdmClass::Clear, false) => 3,
        (_, false) => 2,
        (_, true) => 1,
    }
}

/// Scores every UDM pixel and average-pools by the output factor.
pub fn clarity_score_quad(udm: &UdmQuad, conf_threshold: f32) -> Result<ClarityRaster> {
    let scores = udm
        .class
        .iter()
        .zip(&udm.confidence)
        .map(|(&c, &conf)| clarity_score(c, conf, conf_threshold) as f32)
        .collect();
    let full = QuadRaster::new(udm.spec, 1, scores, -1.0, crate::raster::Crs::WebMercator)?;
    Ok(ClarityRaster(downsample_average(&full, OUTPUT_FACTOR)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Density,
    Height,
}

/// Four chronological single-band layers (t−3, t−2, t−1, t) and the pooled
/// clarity of quarter t when a UDM exists.
#[derive(Debug, Clone)]
pub struct TimeSeriesStack {
    quarters: Vec<QuadRaster>,
    clarity: Option<ClarityRaster>,
}

impl TimeSeriesStack {
    pub fn new(quarters: Vec<QuadRaster>, clarity: Option<ClarityRaster>) -> Result<Self> {
        if quarters.len() != 4 {
            return Err(Error::Argument(format!(
                "rolling window needs 4 quarters, got {}",
                quarters.len()
            )));
        }
        let spec = *quarters[0].spec();
        for q in &quarters {
            if *q.spec() != spec || q.bands() != 1 {
                return Err(Error::Shape("stack layers must be single-band on one grid".into()));
            }
        }
        if let Some(c) = &clarity {
            if c.0.width() != spec.width || c.0.height() != spec.height {
                return Err(Error::Shape("clarity grid does not match predictions".into()));
            }
        }
        Ok(Self { quarters, clarity })
    }

    pub fn quarters(&self) -> &[QuadRaster] {
        &self.quarters
    }

    pub fn clarity(&self) -> Option<&ClarityRaster> {
        self.clarity.as_ref()
    }
}

fn sorted4(mut v: [f32; 4], n: usize) -> ([f32; 4], usize) {
    v[..n].sort_by(f32::total_cmp);
    (v, n)
}

/// Median of `v[..n]`; even counts average the middle pair in f64.
fn median(v: &[f32]) -> f32 {
    let mut buf = [0.0f32; 4];
    let n = v.len();
    buf[..n].copy_from_slice(v);
    let (s, n) = sorted4(buf, n);
    if n % 2 == 1 {
        s[n / 2]
    } else {
        ((s[n / 2 - 1] as f64 + s[n / 2] as f64) / 2.0) as f32
    }
}

/// One pixel of the rolling four-quarter vote.
///
/// `values` are the chronological predictions with nodata already replaced
/// by 0. A quarter indicates a building when its value exceeds the density
/// floor (density) or 0 (height). Three or more building votes give the
/// median of the building values, three or more non-building votes give 0,
/// and a 2-2 tie is broken by clarity: at or above the split keeps the
/// maximum, below it gives 0, and no clarity falls back to the median of
/// all four values.
pub fn aggregate_pixel(
    values: [f32; 4],
    clarity: Option<f32>,
    kind: SignalKind,
    cfg: &PostprocConfig,
) -> f32 {
    let floor = match kind {
        SignalKind::Density => cfg.density_floor,
        SignalKind::Height => 0.0,
    };
    let mut positive = [0.0f32; 4];
    let mut n = 0;
    for v in values {
        if v > floor {
            positive[n] = v;
            n += 1;
        }
    }
    if n >= 3 {
        median(&positive[..n])
    } else if 4 - n >= 3 {
        0.0
    } else {
        match clarity {
            Some(c) if c >= cfg.clarity_split => values.iter().copied().fold(f32::MIN, f32::max),
            Some(_) => 0.0,
            None => median(&values),
        }
    }
}

/// Rolling time-window aggregation over a stack. Pixels that are nodata in
/// all four quarters stay nodata; otherwise nodata quarters vote as 0.
pub fn rolling_aggregate(
    stack: &TimeSeriesStack,
    kind: SignalKind,
    cfg: &PostprocConfig,
) -> Result<QuadRaster> {
    let q = &stack.quarters;
    let nodata = q[0].nodata();
    let layers: Vec<_> = q.iter().map(|r| r.band(0)).collect();
    let n = q[0].spec().len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut vals = [0.0f32; 4];
        let mut any = false;
        for (t, l) in layers.iter().enumerate() {
            if let Some(v) = l.get(i) {
                vals[t] = v;
                any = true;
            }
        }
        if !any {
            out.push(nodata);
            continue;
        }
        let clarity = stack.clarity.as_ref().and_then(|c| c.value(i));
        out.push(aggregate_pixel(vals, clarity, kind, cfg));
    }
    QuadRaster::new(*q[0].spec(), 1, out, nodata, q[0].crs())
}

/// Water transitions and elevation aligned with the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLayers {
    pub gsw_transitions: Vec<u8>,
    pub dem: Vec<f32>,
    pub dem_nodata: f32,
}

impl MaskLayers {
    /// From single-band rasters; nodata GSW cells become class 0.
    pub fn from_rasters(gsw: &QuadRaster, dem: &QuadRaster) -> Result<Self> {
        if gsw.width() != dem.width() || gsw.height() != dem.height() {
            return Err(Error::Shape("GSW and DEM grids differ".into()));
        }
        let g = gsw.band(0);
        let gsw_transitions = (0..g.len())
            .map(|i| match g.get(i) {
                Some(v) if (0.0..=255.0).contains(&v) => libm::roundf(v) as u8,
                _ => 0,
            })
            .collect();
        Ok(Self {
            gsw_transitions,
            dem: dem.band(0).data.to_vec(),
            dem_nodata: dem.nodata(),
        })
    }

    pub fn is_uninhabitable(&self, i: usize, elevation_cap_m: f32) -> bool {
        let d = self.dem[i];
        WATER_CODES.contains(&self.gsw_transitions[i])
            || (!is_nodata(d, self.dem_nodata) && d > elevation_cap_m)
    }
}

/// Zeroes every band where the cell is water or above the elevation cap.
/// Other cells are copied unchanged.
pub fn mask_uninhabitable(
    pred: &QuadRaster,
    m: &MaskLayers,
    cfg: &PostprocConfig,
) -> Result<QuadRaster> {
    let n = pred.spec().len();
    if m.gsw_transitions.len() != n || m.dem.len() != n {
        return Err(Error::Shape("mask layers are not aligned with predictions".into()));
    }
    let mut out = pred.clone();
    for b in 0..pred.bands() {
        let band = out.band_mut(b);
        for (i, v) in band.iter_mut().enumerate() {
            if m.is_uninhabitable(i, cfg.elevation_cap_m) {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// Density/height consistency for one pixel, `height` in the same units as
/// `min_height`.
///
/// Zero density annihilates height first; positive density lifts height to
/// `min_height`; positive height lifts density to the floor.
pub fn agree_pixel(density: f32, height: f32, min_height: f32, density_floor: f32) -> (f32, f32) {
    let (mut d, mut h) = (density, height);
    for _ in 0..2 {
        let before = (d, h);
        if d > 0.0 {
            h = h.max(min_height);
        } else {
            h = 0.0;
        }
        if h > 0.0 {
            d = d.max(density_floor);
        }
        if (d, h) == before {
            break;
        }
    }
    (d, h)
}

fn agreement_with(
    density: &QuadRaster,
    height: &QuadRaster,
    min_height: f32,
    density_floor: f32,
) -> Result<(QuadRaster, QuadRaster)> {
    if density.spec() != height.spec() {
        return Err(Error::Shape("density and height grids differ".into()));
    }
    let mut d_out = density.clone();
    let mut h_out = height.clone();
    let (dn, hn) = (density.nodata(), height.nodata());
    let n = density.spec().len();
    for i in 0..n {
        let (d, h) = (density.data()[i], height.data()[i]);
        if is_nodata(d, dn) || is_nodata(h, hn) {
            continue;
        }
        let (d2, h2) = agree_pixel(d, h, min_height, density_floor);
        d_out.band_mut(0)[i] = d2;
        h_out.band_mut(0)[i] = h2;
    }
    Ok((d_out, h_out))
}

/// Enforces density/height agreement with height given in meters.
pub fn enforce_agreement(
    density: &QuadRaster,
    height_m: &QuadRaster,
    cfg: &PostprocConfig,
) -> Result<(QuadRaster, QuadRaster)> {
    agreement_with(density, height_m, cfg.min_height_m, cfg.density_floor)
}

/// Runs the whole chain for one quad.
///
/// `quarters` are four chronological 2-band predictions (density,
/// normalized height). Returns a 2-band product in the same units.
pub fn postprocess_quad(
    quarters: &[QuadRaster],
    udm: Option<&UdmQuad>,
    masks: &MaskLayers,
    cfg: &PostprocConfig,
) -> Result<QuadRaster> {
    if quarters.iter().any(|q| q.bands() != 2) {
        return Err(Error::Shape("predictions must have density and height bands".into()));
    }
    let clarity = udm
        .map(|u| clarity_score_quad(u, cfg.conf_threshold))
        .transpose()?;
    let band_stack = |b: usize| {
        TimeSeriesStack::new(
            quarters.iter().map(|q| q.extract_band(b)).collect(),
            clarity.clone(),
        )
    };
    let density = rolling_aggregate(&band_stack(0)?, SignalKind::Density, cfg)?;
    let height = rolling_aggregate(&band_stack(1)?, SignalKind::Height, cfg)?;
    let density = mask_uninhabitable(&density, masks, cfg)?;
    let height = mask_uninhabitable(&height, masks, cfg)?;
    let (density, height) = agreement_with(
        &density,
        &height,
        cfg.min_height_m / MAX_HEIGHT_M,
        cfg.density_floor,
    )?;
    QuadRaster::stack(&[&density, &height])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Crs;
    use alloc::vec;

    fn cfg() -> PostprocConfig {
        PostprocConfig::default()
    }

    #[test]
    fn aggregate_examples() {
        let c = cfg();
        assert_eq!(
            aggregate_pixel([0.5, 0.6, 0.55, 0.0], Some(4.0), SignalKind::Density, &c),
            0.55
        );
        assert_eq!(aggregate_pixel([0.0; 4], Some(4.0), SignalKind::Density, &c), 0.0);
        assert_eq!(
            aggregate_pixel([0.4, 0.4, 0.0, 0.0], Some(3.8), SignalKind::Density, &c),
            0.4
        );
        assert_eq!(
            aggregate_pixel([0.4, 0.4, 0.0, 0.0], Some(3.4), SignalKind::Density, &c),
            0.0
        );
        assert_eq!(
            aggregate_pixel([0.4, 0.2, 0.0, 0.0], None, SignalKind::Density, &c),
            0.1
        );
        assert_eq!(
            aggregate_pixel([0.2, 0.4, 0.6, 0.8], Some(1.0), SignalKind::Density, &c),
            0.5
        );
    }

    #[test]
    fn height_indicator_is_strictly_positive() {
        let c = cfg();
        // 1/255 is below the density floor but is a positive height
        let v = [1.0 / 255.0, 1.0 / 255.0, 1.0 / 255.0, 0.0];
        assert_eq!(aggregate_pixel(v, Some(1.0), SignalKind::Density, &c), 0.0);
        assert_eq!(aggregate_pixel(v, Some(1.0), SignalKind::Height, &c), 1.0 / 255.0);
    }

    #[test]
    fn density_floor_is_strict() {
        let c = cfg();
        let f = c.density_floor;
        assert_eq!(aggregate_pixel([f, f, f, f], Some(4.0), SignalKind::Density, &c), 0.0);
    }

    #[test]
    fn clarity_scores() {
        assert_eq!(clarity_score(UdmClass::Clear, 100.0, 95.0), 4);
        assert_eq!(clarity_score(UdmClass::Clear, 95.0, 95.0), 3);
        assert_eq!(clarity_score(UdmClass::Cloud, 50.0, 95.0), 2);
        assert_eq!(clarity_score(UdmClass::Haze, 99.0, 95.0), 1);
        assert_eq!(clarity_score(UdmClass::Missing, 0.0, 95.0), 1);
    }

    fn udm(classes: Vec<UdmClass>, conf: Vec<f32>, n: usize) -> UdmQuad {
        UdmQuad::new(GridSpec::new(0.0, n as f64, 1.0, n, n).unwrap(), classes, conf).unwrap()
    }

    #[test]
    fn clarity_quad_pooling() {
        let clear = udm(vec![UdmClass::Clear; 64], vec![100.0; 64], 8);
        assert_eq!(clarity_score_quad(&clear, 95.0).unwrap().value(0), Some(4.0));
        let cloud = udm(vec![UdmClass::Cloud; 64], vec![100.0; 64], 8);
        assert_eq!(clarity_score_quad(&cloud, 95.0).unwrap().value(0), Some(1.0));
        let mixed: Vec<UdmClass> = (0..64)
            .map(|i| if i < 32 { UdmClass::Clear } else { UdmClass::Snow })
            .collect();
        let m = udm(mixed, vec![100.0; 64], 8);
        assert_eq!(clarity_score_quad(&m, 95.0).unwrap().value(0), Some(2.5));
    }

    #[test]
    fn udm_from_raster_rejects_unknown_class() {
        let spec = GridSpec::new(0.0, 1.0, 1.0, 2, 1).unwrap();
        let r = QuadRaster::new(spec, 2, vec![0.0, 9.0, 100.0, 100.0], -1.0, Crs::WebMercator)
            .unwrap();
        assert!(UdmQuad::from_raster(&r).is_err());
    }

    fn one(v: Vec<f32>) -> QuadRaster {
        let n = v.len();
        QuadRaster::new(GridSpec::new(0.0, 1.0, 1.0, n, 1).unwrap(), 1, v, -1.0, Crs::WebMercator)
            .unwrap()
    }

    #[test]
    fn masking_examples() {
        let c = cfg();
        let pred = one(vec![0.9, 0.9, 0.0, 0.9]);
        let m = MaskLayers {
            gsw_transitions: vec![0, 3, 7, 0],
            dem: vec![6000.0, 10.0, 10.0, 5100.0],
            dem_nodata: -9999.0,
        };
        let out = mask_uninhabitable(&pred, &m, &c).unwrap();
        assert_eq!(out.data(), &[0.0, 0.9, 0.0, 0.9]);
        assert_eq!(mask_uninhabitable(&out, &m, &c).unwrap(), out);
    }

    #[test]
    fn agreement_examples() {
        let (f, mh) = (2.0 / 255.0, 2.4);
        assert_eq!(agree_pixel(0.1, 1.0, mh, f), (0.1, 2.4));
        assert_eq!(agree_pixel(0.0, 5.0, mh, f), (0.0, 0.0));
        assert_eq!(agree_pixel(0.001, 0.0, mh, f), (f, 2.4));
        assert_eq!(agree_pixel(0.5, 12.0, mh, f), (0.5, 12.0));
    }

    #[test]
    fn stack_requires_four_quarters() {
        let r = one(vec![0.0; 3]);
        assert!(TimeSeriesStack::new(vec![r.clone(); 3], None).is_err());
        assert!(TimeSeriesStack::new(vec![r; 4], None).is_ok());
    }

    #[test]
    fn all_nodata_pixel_stays_nodata() {
        let a = one(vec![-1.0, 0.5]);
        let s = TimeSeriesStack::new(vec![a.clone(), a.clone(), a.clone(), a], None).unwrap();
        let out = rolling_aggregate(&s, SignalKind::Density, &cfg()).unwrap();
        assert_eq!(out.data(), &[-1.0, 0.5]);
    }
}

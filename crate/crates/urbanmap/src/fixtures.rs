//! Deterministic synthetic scenes for tests and demos.
//!
//! A scene is a row of adjacent quads. Each quad carries static settlement
//! blobs plus one growth blob whose amplitude ramps over time, a water strip,
//! a high-elevation corner, and per-quarter prediction noise and clouds.
//! Everything is drawn from a single ChaCha8 stream in a fixed order, so a
//! seed pins down every byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use urbanmap_core::grid::OUTPUT_FACTOR;
use urbanmap_core::labelgen::MAX_HEIGHT_M;
use urbanmap_core::postproc::UdmClass;
use urbanmap_core::{Crs, GridSpec, QuadId, QuadRaster};

use crate::error::{Error, Result};
use crate::io::{self, Layout, Quarter};

pub const PRED_NODATA: f32 = -1.0;
pub const UDM_NODATA: f32 = 255.0;
pub const GSW_NODATA: f32 = 255.0;
pub const DEM_NODATA: f32 = -9999.0;
/// Truth layers, same layout as predictions.
pub const TRUTH: &str = "truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub count: usize,
    /// Gaussian sigma range in output cells.
    pub radius: (f32, f32),
    /// Density at the blob center, in `[0, 1]`.
    pub peak: f32,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            count: 6,
            radius: (2.0, 6.0),
            peak: 0.8,
        }
    }
}

/// One blob per quad whose peak grows by `schedule[t]` at quarter `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthSpec {
    pub radius: f32,
    pub schedule: Vec<f32>,
}

impl Default for GrowthSpec {
    fn default() -> Self {
        Self {
            radius: 5.0,
            schedule: vec![0.05; 16],
        }
    }
}

/// Perturbations applied to one quarter's predictions. All are fractions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuarterNoise {
    /// Half-width of uniform noise added to built-up cells.
    pub jitter: f32,
    /// Share of cells zeroed.
    pub dropout: f32,
    /// Share of cells given a spurious building.
    pub speckle: f32,
    /// Share of cells under cloud: prediction zeroed, UDM marked cloudy.
    pub cloud: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub quads: u32,
    /// Westernmost quad; the others follow eastwards.
    pub origin: (u32, u32),
    /// Output cells per quad side.
    pub size: usize,
    pub first_quarter: Quarter,
    pub blobs: BlobSpec,
    pub growth: GrowthSpec,
    /// Indexed by quarter; quarters past the end are noise-free.
    pub noise: Vec<QuarterNoise>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            quads: 1,
            origin: (1205, 770),
            size: 64,
            first_quarter: Quarter::new(2019, 1).expect("valid quarter"),
            blobs: BlobSpec::default(),
            growth: GrowthSpec::default(),
            noise: Vec::new(),
        }
    }
}

impl SceneSpec {
    /// A 128-cell scene with slow growth, mild model noise in every
    /// quarter, a dropout-heavy quarter and a cloudy quarter each year.
    pub fn noisy(seed: u64, quarters: usize) -> Self {
        let noise = (0..quarters)
            .map(|t| QuarterNoise {
                jitter: 0.05,
                dropout: if t % 4 == 1 { 0.25 } else { 0.03 },
                speckle: 0.01,
                cloud: if t % 4 == 2 { 0.05 } else { 0.004 },
            })
            .collect();
        Self {
            seed,
            size: 128,
            blobs: BlobSpec {
                count: 24,
                ..BlobSpec::default()
            },
            growth: GrowthSpec {
                schedule: vec![0.01; quarters],
                ..GrowthSpec::default()
            },
            noise,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.quads == 0 || self.size < 8 {
            return bad(format!("need at least one quad of size >= 8, got {}x{}", self.quads, self.size));
        }
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        let mut fractions = vec![self.blobs.peak];
        fractions.extend(&self.growth.schedule);
        for n in &self.noise {
            fractions.extend([n.jitter, n.dropout, n.speckle, n.cloud]);
        }
        if !fractions.into_iter().all(unit) {
            return bad("scene fractions must lie in [0, 1]".into());
        }
        let (r0, r1) = self.blobs.radius;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) || !(self.growth.radius > 0.0) {
            return bad("blob radii must be positive and ordered".into());
        }
        for i in 0..self.quads {
            QuadId::new(self.origin.0 + i, self.origin.1)?;
        }
        Ok(())
    }

    pub fn quad_ids(&self) -> Vec<QuadId> {
        (0..self.quads)
            .map(|i| QuadId::new(self.origin.0 + i, self.origin.1).expect("validated"))
            .collect()
    }

    fn noise_at(&self, t: usize) -> QuarterNoise {
        self.noise.get(t).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadScene {
    pub quad: QuadId,
    /// Per quarter: density and normalized height, noisy.
    pub predictions: Vec<QuadRaster>,
    /// Per quarter: class code and confidence at basemap resolution.
    pub udm: Vec<QuadRaster>,
    pub gsw: QuadRaster,
    pub dem: QuadRaster,
    /// Per quarter: the noise-free density and normalized height.
    pub truth: Vec<QuadRaster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub quarters: Vec<Quarter>,
    pub quads: Vec<QuadScene>,
}

/// Regions that the masks knock out, in output-cell coordinates.
struct Zones {
    water_rows: std::ops::Range<usize>,
    peak_rows: std::ops::Range<usize>,
    peak_cols: std::ops::Range<usize>,
}

impl Zones {
    fn new(size: usize) -> Self {
        Self {
            water_rows: size / 8..size / 8 + (size / 16).max(1),
            peak_rows: size - size / 8..size,
            peak_cols: 0..size / 8,
        }
    }

    fn masked(&self, r: usize, c: usize) -> bool {
        self.water_rows.contains(&r) || (self.peak_rows.contains(&r) && self.peak_cols.contains(&c))
    }
}

fn bump(r: usize, c: usize, (cr, cc): (f32, f32), sigma: f32) -> f32 {
    let (dr, dc) = (r as f32 + 0.5 - cr, c as f32 + 0.5 - cc);
    (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
}

/// Normalized height consistent with a truth density.
fn height_for(d: f32) -> f32 {
    if d > 0.0 {
        (2.4 + 27.6 * d) / MAX_HEIGHT_M
    } else {
        0.0
    }
}

pub fn synth_timeseries(spec: &SceneSpec, n: usize) -> Result<Scene> {
    spec.validate()?;
    if n < 4 {
        return Err(Error::Config(format!("need at least 4 quarters, got {n}")));
    }
    let quarters = (0..n as i64)
        .map(|t| spec.first_quarter.offset(t).ok_or_else(|| Error::Config("quarter overflow".into())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let quads = spec
        .quad_ids()
        .into_iter()
        .map(|q| synth_quad(spec, q, n, &mut rng))
        .collect::<Result<_>>()?;
    Ok(Scene { quarters, quads })
}

fn synth_quad(spec: &SceneSpec, quad: QuadId, n: usize, rng: &mut ChaCha8Rng) -> Result<QuadScene> {
    let s = spec.size;
    let grid = GridSpec::for_quad(quad, s);
    let fine = GridSpec::for_quad(quad, s * OUTPUT_FACTOR);
    let zones = Zones::new(s);
    let sz = s as f32;

    // static settlement
    let mut base = vec![0.0f32; s * s];
    for _ in 0..spec.blobs.count {
        let center = (rng.gen_range(0.0..sz), rng.gen_range(0.0..sz));
        let (r0, r1) = spec.blobs.radius;
        let sigma = if r0 < r1 { rng.gen_range(r0..r1) } else { r0 };
        for r in 0..s {
            for c in 0..s {
                base[r * s + c] += spec.blobs.peak * bump(r, c, center, sigma);
            }
        }
    }
    // growth blob kept clear of the masked zones
    let growth_center = (rng.gen_range(0.375 * sz..0.625 * sz), rng.gen_range(0.25 * sz..0.75 * sz));
    let growth_shape: Vec<f32> = (0..s * s)
        .map(|i| bump(i / s, i % s, growth_center, spec.growth.radius))
        .collect();

    let mut gsw = vec![0.0f32; s * s];
    let mut dem = vec![0.0f32; s * s];
    for r in 0..s {
        for c in 0..s {
            let i = r * s + c;
            gsw[i] = if zones.water_rows.contains(&r) {
                if c % 2 == 0 { 1.0 } else { 4.0 }
            } else {
                // non-water transition classes that must survive masking
                [0.0, 0.0, 0.0, 3.0, 6.0, 9.0, 10.0][rng.gen_range(0..7)]
            };
            dem[i] = if zones.peak_rows.contains(&r) && zones.peak_cols.contains(&c) {
                rng.gen_range(5100.5..6500.0)
            } else {
                rng.gen_range(0.0..5100.0)
            };
        }
    }

    let mut amplitude = 0.0f32;
    let mut predictions = Vec::with_capacity(n);
    let mut udm = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for t in 0..n {
        amplitude = (amplitude + spec.growth.schedule.get(t).copied().unwrap_or(0.0)).min(1.0);
        let mut td = vec![0.0f32; s * s];
        for i in 0..s * s {
            let d = (base[i] + amplitude * growth_shape[i]).min(1.0);
            if d > 2.0 / 255.0 && !zones.masked(i / s, i % s) {
                td[i] = d;
            }
        }
        let th: Vec<f32> = td.iter().map(|&d| height_for(d)).collect();

        let noise = spec.noise_at(t);
        let (mut pd, mut ph) = (td.clone(), th.clone());
        let mut cloudy = vec![false; s * s];
        for i in 0..s * s {
            // fixed draw order per cell: jitter, dropout, speckle, cloud
            let j: f32 = rng.gen_range(-1.0..=1.0);
            let drop = rng.gen::<f32>() < noise.dropout;
            let speck = rng.gen::<f32>() < noise.speckle;
            let speck_d: f32 = rng.gen_range(0.05..0.4);
            cloudy[i] = rng.gen::<f32>() < noise.cloud;
            if pd[i] > 0.0 && noise.jitter > 0.0 {
                pd[i] = (pd[i] + noise.jitter * j).clamp(0.0, 1.0);
                ph[i] = (ph[i] + 0.5 * noise.jitter * j).clamp(0.0, 1.0);
            }
            if speck {
                pd[i] = pd[i].max(speck_d);
                ph[i] = ph[i].max(height_for(speck_d));
            }
            if drop || cloudy[i] {
                pd[i] = 0.0;
                ph[i] = 0.0;
            }
        }
        let mut pred = pd;
        pred.extend(ph);
        predictions.push(QuadRaster::new(grid, 2, pred, PRED_NODATA, Crs::WebMercator)?);
        let mut t_data = td;
        t_data.extend(th);
        truth.push(QuadRaster::new(grid, 2, t_data, PRED_NODATA, Crs::WebMercator)?);

        let fs = s * OUTPUT_FACTOR;
        let mut class = vec![UdmClass::Clear.code() as f32; fs * fs];
        for r in 0..fs {
            for c in 0..fs {
                if cloudy[(r / OUTPUT_FACTOR) * s + c / OUTPUT_FACTOR] {
                    class[r * fs + c] = UdmClass::Cloud.code() as f32;
                }
            }
        }
        class.extend(std::iter::repeat_n(100.0, fs * fs));
        udm.push(QuadRaster::new(fine, 2, class, UDM_NODATA, Crs::WebMercator)?);
    }

    Ok(QuadScene {
        quad,
        predictions,
        udm,
        gsw: QuadRaster::new(grid, 1, gsw, GSW_NODATA, Crs::WebMercator)?,
        dem: QuadRaster::new(grid, 1, dem, DEM_NODATA, Crs::WebMercator)?,
        truth,
    })
}

/// Writes predictions, UDM, truth and the static layers in the layout the
/// pipeline reads.
pub fn write_scene(scene: &Scene, layout: &Layout) -> Result<()> {
    for qs in &scene.quads {
        io::write_raster(&qs.gsw, layout.fixed(io::GSW, qs.quad))?;
        io::write_raster(&qs.dem, layout.fixed(io::DEM, qs.quad))?;
        for (t, &quarter) in scene.quarters.iter().enumerate() {
            io::write_raster(&qs.predictions[t], layout.quarterly(io::PREDICTIONS, quarter, qs.quad))?;
            io::write_raster(&qs.udm[t], layout.quarterly(io::UDM, quarter, qs.quad))?;
            io::write_raster(&qs.truth[t], layout.quarterly(TRUTH, quarter, qs.quad))?;
        }
    }
    Ok(())
}

impl Scene {
    /// Every (quad, quarter) with three earlier quarters available.
    pub fn work_items(&self) -> Vec<crate::orchestrator::WorkItem> {
        self.quads
            .iter()
            .flat_map(|qs| {
                self.quarters[3..].iter().map(move |&quarter| crate::orchestrator::WorkItem {
                    quad: qs.quad,
                    quarter,
                })
            })
            .collect()
    }
}

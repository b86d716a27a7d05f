//! File-level label generation: read source tiles, index them against the
//! quad grid, and write one 2-band label raster per quad.

use std::path::PathBuf;

use urbanmap_core::grid::{QUADS_PER_AXIS, QUAD_SIDE_M, HALF_EXTENT_M};
use urbanmap_core::labelgen::{
    build_quad_index, make_label_quad, HeightUnits, LabelConfig, LabelSource, TileFootprint,
};
use urbanmap_core::raster::bounds_in_mercator;
use urbanmap_core::{GeoBox, QuadId};

use crate::error::Result;
use crate::io::{self, Layout};
use crate::orchestrator::parallel_map;

pub struct LoadedSource {
    pub footprint: TileFootprint,
    pub source: LabelSource,
}

pub fn load_sources(paths: &[PathBuf], units: HeightUnits) -> Result<Vec<LoadedSource>> {
    paths
        .iter()
        .map(|p| {
            let raster = io::read_raster(p)?;
            let bbox = bounds_in_mercator(&raster.spec().bounds(), raster.crs())?;
            Ok(LoadedSource {
                footprint: TileFootprint {
                    id: p.display().to_string(),
                    bbox,
                    source: p.display().to_string(),
                },
                source: LabelSource {
                    raster,
                    height_units: units,
                },
            })
        })
        .collect()
}

/// Quads whose cells a box could touch, before the positive-area check.
pub fn candidate_quads(b: &GeoBox) -> Vec<QuadId> {
    let max = QUADS_PER_AXIS as i64 - 1;
    let col = |x: f64| (((x + HALF_EXTENT_M) / QUAD_SIDE_M).floor() as i64).clamp(0, max) as u32;
    let row = |y: f64| (((HALF_EXTENT_M - y) / QUAD_SIDE_M).floor() as i64).clamp(0, max) as u32;
    let mut out = Vec::new();
    for y in row(b.max_y)..=row(b.min_y) {
        for x in col(b.min_x)..=col(b.max_x) {
            out.push(QuadId::new(x, y).expect("clamped to the grid"));
        }
    }
    out
}

/// Every quad overlapped (with positive area) by at least one source.
pub fn covered_quads(sources: &[LoadedSource]) -> Vec<QuadId> {
    let mut quads: Vec<QuadId> = sources
        .iter()
        .flat_map(|s| candidate_quads(&s.footprint.bbox))
        .collect();
    quads.sort();
    quads.dedup();
    let tiles: Vec<TileFootprint> = sources.iter().map(|s| s.footprint.clone()).collect();
    build_quad_index(&quads, &tiles)
        .into_iter()
        .filter(|(_, hits)| !hits.is_empty())
        .map(|(q, _)| q)
        .collect()
}

/// Writes `labels/{quad}.ext` for each quad and returns the number written.
/// Quads no source reaches still get an all-nodata label.
pub fn write_labels(
    quads: &[QuadId],
    sources: &[LoadedSource],
    cfg: &LabelConfig,
    out: &Layout,
    workers: usize,
) -> Result<usize> {
    let tiles: Vec<TileFootprint> = sources.iter().map(|s| s.footprint.clone()).collect();
    let index = build_quad_index(quads, &tiles);
    let results = parallel_map(quads, workers, |q| -> Result<()> {
        let hits = &index[q];
        let picked: Vec<LabelSource> = sources
            .iter()
            .filter(|s| hits.iter().any(|t| t.id == s.footprint.id))
            .map(|s| s.source.clone())
            .collect();
        let label = make_label_quad(*q, &picked, cfg)?;
        io::write_raster(&label.to_raster(), out.fixed(io::LABELS, *q))
    });
    results.into_iter().collect::<Result<Vec<()>>>().map(|v| v.len())
}

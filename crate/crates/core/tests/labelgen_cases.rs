use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanmap_core::grid::{quad_bounds, GridSpec, QuadId};
use urbanmap_core::labelgen::{
    build_quad_index, make_label_quad, split_quads, HeightUnits, LabelConfig, LabelQuad,
    LabelResampling, LabelSource, TileFootprint, LABEL_NODATA,
};
use urbanmap_core::raster::{mercator_to_lonlat, Crs, QuadRaster};
use urbanmap_core::GeoBox;

fn quad() -> QuadId {
    QuadId::new(1205, 770).unwrap()
}

/// A two-band Mercator source over `b`, `n` cells wide.
fn source(b: GeoBox, n: usize, density: f32, height: f32) -> LabelSource {
    let ps = b.width() / n as f64;
    let rows = (b.height() / ps).round() as usize;
    let spec = GridSpec::new(b.min_x, b.max_y, ps, n, rows).unwrap();
    let mut data = vec![density; spec.len()];
    data.extend(std::iter::repeat_n(height, spec.len()));
    LabelSource {
        raster: QuadRaster::new(spec, 2, data, LABEL_NODATA, Crs::WebMercator).unwrap(),
        height_units: HeightUnits::Meters,
    }
}

fn nodata_count(l: &LabelQuad) -> usize {
    l.density.iter().filter(|&&v| v == LABEL_NODATA).count()
}

#[test]
fn full_cover_constant_and_clipped_height() {
    let b = quad_bounds(quad());
    let l = make_label_quad(quad(), &[source(b, 64, 1.0, 250.0)], &LabelConfig::default()).unwrap();
    assert_eq!(l.size, 512);
    assert!(l.density.iter().all(|&v| v == 1.0));
    assert!(l.height_norm.iter().all(|&v| v == 1.0));
}

#[test]
fn half_cover_leaves_exactly_the_other_half_empty() {
    let b = quad_bounds(quad());
    let west = GeoBox::new(b.min_x, b.min_y, b.min_x + b.width() / 2.0, b.max_y).unwrap();
    for resampling in [LabelResampling::Bilinear, LabelResampling::Nearest] {
        let cfg = LabelConfig { resampling };
        let l = make_label_quad(quad(), &[source(west, 32, 0.25, 12.0)], &cfg).unwrap();
        for r in 0..512 {
            for c in 0..512 {
                let (d, h) = (l.density[r * 512 + c], l.height_norm[r * 512 + c]);
                if c < 256 {
                    assert_eq!((d, h), (0.25, 0.12), "({r},{c})");
                } else {
                    assert_eq!((d, h), (LABEL_NODATA, LABEL_NODATA), "({r},{c})");
                }
            }
        }
    }
}

#[test]
fn geographic_source_is_warped_onto_the_quad() {
    let b = quad_bounds(quad());
    let (lon0, lat0) = mercator_to_lonlat(b.min_x, b.min_y).unwrap();
    let (lon1, lat1) = mercator_to_lonlat(b.max_x, b.max_y).unwrap();
    let pad = 0.01;
    let ps = (lon1 - lon0 + 2.0 * pad) / 40.0;
    let rows = ((lat1 - lat0 + 2.0 * pad) / ps).ceil() as usize;
    let spec = GridSpec::new(lon0 - pad, lat1 + pad, ps, 40, rows).unwrap();
    let mut data = vec![0.5f32; spec.len()];
    data.extend(vec![0.3f32; spec.len()]);
    let src = LabelSource {
        raster: QuadRaster::new(spec, 2, data, LABEL_NODATA, Crs::Wgs84).unwrap(),
        height_units: HeightUnits::Normalized,
    };
    let l = make_label_quad(quad(), &[src], &LabelConfig::default()).unwrap();
    assert!(l.density.iter().all(|&v| v == 0.5));
    assert!(l.height_norm.iter().all(|&v| (v - 0.3).abs() < 1e-6));
}

#[test]
fn adding_tiles_never_adds_nodata() {
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    let b = quad_bounds(quad());
    let mut sources = Vec::new();
    let mut last = 512 * 512;
    for _ in 0..4 {
        let x0 = b.min_x + rng.gen_range(0.0..0.7) * b.width();
        let y0 = b.min_y + rng.gen_range(0.0..0.7) * b.height();
        let side = rng.gen_range(0.2..0.5) * b.width();
        let tile = GeoBox::new(x0, y0, x0 + side, y0 + side).unwrap();
        sources.push(source(tile, 16, rng.gen(), rng.gen_range(0.0..150.0)));
        let l = make_label_quad(quad(), &sources, &LabelConfig::default()).unwrap();
        for (&d, &h) in l.density.iter().zip(&l.height_norm) {
            assert!(d == LABEL_NODATA || (0.0..=1.0).contains(&d));
            assert!(h == LABEL_NODATA || (0.0..=1.0).contains(&h));
        }
        let n = nodata_count(&l);
        assert!(n <= last);
        last = n;
    }
    assert!(last < 512 * 512);
}

#[test]
fn index_corner_tile_hits_four_quads() {
    let a = quad_bounds(QuadId::new(10, 10).unwrap());
    let corner = GeoBox::new(a.max_x - 5.0, a.min_y - 5.0, a.max_x + 5.0, a.min_y + 5.0).unwrap();
    let quads: Vec<QuadId> = (9..13)
        .flat_map(|x| (9..13).map(move |y| QuadId::new(x, y).unwrap()))
        .collect();
    let tile = TileFootprint {
        id: "t".into(),
        bbox: corner,
        source: "s".into(),
    };
    let idx = build_quad_index(&quads, &[tile]);
    let hits: Vec<(u32, u32)> = idx
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(q, _)| (q.x(), q.y()))
        .collect();
    assert_eq!(hits, vec![(10, 10), (10, 11), (11, 10), (11, 11)]);
}

#[test]
fn splits_partition_for_many_seeds() {
    let quads: Vec<QuadId> = (0..257).map(|i| QuadId::new(i, 2 * i).unwrap()).collect();
    for seed in 0..200 {
        let s = split_quads(&quads, [0.7, 0.2, 0.1], seed).unwrap();
        let mut all: Vec<QuadId> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), quads.len());
        all.sort();
        let mut want = quads.clone();
        want.sort();
        assert_eq!(all, want);
    }
}

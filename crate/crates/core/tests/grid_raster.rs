mod oracles;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanmap_core::grid::{
    downsample_average, parse_quad_id, quad_bounds, quad_for_point, GridSpec, QuadId,
    HALF_EXTENT_M, QUADS_PER_AXIS,
};
use urbanmap_core::raster::{
    merge_crop, mercator_to_lonlat, lonlat_to_mercator, resample_bilinear, Crs, QuadRaster,
    MAX_LATITUDE,
};
use urbanmap_core::GeoBox;

const ND: f32 = -9999.0;

fn random_raster(rng: &mut ChaCha8Rng, spec: GridSpec, nodata_p: f64) -> QuadRaster {
    let data = (0..spec.len())
        .map(|_| if rng.gen_bool(nodata_p) { ND } else { rng.gen_range(-5.0f32..50.0) })
        .collect();
    QuadRaster::new(spec, 1, data, ND, Crs::WebMercator).unwrap()
}

#[test]
fn adjacent_quads_share_bit_identical_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let x = rng.gen_range(0..QUADS_PER_AXIS - 1);
        let y = rng.gen_range(0..QUADS_PER_AXIS - 1);
        let a = quad_bounds(QuadId::new(x, y).unwrap());
        let east = quad_bounds(QuadId::new(x + 1, y).unwrap());
        let south = quad_bounds(QuadId::new(x, y + 1).unwrap());
        assert_eq!(a.max_x.to_bits(), east.min_x.to_bits());
        assert_eq!(a.min_y.to_bits(), south.max_y.to_bits());
        assert_eq!((a.min_y, a.max_y), (east.min_y, east.max_y));
        assert!(!a.intersects(&east) && !a.intersects(&south));
    }
}

#[test]
fn outer_quads_cover_the_full_square() {
    let n = QUADS_PER_AXIS - 1;
    assert_eq!(quad_bounds(QuadId::new(0, 0).unwrap()).min_x, -HALF_EXTENT_M);
    assert_eq!(quad_bounds(QuadId::new(0, 0).unwrap()).max_y, HALF_EXTENT_M);
    let last = quad_bounds(QuadId::new(n, n).unwrap());
    assert!((last.max_x - HALF_EXTENT_M).abs() < 1e-6);
    assert!((last.min_y + HALF_EXTENT_M).abs() < 1e-6);
    // widths only differ in the last ulps
    let w0 = quad_bounds(QuadId::new(0, 0).unwrap()).width();
    let w1 = quad_bounds(QuadId::new(1234, 17).unwrap()).width();
    assert!((w0 - w1).abs() < 1e-8);
}

#[test]
fn edge_points_belong_to_exactly_one_quad() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let x = rng.gen_range(1..QUADS_PER_AXIS - 1);
        let y = rng.gen_range(1..QUADS_PER_AXIS - 1);
        let b = quad_bounds(QuadId::new(x, y).unwrap());
        let owners = [(x - 1, y), (x, y), (x, y - 1), (x - 1, y - 1)]
            .into_iter()
            .filter(|&(qx, qy)| quad_bounds(QuadId::new(qx, qy).unwrap()).contains(b.min_x, b.max_y))
            .count();
        assert_eq!(owners, 1);
        assert!(b.contains(b.min_x, b.max_y));
    }
}

#[test]
fn downsample_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let spec = GridSpec::new(0.0, 64.0, 1.0, 64, 64).unwrap();
        let r = random_raster(&mut rng, spec, if trial % 2 == 0 { 0.3 } else { 0.9 });
        for f in [1, 2, 4, 8, 16, 64] {
            let got = downsample_average(&r, f).unwrap();
            let want = oracles::downsample(r.data(), 64, 64, f, ND);
            assert_eq!(got.data(), &want[..], "factor {f}");
            assert_eq!(got.spec().pixel_size, f as f64);
        }
    }
}

#[test]
fn downsample_ignores_order_within_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = GridSpec::new(0.0, 8.0, 1.0, 8, 8).unwrap();
    let r = random_raster(&mut rng, spec, 0.2);
    let base = downsample_average(&r, 8).unwrap().data()[0];
    for _ in 0..50 {
        let mut d = r.data().to_vec();
        // Fisher-Yates on the single block
        for i in (1..d.len()).rev() {
            d.swap(i, rng.gen_range(0..=i));
        }
        let s = QuadRaster::new(spec, 1, d, ND, Crs::WebMercator).unwrap();
        let v = downsample_average(&s, 8).unwrap().data()[0];
        assert!((v - base).abs() <= 1e-5 * base.abs().max(1.0));
    }
}

#[test]
fn bilinear_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let src_spec = GridSpec::new(100.0, 900.0, 10.0, 32, 32).unwrap();
        let src = random_raster(&mut rng, src_spec, 0.05);
        let ps = rng.gen_range(2.0..25.0);
        let out = GridSpec::new(
            rng.gen_range(60.0..140.0),
            rng.gen_range(860.0..940.0),
            ps,
            rng.gen_range(1..40),
            rng.gen_range(1..40),
        )
        .unwrap();
        let got = resample_bilinear(&src, &out).unwrap();
        for r in 0..out.height {
            for c in 0..out.width {
                let (x, y) = out.cell_center(r, c);
                let want = oracles::bilinear_at(src.data(), &src_spec, ND, x, y);
                let v = got.data()[r * out.width + c];
                match want {
                    None => assert_eq!(v, ND, "cell ({r},{c})"),
                    Some(w) => assert!((v as f64 - w).abs() < 1e-6 * w.abs().max(1.0), "{v} vs {w}"),
                }
            }
        }
    }
}

#[test]
fn identity_resample_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let spec = GridSpec::new(-5000.0, 7000.0, 4.777314267823516, 32, 32).unwrap();
    let r = random_raster(&mut rng, spec, 0.2);
    let s = resample_bilinear(&r, &spec).unwrap();
    assert_eq!(s.data(), r.data());
}

#[test]
fn merge_matches_last_valid_wins_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let ps = 2.0;
        let tiles: Vec<QuadRaster> = (0..3)
            .map(|_| {
                let spec = GridSpec::new(
                    rng.gen_range(-10i32..10) as f64 * ps + if rng.gen_bool(0.3) { 0.7 } else { 0.0 },
                    rng.gen_range(20i32..40) as f64 * ps,
                    ps,
                    rng.gen_range(4..24),
                    rng.gen_range(4..24),
                )
                .unwrap();
                random_raster(&mut rng, spec, 0.25)
            })
            .collect();
        let target = GeoBox::new(-16.0, 10.0, 30.0, 70.0).unwrap();
        let got = merge_crop(&tiles, target).unwrap();
        let out = *got.spec();
        assert_eq!((out.origin_x, out.origin_y, out.pixel_size), (-16.0, 70.0, ps));
        assert_eq!((out.width, out.height), (23, 30));
        let pairs: Vec<(GridSpec, Vec<f32>)> =
            tiles.iter().map(|t| (*t.spec(), t.data().to_vec())).collect();
        assert_eq!(got.data(), &oracles::merge(&pairs, &out, ND)[..]);
    }
}

#[test]
fn projection_round_trip_1000_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..1000 {
        let lon = rng.gen_range(-180.0..180.0);
        let lat = rng.gen_range(-MAX_LATITUDE..MAX_LATITUDE);
        let (x, y) = lonlat_to_mercator(lon, lat).unwrap();
        let (lon2, lat2) = mercator_to_lonlat(x, y).unwrap();
        assert!((lon - lon2).abs() < 1e-9 && (lat - lat2).abs() < 1e-9, "{lon},{lat}");
        let q = quad_for_point(lon, lat).unwrap();
        assert!(quad_bounds(q).contains(x, y));
    }
}

proptest! {
    #[test]
    fn quad_names_round_trip(x in 0u32..2048, y in 0u32..2048) {
        let q = QuadId::new(x, y).unwrap();
        let name = q.name();
        prop_assert_eq!(parse_quad_id(&name).unwrap(), q);
        prop_assert_eq!(parse_quad_id(&name).unwrap().name(), name);
    }

    #[test]
    fn point_lookup_contains_projected_point(lon in -180.0f64..180.0, lat in -85.05f64..85.05) {
        let q = quad_for_point(lon, lat).unwrap();
        let (x, y) = lonlat_to_mercator(lon, lat).unwrap();
        prop_assert!(quad_bounds(q).contains(x, y));
    }

    #[test]
    fn bad_names_are_rejected(s in "[A-Z0-9-]{0,16}") {
        if let Ok(q) = parse_quad_id(&s) {
            prop_assert_eq!(q.name(), s);
        }
    }
}

mod oracles;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanmap_core::grid::GridSpec;
use urbanmap_core::postproc::{
    agree_pixel, enforce_agreement, mask_uninhabitable, rolling_aggregate, ClarityRaster,
    MaskLayers, PostprocConfig, SignalKind, TimeSeriesStack, WATER_CODES,
};
use urbanmap_core::raster::{Crs, QuadRaster};

const VALUES: [f32; 5] = [0.0, 1.0 / 255.0, 0.1, 0.5, 1.0];
const CLARITY: [f32; 4] = [1.0, 3.4, 3.5, 4.0];

fn raster(w: usize, h: usize, data: Vec<f32>) -> QuadRaster {
    QuadRaster::new(GridSpec::new(0.0, h as f64, 1.0, w, h).unwrap(), 1, data, -1.0, Crs::WebMercator)
        .unwrap()
}

/// The 2500 value/clarity combinations laid out as a 625 x 4 grid, one row
/// per clarity level.
fn exhaustive_stack(with_clarity: bool) -> (TimeSeriesStack, Vec<([f32; 4], f32)>) {
    let mut cases = Vec::new();
    for &c in &CLARITY {
        for a in VALUES {
            for b in VALUES {
                for d in VALUES {
                    for e in VALUES {
                        cases.push(([a, b, d, e], c));
                    }
                }
            }
        }
    }
    let quarters = (0..4)
        .map(|t| raster(625, 4, cases.iter().map(|(v, _)| v[t]).collect()))
        .collect();
    let clarity = with_clarity
        .then(|| ClarityRaster(raster(625, 4, cases.iter().map(|&(_, c)| c).collect())));
    (TimeSeriesStack::new(quarters, clarity).unwrap(), cases)
}

#[test]
fn rolling_aggregate_matches_literal_transcription() {
    let cfg = PostprocConfig::default();
    for with_clarity in [true, false] {
        let (stack, cases) = exhaustive_stack(with_clarity);
        for (kind, floor) in [(SignalKind::Density, 2.0 / 255.0), (SignalKind::Height, 0.0)] {
            let got = rolling_aggregate(&stack, kind, &cfg).unwrap();
            for (i, &(v, c)) in cases.iter().enumerate() {
                let want = oracles::alg1(v, with_clarity.then_some(c), floor);
                assert_eq!(got.data()[i].to_bits(), want.to_bits(), "{v:?} clarity {c} {kind:?}");
            }
        }
    }
}

#[test]
fn aggregation_is_bounded_by_the_stack_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cfg = PostprocConfig::default();
    let n = 64 * 64;
    let quarters: Vec<QuadRaster> = (0..4)
        .map(|_| raster(64, 64, (0..n).map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen() }).collect()))
        .collect();
    let clarity = ClarityRaster(raster(64, 64, (0..n).map(|_| rng.gen_range(1.0..=4.0)).collect()));
    let stack = TimeSeriesStack::new(quarters.clone(), Some(clarity)).unwrap();
    let out = rolling_aggregate(&stack, SignalKind::Density, &cfg).unwrap();
    for i in 0..n {
        let max = quarters.iter().map(|q| q.data()[i]).fold(0.0f32, f32::max);
        assert!(out.data()[i] >= 0.0 && out.data()[i] <= max);
    }
}

fn random_masks(rng: &mut ChaCha8Rng, n: usize) -> MaskLayers {
    MaskLayers {
        gsw_transitions: (0..n).map(|_| rng.gen_range(0..=10)).collect(),
        dem: (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => -32768.0,
                1 => 5100.0,
                2 => 5100.5,
                _ => rng.gen_range(-50.0..7000.0),
            })
            .collect(),
        dem_nodata: -32768.0,
    }
}

#[test]
fn masking_zeroes_exactly_water_and_high_ground() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let cfg = PostprocConfig::default();
    for _ in 0..100 {
        let n = 64 * 64;
        let m = random_masks(&mut rng, n);
        let pred = raster(64, 64, (0..n).map(|_| rng.gen_range(0.0f32..1.0) + 1e-3).collect());
        let out = mask_uninhabitable(&pred, &m, &cfg).unwrap();
        for i in 0..n {
            let dem = m.dem[i];
            let bad = WATER_CODES.contains(&m.gsw_transitions[i]) || (dem != -32768.0 && dem > 5100.0);
            let want = if bad { 0.0 } else { pred.data()[i] };
            assert_eq!(out.data()[i], want);
        }
        assert_eq!(mask_uninhabitable(&out, &m, &cfg).unwrap(), out);
    }
}

fn satisfies_implications(d: f32, h: f32, min_h: f32, floor: f32) -> bool {
    (d > 0.0 || h == 0.0) && (d <= 0.0 || h >= min_h) && (h <= 0.0 || d >= floor)
}

#[test]
fn agreement_implications_and_idempotence() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let cfg = PostprocConfig::default();
    for _ in 0..100 {
        let n = 64 * 64;
        let pick = |rng: &mut ChaCha8Rng, hi: f32, special: &[f32]| {
            if rng.gen_bool(0.3) {
                special[rng.gen_range(0..special.len())]
            } else {
                rng.gen_range(0.0..hi)
            }
        };
        let d: Vec<f32> = (0..n).map(|_| pick(&mut rng, 1.0, &[0.0, 0.001, 2.0 / 255.0])).collect();
        let h: Vec<f32> = (0..n).map(|_| pick(&mut rng, 60.0, &[0.0, 1.0, 2.4])).collect();
        let (d1, h1) = enforce_agreement(&raster(64, 64, d), &raster(64, 64, h), &cfg).unwrap();
        for i in 0..n {
            let (a, b) = (d1.data()[i], h1.data()[i]);
            assert!(satisfies_implications(a, b, 2.4, 2.0 / 255.0), "({a}, {b})");
        }
        let (d2, h2) = enforce_agreement(&d1, &h1, &cfg).unwrap();
        assert_eq!((d2, h2), (d1, h1));
    }
}

proptest! {
    #[test]
    fn agree_pixel_is_a_projection(d in prop_oneof![Just(0.0f32), 0.0f32..1.0], h in prop_oneof![Just(0.0f32), 0.0f32..100.0]) {
        let (a, b) = agree_pixel(d, h, 2.4, 2.0 / 255.0);
        prop_assert!(satisfies_implications(a, b, 2.4, 2.0 / 255.0));
        prop_assert_eq!(agree_pixel(a, b, 2.4, 2.0 / 255.0), (a, b));
        // values only move up, except height annihilated by zero density
        prop_assert!(a >= d);
        prop_assert!(b >= h || (d == 0.0 && b == 0.0));
    }
}

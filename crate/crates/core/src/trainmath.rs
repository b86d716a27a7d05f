//! Training-side numerics: the bounded regression loss, quad sampling
//! weights, aligned patch sampling and input augmentation.
//!
//! Random draws go through any [`rand::Rng`]; the binaries seed a
//! `ChaCha8Rng` so that sequences are reproducible. Draw order is part of
//! the contract and is documented on each sampling function.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{OUTPUT_FACTOR, QUAD_PIXELS};
use crate::labelgen::{LabelQuad, LABEL_NODATA};

pub const DEFAULT_DELTA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    delta: f64,
}

impl LossParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Argument(format!("huber delta must be > 0, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
        }
    }
}

/// Piecewise-linear sigmoid saturating at `x = -3` and `x = 3`.
#[inline]
pub fn hard_sigmoid(x: f64) -> f64 {
    if x < -3.0 {
        0.0
    } else if x > 3.0 {
        1.0
    } else {
        (x + 3.0) / 6.0
    }
}

/// Derivative of [`hard_sigmoid`]; the closed interval takes slope 1/6.
#[inline]
pub fn hard_sigmoid_grad(x: f64) -> f64 {
    if (-3.0..=3.0).contains(&x) {
        1.0 / 6.0
    } else {
        0.0
    }
}

#[inline]
pub fn huber(y: f64, yhat: f64, p: LossParams) -> f64 {
    let r = (y - yhat).abs();
    if r <= p.delta {
        0.5 * r * r
    } else {
        p.delta * (r - 0.5 * p.delta)
    }
}

/// d huber / d yhat.
#[inline]
pub fn huber_grad_pred(y: f64, yhat: f64, p: LossParams) -> f64 {
    let r = y - yhat;
    if r.abs() <= p.delta {
        -r
    } else {
        -p.delta * r.signum()
    }
}

/// Loss of a raw model output `x` against label `y`.
#[inline]
pub fn activated_loss(y: f64, x: f64, p: LossParams) -> f64 {
    huber(y, hard_sigmoid(x), p)
}

/// d activated_loss / d x.
#[inline]
pub fn activated_loss_grad(y: f64, x: f64, p: LossParams) -> f64 {
    huber_grad_pred(y, hard_sigmoid(x), p) * hard_sigmoid_grad(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchLoss {
    /// Mean loss over valid cells, 0 when there are none.
    pub value: f64,
    pub valid_cells: usize,
}

impl PatchLoss {
    pub fn is_empty(&self) -> bool {
        self.valid_cells == 0
    }
}

/// Mean activated loss over cells whose label is not −1.
pub fn masked_patch_loss(logits: &[f32], labels: &[f32], p: LossParams) -> Result<PatchLoss> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&x, &y) in logits.iter().zip(labels) {
        if y == LABEL_NODATA {
            continue;
        }
        sum += activated_loss(y as f64, x as f64, p);
        n += 1;
    }
    Ok(PatchLoss {
        value: if n == 0 { 0.0 } else { sum / n as f64 },
        valid_cells: n,
    })
}

/// `0.01 * mean` of the strictly positive sums, or 1 when there are none.
pub fn default_epsilon(sums: &[f64]) -> f64 {
    let pos: Vec<f64> = sums.iter().copied().filter(|&s| s > 0.0).collect();
    if pos.is_empty() {
        1.0
    } else {
        0.01 * pos.iter().sum::<f64>() / pos.len() as f64
    }
}

/// Sampling probabilities `w_i ∝ sum_i + epsilon`.
///
/// `epsilon = 0` is accepted as a limiting case as long as some sum is
/// positive.
pub fn weights_from_sums(sums: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if sums.is_empty() {
        return Err(Error::Argument("no quads to weight".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if sums.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::Argument("density sums must be finite and >= 0".into()));
    }
    let raw: Vec<f64> = sums.iter().map(|s| s + epsilon).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::Argument("all weights are zero".into()));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

pub fn quad_sampling_weights(labels: &[LabelQuad], epsilon: f64) -> Result<Vec<f64>> {
    let sums: Vec<f64> = labels.iter().map(LabelQuad::density_sum).collect();
    weights_from_sums(&sums, epsilon)
}

pub const IMAGE_PATCH: usize = 512;
pub const LABEL_PATCH: usize = IMAGE_PATCH / OUTPUT_FACTOR;

/// An image patch origin on the 4096 grid and its label origin on the 512 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchPair {
    pub image_origin: (usize, usize),
    pub label_origin: (usize, usize),
}

impl PatchPair {
    pub fn image_size(&self) -> usize {
        IMAGE_PATCH
    }

    pub fn label_size(&self) -> usize {
        LABEL_PATCH
    }
}

/// Draws an aligned patch pair. Draw order: row, then column, each uniform
/// over the multiples of 8 in `[0, 4096 - 512]`.
pub fn sample_patch_pair<R: Rng + ?Sized>(rng: &mut R) -> PatchPair {
    let slots = (QUAD_PIXELS - IMAGE_PATCH) / OUTPUT_FACTOR + 1;
    let lr = rng.gen_range(0..slots);
    let lc = rng.gen_range(0..slots);
    PatchPair {
        image_origin: (lr * OUTPUT_FACTOR, lc * OUTPUT_FACTOR),
        label_origin: (lr, lc),
    }
}

/// Multi-band image patch, band-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * bands || width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "patch data length {} != {width}x{height}x{bands}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[b * n..(b + 1) * n]
    }
}

/// Index of the prior channel in a 4-band (R, G, B, prior) input.
pub const PRIOR_BAND: usize = 3;

/// Rectangle zeroed in the prior band, in patch pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// The random decisions of one augmentation, separated from applying them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    pub erase: Option<EraseWindow>,
}

/// Sizes an erase window of area fraction `s` and aspect `r` (height/width)
/// inside a `height x width` patch: `h = round(sqrt(s*A*r))`,
/// `w = round(sqrt(s*A/r))`, each clamped to the patch.
pub fn erase_extent(s: f64, r: f64, height: usize, width: usize) -> (usize, usize) {
    let area = s * (height * width) as f64;
    let h = libm::round(libm::sqrt(area * r)) as usize;
    let w = libm::round(libm::sqrt(area / r)) as usize;
    (h.clamp(1, height), w.clamp(1, width))
}

/// Draws an augmentation for a `height x width` patch.
///
/// Draw order: `u_h < 0.5` horizontal flip; `u_v < 0.5` vertical flip;
/// `u_e < 0.5` erase; if erasing, `s ~ U[0.2, 1.0]`, `r ~ U[0.3, 3.3]`, then
/// the top row and left column uniformly over positions keeping the window
/// inside the patch.
pub fn draw_augment<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> AugmentDraw {
    let hflip = rng.gen::<f64>() < 0.5;
    let vflip = rng.gen::<f64>() < 0.5;
    let erase = (rng.gen::<f64>() < 0.5).then(|| {
        let s = rng.gen_range(0.2..=1.0);
        let r = rng.gen_range(0.3..=3.3);
        let (h, w) = erase_extent(s, r, height, width);
        let top = rng.gen_range(0..=height - h);
        let left = rng.gen_range(0..=width - w);
        EraseWindow {
            top,
            left,
            height: h,
            width: w,
        }
    });
    AugmentDraw { hflip, vflip, erase }
}

/// Applies flips to every band, then zeroes the erase window in the prior band.
pub fn apply_augment(image: &Patch, draw: &AugmentDraw) -> Result<Patch> {
    if image.bands <= PRIOR_BAND {
        return Err(Error::Shape(format!(
            "augmentation needs a prior band, patch has {} bands",
            image.bands
        )));
    }
    let (w, h) = (image.width, image.height);
    let mut out = image.clone();
    for b in 0..image.bands {
        let src = image.band(b);
        let dst = out.band_mut(b);
        for row in 0..h {
            let sr = if draw.vflip { h - 1 - row } else { row };
            for col in 0..w {
                let sc = if draw.hflip { w - 1 - col } else { col };
                dst[row * w + col] = src[sr * w + sc];
            }
        }
    }
    if let Some(e) = draw.erase {
        let prior = out.band_mut(PRIOR_BAND);
        for row in e.top..(e.top + e.height).min(h) {
            for col in e.left..(e.left + e.width).min(w) {
                prior[row * w + col] = 0.0;
            }
        }
    }
    Ok(out)
}

pub fn augment_sample<R: Rng + ?Sized>(image: &Patch, rng: &mut R) -> Result<Patch> {
    let draw = draw_augment(rng, image.height, image.width);
    apply_augment(image, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hard_sigmoid_cases() {
        assert_eq!(hard_sigmoid(0.0), 0.5);
        assert_eq!(hard_sigmoid(-3.0), 0.0);
        assert_eq!(hard_sigmoid(3.0), 1.0);
        assert_eq!(hard_sigmoid(4.0), 1.0);
        assert_eq!(hard_sigmoid(-4.0), 0.0);
    }

    #[test]
    fn huber_branches() {
        let p = LossParams::default();
        assert_eq!(huber(0.3, 0.3, p), 0.0);
        assert!((huber(0.0, 0.5, p) - 0.125).abs() < 1e-15);
        assert!((huber(1.0, 0.0, p) - 0.455).abs() < 1e-15);
        assert!(LossParams::new(0.0).is_err());
        assert!(LossParams::new(-1.0).is_err());
    }

    #[test]
    fn masked_loss_cases() {
        let p = LossParams::default();
        let l = masked_patch_loss(&[1.0, 2.0], &[-1.0, -1.0], p).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.is_empty());
        let l = masked_patch_loss(&[10.0; 4], &[1.0; 4], p).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.valid_cells, 4);
        let l = masked_patch_loss(&[0.0], &[0.0], p).unwrap();
        assert_eq!(l.value, 0.125);
        assert!(masked_patch_loss(&[0.0], &[0.0, 1.0], p).is_err());
    }

    #[test]
    fn sampling_weights_cases() {
        assert_eq!(weights_from_sums(&[0.0, 0.0], 0.1).unwrap(), vec![0.5, 0.5]);
        let w = weights_from_sums(&[1.0, 3.0], 1e-12).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        assert!(weights_from_sums(&[], 0.1).is_err());
        assert!(weights_from_sums(&[0.0, 5.0, 0.0], 0.01).unwrap().iter().all(|&w| w > 0.0));
        assert_eq!(default_epsilon(&[0.0, 2.0, 4.0]), 0.03);
    }

    #[test]
    fn patch_pairs_are_aligned_and_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut again = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_patch_pair(&mut rng);
            assert_eq!(p, sample_patch_pair(&mut again));
            assert_eq!(p.image_origin.0, 8 * p.label_origin.0);
            assert_eq!(p.image_origin.1, 8 * p.label_origin.1);
            assert!(p.image_origin.0 + p.image_size() <= QUAD_PIXELS);
            assert!(p.image_origin.1 + p.image_size() <= QUAD_PIXELS);
            assert!(p.label_origin.0 + p.label_size() <= 512);
        }
    }

    fn ramp_patch(n: usize) -> Patch {
        let data = (0..n * n * 4).map(|i| 1.0 + i as f32).collect();
        Patch::new(n, n, 4, data).unwrap()
    }

    #[test]
    fn noop_draw_is_identity() {
        let p = ramp_patch(8);
        assert_eq!(apply_augment(&p, &AugmentDraw::default()).unwrap(), p);
    }

    #[test]
    fn full_erase_zeroes_only_prior() {
        let p = ramp_patch(16);
        let (h, w) = erase_extent(1.0, 1.0, 16, 16);
        assert_eq!((h, w), (16, 16));
        let draw = AugmentDraw {
            erase: Some(EraseWindow {
                top: 0,
                left: 0,
                height: h,
                width: w,
            }),
            ..Default::default()
        };
        let out = apply_augment(&p, &draw).unwrap();
        assert!(out.band(PRIOR_BAND).iter().all(|&v| v == 0.0));
        for b in 0..3 {
            assert_eq!(out.band(b), p.band(b));
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let p = ramp_patch(7);
        for draw in [
            AugmentDraw { hflip: true, ..Default::default() },
            AugmentDraw { vflip: true, ..Default::default() },
        ] {
            let once = apply_augment(&p, &draw).unwrap();
            assert_ne!(once, p);
            assert_eq!(apply_augment(&once, &draw).unwrap(), p);
        }
    }

    #[test]
    fn drawn_windows_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut erased = 0;
        for _ in 0..500 {
            let d = draw_augment(&mut rng, 512, 512);
            if let Some(e) = d.erase {
                erased += 1;
                assert!(e.top + e.height <= 512 && e.left + e.width <= 512);
                assert!(e.height * e.width >= 1);
            }
        }
        assert!((180..320).contains(&erased), "{erased}");
    }
}

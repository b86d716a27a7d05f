//! Static and temporal evaluation metrics.
//!
//! Static metrics compare one prediction layer with one reference layer on
//! the same grid. Temporal metrics work on window signals: per-window mean
//! density traced across annual snapshots.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::Layer;

fn check_aligned(a: &Layer<'_>, b: &Layer<'_>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "layers are not aligned: {} vs {} cells",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Combines partial counts; associative and commutative.
    pub fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }

    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.total())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub counts: Confusion,
}

impl DetectionReport {
    pub fn from_counts(counts: Confusion) -> Self {
        Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            accuracy: counts.accuracy(),
            counts,
        }
    }

    /// True when no cell could be evaluated.
    pub fn is_empty(&self) -> bool {
        self.counts.total() == 0
    }
}

/// Binary detection scores of `pred > pred_thr` against `ref > ref_thr`,
/// over cells valid in both layers.
pub fn detection_metrics(
    pred: Layer<'_>,
    reference: Layer<'_>,
    pred_thr: f32,
    ref_thr: f32,
) -> Result<DetectionReport> {
    check_aligned(&pred, &reference)?;
    let mut c = Confusion::default();
    for i in 0..pred.len() {
        let (Some(p), Some(r)) = (pred.get(i), reference.get(i)) else {
            continue;
        };
        c.add(p > pred_thr, r > ref_thr);
    }
    Ok(DetectionReport::from_counts(c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionReport {
    /// Mean absolute error over cells with strictly positive reference;
    /// `None` when there are none.
    pub mae_positive: Option<f64>,
    /// Coefficient of determination over all valid cells.
    pub r2: f64,
    /// Set when the reference is constant (or empty) and `r2` is reported as 0.
    pub r2_degenerate: bool,
    pub valid_cells: usize,
    pub positive_cells: usize,
}

pub fn regression_metrics(pred: Layer<'_>, reference: Layer<'_>) -> Result<RegressionReport> {
    check_aligned(&pred, &reference)?;
    let pairs: Vec<(f64, f64)> = (0..pred.len())
        .filter_map(|i| Some((pred.get(i)? as f64, reference.get(i)? as f64)))
        .collect();
    let mut abs_sum = 0.0;
    let mut positive = 0usize;
    for &(p, r) in &pairs {
        if r > 0.0 {
            abs_sum += (p - r).abs();
            positive += 1;
        }
    }
    let n = pairs.len();
    let mean = pairs.iter().map(|&(_, r)| r).sum::<f64>() / n.max(1) as f64;
    let ss_tot: f64 = pairs.iter().map(|&(_, r)| (r - mean) * (r - mean)).sum();
    let ss_res: f64 = pairs.iter().map(|&(p, r)| (r - p) * (r - p)).sum();
    let degenerate = n == 0 || ss_tot == 0.0;
    Ok(RegressionReport {
        mae_positive: (positive > 0).then(|| abs_sum / positive as f64),
        r2: if degenerate { 0.0 } else { 1.0 - ss_res / ss_tot },
        r2_degenerate: degenerate,
        valid_cells: n,
        positive_cells: positive,
    })
}

/// Height classes in meters, each half-open `(lo, hi]`.
pub const HEIGHT_BINS_M: [(f32, f32); 3] = [(1e-4, 3.0), (3.0, 10.0), (10.0, 30.0)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinF1 {
    pub f1: f64,
    /// No cell of either layer falls in this bin.
    pub empty: bool,
    pub counts: Confusion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightF1Report {
    pub macro_f1: f64,
    pub bins: [BinF1; 3],
}

/// Unweighted mean of per-bin detection F1 over the low/mid/high-rise bins.
pub fn height_macro_f1(pred_m: Layer<'_>, ref_m: Layer<'_>) -> Result<HeightF1Report> {
    check_aligned(&pred_m, &ref_m)?;
    let mut counts = [Confusion::default(); 3];
    for i in 0..pred_m.len() {
        let (Some(p), Some(r)) = (pred_m.get(i), ref_m.get(i)) else {
            continue;
        };
        for (c, &(lo, hi)) in counts.iter_mut().zip(&HEIGHT_BINS_M) {
            c.add(p > lo && p <= hi, r > lo && r <= hi);
        }
    }
    let bins = counts.map(|c| BinF1 {
        f1: c.f1(),
        empty: c.tp + c.fp + c.fn_ == 0,
        counts: c,
    });
    let macro_f1 = bins.iter().map(|b| b.f1).sum::<f64>() / 3.0;
    Ok(HeightF1Report { macro_f1, bins })
}

/// Position of a window in its quad; `quad` is an opaque caller tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowId {
    pub quad: u32,
    pub row: usize,
    pub col: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSignal {
    pub id: WindowId,
    /// Mean of valid cells per year, chronological.
    pub values: Vec<f64>,
}

impl WindowSignal {
    pub fn diffs(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.windows(2).map(|w| w[1] - w[0])
    }
}

/// Tiles `width x height` annual layers with non-overlapping `k x k`
/// windows (ragged edges dropped) and returns one signal per window.
///
/// Windows with no valid cell in some year, or zero in every year, are
/// left out.
pub fn window_signals(
    annual: &[Layer<'_>],
    width: usize,
    height: usize,
    k: usize,
    quad: u32,
) -> Result<Vec<WindowSignal>> {
    if annual.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 annual layers, got {}",
            annual.len()
        )));
    }
    if k == 0 {
        return Err(Error::Argument("window size must be positive".into()));
    }
    for l in annual {
        if l.len() != width * height {
            return Err(Error::Shape(format!(
                "annual layer has {} cells, grid is {width}x{height}",
                l.len()
            )));
        }
    }
    let mut out = Vec::new();
    for wr in 0..height / k {
        'window: for wc in 0..width / k {
            let mut values = Vec::with_capacity(annual.len());
            for l in annual {
                let mut sum = 0.0;
                let mut n = 0usize;
                for r in wr * k..(wr + 1) * k {
                    for c in wc * k..(wc + 1) * k {
                        if let Some(v) = l.get(r * width + c) {
                            sum += v as f64;
                            n += 1;
                        }
                    }
                }
                if n == 0 {
                    continue 'window;
                }
                values.push(sum / n as f64);
            }
            if values.iter().all(|&v| v == 0.0) {
                continue;
            }
            out.push(WindowSignal {
                id: WindowId {
                    quad,
                    row: wr,
                    col: wc,
                    k,
                },
                values,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConfig {
    pub tau_max: f64,
    pub tau_steps: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            tau_max: 0.01,
            tau_steps: 100,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_steps < 2 || !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return Err(Error::Argument(format!("invalid stability config {self:?}")));
        }
        Ok(())
    }

    /// Evenly spaced tolerances over `[0, tau_max]`, endpoints included.
    pub fn taus(&self) -> impl Iterator<Item = f64> + '_ {
        let last = (self.tau_steps - 1) as f64;
        (0..self.tau_steps).map(move |i| self.tau_max * i as f64 / last)
    }
}

/// True if every step is `>= -tau` or every step is `<= tau`.
pub fn monotone_within(signal: &WindowSignal, tau: f64) -> bool {
    signal.diffs().all(|d| d >= -tau) || signal.diffs().all(|d| d <= tau)
}

/// Area under the fraction-of-monotone-windows curve over `tau`, by the
/// trapezoidal rule, divided by `tau_max`. `None` for an empty signal set.
pub fn monotonicity_auc(signals: &[WindowSignal], cfg: &StabilityConfig) -> Result<Option<f64>> {
    cfg.validate()?;
    if signals.is_empty() {
        return Ok(None);
    }
    if let Some(s) = signals.iter().find(|s| s.values.len() < 2) {
        return Err(Error::Argument(format!("signal {:?} has fewer than 2 values", s.id)));
    }
    // A window stays monotone for every tau above its smallest passing tolerance.
    let thresholds: Vec<f64> = signals
        .iter()
        .map(|s| {
            let worst_drop = s.diffs().fold(0.0f64, |m, d| m.max(-d));
            let worst_rise = s.diffs().fold(0.0f64, |m, d| m.max(d));
            worst_drop.min(worst_rise)
        })
        .collect();
    let n = signals.len() as f64;
    let fractions: Vec<f64> = cfg
        .taus()
        .map(|tau| thresholds.iter().filter(|&&t| t <= tau).count() as f64 / n)
        .collect();
    // Uniform steps: the trapezoid area over tau_max reduces to a mean of
    // panel heights, which keeps an always-monotone set at exactly 1.
    let panels: f64 = fractions.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    Ok(Some(panels / (cfg.tau_steps - 1) as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySummary {
    /// Median of the adjacent-year correlations that could be computed.
    pub corr_median: Option<f64>,
    /// Per adjacent pair; `None` when the pair had fewer than two
    /// contributing windows or zero variance.
    pub pair_correlations: Vec<Option<f64>>,
    /// Population standard deviation of every pooled year-to-year step.
    pub diff_std: Option<f64>,
}

impl StabilitySummary {
    pub fn skipped_pairs(&self) -> usize {
        self.pair_correlations.iter().filter(|c| c.is_none()).count()
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / libm::sqrt(sxx * syy))
}

pub(crate) fn median_f64(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Adjacent-year Pearson correlations (windows zero in both years of a
/// pair left out) and the spread of first differences.
pub fn stability_summary(signals: &[WindowSignal]) -> Result<StabilitySummary> {
    let years = signals.first().map_or(0, |s| s.values.len());
    if signals.iter().any(|s| s.values.len() != years) {
        return Err(Error::Argument("signals have different lengths".into()));
    }
    if !signals.is_empty() && years < 2 {
        return Err(Error::Argument("need at least 2 years".into()));
    }
    let mut pair_correlations = Vec::new();
    for t in 0..years.saturating_sub(1) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = signals
            .iter()
            .map(|s| (s.values[t], s.values[t + 1]))
            .filter(|&(a, b)| !(a == 0.0 && b == 0.0))
            .unzip();
        pair_correlations.push(if xs.len() < 2 { None } else { pearson(&xs, &ys) });
    }
    let mut present: Vec<f64> = pair_correlations.iter().flatten().copied().collect();
    let diffs: Vec<f64> = signals.iter().flat_map(|s| s.diffs()).collect();
    let diff_std = (!diffs.is_empty()).then(|| {
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        libm::sqrt(diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n)
    });
    Ok(StabilitySummary {
        corr_median: median_f64(&mut present),
        pair_correlations,
        diff_std,
    })
}

//! Scalar brute-force reference implementations.
//!
//! Written straight from the definitions with plain loops and no shared code
//! with the library, so agreement between the two means something. Also
//! pulled into the `urbanmap` acceptance suite.
#![allow(dead_code)]

use std::collections::VecDeque;

use urbanmap_core::GridSpec;

fn is_nd(v: f32, nodata: f32) -> bool {
    v == nodata || v.is_nan()
}

fn median_of(mut v: Vec<f32>) -> f32 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        ((v[n / 2 - 1] as f64 + v[n / 2] as f64) * 0.5) as f32
    }
}

/// The four-quarter vote written out branch by branch. `floor` is the
/// building indicator threshold (2/255 for density, 0 for height).
pub fn alg1(values: [f32; 4], clarity: Option<f32>, floor: f32) -> f32 {
    let mut building = Vec::new();
    let mut empty = 0;
    for v in values {
        if v > floor {
            building.push(v);
        } else {
            empty += 1;
        }
    }
    if building.len() >= 3 {
        return median_of(building);
    }
    if empty >= 3 {
        return 0.0;
    }
    match clarity {
        Some(c) if c >= 3.5 => {
            let mut m = values[0];
            for v in values {
                if v > m {
                    m = v;
                }
            }
            m
        }
        Some(c) if c < 3.5 => 0.0,
        _ => median_of(values.to_vec()),
    }
}

pub fn downsample(data: &[f32], w: usize, h: usize, f: usize, nodata: f32) -> Vec<f32> {
    let (ow, oh) = (w / f, h / f);
    let mut out = vec![nodata; ow * oh];
    for orow in 0..oh {
        for ocol in 0..ow {
            let mut sum = 0.0f64;
            let mut n = 0u32;
            for dr in 0..f {
                for dc in 0..f {
                    let v = data[(orow * f + dr) * w + ocol * f + dc];
                    if !is_nd(v, nodata) {
                        sum += v as f64;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                out[orow * ow + ocol] = (sum / n as f64) as f32;
            }
        }
    }
    out
}

/// Bilinear value at map point `(x, y)` of a single-band grid; edge cells
/// are clamped, and any contributing nodata cell poisons the sample.
pub fn bilinear_at(data: &[f32], g: &GridSpec, nodata: f32, x: f64, y: f64) -> Option<f64> {
    let right = g.origin_x + g.width as f64 * g.pixel_size;
    let bottom = g.origin_y - g.height as f64 * g.pixel_size;
    if !(x >= g.origin_x && x < right && y > bottom && y <= g.origin_y) {
        return None;
    }
    let fx = ((x - g.origin_x) / g.pixel_size - 0.5).max(0.0).min((g.width - 1) as f64);
    let fy = ((g.origin_y - y) / g.pixel_size - 0.5).max(0.0).min((g.height - 1) as f64);
    let (c0, r0) = (fx.floor() as usize, fy.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(g.width - 1), (r0 + 1).min(g.height - 1));
    let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);
    let corners = [
        (r0, c0, (1.0 - tx) * (1.0 - ty)),
        (r0, c1, tx * (1.0 - ty)),
        (r1, c0, (1.0 - tx) * ty),
        (r1, c1, tx * ty),
    ];
    let mut acc = 0.0;
    for (r, c, wgt) in corners {
        if wgt == 0.0 {
            continue;
        }
        let v = data[r * g.width + c];
        if is_nd(v, nodata) {
            return None;
        }
        acc += wgt * v as f64;
    }
    Some(acc)
}

/// Last valid value wins, sampled at output cell centers.
pub fn merge(tiles: &[(GridSpec, Vec<f32>)], out: &GridSpec, nodata: f32) -> Vec<f32> {
    let mut res = vec![nodata; out.width * out.height];
    for r in 0..out.height {
        for c in 0..out.width {
            let x = out.origin_x + (c as f64 + 0.5) * out.pixel_size;
            let y = out.origin_y - (r as f64 + 0.5) * out.pixel_size;
            for (g, data) in tiles {
                let tc = ((x - g.origin_x) / g.pixel_size).floor();
                let tr = ((g.origin_y - y) / g.pixel_size).floor();
                if tc < 0.0 || tr < 0.0 || tc >= g.width as f64 || tr >= g.height as f64 {
                    continue;
                }
                let v = data[tr as usize * g.width + tc as usize];
                if !is_nd(v, nodata) {
                    res[r * out.width + c] = v;
                }
            }
        }
    }
    res
}

/// `(tp, fp, fn, tn)` over cells valid in both layers.
pub fn confusion(pred: &[f32], refr: &[f32], nodata: f32, pt: f32, rt: f32) -> [u64; 4] {
    let mut c = [0u64; 4];
    for i in 0..pred.len() {
        if is_nd(pred[i], nodata) || is_nd(refr[i], nodata) {
            continue;
        }
        let idx = match (pred[i] > pt, refr[i] > rt) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[idx] += 1;
    }
    c
}

pub fn f1(c: [u64; 4]) -> f64 {
    let p = if c[0] + c[1] == 0 { 0.0 } else { c[0] as f64 / (c[0] + c[1]) as f64 };
    let r = if c[0] + c[2] == 0 { 0.0 } else { c[0] as f64 / (c[0] + c[2]) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `(mae over ref > 0, r2 over all valid)`; a constant reference gives r2 = 0.
pub fn regression(pred: &[f32], refr: &[f32], nodata: f32) -> (Option<f64>, f64) {
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    for i in 0..pred.len() {
        if !is_nd(pred[i], nodata) && !is_nd(refr[i], nodata) {
            ps.push(pred[i] as f64);
            rs.push(refr[i] as f64);
        }
    }
    let mut mae_sum = 0.0;
    let mut mae_n = 0;
    for i in 0..rs.len() {
        if rs[i] > 0.0 {
            mae_sum += (ps[i] - rs[i]).abs();
            mae_n += 1;
        }
    }
    let mae = if mae_n == 0 { None } else { Some(mae_sum / mae_n as f64) };
    if rs.is_empty() {
        return (mae, 0.0);
    }
    let mean = rs.iter().sum::<f64>() / rs.len() as f64;
    let mut tot = 0.0;
    let mut res = 0.0;
    for i in 0..rs.len() {
        tot += (rs[i] - mean).powi(2);
        res += (rs[i] - ps[i]).powi(2);
    }
    (mae, if tot == 0.0 { 0.0 } else { 1.0 - res / tot })
}

pub fn height_macro_f1(pred: &[f32], refr: &[f32], nodata: f32) -> f64 {
    let bins = [(1e-4f32, 3.0f32), (3.0, 10.0), (10.0, 30.0)];
    let mut total = 0.0;
    for (lo, hi) in bins {
        let inb = |v: f32| if v > lo && v <= hi { 1.0 } else { 0.0 };
        let p: Vec<f32> = pred.iter().map(|&v| if is_nd(v, nodata) { v } else { inb(v) }).collect();
        let r: Vec<f32> = refr.iter().map(|&v| if is_nd(v, nodata) { v } else { inb(v) }).collect();
        total += f1(confusion(&p, &r, nodata, 0.5, 0.5));
    }
    total / 3.0
}

/// Window means per year, same exclusion rules as the library.
pub fn windows(years: &[Vec<f32>], w: usize, h: usize, k: usize, nodata: f32) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for wr in 0..h / k {
        for wc in 0..w / k {
            let mut series = Vec::new();
            let mut ok = true;
            for y in years {
                let mut vals = Vec::new();
                for r in wr * k..wr * k + k {
                    for c in wc * k..wc * k + k {
                        let v = y[r * w + c];
                        if !is_nd(v, nodata) {
                            vals.push(v as f64);
                        }
                    }
                }
                if vals.is_empty() {
                    ok = false;
                    break;
                }
                series.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
            if ok && series.iter().any(|&v| v != 0.0) {
                out.push(series);
            }
        }
    }
    out
}

/// 100-point (by default) trapezoid of the monotone fraction, over tau_max.
pub fn auc(signals: &[Vec<f64>], tau_max: f64, steps: usize) -> f64 {
    let mut frac = Vec::new();
    for i in 0..steps {
        let tau = tau_max * i as f64 / (steps - 1) as f64;
        let mut ok = 0;
        for s in signals {
            let mut up = true;
            let mut down = true;
            for t in 1..s.len() {
                let d = s[t] - s[t - 1];
                if d < -tau {
                    up = false;
                }
                if d > tau {
                    down = false;
                }
            }
            if up || down {
                ok += 1;
            }
        }
        frac.push(ok as f64 / signals.len() as f64);
    }
    let dt = tau_max / (steps - 1) as f64;
    let mut area = 0.0;
    for i in 1..steps {
        area += (frac[i - 1] + frac[i]) * dt / 2.0;
    }
    area / tau_max
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

/// `(per-pair correlation, median of present pairs, population std of diffs)`.
pub fn stability(signals: &[Vec<f64>]) -> (Vec<Option<f64>>, Option<f64>, Option<f64>) {
    let years = signals.first().map_or(0, |s| s.len());
    let mut pairs = Vec::new();
    for t in 0..years.saturating_sub(1) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in signals {
            if s[t] == 0.0 && s[t + 1] == 0.0 {
                continue;
            }
            xs.push(s[t]);
            ys.push(s[t + 1]);
        }
        pairs.push(if xs.len() < 2 { None } else { pearson(&xs, &ys) });
    }
    let mut present: Vec<f64> = pairs.iter().filter_map(|p| *p).collect();
    present.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = match present.len() {
        0 => None,
        n if n % 2 == 1 => Some(present[n / 2]),
        n => Some((present[n / 2 - 1] + present[n / 2]) / 2.0),
    };
    let mut diffs = Vec::new();
    for s in signals {
        for t in 1..s.len() {
            diffs.push(s[t] - s[t - 1]);
        }
    }
    let std = if diffs.is_empty() {
        None
    } else {
        let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
        Some((diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt())
    };
    (pairs, med, std)
}

/// Breadth-first 8-connected flood fill; labels from 1 in scan order.
pub fn flood_labels(mask: &[bool], w: usize, h: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    for start in 0..w * h {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Cells at or above the nearest-rank 95th percentile of the positive deltas.
pub fn p95_mask(delta: &[f32], valid: &[bool]) -> Vec<bool> {
    let mut pos: Vec<f32> = (0..delta.len())
        .filter(|&i| valid[i] && delta[i] > 0.0)
        .map(|i| delta[i])
        .collect();
    if pos.is_empty() {
        return vec![false; delta.len()];
    }
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((95 * pos.len()) as f64 / 100.0).ceil() as usize;
    let t = pos[rank.max(1) - 1];
    (0..delta.len()).map(|i| valid[i] && delta[i] > 0.0 && delta[i] >= t).collect()
}

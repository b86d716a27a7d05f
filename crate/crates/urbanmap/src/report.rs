//! Metric reports (key-value text and JSON) and GeoJSON change polygons.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};
use urbanmap_core::changedet::{ChangePolygon, GrowthField};
use urbanmap_core::eval::{
    detection_metrics, height_macro_f1, monotonicity_auc, regression_metrics, stability_summary,
    window_signals, DetectionReport, WindowSignal,
};
use urbanmap_core::labelgen::MAX_HEIGHT_M;
use urbanmap_core::QuadRaster;

use crate::config::Config;
use crate::error::{Error, Result};

/// Every metric the tools report. Unset fields serialize as `null` so the
/// field set is fixed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub mae_pos: Option<f64>,
    pub r2: Option<f64>,
    pub macro_f1_height: Option<f64>,
    pub corr_median: Option<f64>,
    pub mono_auc: Option<f64>,
    pub diff_std: Option<f64>,
}

impl MetricsReport {
    fn fields(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("accuracy", self.accuracy),
            ("mae_pos", self.mae_pos),
            ("r2", self.r2),
            ("macro_f1_height", self.macro_f1_height),
            ("corr_median", self.corr_median),
            ("mono_auc", self.mono_auc),
            ("diff_std", self.diff_std),
        ]
    }

    /// One `key=value` line per field; missing values print as `na`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            match v {
                Some(v) => writeln!(s, "{k}={v}"),
                None => writeln!(s, "{k}=na"),
            }
            .expect("writing to a String");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Static comparison of a 2-band product (density, normalized height)
/// against a reference on the same grid. Height macro-F1 is only computed
/// when both sides have a height band.
pub fn static_report(pred: &QuadRaster, reference: &QuadRaster, pred_thr: f32, ref_thr: f32) -> Result<MetricsReport> {
    if pred.spec() != reference.spec() {
        return Err(Error::Config("prediction and reference grids differ".into()));
    }
    let det: DetectionReport = detection_metrics(pred.band(0), reference.band(0), pred_thr, ref_thr)?;
    let reg = regression_metrics(pred.band(0), reference.band(0))?;
    let mut r = MetricsReport {
        mae_pos: reg.mae_positive,
        r2: (reg.valid_cells > 0).then_some(reg.r2),
        ..Default::default()
    };
    if !det.is_empty() {
        r.precision = Some(det.precision);
        r.recall = Some(det.recall);
        r.f1 = Some(det.f1);
        r.accuracy = Some(det.accuracy);
    }
    if pred.bands() >= 2 && reference.bands() >= 2 {
        let meters = |q: &QuadRaster| q.extract_band(1).map_valid(|v| v * MAX_HEIGHT_M);
        let (pm, rm) = (meters(pred), meters(reference));
        r.macro_f1_height = Some(height_macro_f1(pm.band(0), rm.band(0))?.macro_f1);
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub k: usize,
    pub windows: usize,
    pub skipped_pairs: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Temporal stability of annual density snapshots, one row per window
/// size. `series[q]` holds the chronological snapshots of quad `q`; windows
/// from all quads are pooled.
pub fn stability_rows(series: &[Vec<QuadRaster>], cfg: &Config) -> Result<Vec<StabilityRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.k.len());
    for &k in &cfg.k {
        let mut signals: Vec<WindowSignal> = Vec::new();
        for (tag, years) in series.iter().enumerate() {
            let Some(first) = years.first() else { continue };
            let layers: Vec<_> = years.iter().map(|y| y.band(0)).collect();
            signals.extend(window_signals(&layers, first.width(), first.height(), k, tag as u32)?);
        }
        let summary = stability_summary(&signals)?;
        rows.push(StabilityRow {
            k,
            windows: signals.len(),
            skipped_pairs: summary.skipped_pairs(),
            metrics: MetricsReport {
                corr_median: summary.corr_median,
                mono_auc: monotonicity_auc(&signals, &cfg.stability())?,
                diff_std: summary.diff_std,
                ..Default::default()
            },
        });
    }
    Ok(rows)
}

/// GeoJSON FeatureCollection in EPSG:3857, one feature per polygon.
pub fn change_geojson(polygons: &[ChangePolygon], field: &GrowthField) -> Value {
    let ring = |r: &[(f64, f64)]| Value::from(r.iter().map(|&(x, y)| json!([x, y])).collect::<Vec<_>>());
    let features: Vec<Value> = polygons
        .iter()
        .map(|p| {
            let mut rings = vec![ring(&p.exterior)];
            rings.extend(p.holes.iter().map(|h| ring(h)));
            let delta_sum: f64 = p.pixels.iter().map(|&i| field.delta[i] as f64).sum();
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": rings },
                "properties": {
                    "pixel_count": p.pixel_count,
                    "area_m2": p.area_m2,
                    "delta_sum": delta_sum,
                },
            })
        })
        .collect();
    json!({
        "type": "FeatureCollection",
        "crs": { "type": "name", "properties": { "name": "urn:ogc:def:crs:EPSG::3857" } },
        "features": features,
    })
}

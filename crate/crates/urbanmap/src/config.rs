//! Run configuration, read from JSON. Every key is optional and falls back
//! to the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use urbanmap_core::eval::StabilityConfig;
use urbanmap_core::postproc::PostprocConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub conf_threshold: f32,
    pub clarity_split: f32,
    pub density_floor: f32,
    pub min_height_m: f32,
    pub elevation_cap_m: f32,
    pub tau_max: f64,
    pub tau_steps: usize,
    pub k: Vec<usize>,
    pub pred_thr: f32,
}

impl Default for Config {
    fn default() -> Self {
        let p = PostprocConfig::default();
        let s = StabilityConfig::default();
        Self {
            conf_threshold: p.conf_threshold,
            clarity_split: p.clarity_split,
            density_floor: p.density_floor,
            min_height_m: p.min_height_m,
            elevation_cap_m: p.elevation_cap_m,
            tau_max: s.tau_max,
            tau_steps: s.tau_steps,
            k: vec![3, 7, 10],
            pred_thr: 0.01,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Config = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.stability().validate()?;
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(Error::Config(format!("window sizes must be positive, got {:?}", self.k)));
        }
        let finite = [
            self.conf_threshold,
            self.clarity_split,
            self.density_floor,
            self.min_height_m,
            self.elevation_cap_m,
            self.pred_thr,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        if self.density_floor < 0.0 || self.min_height_m < 0.0 {
            return Err(Error::Config("density floor and minimum height must be >= 0".into()));
        }
        Ok(())
    }

    pub fn postproc(&self) -> PostprocConfig {
        PostprocConfig {
            conf_threshold: self.conf_threshold,
            clarity_split: self.clarity_split,
            density_floor: self.density_floor,
            min_height_m: self.min_height_m,
            elevation_cap_m: self.elevation_cap_m,
        }
    }

    pub fn stability(&self) -> StabilityConfig {
        StabilityConfig {
            tau_max: self.tau_max,
            tau_steps: self.tau_steps,
        }
    }
}

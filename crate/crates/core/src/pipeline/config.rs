//! Project configuration, read from the TOML file named by
//! `MASTGEOREF_CONFIG`. Command-line flags take precedence.
//!
//! ```toml
//! earth_radius = 6364883.0
//! nms_iou = 0.5
//! class_aware_nms = true
//! min_mag = 0.5
//! marker_size = 25.0
//! jobs = 1
//!
//! [slice]
//! width = 640
//! height = 640
//! overlap = 0.2
//!
//! [eval]
//! iou_thresholds = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
//! mode = "mask"
//! ```

use super::{read_to_string, PipelineError, Result};
use crate::evalmetrics::{coco_thresholds, EvalConfig, EvalMode};
use crate::geodesy::EarthModel;
use crate::motionheading::DEFAULT_MIN_MAG;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONFIG_ENV: &str = "MASTGEOREF_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceDefaults {
    pub width: u32,
    pub height: u32,
    pub overlap: f64,
}

impl Default for SliceDefaults {
    fn default() -> Self {
        Self {
            width: 640,
            height: 640,
            overlap: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalDefaults {
    pub iou_thresholds: Vec<f64>,
    pub mode: EvalMode,
}

impl Default for EvalDefaults {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_thresholds(),
            mode: EvalMode::Mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Sphere radius in meters; the geocentric radius at 53.55 N when absent.
    pub earth_radius: Option<f64>,
    pub nms_iou: f64,
    pub class_aware_nms: bool,
    /// Stationary gate: minimum flow magnitude in pixels.
    pub min_mag: f64,
    /// Heading triangle size in meters.
    pub marker_size: f64,
    pub jobs: usize,
    pub slice: SliceDefaults,
    pub eval: EvalDefaults,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            earth_radius: None,
            nms_iou: 0.5,
            class_aware_nms: true,
            min_mag: DEFAULT_MIN_MAG,
            marker_size: 25.0,
            jobs: 1,
            slice: SliceDefaults::default(),
            eval: EvalDefaults::default(),
        }
    }
}

impl ProjectConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::schema(path, e.to_string()))?;
        cfg.validate()
            .map_err(|msg| PipelineError::schema(path, msg))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_to_string(path)?)
    }

    /// Reads `MASTGEOREF_CONFIG` when set, otherwise defaults.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if let Some(r) = self.earth_radius {
            EarthModel::new(r).map_err(|e| e.to_string())?;
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(format!("nms_iou {} outside (0, 1]", self.nms_iou));
        }
        if !(self.min_mag >= 0.0 && self.min_mag.is_finite()) {
            return Err(format!("min_mag {} must be finite and >= 0", self.min_mag));
        }
        if !(self.marker_size > 0.0 && self.marker_size.is_finite()) {
            return Err(format!("marker_size {} must be positive", self.marker_size));
        }
        if self.jobs == 0 {
            return Err("jobs must be >= 1".into());
        }
        if self.slice.width == 0 || self.slice.height == 0 {
            return Err("slice dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.slice.overlap) {
            return Err(format!("slice overlap {} outside [0, 1)", self.slice.overlap));
        }
        self.eval_config(self.eval.mode)
            .validate()
            .map_err(|e| e.to_string())
    }

    pub fn earth(&self) -> EarthModel {
        self.earth_radius
            .and_then(|r| EarthModel::new(r).ok())
            .unwrap_or_default()
    }

    pub fn eval_config(&self, mode: EvalMode) -> EvalConfig {
        EvalConfig {
            iou_thresholds: self.eval.iou_thresholds.clone(),
            mode,
            ..EvalConfig::default()
        }
    }
}

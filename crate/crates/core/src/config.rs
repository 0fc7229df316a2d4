//! Pipeline configuration: a flat `key = value` text file with dotted keys.
//!
//! ```text
//! # comment
//! grid.block_size = 16
//! lbp.P = 8
//! shf.templates = 0,0,1,1; 0,0,0.5,0.5
//! crf.mode = exact-dp
//! ```
//!
//! Every key is optional; unknown or repeated keys are errors.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crf::{TrainConfig, TrainMode};
use crate::dataset::{DEFAULT_BLOCK_SIZE, DEFAULT_LABEL_THRESHOLD};
use crate::error::{Error, Result};
use crate::integrate::DEFAULT_EPSILON;
use crate::lbp::{ColorLbpParams, LbpParams};
use crate::metrics::DEFAULT_BETA_SQUARED;
use crate::shf::{default_templates, Distance, ShfParams, Template};

/// Which LBP operator summarizes each particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LbpVariant {
    /// Gray-level LBP on the luma image.
    #[default]
    Gray,
    /// Hyperplane color LBP with `lbp.normal`.
    Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub block_size: usize,
    pub gt_threshold: f64,
    pub lbp_neighbors: usize,
    pub lbp_radius: f64,
    pub lbp_variant: LbpVariant,
    pub lbp_normal: [f64; 3],
    pub shf_levels: usize,
    pub shf_templates: Vec<Template>,
    pub shf_distance: Distance,
    pub epsilon: f64,
    pub crf: TrainConfig,
    pub beta_squared: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let c = 1.0 / 3f64.sqrt();
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            gt_threshold: DEFAULT_LABEL_THRESHOLD,
            lbp_neighbors: 8,
            lbp_radius: 1.0,
            lbp_variant: LbpVariant::Gray,
            lbp_normal: [c, c, c],
            shf_levels: 4,
            shf_templates: default_templates(),
            shf_distance: Distance::L1,
            epsilon: DEFAULT_EPSILON,
            crf: TrainConfig::default(),
            beta_squared: DEFAULT_BETA_SQUARED,
        }
    }
}

const KEYS: &[&str] = &[
    "grid.block_size",
    "grid.gt_threshold",
    "lbp.P",
    "lbp.R",
    "lbp.variant",
    "lbp.normal",
    "shf.levels",
    "shf.templates",
    "shf.distance",
    "integrate.epsilon",
    "crf.alpha",
    "crf.epochs",
    "crf.l2",
    "crf.seed",
    "crf.mode",
    "crf.max_exact_height",
    "metrics.beta2",
];

fn parse_num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?} as a number"))
}

fn parse_reals(value: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {:?}", value));
    }
    parts.into_iter().map(parse_num).collect()
}

fn parse_templates(value: &str) -> std::result::Result<Vec<Template>, String> {
    value
        .split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v = parse_reals(t, 4)?;
            Ok(Template::new(v[0], v[1], v[2], v[3]))
        })
        .collect()
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { location, message } => Error::Config {
                location: format!("{}:{location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (index, raw) in text.lines().enumerate() {
            let location = format!("line {}", index + 1);
            let err = |message: String| Error::Config {
                location: location.clone(),
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("key {key:?} given twice")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate().map_err(|e| match e {
            Error::InvalidParameter(message) => Error::Config {
                location: "validation".into(),
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "grid.block_size" => self.block_size = parse_num(value)?,
            "grid.gt_threshold" => self.gt_threshold = parse_num(value)?,
            "lbp.P" => self.lbp_neighbors = parse_num(value)?,
            "lbp.R" => self.lbp_radius = parse_num(value)?,
            "lbp.variant" => {
                self.lbp_variant = match value {
                    "gray" => LbpVariant::Gray,
                    "color" => LbpVariant::Color,
                    _ => return Err(format!("unknown LBP variant {value:?} (expected gray or color)")),
                }
            }
            "lbp.normal" => {
                let v = parse_reals(value, 3)?;
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(format!("normal {value:?} must be a finite non-zero vector"));
                }
                self.lbp_normal = [v[0] / norm, v[1] / norm, v[2] / norm];
            }
            "shf.levels" => self.shf_levels = parse_num(value)?,
            "shf.templates" => self.shf_templates = parse_templates(value)?,
            "shf.distance" => {
                self.shf_distance = match value {
                    "l1" => Distance::L1,
                    "chi2" => Distance::Chi2,
                    _ => return Err(format!("unknown distance {value:?} (expected l1 or chi2)")),
                }
            }
            "integrate.epsilon" => self.epsilon = parse_num(value)?,
            "crf.alpha" => self.crf.alpha = parse_num(value)?,
            "crf.epochs" => self.crf.epochs = parse_num(value)?,
            "crf.l2" => self.crf.l2 = parse_num(value)?,
            "crf.seed" => self.crf.seed = parse_num(value)?,
            "crf.mode" => self.crf.mode = TrainMode::from_str(value)?,
            "crf.max_exact_height" => self.crf.max_exact_height = parse_num(value)?,
            "metrics.beta2" => self.beta_squared = parse_num(value)?,
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    /// Checks every field against the owning module's constraints.
    pub fn validate(&self) -> Result<()> {
        if self.block_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "block size {} must be at least 2",
                self.block_size
            )));
        }
        if !(self.gt_threshold > 0.0 && self.gt_threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ground-truth threshold {} must lie in (0, 1]",
                self.gt_threshold
            )));
        }
        self.color_lbp()?;
        self.shf()?;
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon {} must be positive", self.epsilon)));
        }
        self.crf.validate()?;
        if !(self.beta_squared.is_finite() && self.beta_squared >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta squared {} must be >= 0",
                self.beta_squared
            )));
        }
        Ok(())
    }

    pub fn lbp(&self) -> Result<LbpParams> {
        LbpParams::new(self.lbp_neighbors, self.lbp_radius)
    }

    pub fn color_lbp(&self) -> Result<ColorLbpParams> {
        ColorLbpParams::new(self.lbp()?, self.lbp_normal)
    }

    pub fn shf(&self) -> Result<ShfParams> {
        ShfParams::new(self.shf_templates.clone(), self.shf_levels)
    }
}

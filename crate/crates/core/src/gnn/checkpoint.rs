use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BaselineParameters, GnnDims, GnnParameters};
use crate::error::{Error, Result};
use crate::network::NormStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Embedded,
    Baseline,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Embedded => "embedded",
            ModelKind::Baseline => "baseline",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedded" => Ok(ModelKind::Embedded),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::InvalidArgument(format!(
                "unknown model '{other}' (expected embedded or baseline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParameters {
    Embedded(GnnParameters),
    Baseline(BaselineParameters),
}

impl ModelParameters {
    pub fn init(kind: ModelKind, dims: GnnDims, seed: u64) -> Self {
        match kind {
            ModelKind::Embedded => ModelParameters::Embedded(GnnParameters::init(dims, seed)),
            ModelKind::Baseline => ModelParameters::Baseline(BaselineParameters::init(dims, seed)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParameters::Embedded(_) => ModelKind::Embedded,
            ModelParameters::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn dims(&self) -> GnnDims {
        match self {
            ModelParameters::Embedded(p) => p.dims,
            ModelParameters::Baseline(p) => p.dims,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ModelParameters::Embedded(p) => p.to_flat(),
            ModelParameters::Baseline(p) => p.to_flat(),
        }
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            ModelParameters::Embedded(p) => p.set_flat(flat),
            ModelParameters::Baseline(p) => p.set_flat(flat),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            ModelParameters::Embedded(p) => p.num_params(),
            ModelParameters::Baseline(p) => p.num_params(),
        }
    }

    pub fn output_scale(&self) -> f64 {
        match self {
            ModelParameters::Embedded(p) => p.output_scale,
            ModelParameters::Baseline(p) => p.output_scale,
        }
    }

    pub fn set_output_scale(&mut self, scale: f64) {
        match self {
            ModelParameters::Embedded(p) => p.output_scale = scale,
            ModelParameters::Baseline(p) => p.output_scale = scale,
        }
    }
}

fn unit() -> f64 {
    1.0
}

/// Training progress stored alongside the weights so a run can resume exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<Option<f64>>,
    /// Multiplier `s` in the scaled loss `½ s² (K − K*)²`.
    #[serde(default = "unit")]
    pub loss_scale: f64,
    /// Parameter updates applied so far.
    #[serde(default)]
    pub steps: u64,
    /// Adaptive-optimizer moments, empty for plain gradient descent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moment1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moment2: Vec<f64>,
}

/// On-disk model: dims, flat weights, and the normalization statistics they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub dims: GnnDims,
    pub params: Vec<f64>,
    pub output_scale: f64,
    pub norm_stats: NormStats,
    pub norm_fingerprint: String,
    #[serde(default)]
    pub progress: Progress,
}

impl Default for Progress {
    fn default() -> Self {
        Progress {
            epoch: 0,
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            loss_scale: 1.0,
            steps: 0,
            moment1: Vec::new(),
            moment2: Vec::new(),
        }
    }
}

impl Checkpoint {
    pub fn new(params: &ModelParameters, stats: &NormStats, progress: Progress) -> Self {
        Checkpoint {
            model: params.kind(),
            dims: params.dims(),
            params: params.to_flat(),
            output_scale: params.output_scale(),
            norm_stats: stats.clone(),
            norm_fingerprint: stats.fingerprint(),
            progress,
        }
    }

    pub fn parameters(&self) -> Result<ModelParameters> {
        let mut p = match self.model {
            ModelKind::Embedded => {
                ModelParameters::Embedded(GnnParameters::from_flat(self.dims, &self.params)?)
            }
            ModelKind::Baseline => {
                ModelParameters::Baseline(BaselineParameters::from_flat(self.dims, &self.params)?)
            }
        };
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::Validation(
                "checkpoint output_scale must be positive".into(),
            ));
        }
        p.set_output_scale(self.output_scale);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.norm_stats.check_dims()?;
        if self.norm_stats.fingerprint() != self.norm_fingerprint {
            return Err(Error::Validation(
                "checkpoint norm_fingerprint does not match its stored statistics".into(),
            ));
        }
        self.parameters().map(|_| ())
    }

    /// Refuses statistics other than the ones the model was trained with.
    pub fn check_stats(&self, stats: &NormStats) -> Result<()> {
        let fp = stats.fingerprint();
        if fp != self.norm_fingerprint {
            return Err(Error::Validation(format!(
                "normalization statistics mismatch: checkpoint {} vs supplied {}",
                &self.norm_fingerprint[..12.min(self.norm_fingerprint.len())],
                &fp[..12]
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

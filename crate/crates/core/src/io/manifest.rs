//! TOML run manifests.
//!
//! ```toml
//! config = "SDQ-W7:8-1:8int8-6:8fp4"
//! seed = 7
//!
//! [overrides]
//! qvs = 16
//! scale_format = "fp8-e4m3"
//! metric = "product"
//! order = "large"
//!
//! [inputs]
//! weights = "w.sdqt"
//! calibration = "x_calib.sdqt"
//! eval = "x_eval.sdqt"
//!
//! [outputs]
//! report = "report.txt"
//! ```
//!
//! Instead of `[inputs]`, a `[generate]` table draws a synthetic layer from
//! `seed`. Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{parse_optional_format, NumberFormat};
use crate::error::{Result, SdqError};
use crate::pipeline::{parse_config, SdqConfig};
use crate::sparsify::PruneMethod;
use crate::synth::{LayerShape, DEFAULT_OUTLIER_SCALE};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub qvs: Option<usize>,
    pub scale_format: Option<String>,
    pub metric: Option<String>,
    pub order: Option<String>,
    pub method: Option<String>,
    pub damping: Option<f64>,
    pub outlier_activation: Option<String>,
    pub inlier_activation: Option<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SdqConfig) -> Result<()> {
        if let Some(qvs) = self.qvs {
            cfg.qvs = qvs;
        }
        if let Some(sf) = &self.scale_format {
            cfg.scale_format = parse_optional_format(sf)?;
        }
        if let Some(m) = &self.metric {
            cfg.metric = m.parse()?;
        }
        if let Some(o) = &self.order {
            cfg.order = o.parse()?;
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse()?;
        }
        if let Some(d) = self.damping {
            match &mut cfg.method {
                PruneMethod::SparseGpt { damping } => *damping = d,
                _ => {
                    return Err(SdqError::Inconsistent(
                        "damping only applies to sparsegpt".into(),
                    ))
                }
            }
        }
        if let Some(f) = &self.outlier_activation {
            cfg.outlier_activation = f.parse::<NumberFormat>()?;
        }
        if let Some(f) = &self.inlier_activation {
            cfg.inlier_activation = f.parse::<NumberFormat>()?;
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub weights: PathBuf,
    pub calibration: Option<PathBuf>,
    pub eval: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub out_features: usize,
    pub in_features: usize,
    pub calib_samples: usize,
    pub batch: usize,
    pub outlier_ratio: f64,
    #[serde(default = "default_outlier_scale")]
    pub outlier_scale: f64,
}

fn default_outlier_scale() -> f64 {
    DEFAULT_OUTLIER_SCALE
}

impl From<GenerateSpec> for LayerShape {
    fn from(g: GenerateSpec) -> Self {
        Self {
            out_features: g.out_features,
            in_features: g.in_features,
            calib_samples: g.calib_samples,
            batch: g.batch,
            outlier_ratio: g.outlier_ratio,
            outlier_scale: g.outlier_scale,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub report: Option<PathBuf>,
    pub w_hat: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config: String,
    pub seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
    pub inputs: Option<Inputs>,
    pub generate: Option<GenerateSpec>,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text)
            .map_err(|e| SdqError::InvalidArgument(format!("bad manifest: {e}")))?;
        if m.inputs.is_some() == m.generate.is_some() {
            return Err(SdqError::InvalidArgument(
                "manifest needs exactly one of [inputs] or [generate]".into(),
            ));
        }
        Ok(m)
    }

    /// Reads a manifest and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| SdqError::InvalidArgument(format!("{}: {e}", path.display())))?;
        let mut m = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        m.resolve_paths(base);
        Ok(m)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(inputs) = &mut self.inputs {
            fix(&mut inputs.weights);
            fix(&mut inputs.eval);
            if let Some(c) = &mut inputs.calibration {
                fix(c);
            }
        }
        if let Some(r) = &mut self.outputs.report {
            fix(r);
        }
        if let Some(w) = &mut self.outputs.w_hat {
            fix(w);
        }
    }

    /// Fails if an input path does not exist.
    pub fn check_inputs(&self) -> Result<()> {
        if let Some(inputs) = &self.inputs {
            let paths = [Some(&inputs.weights), inputs.calibration.as_ref(), Some(&inputs.eval)];
            for p in paths.into_iter().flatten() {
                if !p.exists() {
                    return Err(SdqError::InvalidArgument(format!(
                        "input {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn resolve_config(&self) -> Result<SdqConfig> {
        let mut cfg = parse_config(&self.config)?;
        self.overrides.apply(&mut cfg)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{OutlierMetricKind, OutlierOrder};

    const TEXT: &str = r#"
config = "SDQ-W7:8-1:8int8-6:8fp4"
seed = 7

[overrides]
qvs = 32
scale_format = "ufp8-e6m2"
metric = "magnitude"
order = "small"

[generate]
out_features = 16
in_features = 32
calib_samples = 8
batch = 4
outlier_ratio = 0.01
"#;

    #[test]
    fn parses_and_applies_overrides() {
        let m = RunManifest::from_toml(TEXT).unwrap();
        assert_eq!(m.seed, 7);
        assert_eq!(m.generate.unwrap().outlier_scale, 10.0);
        let cfg = m.resolve_config().unwrap();
        assert_eq!(cfg.qvs, 32);
        assert_eq!(cfg.scale_format, Some(NumberFormat::UFP8_E6M2));
        assert_eq!(cfg.metric, OutlierMetricKind::Magnitude);
        assert_eq!(cfg.order, OutlierOrder::Small);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_sources() {
        assert!(RunManifest::from_toml("config = \"x\"\nseed = 1\nbogus = 2\n").is_err());
        assert!(RunManifest::from_toml("config = \"x\"\nseed = 1\n").is_err());
    }

    #[test]
    fn damping_requires_sparsegpt() {
        let text = TEXT.replace("order = \"small\"", "order = \"small\"\ndamping = 0.1");
        let m = RunManifest::from_toml(&text).unwrap();
        assert!(m.resolve_config().is_err());
    }

    #[test]
    fn missing_inputs_are_reported() {
        let text = r#"
config = "SDQ-W7:8-1:8int8-6:8fp4"
seed = 1
[inputs]
weights = "nope/w.sdqt"
eval = "nope/x.sdqt"
"#;
        let mut m = RunManifest::from_toml(text).unwrap();
        m.resolve_paths(Path::new("/definitely/not/here"));
        assert_eq!(
            m.inputs.as_ref().unwrap().weights,
            PathBuf::from("/definitely/not/here/nope/w.sdqt")
        );
        assert!(m.check_inputs().unwrap_err().to_string().contains("does not exist"));
    }
}

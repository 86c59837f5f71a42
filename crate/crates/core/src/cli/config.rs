//! Run configuration file (TOML). Relative paths are resolved against the
//! directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_model::Regularization;
use crate::metrics::ScoreRegimes;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// `"all=0.01,med=0.1"` or a `{ name = threshold }` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegimesValue {
    Text(String),
    Table(BTreeMap<String, f64>),
}

/// `"auto"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_thresholds: Option<RegimesValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<EpsilonValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2t_iou_grid: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            origin: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn regimes(&self) -> Result<Option<ScoreRegimes>> {
        match &self.score_thresholds {
            None => Ok(None),
            Some(RegimesValue::Text(s)) => s.parse().map(Some),
            Some(RegimesValue::Table(t)) => {
                let mut v: Vec<(String, f64)> = t.iter().map(|(k, v)| (k.clone(), *v)).collect();
                v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
                ScoreRegimes::new(v).map(Some)
            }
        }
    }

    pub fn regularization(&self) -> Result<Option<Regularization>> {
        match &self.epsilon {
            None => Ok(None),
            Some(EpsilonValue::Number(v)) => Ok(Some(Regularization::Fixed(*v))),
            Some(EpsilonValue::Text(s)) => s.parse().map(Some).map_err(Error::InvalidArgument),
        }
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.ground_truth,
            &mut self.detections,
            &mut self.features,
            &mut self.train_features,
            &mut self.model,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::events::{FeatureCatalog, FeatureStats};

pub const CHECKPOINT_FORMAT: &str = "driftscope-checkpoint/1";

/// Parameters, training configuration, normalization statistics and the
/// catalog they were fitted against, in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub catalog_fingerprint: String,
    pub catalog: FeatureCatalog,
    pub feature_stats: serde_json::Value,
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(catalog: &FeatureCatalog, stats: &FeatureStats, config: &ModelConfig, params: ModelParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            catalog_fingerprint: catalog.fingerprint(),
            catalog: catalog.clone(),
            feature_stats: stats.to_json(catalog),
            config: config.clone(),
            params,
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    /// Parse and verify shapes; `expected` refuses a checkpoint fitted on a
    /// different catalog.
    pub fn from_json_bytes(bytes: &[u8], expected: Option<&FeatureCatalog>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config("format", format!("unsupported checkpoint format `{}`", ck.format)));
        }
        if ck.catalog.fingerprint() != ck.catalog_fingerprint {
            return Err(Error::CatalogMismatch {
                expected: ck.catalog_fingerprint.clone(),
                found: ck.catalog.fingerprint(),
            });
        }
        if let Some(cat) = expected {
            if cat.fingerprint() != ck.catalog_fingerprint {
                return Err(Error::CatalogMismatch {
                    expected: ck.catalog_fingerprint.clone(),
                    found: cat.fingerprint(),
                });
            }
        }
        let p = &ck.params;
        let h = p.hidden_size;
        let d = p.input_dim;
        let shapes_ok = d == ck.catalog.input_dim()
            && p.w.len() == 4 * h * d
            && p.u.len() == 4 * h * h
            && p.b.len() == 4 * h
            && p.w_out.len() == h
            && p.attention.as_ref().map_or(true, |a| a.len() == h * h);
        if !shapes_ok {
            return Err(Error::Dimension("checkpoint parameter shapes are inconsistent".into()));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(ck)
    }

    pub fn load(path: &Path, expected: Option<&FeatureCatalog>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_bytes(&bytes, expected)
    }

    pub fn stats(&self) -> Result<FeatureStats> {
        FeatureStats::from_json(&self.feature_stats, &self.catalog)
    }
}

//! Versioned JSON model file.

use serde::{Deserialize, Serialize};

use super::features::FeatureSpec;
use super::net::TorsionNet;
use super::tables::LookupTables;
use super::train::TrainConfig;
use super::BackmapError;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub ensemble_ids: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    /// Mean `L_recon` at initialization and after each epoch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_trajectory: Vec<f64>,
}

impl FitMetadata {
    pub fn new(ensemble_ids: Vec<String>, seed: u64) -> FitMetadata {
        FitMetadata { ensemble_ids, seed, frames: 0, train_config: None, loss_trajectory: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackmapModel {
    pub version: u32,
    pub tables: LookupTables,
    pub net: Option<TorsionNet>,
    pub feature_spec: FeatureSpec,
    pub fit_metadata: FitMetadata,
}

impl BackmapModel {
    pub fn from_tables(tables: LookupTables, fit_metadata: FitMetadata) -> BackmapModel {
        BackmapModel { version: MODEL_VERSION, tables, net: None, feature_spec: FeatureSpec::default(), fit_metadata }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<BackmapModel, BackmapError> {
        let model: BackmapModel = serde_json::from_str(text).map_err(|e| BackmapError::Model(e.to_string()))?;
        if model.version != MODEL_VERSION {
            return Err(BackmapError::Model(format!("unsupported model version {}", model.version)));
        }
        model.tables.validate().map_err(BackmapError::Model)?;
        if let Some(net) = &model.net {
            if net.input_dim() != model.feature_spec.dim() {
                return Err(BackmapError::FeatureDim { expected: model.feature_spec.dim(), got: net.input_dim() });
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backmap::tables::fit_tables;

    #[test]
    fn json_round_trip_and_keys() {
        let model = BackmapModel::from_tables(fit_tables([]), FitMetadata::new(vec!["PED00001e001".into()], 42));
        let json = model.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["version", "tables", "net", "feature_spec", "fit_metadata"] {
            assert!(value.get(key).is_some(), "{key}");
        }
        assert_eq!(value["fit_metadata"]["seed"], 42);
        assert_eq!(BackmapModel::from_json(&json).unwrap(), model);
        let wrong = json.replacen("\"version\": 1", "\"version\": 99", 1);
        assert!(BackmapModel::from_json(&wrong).is_err());
    }
}

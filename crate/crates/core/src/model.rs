//! Trained model persistence as a pretty-printed JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::crf::{CrfModel, InferenceMode};
use crate::error::{Error, Result};
use crate::integrate::IntegrationParams;
use crate::shf::AverageShf;

pub const MODEL_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u64,
    pub config: PipelineConfig,
    pub average_shf: AverageShf,
    pub integration: IntegrationParams,
    pub crf: CrfModel,
}

impl ModelFile {
    pub fn new(config: PipelineConfig, average_shf: AverageShf, integration: IntegrationParams, crf: CrfModel) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            config,
            average_shf,
            integration,
            crf,
        }
    }

    pub fn inference_mode(&self, rows: usize) -> InferenceMode {
        InferenceMode::for_rows(rows, self.config.crf.max_exact_height)
    }

    pub fn validate(&self) -> Result<()> {
        let model = |e: Error| Error::Model(e.to_string());
        self.config.validate().map_err(model)?;
        self.integration.validate().map_err(model)?;
        self.crf.validate().map_err(model)?;
        let templates = self.config.shf_templates.len();
        let bins = self.config.shf_levels.pow(3);
        let shape_ok = self.average_shf.model.per_template.len() == templates
            && self.average_shf.model.per_template.iter().all(|h| h.len() == bins);
        if !shape_ok {
            return Err(Error::Model(format!(
                "average histogram does not have {templates} templates of {bins} bins"
            )));
        }
        if self.integration.templates() != templates || self.crf.feature_dim != templates + 1 {
            return Err(Error::Model(format!(
                "{templates} templates need {templates} normalization pairs and {} unary weights",
                templates + 1
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Model(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    /// Parses a model document; the schema version is checked before the
    /// remaining fields are interpreted.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Model("missing or non-integer schema_version".into()))?;
        if found != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let model: ModelFile = serde_json::from_value(value).map_err(|e| Error::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shf::SpatialHistogram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> ModelFile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = PipelineConfig::parse("lbp.normal = 0.3, 0.2, 0.1\ncrf.seed = 11").unwrap();
        let mut real = || rng.random::<f64>() * 10f64.powi(rng.random_range(-12..12));
        let per_template = (0..5).map(|_| (0..64).map(|_| real()).collect()).collect();
        let average_shf = AverageShf { model: SpatialHistogram { per_template }, sample_count: 17 };
        let integration = IntegrationParams {
            mu: (0..5).map(|_| real()).collect(),
            sigma: (0..5).map(|_| real()).collect(),
            epsilon: 1e-8,
        };
        let crf = CrfModel::new((0..6).map(|_| real() - real()).collect(), real()).unwrap();
        ModelFile::new(config, average_shf, integration, crf)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..20 {
            let model = random_model(seed);
            let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
            model.save(&a).unwrap();
            let loaded = ModelFile::load(&a).unwrap();
            assert_eq!(loaded, model);
            loaded.save(&b).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
    }

    #[test]
    fn version_is_checked_first() {
        let text = random_model(1).to_json().unwrap().replace("\"schema_version\": 1,\n  \"config\"", "\"schema_version\": 2,\n  \"config\"");
        assert!(matches!(ModelFile::from_json(&text), Err(Error::SchemaVersion { found: 2, expected: 1 })));
        // Unknown version wins even when the rest is unreadable.
        assert!(matches!(
            ModelFile::from_json(r#"{"schema_version": 7, "config": 3}"#),
            Err(Error::SchemaVersion { found: 7, .. })
        ));
        assert!(matches!(ModelFile::from_json(r#"{"config": 3}"#), Err(Error::Model(_))));
        assert!(matches!(ModelFile::from_json("not json"), Err(Error::Model(_))));
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let mut model = random_model(2);
        model.crf = CrfModel::zeros(3);
        assert!(matches!(ModelFile::from_json(&model.to_json().unwrap()), Err(Error::Model(_))));
        let mut model = random_model(2);
        model.average_shf.model.per_template.pop();
        assert!(matches!(ModelFile::from_json(&model.to_json().unwrap()), Err(Error::Model(_))));
    }
}

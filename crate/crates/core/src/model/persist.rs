use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, ScoringModel};
use crate::dataset::AttributeSpec;

pub const MODEL_FORMAT: &str = "loanlens-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Versioned JSON envelope for a trained model. Floats are written in
/// shortest round-trip form, so save/load is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    /// SHA-256 over the attribute specs the model was trained on.
    pub schema_hash: String,
    pub model: ScoringModel,
    /// Free-form record of how the model was produced (run configuration,
    /// split sizes, evaluation).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

pub fn schema_hash(attributes: &[AttributeSpec]) -> String {
    let canonical = serde_json::to_vec(attributes).expect("attribute specs serialise");
    hex::encode(Sha256::digest(&canonical))
}

impl ModelDocument {
    pub fn new(model: ScoringModel, provenance: serde_json::Value) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            schema_hash: schema_hash(&model.encoder.attributes),
            model,
            provenance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| ModelError::Persistence(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(ModelError::Persistence(format!("unexpected format {:?}", doc.format)));
        }
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Persistence(format!("unsupported version {}", doc.version)));
        }
        if doc.schema_hash != schema_hash(&doc.model.encoder.attributes) {
            return Err(ModelError::Persistence("schema hash does not match attributes".into()));
        }
        let m = &doc.model;
        if m.weights.len() != m.encoder.attributes.len() || m.encoder.encodings.len() != m.encoder.attributes.len() {
            return Err(ModelError::Persistence(
                "weights, encodings and attributes differ in length".into(),
            ));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|e| ModelError::Persistence(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelError::Persistence(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{Application, AttributeKind, AttributeSpec, Dataset};

/// How one raw attribute value becomes a model feature in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum FeatureEncoding {
    /// Min-max scaling with training-set bounds; out-of-range values clamp.
    MinMax { min: f64, max: f64 },
    /// Category index 0 or 1.
    Binary,
    /// Category index divided by `levels - 1`.
    Ordinal { levels: usize },
}

impl FeatureEncoding {
    pub fn apply(&self, raw: f64) -> f64 {
        match *self {
            FeatureEncoding::MinMax { min, max } => {
                if max > min {
                    ((raw - min) / (max - min)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
            FeatureEncoding::Binary => raw,
            FeatureEncoding::Ordinal { levels } => raw / (levels - 1) as f64,
        }
    }
}

/// Attribute metadata plus the per-attribute encodings fitted on the
/// training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub attributes: Vec<AttributeSpec>,
    pub encodings: Vec<FeatureEncoding>,
}

impl FeatureEncoder {
    pub fn fit(train: &Dataset) -> Result<Self, ModelError> {
        let mut encodings = Vec::with_capacity(train.attributes().len());
        for spec in train.attributes() {
            let encoding = match spec.kind {
                AttributeKind::Binary => FeatureEncoding::Binary,
                AttributeKind::Categorical => FeatureEncoding::Ordinal {
                    levels: spec.categories.len(),
                },
                AttributeKind::Continuous => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for app in &train.applications {
                        let v = app
                            .value(&spec.name)
                            .ok_or_else(|| ModelError::missing(&app.id, &spec.name))?;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    if !min.is_finite() {
                        return Err(ModelError::DegenerateData("empty training set".into()));
                    }
                    FeatureEncoding::MinMax { min, max }
                }
            };
            encodings.push(encoding);
        }
        Ok(Self {
            attributes: train.attributes().to_vec(),
            encodings,
        })
    }

    /// Encoder that passes continuous values through unchanged on `[0, 1]`.
    pub fn identity(attributes: Vec<AttributeSpec>) -> Self {
        let encodings = attributes
            .iter()
            .map(|a| match a.kind {
                AttributeKind::Continuous => FeatureEncoding::MinMax { min: 0.0, max: 1.0 },
                AttributeKind::Binary => FeatureEncoding::Binary,
                AttributeKind::Categorical => FeatureEncoding::Ordinal {
                    levels: a.categories.len(),
                },
            })
            .collect();
        Self { attributes, encodings }
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn raw_value(&self, app: &Application, k: usize) -> Result<f64, ModelError> {
        let spec = &self.attributes[k];
        let v = app
            .value(&spec.name)
            .ok_or_else(|| ModelError::missing(&app.id, &spec.name))?;
        spec.check_value(v).map_err(|message| ModelError::Contract {
            id: app.id.clone(),
            message,
        })?;
        Ok(v)
    }

    /// Feature vector in model attribute order.
    pub fn encode(&self, app: &Application) -> Result<Vec<f64>, ModelError> {
        (0..self.len())
            .map(|k| Ok(self.encodings[k].apply(self.raw_value(app, k)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_clamps_and_handles_constant() {
        let e = FeatureEncoding::MinMax { min: 10.0, max: 20.0 };
        assert_eq!(e.apply(15.0), 0.5);
        assert_eq!(e.apply(25.0), 1.0);
        assert_eq!(e.apply(0.0), 0.0);
        assert_eq!(FeatureEncoding::MinMax { min: 3.0, max: 3.0 }.apply(3.0), 0.0);
    }

    #[test]
    fn ordinal_scales_to_unit_interval() {
        let e = FeatureEncoding::Ordinal { levels: 4 };
        assert_eq!(e.apply(0.0), 0.0);
        assert_eq!(e.apply(3.0), 1.0);
        assert!((e.apply(1.0) - 1.0 / 3.0).abs() < 1e-15);
    }
}

use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::features::{manifest_hash, FeatureVector, FEATURE_COUNT};

/// Floor applied to every standard deviation so constant features stay finite.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature mean and population standard deviation of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub manifest_hash: String,
}

impl ScalerStats {
    pub fn fit(rows: &[&[f64]]) -> Result<Self, ClassifierError> {
        if rows.is_empty() {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; FEATURE_COUNT];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; FEATURE_COUNT];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self {
            mean,
            std,
            manifest_hash: manifest_hash(),
        })
    }

    /// Scale the 41 values. `p_llm` is not part of the output; fusion uses it raw.
    pub fn transform(&self, z: &FeatureVector) -> Result<Vec<f64>, ClassifierError> {
        if self.manifest_hash != manifest_hash() {
            return Err(ClassifierError::ManifestMismatch {
                expected: manifest_hash(),
                found: self.manifest_hash.clone(),
            });
        }
        Ok(self.transform_values(&z.values))
    }

    pub(crate) fn transform_values(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Standardize a feature vector with stored statistics.
pub fn standardize(z: &FeatureVector, scaler: &ScalerStats) -> Result<Vec<f64>, ClassifierError> {
    scaler.transform(z)
}

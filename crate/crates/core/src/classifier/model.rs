use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Network, NetworkConfig};
use super::scaler::ScalerStats;
use super::train::TrainConfig;
use super::{decide_threshold, ClassifierError, ClassifierForward, Decision};
use crate::features::{manifest_hash, ConfidenceSource, FeatureVector, FEATURE_COUNT};
use crate::loss::LossConfig;

/// First token of a model file's header line.
pub const MODEL_MAGIC: &str = "DGMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything needed to score a feature vector, plus the provenance needed
/// to refuse incompatible inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionModel {
    pub format_version: u32,
    pub feature_manifest_hash: String,
    pub lexicon_version: String,
    pub confidence_source: ConfidenceSource,
    pub tau: f64,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub scaler: ScalerStats,
    pub network: Network,
}

impl DecisionModel {
    /// A model whose fusion is the identity, so `p` equals the clamped LLM
    /// confidence regardless of the features. Useful as a baseline and for
    /// hand-set decisions.
    pub fn fusion_identity(tau: f64, lexicon_version: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_manifest_hash: manifest_hash(),
            lexicon_version: lexicon_version.to_string(),
            confidence_source: ConfidenceSource::Final,
            tau,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            scaler: ScalerStats {
                mean: vec![0.0; FEATURE_COUNT],
                std: vec![1.0; FEATURE_COUNT],
                manifest_hash: manifest_hash(),
            },
            network: Network::init(NetworkConfig::default(), &mut rng),
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    /// Inference-mode forward pass for one vector.
    pub fn forward(&self, z: &FeatureVector) -> Result<ClassifierForward, ClassifierError> {
        let x = self.scaler.transform(z)?;
        let x = Array2::from_shape_vec((1, FEATURE_COUNT), x).expect("one row of features");
        let out = self.network.eval(x.view(), &[z.p_llm]);
        Ok(ClassifierForward {
            l_llm: out.l_llm[0],
            l_p: out.l_p[0],
            l_u: out.l_u[0],
            p: out.p[0],
            u: out.u[0],
        })
    }

    /// Inference on many vectors at once.
    pub fn forward_batch(&self, zs: &[FeatureVector]) -> Result<Vec<ClassifierForward>, ClassifierError> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let mut flat = Vec::with_capacity(zs.len() * FEATURE_COUNT);
        for z in zs {
            flat.extend(self.scaler.transform(z)?);
        }
        let x = Array2::from_shape_vec((zs.len(), FEATURE_COUNT), flat).expect("rows of features");
        let p_llm: Vec<f64> = zs.iter().map(|z| z.p_llm).collect();
        let out = self.network.eval(x.view(), &p_llm);
        Ok((0..zs.len())
            .map(|i| ClassifierForward {
                l_llm: out.l_llm[i],
                l_p: out.l_p[i],
                l_u: out.l_u[i],
                p: out.p[i],
                u: out.u[i],
            })
            .collect())
    }

    pub fn decide(&self, z: &FeatureVector) -> Result<Decision, ClassifierError> {
        let f = self.forward(z)?;
        Ok(Decision {
            action: decide_threshold(f.p, self.tau),
            p: f.p,
            u: f.u,
        })
    }

    /// Refuse vectors built with different word lists than the model saw.
    pub fn check_lexicon(&self, version: &str) -> Result<(), ClassifierError> {
        if self.lexicon_version != version {
            return Err(ClassifierError::VersionMismatch {
                what: "lexicon version",
                expected: self.lexicon_version.clone(),
                found: version.to_string(),
            });
        }
        Ok(())
    }

    /// Serialized file bytes: a header line with the format version and the
    /// SHA-256 of the JSON payload that follows.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(self).expect("model serializes");
        let digest = hex::encode(Sha256::digest(&payload));
        let mut out = format!("{MODEL_MAGIC} {} {digest}\n", self.format_version).into_bytes();
        out.extend(payload);
        out
    }

    /// Parse and verify file bytes. Checks the checksum, format version and
    /// feature manifest; the lexicon is checked separately.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let corrupt = |msg: &str| ClassifierError::CorruptModel(msg.to_string());
        let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header line"))?;
        let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| corrupt("header is not UTF-8"))?;
        let payload = &bytes[newline + 1..];
        let mut parts = header.split(' ');
        if parts.next() != Some(MODEL_MAGIC) {
            return Err(corrupt("not a model file"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("unreadable format version"))?;
        let digest = parts.next().ok_or_else(|| corrupt("missing checksum"))?;
        if hex::encode(Sha256::digest(payload)) != digest {
            return Err(corrupt("checksum does not match contents"));
        }
        if version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::VersionMismatch {
                what: "model format version",
                expected: MODEL_FORMAT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let model: DecisionModel =
            serde_json::from_slice(payload).map_err(|e| ClassifierError::CorruptModel(e.to_string()))?;
        if model.format_version != version {
            return Err(corrupt("header and payload disagree on format version"));
        }
        if model.feature_manifest_hash != manifest_hash() {
            return Err(ClassifierError::VersionMismatch {
                what: "feature manifest",
                expected: manifest_hash(),
                found: model.feature_manifest_hash,
            });
        }
        Ok(model)
    }
}

pub fn save_model(model: &DecisionModel, path: &Path) -> Result<(), ClassifierError> {
    std::fs::write(path, model.to_bytes()).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a model and require it to match the given lexicon version.
pub fn load_model(path: &Path, lexicon_version: &str) -> Result<DecisionModel, ClassifierError> {
    let bytes = std::fs::read(path).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let model = DecisionModel::from_bytes(&bytes)?;
    model.check_lexicon(lexicon_version)?;
    Ok(model)
}

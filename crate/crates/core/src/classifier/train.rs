use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::model::{DecisionModel, MODEL_FORMAT_VERSION};
use super::network::{Mode, Network, NetworkConfig};
use super::scaler::ScalerStats;
use super::{ClassifierError, LabeledExample};
use crate::features::{manifest_hash, ConfidenceSource, Lexicons, FEATURE_COUNT};
use crate::loss::{self, BatchScores, LossConfig, LossParts, P_CLAMP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub network: NetworkConfig,
    pub lexicon_version: String,
    pub confidence_source: ConfidenceSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            validation_fraction: 0.1,
            seed: 0,
            adam: AdamConfig::default(),
            network: NetworkConfig::default(),
            lexicon_version: Lexicons::shipped().version,
            confidence_source: ConfidenceSource::Final,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total: f64,
    pub af: f64,
    pub cp: f64,
    pub cal: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_ece: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub final_model: DecisionModel,
    /// Parameters at the epoch with the lowest validation loss (the final
    /// model when there is no validation split).
    pub best_model: DecisionModel,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

struct Split {
    x: Array2<f64>,
    p_llm: Vec<f64>,
    y: Vec<u8>,
}

impl Split {
    fn gather(examples: &[LabeledExample], idx: &[usize], scaler: &ScalerStats) -> Self {
        let mut flat = Vec::with_capacity(idx.len() * FEATURE_COUNT);
        for &i in idx {
            flat.extend(scaler.transform_values(&examples[i].features.values));
        }
        Self {
            x: Array2::from_shape_vec((idx.len(), FEATURE_COUNT), flat).expect("rows of features"),
            p_llm: idx.iter().map(|&i| examples[i].features.p_llm).collect(),
            y: idx.iter().map(|&i| examples[i].y).collect(),
        }
    }
}

fn open_unit(v: f64) -> f64 {
    v.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

/// Validation loss, accuracy at `tau` and ECE in inference mode.
fn validate(net: &Network, split: &Split, loss_cfg: &LossConfig) -> Result<(f64, f64, f64), ClassifierError> {
    let out = net.eval(split.x.view(), &split.p_llm);
    let batch = BatchScores::new(
        out.p.iter().map(|&p| open_unit(p)).collect(),
        out.u.iter().map(|&u| open_unit(u)).collect(),
        split.y.clone(),
    )?;
    let parts = loss::loss_focuscal(&batch, loss_cfg)?;
    let correct = out
        .p
        .iter()
        .zip(&split.y)
        .filter(|(p, y)| (**p >= loss_cfg.tau) == (**y == 1))
        .count();
    let ece = loss::ece(&batch, loss_cfg)?;
    Ok((parts.total, correct as f64 / split.y.len() as f64, ece))
}

fn check_config(examples: &[LabeledExample], loss_cfg: &LossConfig, cfg: &TrainConfig) -> Result<(), ClassifierError> {
    if examples.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    loss_cfg.validate()?;
    if cfg.batch_size == 0 {
        return Err(ClassifierError::InvalidConfig("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(ClassifierError::InvalidConfig("validation fraction must be in [0, 1)".into()));
    }
    if cfg.network.input_dim != FEATURE_COUNT {
        return Err(ClassifierError::InvalidConfig(format!(
            "network input width {} differs from the {FEATURE_COUNT} features",
            cfg.network.input_dim
        )));
    }
    if !(0.0..1.0).contains(&cfg.network.dropout) {
        return Err(ClassifierError::InvalidConfig("dropout must be in [0, 1)".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.y > 1 {
            return Err(ClassifierError::InvalidConfig(format!("example {i} has label {}", ex.y)));
        }
        if ex.features.values.len() != FEATURE_COUNT || ex.features.values.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!("example {i} has malformed features")));
        }
    }
    Ok(())
}

/// Fit the scaler on the training split, then optimize every parameter with
/// Adam under the FocusCal loss. Deterministic for a given seed.
pub fn train(
    examples: &[LabeledExample],
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    train_with_observer(examples, loss_cfg, cfg, |_| {})
}

/// As [`train`], calling `observe` after every epoch.
pub fn train_with_observer(
    examples: &[LabeledExample],
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, ClassifierError> {
    check_config(examples, loss_cfg, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((examples.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(examples.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let rows: Vec<&[f64]> = train_idx.iter().map(|&i| examples[i].features.values.as_slice()).collect();
    let scaler = ScalerStats::fit(&rows)?;
    let train_split = Split::gather(examples, train_idx, &scaler);
    let val_split = (!val_idx.is_empty()).then(|| Split::gather(examples, val_idx, &scaler));

    let mut net = Network::init(cfg.network.clone(), &mut rng);
    let shapes: Vec<usize> = net.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(cfg.adam, &shapes);

    let snapshot = |net: &Network| DecisionModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_manifest_hash: manifest_hash(),
        lexicon_version: cfg.lexicon_version.clone(),
        confidence_source: cfg.confidence_source,
        tau: loss_cfg.tau,
        loss: *loss_cfg,
        train: cfg.clone(),
        scaler: scaler.clone(),
        network: net.clone(),
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut batch_order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 1..=cfg.epochs {
        batch_order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        let mut seen = 0usize;
        for (b, chunk) in batch_order.chunks(cfg.batch_size).enumerate() {
            let x = train_split.x.select(Axis(0), chunk);
            let p_llm: Vec<f64> = chunk.iter().map(|&i| train_split.p_llm[i]).collect();
            let y: Vec<u8> = chunk.iter().map(|&i| train_split.y[i]).collect();
            let cache = net.forward(x.view(), &p_llm, Mode::Train(&mut rng));
            let out = cache.output();
            let p: Vec<f64> = out.p.iter().map(|&v| open_unit(v)).collect();
            let u: Vec<f64> = out.u.iter().map(|&v| open_unit(v)).collect();
            let batch = BatchScores::new(p, u, y)?;
            let (parts, mut dp, mut du) = loss::loss_and_gradients(&batch, loss_cfg)?;
            if !parts.total.is_finite() {
                return Err(ClassifierError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("af={} cp={} cal={}", parts.af, parts.cp, parts.cal),
                });
            }
            // Scores pinned by the open-interval clamp carry no gradient.
            for i in 0..chunk.len() {
                if batch.p[i] != out.p[i] {
                    dp[i] = 0.0;
                }
                if batch.u[i] != out.u[i] {
                    du[i] = 0.0;
                }
            }
            let grads = net.backward(&cache, &dp, &du);
            if grads.slices.iter().flatten().any(|g| !g.is_finite()) {
                return Err(ClassifierError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut net.param_slices_mut(), &grads.slices);
            let w = chunk.len() as f64;
            sums.total += parts.total * w;
            sums.af += parts.af * w;
            sums.cp += parts.cp * w;
            sums.cal += parts.cal * w;
            seen += chunk.len();
        }
        let n = seen as f64;
        let mut metrics = EpochMetrics {
            epoch,
            total: sums.total / n,
            af: sums.af / n,
            cp: sums.cp / n,
            cal: sums.cal / n,
            val_loss: None,
            val_accuracy: None,
            val_ece: None,
        };
        if let Some(split) = &val_split {
            let (loss, acc, ece) = validate(&net, split, loss_cfg)?;
            metrics.val_loss = Some(loss);
            metrics.val_accuracy = Some(acc);
            metrics.val_ece = Some(ece);
            if best.as_ref().is_none_or(|(l, _, _)| loss < *l) {
                best = Some((loss, epoch, net.clone()));
            }
        }
        tracing::debug!(epoch, total = metrics.total, val_loss = ?metrics.val_loss, "epoch finished");
        observe(&metrics);
        history.push(metrics);
    }

    let final_model = snapshot(&net);
    let (best_epoch, best_model) = match best {
        Some((_, epoch, best_net)) => (epoch, snapshot(&best_net)),
        None => (cfg.epochs, final_model.clone()),
    };
    Ok(TrainOutcome {
        final_model,
        best_model,
        best_epoch,
        history,
    })
}

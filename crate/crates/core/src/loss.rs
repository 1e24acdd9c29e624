//! FocusCal loss: asymmetric focal term, confidence penalty against the
//! hesitation score, and a calibration term (binned ECE, or BCE/MSE for
//! ablations), with analytic gradients.
//!
//! All logs and powers are evaluated after clamping `p` to
//! `[P_CLAMP, 1 - P_CLAMP]`.

use serde::{Deserialize, Serialize};

pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationTerm {
    #[default]
    Ece,
    Bce,
    Mse,
}

impl std::str::FromStr for CalibrationTerm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ece" => Ok(Self::Ece),
            "bce" => Ok(Self::Bce),
            "mse" => Ok(Self::Mse),
            other => Err(format!("unknown calibration term {other:?} (expected ece, bce or mse)")),
        }
    }
}

impl std::fmt::Display for CalibrationTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ece => "ece",
            Self::Bce => "bce",
            Self::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub mu: f64,
    pub bins: usize,
    pub tau: f64,
    pub calibration_term: CalibrationTerm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha0: 2.0,
            alpha1: 1.0,
            gamma: 2.0,
            lambda: 6.0,
            mu: 5.0,
            bins: 15,
            tau: 0.7,
            calibration_term: CalibrationTerm::Ece,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{what} = {value} is outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch columns differ in length: p={p}, u={u}, y={y}")]
    LengthMismatch { p: usize, u: usize, y: usize },
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let checks = [
            ("alpha0", self.alpha0, self.alpha0 > 0.0),
            ("alpha1", self.alpha1, self.alpha1 > 0.0),
            ("gamma", self.gamma, self.gamma > 0.0),
            ("lambda", self.lambda, self.lambda >= 0.0),
            ("mu", self.mu, self.mu >= 0.0),
            ("tau", self.tau, self.tau > 0.0 && self.tau < 1.0),
            ("bins", self.bins as f64, self.bins > 0),
        ];
        for (what, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(LossError::Domain { what, value });
            }
        }
        Ok(())
    }
}

/// Predicted skip scores `p`, hesitation scores `u` and labels `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores {
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<u8>,
}

impl BatchScores {
    pub fn new(p: Vec<f64>, u: Vec<f64>, y: Vec<u8>) -> Result<Self, LossError> {
        let batch = Self { p, u, y };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.p.len() != self.u.len() || self.p.len() != self.y.len() {
            return Err(LossError::LengthMismatch {
                p: self.p.len(),
                u: self.u.len(),
                y: self.y.len(),
            });
        }
        if self.p.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        for i in 0..self.p.len() {
            check_prob("p", self.p[i])?;
            check_prob("u", self.u[i])?;
            check_label(self.y[i])?;
        }
        Ok(())
    }
}

/// Loss value and its parts. `af` and `cp` are batch means before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub af: f64,
    pub cp: f64,
    pub cal: f64,
}

fn check_prob(what: &'static str, v: f64) -> Result<(), LossError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(LossError::Domain { what, value: v })
    }
}

fn check_label(y: u8) -> Result<(), LossError> {
    if y <= 1 {
        Ok(())
    } else {
        Err(LossError::BadLabel(y))
    }
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

fn af_value(y: u8, p: f64, cfg: &LossConfig) -> f64 {
    let p = clamp_p(p);
    if y == 1 {
        -cfg.alpha1 * (1.0 - p).powf(cfg.gamma) * p.ln()
    } else {
        -cfg.alpha0 * p.powf(cfg.gamma) * (1.0 - p).ln()
    }
}

fn af_grad(y: u8, p: f64, cfg: &LossConfig) -> f64 {
    let c = clamp_p(p);
    if c != p {
        return 0.0;
    }
    let g = cfg.gamma;
    if y == 1 {
        cfg.alpha1 * (g * (1.0 - p).powf(g - 1.0) * p.ln() - (1.0 - p).powf(g) / p)
    } else {
        cfg.alpha0 * (-g * p.powf(g - 1.0) * (1.0 - p).ln() + p.powf(g) / (1.0 - p))
    }
}

fn cp_value(y: u8, p: f64, u: f64, tau: f64) -> f64 {
    if y == 0 && p > tau {
        u * u
    } else if y == 1 && p < tau {
        (1.0 - u) * (1.0 - u)
    } else {
        0.0
    }
}

fn cp_grad_u(y: u8, p: f64, u: f64, tau: f64) -> f64 {
    if y == 0 && p > tau {
        2.0 * u
    } else if y == 1 && p < tau {
        -2.0 * (1.0 - u)
    } else {
        0.0
    }
}

/// Asymmetric focal loss for one example.
pub fn loss_af(y: u8, p: f64, cfg: &LossConfig) -> Result<f64, LossError> {
    check_prob("p", p)?;
    check_label(y)?;
    Ok(af_value(y, p, cfg))
}

/// Confidence penalty for one example; strict comparisons against `tau`.
pub fn loss_cp(y: u8, p: f64, u: f64, cfg: &LossConfig) -> Result<f64, LossError> {
    check_prob("p", p)?;
    check_prob("u", u)?;
    check_label(y)?;
    Ok(cp_value(y, p, u, cfg.tau))
}

/// Bin of `p` under `bins` equal-width bins; the last bin is closed above.
pub fn bin_index(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor() as usize).min(bins - 1)
}

// Per-bin (sum p, sum y).
fn bin_sums(batch: &BatchScores, bins: usize) -> Vec<(f64, f64)> {
    let mut sums = vec![(0.0, 0.0); bins];
    for (p, y) in batch.p.iter().zip(&batch.y) {
        let b = bin_index(*p, bins);
        sums[b].0 += p;
        sums[b].1 += f64::from(*y);
    }
    sums
}

/// Binned expected calibration error: `sum_b |sum p - sum y| / N`.
pub fn ece(batch: &BatchScores, cfg: &LossConfig) -> Result<f64, LossError> {
    batch.validate()?;
    Ok(ece_unchecked(batch, cfg.bins))
}

fn ece_unchecked(batch: &BatchScores, bins: usize) -> f64 {
    let n = batch.len() as f64;
    bin_sums(batch, bins).iter().map(|(sp, sy)| (sp - sy).abs()).sum::<f64>() / n
}

fn bce_unchecked(batch: &BatchScores) -> f64 {
    let n = batch.len() as f64;
    batch
        .p
        .iter()
        .zip(&batch.y)
        .map(|(&p, &y)| {
            let p = clamp_p(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

fn mse_unchecked(batch: &BatchScores) -> f64 {
    let n = batch.len() as f64;
    batch
        .p
        .iter()
        .zip(&batch.y)
        .map(|(&p, &y)| {
            let d = clamp_p(p) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        / n
}

/// Calibration term selected by `cfg.calibration_term`.
pub fn calibration(batch: &BatchScores, cfg: &LossConfig) -> Result<f64, LossError> {
    batch.validate()?;
    Ok(calibration_unchecked(batch, cfg))
}

fn calibration_unchecked(batch: &BatchScores, cfg: &LossConfig) -> f64 {
    match cfg.calibration_term {
        CalibrationTerm::Ece => ece_unchecked(batch, cfg.bins),
        CalibrationTerm::Bce => bce_unchecked(batch),
        CalibrationTerm::Mse => mse_unchecked(batch),
    }
}

/// `mean(af) + lambda * mean(cp) + mu * cal`.
pub fn loss_focuscal(batch: &BatchScores, cfg: &LossConfig) -> Result<LossParts, LossError> {
    batch.validate()?;
    Ok(focuscal_unchecked(batch, cfg))
}

fn focuscal_unchecked(batch: &BatchScores, cfg: &LossConfig) -> LossParts {
    let n = batch.len() as f64;
    let mut af = 0.0;
    let mut cp = 0.0;
    for i in 0..batch.len() {
        af += af_value(batch.y[i], batch.p[i], cfg);
        cp += cp_value(batch.y[i], batch.p[i], batch.u[i], cfg.tau);
    }
    af /= n;
    cp /= n;
    let cal = calibration_unchecked(batch, cfg);
    LossParts {
        total: af + cfg.lambda * cp + cfg.mu * cal,
        af,
        cp,
        cal,
    }
}

/// Gradients of the total loss with respect to each `p_i` and `u_i`.
///
/// ECE bin membership is held fixed: each member of bin `b` receives
/// `sign(sum p - sum y) / N`. The confidence penalty reaches only `u`.
pub fn loss_gradients(batch: &BatchScores, cfg: &LossConfig) -> Result<(Vec<f64>, Vec<f64>), LossError> {
    let (_, dp, du) = loss_and_gradients(batch, cfg)?;
    Ok((dp, du))
}

pub fn loss_and_gradients(batch: &BatchScores, cfg: &LossConfig) -> Result<(LossParts, Vec<f64>, Vec<f64>), LossError> {
    batch.validate()?;
    let parts = focuscal_unchecked(batch, cfg);
    let n = batch.len() as f64;
    let mut dp = vec![0.0; batch.len()];
    let mut du = vec![0.0; batch.len()];
    let bin_signs: Vec<f64> = match cfg.calibration_term {
        CalibrationTerm::Ece => bin_sums(batch, cfg.bins)
            .iter()
            .map(|(sp, sy)| {
                let d = sp - sy;
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        _ => Vec::new(),
    };
    for i in 0..batch.len() {
        let (y, p, u) = (batch.y[i], batch.p[i], batch.u[i]);
        let cal_grad = match cfg.calibration_term {
            CalibrationTerm::Ece => bin_signs[bin_index(p, cfg.bins)] / n,
            CalibrationTerm::Bce => {
                let c = clamp_p(p);
                if c != p {
                    0.0
                } else {
                    (p - f64::from(y)) / (p * (1.0 - p)) / n
                }
            }
            CalibrationTerm::Mse => {
                let c = clamp_p(p);
                if c != p {
                    0.0
                } else {
                    2.0 * (p - f64::from(y)) / n
                }
            }
        };
        dp[i] = af_grad(y, p, cfg) / n + cfg.mu * cal_grad;
        du[i] = cfg.lambda * cp_grad_u(y, p, u, cfg.tau) / n;
    }
    Ok((parts, dp, du))
}

//! Shared encoder, two linear heads and the logit fusion, with a hand-written
//! backward pass.
//!
//! Each hidden layer is Linear -> BatchNorm -> ReLU -> Dropout. In training
//! mode normalization uses batch statistics and updates running estimates;
//! in inference mode it uses the running estimates and dropout is off.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::clamp_confidence;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub bn_momentum: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: crate::features::FEATURE_COUNT,
            hidden: vec![200; 6],
            dropout: 0.2,
            bn_momentum: 0.1,
        }
    }
}

/// Linear map followed by batch normalization. `weight` is row-major
/// `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: Vec<f64>,
    pub bias: f64,
}

/// `p = sigmoid(w1 * logit(p_llm) + w2 * l_p + epsilon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub w1: f64,
    pub w2: f64,
    pub epsilon: f64,
}

impl Fusion {
    pub const IDENTITY: Fusion = Fusion {
        w1: 1.0,
        w2: 0.0,
        epsilon: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<DenseLayer>,
    pub head_p: Head,
    pub head_u: Head,
    pub fusion: Fusion,
}

/// Per-example outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub l_llm: Vec<f64>,
    pub l_p: Vec<f64>,
    pub l_u: Vec<f64>,
    pub p: Vec<f64>,
    pub u: Vec<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    // ReLU gate times dropout scale; the gradient multiplier after normalization.
    gate: Array2<f64>,
}

/// Per-layer batch mean and unbiased batch variance.
type BatchStats = (Array1<f64>, Array1<f64>);

/// Activations retained for [`Network::backward`].
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    hidden_out: Array2<f64>,
    out: BatchOutput,
}

impl ForwardCache {
    pub fn output(&self) -> &BatchOutput {
        &self.out
    }
}

/// Gradients laid out like [`Network::param_slices_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub slices: Vec<Vec<f64>>,
}

pub enum Mode<'a, R: Rng> {
    Train(&'a mut R),
    Eval,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logit of the clamped confidence, so it is always finite.
pub fn logit(p: f64) -> f64 {
    let p = clamp_confidence(p);
    (p / (1.0 - p)).ln()
}

impl Network {
    /// Fan-in scaled uniform weights; fusion starts at the identity.
    pub fn init<R: Rng>(config: NetworkConfig, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(config.hidden.len());
        let mut in_dim = config.input_dim;
        for &out_dim in &config.hidden {
            let bound = 1.0 / (in_dim as f64).sqrt();
            layers.push(DenseLayer {
                in_dim,
                out_dim,
                weight: (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
                bias: (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
                gamma: vec![1.0; out_dim],
                beta: vec![0.0; out_dim],
                running_mean: vec![0.0; out_dim],
                running_var: vec![1.0; out_dim],
            });
            in_dim = out_dim;
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let head = |rng: &mut R| Head {
            weight: (0..in_dim).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: rng.random_range(-bound..bound),
        };
        let head_p = head(rng);
        let head_u = head(rng);
        Self {
            config,
            layers,
            head_p,
            head_u,
            fusion: Fusion::IDENTITY,
        }
    }

    fn hidden_dim(&self) -> usize {
        self.layers.last().map_or(self.config.input_dim, |l| l.out_dim)
    }

    /// Run a batch. `x` is `n x input_dim` (standardized); `p_llm` has length
    /// `n`. Training mode also folds the batch statistics into the running
    /// estimates.
    pub fn forward<R: Rng>(&mut self, x: ArrayView2<f64>, p_llm: &[f64], mode: Mode<'_, R>) -> ForwardCache {
        let train = matches!(mode, Mode::Train(_));
        let (cache, stats) = self.run(x, p_llm, mode);
        if train {
            let momentum = self.config.bn_momentum;
            for (layer, (mean, var)) in self.layers.iter_mut().zip(stats) {
                for j in 0..layer.out_dim {
                    layer.running_mean[j] = (1.0 - momentum) * layer.running_mean[j] + momentum * mean[j];
                    layer.running_var[j] = (1.0 - momentum) * layer.running_var[j] + momentum * var[j];
                }
            }
        }
        cache
    }

    /// Inference-mode forward pass; never mutates the network.
    pub fn eval(&self, x: ArrayView2<f64>, p_llm: &[f64]) -> BatchOutput {
        self.run::<rand::rngs::ThreadRng>(x, p_llm, Mode::Eval).0.out
    }

    // Returns the cache plus, per layer, the batch mean and unbiased batch
    // variance (empty in eval mode).
    fn run<R: Rng>(
        &self,
        x: ArrayView2<f64>,
        p_llm: &[f64],
        mode: Mode<'_, R>,
    ) -> (ForwardCache, Vec<BatchStats>) {
        let n = x.nrows();
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let train = rng.is_some();
        let keep = 1.0 - self.config.dropout;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::new();
        let mut h = x.to_owned();
        for layer in &self.layers {
            let w = ArrayView2::from_shape((layer.out_dim, layer.in_dim), &layer.weight).expect("weight shape");
            let z = h.dot(&w.t()) + ArrayView1::from(&layer.bias);
            let (mean, var) = if train {
                let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                let var = z.var_axis(Axis(0), 0.0);
                let unbiased = if n > 1 { &var * (n as f64 / (n as f64 - 1.0)) } else { var.clone() };
                stats.push((mean.clone(), unbiased));
                (mean, var)
            } else {
                (Array1::from(layer.running_mean.clone()), Array1::from(layer.running_var.clone()))
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let y = &xhat * &ArrayView1::from(&layer.gamma) + ArrayView1::from(&layer.beta);
            let mut gate = y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if let Some(r) = rng.as_deref_mut() {
                if self.config.dropout > 0.0 {
                    gate.mapv_inplace(|g| if g > 0.0 && r.random::<f64>() < keep { g / keep } else { 0.0 });
                }
            }
            let out = &y * &gate;
            caches.push(LayerCache {
                input: h,
                xhat,
                inv_std,
                gate,
            });
            h = out;
        }
        let l_p = (h.dot(&ArrayView1::from(&self.head_p.weight)) + self.head_p.bias).to_vec();
        let l_u = (h.dot(&ArrayView1::from(&self.head_u.weight)) + self.head_u.bias).to_vec();
        let l_llm: Vec<f64> = p_llm.iter().map(|&q| logit(q)).collect();
        let f = self.fusion;
        let p = (0..n).map(|i| sigmoid(f.w1 * l_llm[i] + f.w2 * l_p[i] + f.epsilon)).collect();
        let u = l_u.iter().map(|&l| sigmoid(l)).collect();
        let cache = ForwardCache {
            layers: caches,
            hidden_out: h,
            out: BatchOutput { l_llm, l_p, l_u, p, u },
        };
        (cache, stats)
    }

    /// Backpropagate `dL/dp` and `dL/du` (one entry per example).
    pub fn backward(&self, cache: &ForwardCache, dp: &[f64], du: &[f64]) -> Grads {
        let out = &cache.out;
        let n = out.p.len();
        let f = self.fusion;
        let mut dz_p = Array1::zeros(n);
        let mut dl_u = Array1::zeros(n);
        let (mut dw1, mut dw2, mut deps) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let d = dp[i] * out.p[i] * (1.0 - out.p[i]);
            dz_p[i] = d;
            dw1 += d * out.l_llm[i];
            dw2 += d * out.l_p[i];
            deps += d;
            dl_u[i] = du[i] * out.u[i] * (1.0 - out.u[i]);
        }
        let dl_p = &dz_p * f.w2;
        let h = &cache.hidden_out;
        let d_head_p_w = h.t().dot(&dl_p);
        let d_head_u_w = h.t().dot(&dl_u);
        let d_head_p_b = dl_p.sum();
        let d_head_u_b = dl_u.sum();

        let hd = self.hidden_dim();
        let wp = ArrayView2::from_shape((1, hd), &self.head_p.weight).expect("head shape");
        let wu = ArrayView2::from_shape((1, hd), &self.head_u.weight).expect("head shape");
        let mut dh = dl_p.insert_axis(Axis(1)).dot(&wp) + dl_u.insert_axis(Axis(1)).dot(&wu);

        let mut layer_grads: Vec<[Vec<f64>; 4]> = Vec::with_capacity(self.layers.len());
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let dy = &dh * &c.gate;
            let dgamma = (&dy * &c.xhat).sum_axis(Axis(0));
            let dbeta = dy.sum_axis(Axis(0));
            let dxhat = &dy * &ArrayView1::from(&layer.gamma);
            let nf = n as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let dz = (&dxhat * nf - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &(&c.inv_std / nf);
            let dw = dz.t().dot(&c.input);
            let db = dz.sum_axis(Axis(0));
            let w = ArrayView2::from_shape((layer.out_dim, layer.in_dim), &layer.weight).expect("weight shape");
            dh = dz.dot(&w);
            layer_grads.push([
                dw.into_raw_vec_and_offset().0,
                db.to_vec(),
                dgamma.to_vec(),
                dbeta.to_vec(),
            ]);
        }
        layer_grads.reverse();
        let mut slices = Vec::with_capacity(4 * self.layers.len() + 7);
        for g in layer_grads {
            slices.extend(g);
        }
        slices.push(d_head_p_w.to_vec());
        slices.push(vec![d_head_p_b]);
        slices.push(d_head_u_w.to_vec());
        slices.push(vec![d_head_u_b]);
        slices.push(vec![dw1]);
        slices.push(vec![dw2]);
        slices.push(vec![deps]);
        Grads { slices }
    }

    /// Every trainable parameter, in the same order as [`Grads::slices`].
    /// Running statistics are not trainable and are excluded.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * self.layers.len() + 7);
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            out.push(&mut layer.gamma);
            out.push(&mut layer.beta);
        }
        out.push(&mut self.head_p.weight);
        out.push(std::slice::from_mut(&mut self.head_p.bias));
        out.push(&mut self.head_u.weight);
        out.push(std::slice::from_mut(&mut self.head_u.bias));
        out.push(std::slice::from_mut(&mut self.fusion.w1));
        out.push(std::slice::from_mut(&mut self.fusion.w2));
        out.push(std::slice::from_mut(&mut self.fusion.epsilon));
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.param_slices_mut().iter().map(|s| s.len()).sum()
    }
}

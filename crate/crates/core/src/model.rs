//! Small fully-connected classifiers with softmax probability outputs, the
//! affinely bounded cross-entropy surrogate loss, 0-1 error, and exact
//! manual backpropagation over a flat parameter vector.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::pairwise_mean;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Layer sizes of a fully-connected network, input through output. Hidden
/// layers use ReLU; the output layer is a softmax over K >= 2 classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub layer_sizes: Vec<usize>,
}

impl MlpArchitecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(
                "architecture needs at least input and output layers",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::config("output layer needs K >= 2 classes"));
        }
        Ok(MlpArchitecture { layer_sizes })
    }

    /// 4 -> 100 -> 2 network used on the SYNTH dataset.
    pub fn synth_default() -> Self {
        MlpArchitecture {
            layer_sizes: vec![4, 100, 2],
        }
    }

    /// 784 -> 600 -> 600 -> 600 -> 10 network used on MNIST.
    pub fn mnist_default() -> Self {
        MlpArchitecture {
            layer_sizes: vec![784, 600, 600, 600, 10],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total flat parameter count: sum over layers of (n_in + 1) * n_out.
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Widest hidden/output layer; sizes the forward scratch buffers.
    fn max_width(&self) -> usize {
        *self.layer_sizes.iter().max().unwrap()
    }
}

/// Flat parameter vector. Layout per layer, in layer order: the weight
/// matrix in row-major order (each row holds the fan-in weights of one
/// output unit), followed by that layer's biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub flat: Vec<f64>,
}

impl MlpParams {
    pub fn new(arch: &MlpArchitecture, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("parameters must be finite"));
        }
        Ok(MlpParams { flat })
    }

    pub fn zeros(arch: &MlpArchitecture) -> Self {
        MlpParams {
            flat: vec![0.0; arch.param_count()],
        }
    }

    /// Seeded initialization: weights are zero-mean Gaussian with standard
    /// deviation 1/sqrt(fan_in), biases zero.
    pub fn init(arch: &MlpArchitecture, rng: &mut ChaCha8Rng) -> Self {
        let mut flat = Vec::with_capacity(arch.param_count());
        for w in arch.layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let scale = 1.0 / (n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                let z: f64 = rng.sample(StandardNormal);
                flat.push(scale * z);
            }
            flat.resize(flat.len() + n_out, 0.0);
        }
        MlpParams { flat }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

/// Configuration of the bounded cross-entropy: probabilities are remapped
/// through psi(p) = e^{-l_max} + (1 - 2 e^{-l_max}) p before the log, so the
/// loss lies in [-ln(1 - e^{-l_max}), l_max] and has range Delta = l_max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedXentConfig {
    pub l_max: f64,
}

impl Default for BoundedXentConfig {
    fn default() -> Self {
        BoundedXentConfig { l_max: 4.0 }
    }
}

impl BoundedXentConfig {
    pub fn new(l_max: f64) -> Result<Self> {
        if !(l_max > 0.0) || !l_max.is_finite() {
            return Err(Error::config(format!("l_max must be > 0, got {l_max}")));
        }
        Ok(BoundedXentConfig { l_max })
    }

    /// e^{-l_max}, the floor added by the remap.
    pub fn floor(&self) -> f64 {
        (-self.l_max).exp()
    }

    /// 1 - 2 e^{-l_max}, the affine slope of the remap.
    pub fn slope(&self) -> f64 {
        1.0 - 2.0 * self.floor()
    }

    /// The surrogate range Delta fed to the privacy accounting.
    pub fn range(&self) -> f64 {
        self.l_max
    }
}

/// psi(p) = e^{-l_max} + (1 - 2 e^{-l_max}) p, mapping [0,1] into
/// [e^{-l_max}, 1 - e^{-l_max}].
pub fn psi_remap(p: f64, cfg: &BoundedXentConfig) -> Result<f64> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p must be in [0,1], got {p}")));
    }
    Ok(cfg.floor() + cfg.slope() * p)
}

/// Scratch buffers for a forward/backward pass, reused across calls to keep
/// the training loop allocation-free.
#[derive(Debug, Clone)]
pub struct Workspace {
    // Post-activation values per layer (activations[0] is the input copy).
    activations: Vec<Vec<f64>>,
    // Backpropagated deltas, one buffer per non-input layer.
    deltas: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl Workspace {
    pub fn new(arch: &MlpArchitecture) -> Self {
        Workspace {
            activations: arch.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            deltas: arch.layer_sizes[1..]
                .iter()
                .map(|&s| vec![0.0; s])
                .collect(),
            probs: vec![0.0; arch.max_width()],
        }
    }
}

fn check_input(arch: &MlpArchitecture, params: &MlpParams, x: &[f64]) -> Result<()> {
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: x.len(),
        });
    }
    if params.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

// Runs the network up to the output logits, leaving per-layer activations in
// the workspace. Returns nothing; the logits sit in the last activation.
fn forward_into(arch: &MlpArchitecture, flat: &[f64], x: &[f64], ws: &mut Workspace) {
    ws.activations[0].copy_from_slice(x);
    let n_layers = arch.layer_sizes.len() - 1;
    let mut offset = 0;
    for layer in 0..n_layers {
        let n_in = arch.layer_sizes[layer];
        let n_out = arch.layer_sizes[layer + 1];
        let (weights, rest) = flat[offset..].split_at(n_in * n_out);
        let biases = &rest[..n_out];
        let (before, after) = ws.activations.split_at_mut(layer + 1);
        let input = &before[layer];
        let output = &mut after[0];
        for j in 0..n_out {
            let row = &weights[j * n_in..(j + 1) * n_in];
            let mut z = biases[j];
            for (w, v) in row.iter().zip(input.iter()) {
                z += w * v;
            }
            output[j] = if layer + 1 < arch.layer_sizes.len() - 1 {
                z.max(0.0)
            } else {
                z
            };
        }
        offset += (n_in + 1) * n_out;
    }
}

// Max-subtracted softmax of the output logits into ws.probs[..k].
fn softmax_into(arch: &MlpArchitecture, ws: &mut Workspace) {
    let k = arch.n_classes();
    let logits = ws.activations.last().unwrap();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in ws.probs[..k].iter_mut().zip(logits.iter()) {
        let e = (z - max).exp();
        *p = e;
        sum += e;
    }
    for p in ws.probs[..k].iter_mut() {
        *p /= sum;
    }
}

/// Forward pass returning the softmax probability vector over K classes.
pub fn forward(arch: &MlpArchitecture, params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input(arch, params, x)?;
    let mut ws = Workspace::new(arch);
    forward_into(arch, &params.flat, x, &mut ws);
    softmax_into(arch, &mut ws);
    Ok(ws.probs[..arch.n_classes()].to_vec())
}

fn check_label(arch: &MlpArchitecture, label: usize) -> Result<()> {
    if label == 0 || label > arch.n_classes() {
        return Err(Error::domain(format!(
            "label {label} out of range 1..={}",
            arch.n_classes()
        )));
    }
    Ok(())
}

/// Bounded cross-entropy of one example: -ln psi(p_y). Labels are 1-based.
pub fn bounded_xent(
    arch: &MlpArchitecture,
    params: &MlpParams,
    x: &[f64],
    label: usize,
    cfg: &BoundedXentConfig,
) -> Result<f64> {
    check_input(arch, params, x)?;
    check_label(arch, label)?;
    let mut ws = Workspace::new(arch);
    forward_into(arch, &params.flat, x, &mut ws);
    softmax_into(arch, &mut ws);
    Ok(-(cfg.floor() + cfg.slope() * ws.probs[label - 1]).ln())
}

/// 0-1 loss of one example: 0 iff y is the argmax of the probability vector.
/// Exact ties break toward the lowest class index.
pub fn error01(arch: &MlpArchitecture, params: &MlpParams, x: &[f64], label: usize) -> Result<u8> {
    check_input(arch, params, x)?;
    check_label(arch, label)?;
    let mut ws = Workspace::new(arch);
    forward_into(arch, &params.flat, x, &mut ws);
    // argmax of the softmax equals argmax of the logits.
    let logits = ws.activations.last().unwrap();
    let k = arch.n_classes();
    let mut best = 0usize;
    for j in 1..k {
        if logits[j] > logits[best] {
            best = j;
        }
    }
    Ok(u8::from(best + 1 != label))
}

/// Gradient of the minibatch mean of the bounded cross-entropy with respect
/// to the flat parameter vector, written into `grad` (same length, zeroed
/// here). The affine factor of psi is part of the chain rule:
/// dLoss/dz_j = (a s_y / psi(s_y)) (s_j - [j = y]) with a = 1 - 2 e^{-l_max}.
pub fn grad_bounded_xent_into(
    arch: &MlpArchitecture,
    params: &MlpParams,
    data: &Dataset,
    batch: &[usize],
    cfg: &BoundedXentConfig,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> Result<()> {
    grad_flat_into(arch, &params.flat, data, batch, cfg, ws, grad)
}

// Flat-slice core of the minibatch gradient; lets the SGLD loop pass its
// live parameter buffer without re-wrapping it.
pub(crate) fn grad_flat_into(
    arch: &MlpArchitecture,
    flat: &[f64],
    data: &Dataset,
    batch: &[usize],
    cfg: &BoundedXentConfig,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::domain("minibatch must be nonempty"));
    }
    if flat.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: flat.len(),
        });
    }
    if grad.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: grad.len(),
        });
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n_layers = arch.layer_sizes.len() - 1;
    let scale = 1.0 / batch.len() as f64;
    let floor = cfg.floor();
    let slope = cfg.slope();

    for &idx in batch {
        let x = data.input(idx);
        let label = data.labels[idx];
        if x.len() != arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim(),
                got: x.len(),
            });
        }
        check_label(arch, label)?;
        forward_into(arch, flat, x, ws);
        softmax_into(arch, ws);

        let k = arch.n_classes();
        let s_y = ws.probs[label - 1];
        let coef = slope * s_y / (floor + slope * s_y);
        {
            let delta_out = &mut ws.deltas[n_layers - 1];
            for (j, (d, &p)) in delta_out[..k].iter_mut().zip(ws.probs.iter()).enumerate() {
                *d = coef * (p - f64::from(j + 1 == label));
            }
        }

        // Walk the layers backwards, accumulating into the flat gradient.
        let mut offset = arch.param_count();
        for layer in (0..n_layers).rev() {
            let n_in = arch.layer_sizes[layer];
            let n_out = arch.layer_sizes[layer + 1];
            offset -= (n_in + 1) * n_out;
            let input = &ws.activations[layer];
            let (grad_w, rest) =
                grad[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            let grad_b = rest;
            let delta = &ws.deltas[layer];
            for j in 0..n_out {
                let d = delta[j] * scale;
                let row = &mut grad_w[j * n_in..(j + 1) * n_in];
                for (g, v) in row.iter_mut().zip(input.iter()) {
                    *g += d * v;
                }
                grad_b[j] += d;
            }
            if layer > 0 {
                let weights = &flat[offset..offset + n_in * n_out];
                let (lower, upper) = ws.deltas.split_at_mut(layer);
                let delta_out = &upper[0];
                let delta_in = &mut lower[layer - 1];
                let act = &ws.activations[layer];
                for i in 0..n_in {
                    let mut acc = 0.0;
                    if act[i] > 0.0 {
                        for j in 0..n_out {
                            acc += weights[j * n_in + i] * delta_out[j];
                        }
                    }
                    delta_in[i] = acc;
                }
            }
        }
    }
    Ok(())
}

/// Convenience wrapper over [`grad_bounded_xent_into`] returning a fresh
/// gradient vector.
pub fn grad_bounded_xent(
    arch: &MlpArchitecture,
    params: &MlpParams,
    data: &Dataset,
    batch: &[usize],
    cfg: &BoundedXentConfig,
) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(arch);
    let mut grad = vec![0.0; arch.param_count()];
    grad_bounded_xent_into(arch, params, data, batch, cfg, &mut ws, &mut grad)?;
    Ok(grad)
}

/// Mean bounded cross-entropy of a flat parameter vector over a dataset.
/// This is the surrogate risk handed to the Monte Carlo log-Z estimator,
/// which evaluates it on raw prior draws.
pub fn surrogate_risk_flat(
    arch: &MlpArchitecture,
    flat: &[f64],
    data: &Dataset,
    cfg: &BoundedXentConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("dataset must be nonempty"));
    }
    if flat.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: flat.len(),
        });
    }
    let mut ws = Workspace::new(arch);
    let floor = cfg.floor();
    let slope = cfg.slope();
    let mut xents = Vec::with_capacity(data.len());
    for idx in 0..data.len() {
        let label = data.labels[idx];
        check_label(arch, label)?;
        forward_into(arch, flat, data.input(idx), &mut ws);
        softmax_into(arch, &mut ws);
        xents.push(-(floor + slope * ws.probs[label - 1]).ln());
    }
    Ok(pairwise_mean(&xents))
}

/// Mean 0-1 error and mean bounded cross-entropy over a dataset, accumulated
/// in index order with pairwise summation.
pub fn empirical_risks(
    arch: &MlpArchitecture,
    params: &MlpParams,
    data: &Dataset,
    cfg: &BoundedXentConfig,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::domain("dataset must be nonempty"));
    }
    let mut ws = Workspace::new(arch);
    let floor = cfg.floor();
    let slope = cfg.slope();
    let mut errs = Vec::with_capacity(data.len());
    let mut xents = Vec::with_capacity(data.len());
    for idx in 0..data.len() {
        let x = data.input(idx);
        let label = data.labels[idx];
        check_input(arch, params, x)?;
        check_label(arch, label)?;
        forward_into(arch, &params.flat, x, &mut ws);
        let logits = ws.activations.last().unwrap();
        let k = arch.n_classes();
        let mut best = 0usize;
        for j in 1..k {
            if logits[j] > logits[best] {
                best = j;
            }
        }
        errs.push(f64::from(u8::from(best + 1 != label)));
        softmax_into(arch, &mut ws);
        xents.push(-(floor + slope * ws.probs[label - 1]).ln());
    }
    Ok((pairwise_mean(&errs), pairwise_mean(&xents)))
}

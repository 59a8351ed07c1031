//! Stochastic gradient Langevin dynamics targeting Gibbs distributions
//! exp(-U), with U = tau * (surrogate empirical risk) plus an optional
//! quadratic anchor term, the t^{-b} learning-rate schedule, and the
//! one-stage and two-stage training procedures.
//!
//! The update is the canonical Welling-Teh form
//!
//!   w <- w - (eta/2) * g(w) + sqrt(eta) * xi,     xi ~ N(0, I),
//!
//! where g is an unbiased minibatch estimate of grad U. Because the
//! surrogate risk is the mean (not the sum) of per-example losses, the
//! minibatch mean gradient scaled by tau is unbiased for grad U.

use crate::bounds::{gibbs_sample_privacy, PrivacyBudget};
use crate::data::{minibatch_stream, Dataset};
use crate::error::{Error, Result};
use crate::model::{empirical_risks, BoundedXentConfig, MlpArchitecture, MlpParams, Workspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

/// Sampler configuration. The learning rate at epoch t >= 1 is
/// a0 * t^{-b}; `epochs` is T for one-stage runs and T2 for two-stage runs,
/// with T1 carried in `stage_one_epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    pub a0: f64,
    pub b: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub stage_one_epochs: Option<usize>,
    pub seed: u64,
    /// Scales the injected Gaussian noise. 1 is SGLD; 0 degenerates to
    /// deterministic gradient descent on U (diagnostic hook).
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Number of trailing epoch-end iterates kept as posterior samples.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_noise_scale() -> f64 {
    1.0
}

fn default_window() -> usize {
    20
}

impl SgldConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if !(self.a0 > 0.0) || !self.a0.is_finite() {
            return Err(Error::config(format!("a0 must be > 0, got {}", self.a0)));
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(Error::config(format!("b must be > 0, got {}", self.b)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::config(format!(
                "batch_size must be in 1..={n}, got {}",
                self.batch_size
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::config("noise_scale must be >= 0"));
        }
        if self.window == 0 {
            return Err(Error::config("window must be >= 1"));
        }
        Ok(())
    }

    /// Learning rate at epoch t (1-based): a0 * t^{-b}.
    pub fn step_size(&self, epoch: usize) -> f64 {
        self.a0 * (epoch as f64).powf(-self.b)
    }
}

/// Quadratic anchor (gamma/2) ||w - center||^2 added to the energy.
#[derive(Debug, Clone, Copy)]
pub struct Anchor<'a> {
    pub center: &'a [f64],
    pub gamma: f64,
}

/// Energy U(w) = tau * R(w) + (gamma/2) ||w - w0||^2 when anchored,
/// tau * R(w) otherwise, where R is the surrogate empirical risk supplied
/// through the gradient callback.
#[derive(Debug, Clone, Copy)]
pub struct EnergySpec<'a> {
    pub tau: f64,
    pub anchor: Option<Anchor<'a>>,
}

/// Linear annealing of the inverse temperature between tau1 and tau2 over
/// epochs t in [T1, 2 T1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub tau1: f64,
    pub tau2: f64,
    pub t1: usize,
}

/// tau_t = ((t - T1) tau2 + (2 T1 - t) tau1) / T1 for t in [T1, 2 T1];
/// the endpoints reproduce tau1 and tau2 exactly.
pub fn anneal_tau(schedule: &AnnealSchedule, t: usize) -> Result<f64> {
    let t1 = schedule.t1;
    if t1 == 0 {
        return Err(Error::config("T1 must be >= 1"));
    }
    if t < t1 || t > 2 * t1 {
        return Err(Error::domain(format!(
            "epoch {t} outside anneal range [{}, {}]",
            t1,
            2 * t1
        )));
    }
    if t == t1 {
        return Ok(schedule.tau1);
    }
    if t == 2 * t1 {
        return Ok(schedule.tau2);
    }
    let t = t as f64;
    let t1 = t1 as f64;
    Ok(((t - t1) * schedule.tau2 + (2.0 * t1 - t) * schedule.tau1) / t1)
}

/// One SGLD update in place. `grad_fn` fills `scratch` with the minibatch
/// mean gradient of the surrogate risk at the current parameters; it is not
/// called when tau = 0. A non-finite gradient or iterate aborts the run.
#[allow(clippy::too_many_arguments)]
pub fn sgld_step<F>(
    params: &mut [f64],
    energy: &EnergySpec<'_>,
    batch: &[usize],
    grad_fn: F,
    step_size: f64,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
    scratch: &mut [f64],
) -> Result<()>
where
    F: FnOnce(&[f64], &[usize], &mut [f64]) -> Result<()>,
{
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::domain(format!(
            "step_size must be > 0, got {step_size}"
        )));
    }
    if scratch.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: scratch.len(),
        });
    }
    if energy.tau != 0.0 {
        grad_fn(params, batch, scratch)?;
        for g in scratch.iter_mut() {
            *g *= energy.tau;
        }
    } else {
        scratch.iter_mut().for_each(|g| *g = 0.0);
    }
    if let Some(anchor) = &energy.anchor {
        if anchor.center.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: anchor.center.len(),
            });
        }
        for ((g, w), c) in scratch
            .iter_mut()
            .zip(params.iter())
            .zip(anchor.center.iter())
        {
            *g += anchor.gamma * (w - c);
        }
    }
    if scratch.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            detail: "non-finite gradient".to_string(),
        });
    }
    let half_eta = 0.5 * step_size;
    let noise_std = step_size.sqrt() * noise_scale;
    if noise_std > 0.0 {
        for (w, g) in params.iter_mut().zip(scratch.iter()) {
            let xi: f64 = rng.sample(StandardNormal);
            *w += -half_eta * g + noise_std * xi;
        }
    } else {
        for (w, g) in params.iter_mut().zip(scratch.iter()) {
            *w -= half_eta * g;
        }
    }
    if params.iter().any(|w| !w.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            detail: "non-finite iterate".to_string(),
        });
    }
    Ok(())
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub step_size: f64,
    pub tau: f64,
    pub train_err01: f64,
    pub train_xent: f64,
}

/// Iterate window captured at a designated epoch.
#[derive(Debug, Clone)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub window: Vec<MlpParams>,
}

/// Output of a training phase: the final iterate, the trailing epoch-end
/// iterate window (approximate posterior draws), per-epoch risk rows, and
/// any mid-run window snapshots that were requested.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub final_params: MlpParams,
    pub window: Vec<MlpParams>,
    pub epoch_rows: Vec<EpochRow>,
    pub snapshots: Vec<EpochSnapshot>,
}

/// Output of the two-stage procedure: the private prior mean (stage-one
/// final iterate), the posterior-phase run, stage-one diagnostics, and the
/// privacy budget of releasing the prior mean.
#[derive(Debug, Clone)]
pub struct TwoStageRun {
    pub prior_mean: MlpParams,
    pub posterior: TrainRun,
    pub stage_one_rows: Vec<EpochRow>,
    pub privacy: PrivacyBudget,
}

// Shared epoch loop. `tau_of_epoch` supplies the inverse temperature per
// epoch; `anchor` is borrowed for the whole phase when present.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    arch: &MlpArchitecture,
    data: &Dataset,
    cfg: &SgldConfig,
    xcfg: &BoundedXentConfig,
    params: &mut MlpParams,
    rng: &mut ChaCha8Rng,
    epochs: usize,
    tau_of_epoch: &dyn Fn(usize) -> f64,
    anchor: Option<(&MlpParams, f64)>,
    window: &mut VecDeque<MlpParams>,
    snapshot_epochs: &[usize],
    snapshots: &mut Vec<EpochSnapshot>,
) -> Result<Vec<EpochRow>> {
    let mut ws = Workspace::new(arch);
    let mut scratch = vec![0.0; params.len()];
    let mut rows = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let eta = cfg.step_size(epoch);
        let tau = tau_of_epoch(epoch);
        let epoch_seed = rng.gen::<u64>();
        let batches = minibatch_stream(data.len(), cfg.batch_size, epoch_seed)?;
        for batch in &batches {
            let energy = EnergySpec {
                tau,
                anchor: anchor.map(|(center, gamma)| Anchor {
                    center: &center.flat,
                    gamma,
                }),
            };
            sgld_step(
                &mut params.flat,
                &energy,
                batch,
                |p, idx, out| crate::model::grad_flat_into(arch, p, data, idx, xcfg, &mut ws, out),
                eta,
                cfg.noise_scale,
                rng,
                &mut scratch,
            )
            .map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { epoch, detail },
                other => other,
            })?;
        }
        let (train_err01, train_xent) = empirical_risks(arch, params, data, xcfg)?;
        rows.push(EpochRow {
            epoch,
            step_size: eta,
            tau,
            train_err01,
            train_xent,
        });
        window.push_back(params.clone());
        if window.len() > cfg.window {
            window.pop_front();
        }
        if snapshot_epochs.contains(&epoch) {
            snapshots.push(EpochSnapshot {
                epoch,
                window: window.iter().cloned().collect(),
            });
        }
    }
    Ok(rows)
}

/// One-stage procedure: T epochs of minibatched SGLD at fixed tau with
/// energy U = tau * R. Fully determined by (seed, config, data).
pub fn one_stage_train(
    arch: &MlpArchitecture,
    data: &Dataset,
    tau: f64,
    cfg: &SgldConfig,
    xcfg: &BoundedXentConfig,
) -> Result<TrainRun> {
    one_stage_train_with_snapshots(arch, data, tau, cfg, xcfg, &[])
}

/// [`one_stage_train`] that additionally captures the iterate window at the
/// given epochs (for mid-run report rows).
pub fn one_stage_train_with_snapshots(
    arch: &MlpArchitecture,
    data: &Dataset,
    tau: f64,
    cfg: &SgldConfig,
    xcfg: &BoundedXentConfig,
    snapshot_epochs: &[usize],
) -> Result<TrainRun> {
    cfg.validate(data.len())?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::config(format!("tau must be >= 0, got {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init(arch, &mut rng);
    let mut window = VecDeque::new();
    let mut snapshots = Vec::new();
    let rows = run_phase(
        arch,
        data,
        cfg,
        xcfg,
        &mut params,
        &mut rng,
        cfg.epochs,
        &|_| tau,
        None,
        &mut window,
        snapshot_epochs,
        &mut snapshots,
    )?;
    Ok(TrainRun {
        final_params: params,
        window: window.into(),
        epoch_rows: rows,
        snapshots,
    })
}

/// Two-stage procedure. Stage one runs T1 epochs at tau1 on the bare
/// surrogate risk; its final iterate w0 becomes the Gaussian prior mean.
/// The learning-rate schedule then restarts: T1 transition epochs anneal the
/// temperature linearly from tau1 to tau2 under the anchored energy
/// U = tau_t R + (gamma/2)||w - w0||^2, and stage two continues for T2 - T1
/// epochs at tau2. The returned privacy budget is that of releasing one
/// Gibbs draw at tau1: epsilon = 2 tau1 l_max / m.
pub fn two_stage_train(
    arch: &MlpArchitecture,
    data: &Dataset,
    tau1: f64,
    tau2: f64,
    gamma: f64,
    cfg: &SgldConfig,
    xcfg: &BoundedXentConfig,
) -> Result<TwoStageRun> {
    two_stage_train_with_snapshots(arch, data, tau1, tau2, gamma, cfg, xcfg, &[])
}

/// [`two_stage_train`] that additionally captures the posterior-phase
/// iterate window at the given epochs.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_train_with_snapshots(
    arch: &MlpArchitecture,
    data: &Dataset,
    tau1: f64,
    tau2: f64,
    gamma: f64,
    cfg: &SgldConfig,
    xcfg: &BoundedXentConfig,
    snapshot_epochs: &[usize],
) -> Result<TwoStageRun> {
    cfg.validate(data.len())?;
    let t1 = cfg
        .stage_one_epochs
        .ok_or_else(|| Error::config("two-stage run needs stage_one_epochs (T1)"))?;
    let t2 = cfg.epochs;
    if t1 == 0 || t2 <= t1 {
        return Err(Error::config(format!(
            "need T2 > T1 >= 1, got T1={t1}, T2={t2}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::config(format!("gamma must be > 0, got {gamma}")));
    }
    for (name, tau) in [("tau1", tau1), ("tau2", tau2)] {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::config(format!("{name} must be >= 0, got {tau}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init(arch, &mut rng);
    let mut stage_one_window = VecDeque::new();
    let mut stage_one_snapshots = Vec::new();
    let stage_one_rows = run_phase(
        arch,
        data,
        cfg,
        xcfg,
        &mut params,
        &mut rng,
        t1,
        &|_| tau1,
        None,
        &mut stage_one_window,
        &[],
        &mut stage_one_snapshots,
    )?;
    let prior_mean = params.clone();

    let schedule = AnnealSchedule { tau1, tau2, t1 };
    let tau_of_epoch = move |epoch: usize| -> f64 {
        if epoch <= t1 {
            // Transition epoch `epoch` corresponds to paper epoch T1 + epoch.
            anneal_tau(&schedule, t1 + epoch).expect("in-range by construction")
        } else {
            tau2
        }
    };
    let mut window = VecDeque::new();
    let mut snapshots = Vec::new();
    let rows = run_phase(
        arch,
        data,
        cfg,
        xcfg,
        &mut params,
        &mut rng,
        t2,
        &tau_of_epoch,
        Some((&prior_mean, gamma)),
        &mut window,
        snapshot_epochs,
        &mut snapshots,
    )?;

    let privacy = gibbs_sample_privacy(tau1, xcfg.range(), data.len() as u64)?;
    Ok(TwoStageRun {
        prior_mean,
        posterior: TrainRun {
            final_params: params,
            window: window.into(),
            epoch_rows: rows,
            snapshots,
        },
        stage_one_rows,
        privacy,
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SGLD";
const CHECKPOINT_VERSION: u32 = 1;

/// Persists a flat iterate as little-endian f64s behind a 16-byte header
/// (magic, version, length).
pub fn write_checkpoint(path: &Path, flat: &[f64]) -> Result<()> {
    let mut file = File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    file.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<Vec<f64>> {
    let mut file = File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::Truncated("checkpoint header".to_string()))?;
    if &header[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_le_bytes(*CHECKPOINT_MAGIC),
            found: u32::from_le_bytes(header[0..4].try_into().unwrap()),
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut raw = vec![0u8; len * 8];
    file.read_exact(&mut raw)
        .map_err(|_| Error::Truncated(format!("checkpoint payload: expected {len} values")))?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

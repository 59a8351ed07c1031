//! Experiment sweeps: one chain per (temperature, seed) cell, run
//! concurrently, with report rows assembled in a fixed cell order so that
//! identical configurations produce identical CSV bytes (runtime_s aside).

use crate::bounds::BoundParams;
use crate::data::{mnist_load, randomize_labels, synth_generate, Dataset, LabelMode};
use crate::error::{Error, Result};
use crate::model::{surrogate_risk_flat, BoundedXentConfig, MlpArchitecture, MlpParams};
use crate::priors::{logz_upper_mc, posterior_risk_mc, GaussianPrior, GibbsBase, GibbsConfig};
use crate::report::{
    assemble_report, failed_report, BoundReport, DatasetSpec, ExperimentConfig, Procedure,
    RawRunOutput,
};
use crate::sgld::{
    one_stage_train_with_snapshots, two_stage_train_with_snapshots, EpochSnapshot, TrainRun,
};
use rayon::prelude::*;
use std::time::Instant;

/// Dataset pair plus the architecture resolved for it.
pub struct PreparedExperiment {
    pub train: Dataset,
    pub heldout: Dataset,
    pub arch: MlpArchitecture,
    pub xcfg: BoundedXentConfig,
}

/// Loads (or generates) the datasets named by the config, applies the
/// random-label variant when requested, and resolves the architecture.
pub fn prepare_experiment(cfg: &ExperimentConfig) -> Result<PreparedExperiment> {
    cfg.validate()?;
    let (train, heldout) = match &cfg.dataset {
        DatasetSpec::Synth { config } => {
            let (train, heldout, _) = synth_generate(config)?;
            (train, heldout)
        }
        DatasetSpec::Mnist { paths, limit } => mnist_load(paths, *limit)?,
    };
    let (train, heldout) = match cfg.label_mode {
        LabelMode::True => (train, heldout),
        LabelMode::Random => {
            let k = train.n_classes;
            (
                randomize_labels(&train, k, cfg.label_seed)?,
                randomize_labels(&heldout, k, cfg.label_seed.wrapping_add(1))?,
            )
        }
    };
    let arch = if cfg.arch.is_empty() {
        match &cfg.dataset {
            DatasetSpec::Synth { .. } => MlpArchitecture::synth_default(),
            DatasetSpec::Mnist { .. } => MlpArchitecture::mnist_default(),
        }
    } else {
        MlpArchitecture::new(cfg.arch.clone())?
    };
    if arch.input_dim() != train.dim {
        return Err(Error::config(format!(
            "architecture input {} does not match data dimension {}",
            arch.input_dim(),
            train.dim
        )));
    }
    if arch.n_classes() != train.n_classes {
        return Err(Error::config(format!(
            "architecture output {} does not match class count {}",
            arch.n_classes(),
            train.n_classes
        )));
    }
    let xcfg = BoundedXentConfig::new(cfg.l_max)?;
    Ok(PreparedExperiment {
        train,
        heldout,
        arch,
        xcfg,
    })
}

// Report rows for every requested snapshot plus the final window.
#[allow(clippy::too_many_arguments)]
fn rows_for_run(
    prep: &PreparedExperiment,
    cfg: &ExperimentConfig,
    run: &TrainRun,
    seed: u64,
    tau1: Option<f64>,
    tau2: f64,
    gamma: Option<f64>,
    kl_and_eps: Option<(crate::priors::KlEstimate, f64)>,
    started: Instant,
) -> Result<Vec<BoundReport>> {
    let final_epoch = cfg.sgld.epochs;
    let mut points: Vec<(usize, &[MlpParams])> = run
        .snapshots
        .iter()
        .filter(|s| s.epoch != final_epoch)
        .map(|EpochSnapshot { epoch, window }| (*epoch, window.as_slice()))
        .collect();
    points.push((final_epoch, run.window.as_slice()));

    let delta = cfg.bound.delta;
    let epsilon = kl_and_eps.as_ref().map(|(_, e)| *e).unwrap_or(0.0);
    let params = BoundParams::new(
        prep.train.len() as u64,
        delta,
        cfg.bound.beta.unwrap_or(delta / 2.0),
        epsilon,
    )?;

    let mut reports = Vec::with_capacity(points.len());
    for (epoch, window) in points {
        let train_risk = posterior_risk_mc(window, &prep.arch, &prep.train, &prep.xcfg)?;
        let test_risk = posterior_risk_mc(window, &prep.arch, &prep.heldout, &prep.xcfg)?;
        let raw = RawRunOutput {
            seed,
            dataset: cfg.dataset.name().to_string(),
            label_mode: cfg.label_mode,
            procedure: cfg.procedure.name().to_string(),
            tau1,
            tau2,
            gamma,
            epoch,
            m: prep.train.len() as u64,
            train_err01: train_risk.mean_err01,
            test_err01: test_risk.mean_err01,
            train_xent: train_risk.mean_xent,
            kl_estimate: kl_and_eps.as_ref().map(|(k, _)| *k),
            epsilon: kl_and_eps.as_ref().map(|(_, e)| *e),
            runtime_s: started.elapsed().as_secs_f64(),
        };
        reports.push(assemble_report(&raw, &params, &cfg.bound)?);
    }
    Ok(reports)
}

/// Trains and certifies a single one-stage (tau, seed) cell, returning the
/// report rows together with the raw training output (for checkpointing).
pub fn run_one_stage_cell(
    cfg: &ExperimentConfig,
    tau: f64,
    seed: u64,
) -> Result<(Vec<BoundReport>, TrainRun)> {
    let prep = prepare_experiment(cfg)?;
    let started = Instant::now();
    let mut sgld = cfg.sgld.clone();
    sgld.seed = seed;
    let run = one_stage_train_with_snapshots(
        &prep.arch,
        &prep.train,
        tau,
        &sgld,
        &prep.xcfg,
        &cfg.report_epochs,
    )?;
    let rows = rows_for_run(&prep, cfg, &run, seed, None, tau, None, None, started)?;
    Ok((rows, run))
}

/// Trains and certifies a single two-stage (tau2, seed) cell.
pub fn run_two_stage_cell(
    cfg: &ExperimentConfig,
    tau1: f64,
    tau2: f64,
    gamma: f64,
    seed: u64,
) -> Result<(Vec<BoundReport>, crate::sgld::TwoStageRun)> {
    let prep = prepare_experiment(cfg)?;
    let started = Instant::now();
    let mut sgld = cfg.sgld.clone();
    sgld.seed = seed;
    let run = two_stage_train_with_snapshots(
        &prep.arch,
        &prep.train,
        tau1,
        tau2,
        gamma,
        &sgld,
        &prep.xcfg,
        &cfg.report_epochs,
    )?;
    let prior = GaussianPrior::new(run.prior_mean.flat.clone(), gamma)?;
    let gibbs = GibbsConfig::new(tau2, prep.xcfg.range(), GibbsBase::Gaussian(prior))?;
    let est = logz_upper_mc(
        &gibbs,
        |flat| surrogate_risk_flat(&prep.arch, flat, &prep.train, &prep.xcfg).unwrap_or(f64::NAN),
        cfg.n_logz,
        seed,
    )?;
    let rows = rows_for_run(
        &prep,
        cfg,
        &run.posterior,
        seed,
        Some(tau1),
        tau2,
        Some(gamma),
        Some((est, run.privacy.epsilon)),
        started,
    )?;
    Ok((rows, run))
}

/// One-stage sweep: for every (tau, seed) cell, train a Gibbs chain at fixed
/// tau and certify it with the Lever bound. Diverged cells become flagged
/// rows and do not abort the sweep.
pub fn run_one_stage_sweep(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    let tau_grid = match &cfg.procedure {
        Procedure::OneStage { tau_grid } => tau_grid.clone(),
        Procedure::TwoStage { .. } => {
            return Err(Error::config("config selects the two-stage procedure"))
        }
    };
    let prep = prepare_experiment(cfg)?;
    let cells: Vec<(f64, u64)> = tau_grid
        .iter()
        .flat_map(|&tau| cfg.seeds.iter().map(move |&seed| (tau, seed)))
        .collect();

    let rows: Vec<Vec<BoundReport>> = cells
        .par_iter()
        .map(|&(tau, seed)| -> Result<Vec<BoundReport>> {
            let started = Instant::now();
            let mut sgld = cfg.sgld.clone();
            sgld.seed = seed;
            match one_stage_train_with_snapshots(
                &prep.arch,
                &prep.train,
                tau,
                &sgld,
                &prep.xcfg,
                &cfg.report_epochs,
            ) {
                Ok(run) => rows_for_run(&prep, cfg, &run, seed, None, tau, None, None, started),
                Err(Error::Divergence { epoch, detail }) => {
                    eprintln!("cell (tau={tau}, seed={seed}) diverged at epoch {epoch}: {detail}");
                    Ok(vec![failed_report(
                        seed,
                        cfg.dataset.name(),
                        cfg.label_mode,
                        "one-stage",
                        None,
                        tau,
                        None,
                        epoch,
                        started.elapsed().as_secs_f64(),
                    )])
                }
                Err(other) => Err(other),
            }
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Two-stage sweep: stage one learns the private Gaussian prior mean, the
/// posterior chain targets Q_tau2 anchored at it, the KL term is bounded by
/// Monte Carlo over fresh prior samples, and the DP PAC-Bayes certificate is
/// assembled next to the Lever comparison at tau = tau2.
pub fn run_two_stage_sweep(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    let (tau1, tau2_grid, gamma) = match &cfg.procedure {
        Procedure::TwoStage {
            tau1,
            tau2_grid,
            gamma,
        } => (*tau1, tau2_grid.clone(), *gamma),
        Procedure::OneStage { .. } => {
            return Err(Error::config("config selects the one-stage procedure"))
        }
    };
    let prep = prepare_experiment(cfg)?;
    let cells: Vec<(f64, u64)> = tau2_grid
        .iter()
        .flat_map(|&tau2| cfg.seeds.iter().map(move |&seed| (tau2, seed)))
        .collect();

    let rows: Vec<Vec<BoundReport>> = cells
        .par_iter()
        .map(|&(tau2, seed)| -> Result<Vec<BoundReport>> {
            let started = Instant::now();
            let mut sgld = cfg.sgld.clone();
            sgld.seed = seed;
            let run = match two_stage_train_with_snapshots(
                &prep.arch,
                &prep.train,
                tau1,
                tau2,
                gamma,
                &sgld,
                &prep.xcfg,
                &cfg.report_epochs,
            ) {
                Ok(run) => run,
                Err(Error::Divergence { epoch, detail }) => {
                    eprintln!(
                        "cell (tau2={tau2}, seed={seed}) diverged at epoch {epoch}: {detail}"
                    );
                    return Ok(vec![failed_report(
                        seed,
                        cfg.dataset.name(),
                        cfg.label_mode,
                        "two-stage",
                        Some(tau1),
                        tau2,
                        Some(gamma),
                        epoch,
                        started.elapsed().as_secs_f64(),
                    )]);
                }
                Err(other) => return Err(other),
            };
            let prior = GaussianPrior::new(run.prior_mean.flat.clone(), gamma)?;
            let gibbs = GibbsConfig::new(tau2, prep.xcfg.range(), GibbsBase::Gaussian(prior))?;
            let est = logz_upper_mc(
                &gibbs,
                |flat| {
                    surrogate_risk_flat(&prep.arch, flat, &prep.train, &prep.xcfg)
                        .unwrap_or(f64::NAN)
                },
                cfg.n_logz,
                seed,
            )?;
            rows_for_run(
                &prep,
                cfg,
                &run.posterior,
                seed,
                Some(tau1),
                tau2,
                Some(gamma),
                Some((est, run.privacy.epsilon)),
                started,
            )
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Dispatches on the configured procedure.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    match cfg.procedure {
        Procedure::OneStage { .. } => run_one_stage_sweep(cfg),
        Procedure::TwoStage { .. } => run_two_stage_sweep(cfg),
    }
}

//! Experiment configuration, bound-report assembly and CSV persistence.
//!
//! The CSV schema is fixed:
//! `seed,dataset,label_mode,procedure,tau1,tau2,gamma,epoch,train_err01,`
//! `test_err01,train_xent,kl_upper_raw,kl_upper,epsilon,rhs_dp,rhs_lever,`
//! `risk_bound_dp,risk_bound_lever,runtime_s`.
//!
//! Optional columns are empty for rows where they do not apply (one-stage
//! rows carry no tau1/gamma/KL/epsilon/DP columns); a row whose metric
//! columns are all empty is a failed run kept for bookkeeping. Floats are
//! written in Rust's shortest round-trip form, so write/read is lossless.

use crate::bounds::{
    dp_pacbayes_rhs, kl_inverse, lever_bound, optimize_beta, BoundParams, LeverVariant,
};
use crate::data::{LabelMode, MnistPaths, SynthConfig};
use crate::error::{Error, Result};
use crate::priors::KlEstimate;
use crate::sgld::SgldConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which dataset a sweep runs on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synth {
        #[serde(flatten)]
        config: SynthConfig,
    },
    Mnist {
        paths: MnistPaths,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Synth { .. } => "synth",
            DatasetSpec::Mnist { .. } => "mnist",
        }
    }
}

/// Training procedure and its temperature grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Procedure {
    OneStage {
        tau_grid: Vec<f64>,
    },
    TwoStage {
        tau1: f64,
        tau2_grid: Vec<f64>,
        gamma: f64,
    },
}

impl Procedure {
    pub fn name(&self) -> &'static str {
        match self {
            Procedure::OneStage { .. } => "one-stage",
            Procedure::TwoStage { .. } => "two-stage",
        }
    }
}

/// Certificate settings shared by every row of a sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundSettings {
    /// Confidence parameter delta; reported with every figure.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Max-information split; None means delta / 2.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Minimize over beta instead of using the fixed split.
    #[serde(default)]
    pub optimize_beta: bool,
    /// Lever-bound term grouping.
    #[serde(default)]
    pub lever_variant: LeverVariant,
}

fn default_delta() -> f64 {
    0.05
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            delta: default_delta(),
            beta: None,
            optimize_beta: false,
            lever_variant: LeverVariant::Conventional,
        }
    }
}

/// Full sweep configuration; serializable as the CLI's JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_label_mode")]
    pub label_mode: LabelMode,
    pub procedure: Procedure,
    /// Layer sizes; empty selects the dataset default (4-100-2 for SYNTH,
    /// 784-600-600-600-10 for MNIST).
    #[serde(default)]
    pub arch: Vec<usize>,
    pub sgld: SgldConfig,
    #[serde(default)]
    pub bound: BoundSettings,
    /// Prior samples for the Monte Carlo KL upper bound.
    #[serde(default = "default_n_logz")]
    pub n_logz: usize,
    /// One training chain per (temperature, seed) cell.
    pub seeds: Vec<u64>,
    /// Seed for the random-label variant.
    #[serde(default)]
    pub label_seed: u64,
    #[serde(default = "default_l_max")]
    pub l_max: f64,
    /// Extra epochs at which report rows are emitted; the final epoch is
    /// always reported.
    #[serde(default)]
    pub report_epochs: Vec<usize>,
}

fn default_label_mode() -> LabelMode {
    LabelMode::True
}

fn default_n_logz() -> usize {
    100_000
}

fn default_l_max() -> f64 {
    4.0
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be nonempty"));
        }
        let grid = match &self.procedure {
            Procedure::OneStage { tau_grid } => tau_grid,
            Procedure::TwoStage { tau2_grid, .. } => tau2_grid,
        };
        if grid.is_empty() {
            return Err(Error::config("temperature grid must be nonempty"));
        }
        if grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::config("temperatures must be finite and >= 0"));
        }
        if !(self.bound.delta > 0.0 && self.bound.delta < 1.0) {
            return Err(Error::config(format!(
                "delta must be in (0,1), got {}",
                self.bound.delta
            )));
        }
        if let Some(beta) = self.bound.beta {
            if !(beta > 0.0 && beta < self.bound.delta) {
                return Err(Error::config(format!(
                    "beta must be in (0, delta)={}, got {beta}",
                    self.bound.delta
                )));
            }
        }
        if self.n_logz == 0 {
            return Err(Error::config("n_logz must be >= 1"));
        }
        if !(self.l_max > 0.0) {
            return Err(Error::config("l_max must be > 0"));
        }
        Ok(())
    }
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub seed: u64,
    pub dataset: String,
    pub label_mode: LabelMode,
    pub procedure: String,
    pub tau1: Option<f64>,
    /// Posterior inverse temperature (the x-axis tau; one-stage runs store
    /// their single tau here).
    pub tau2: f64,
    pub gamma: Option<f64>,
    pub epoch: usize,
    pub train_err01: Option<f64>,
    pub test_err01: Option<f64>,
    pub train_xent: Option<f64>,
    pub kl_upper_raw: Option<f64>,
    pub kl_upper: Option<f64>,
    pub epsilon: Option<f64>,
    pub rhs_dp: Option<f64>,
    pub rhs_lever: Option<f64>,
    pub risk_bound_dp: Option<f64>,
    pub risk_bound_lever: Option<f64>,
    pub runtime_s: f64,
}

impl BoundReport {
    /// A failed (diverged) run keeps its identifiers but no metrics.
    pub fn is_failed(&self) -> bool {
        self.train_err01.is_none()
    }
}

/// Raw per-cell outputs before bound assembly.
#[derive(Debug, Clone)]
pub struct RawRunOutput {
    pub seed: u64,
    pub dataset: String,
    pub label_mode: LabelMode,
    pub procedure: String,
    pub tau1: Option<f64>,
    pub tau2: f64,
    pub gamma: Option<f64>,
    pub epoch: usize,
    /// Sample count of the dataset the risks were measured on.
    pub m: u64,
    pub train_err01: f64,
    pub test_err01: f64,
    pub train_xent: f64,
    /// Present for two-stage rows.
    pub kl_estimate: Option<KlEstimate>,
    pub epsilon: Option<f64>,
    pub runtime_s: f64,
}

/// Pure assembly of a report row: clamps the empirical error, evaluates the
/// Lever right side at tau2 and, when a KL estimate and privacy budget are
/// present, the DP right side, then inverts both through kl_inverse.
pub fn assemble_report(
    raw: &RawRunOutput,
    params: &BoundParams,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    if raw.m != params.m {
        return Err(Error::config(format!(
            "m mismatch: data has {}, bound params have {}",
            raw.m, params.m
        )));
    }
    let q = raw.train_err01.clamp(0.0, 1.0);
    let rhs_lever = lever_bound(raw.tau2, params.m, params.delta, settings.lever_variant)?;
    let risk_bound_lever = kl_inverse(q, rhs_lever)?;

    let (kl_upper_raw, kl_upper, rhs_dp, risk_bound_dp) = match (&raw.kl_estimate, raw.epsilon) {
        (Some(est), Some(_)) => {
            let rhs = if settings.optimize_beta {
                optimize_beta(est.kl_upper, params.m, params.delta, params.epsilon)?.1
            } else {
                dp_pacbayes_rhs(est.kl_upper, params)?
            };
            let risk_bound = kl_inverse(q, rhs)?;
            (
                Some(est.raw()),
                Some(est.kl_upper),
                Some(rhs),
                Some(risk_bound),
            )
        }
        (None, None) => (None, None, None, None),
        _ => {
            return Err(Error::config(
                "KL estimate and privacy budget must be present together".to_string(),
            ))
        }
    };

    Ok(BoundReport {
        seed: raw.seed,
        dataset: raw.dataset.clone(),
        label_mode: raw.label_mode,
        procedure: raw.procedure.clone(),
        tau1: raw.tau1,
        tau2: raw.tau2,
        gamma: raw.gamma,
        epoch: raw.epoch,
        train_err01: Some(raw.train_err01),
        test_err01: Some(raw.test_err01),
        train_xent: Some(raw.train_xent),
        kl_upper_raw,
        kl_upper,
        epsilon: raw.epsilon,
        rhs_dp,
        rhs_lever: Some(rhs_lever),
        risk_bound_dp,
        risk_bound_lever: Some(risk_bound_lever),
        runtime_s: raw.runtime_s,
    })
}

/// Placeholder row for a diverged cell; diagnostics go to the log.
#[allow(clippy::too_many_arguments)]
pub fn failed_report(
    seed: u64,
    dataset: &str,
    label_mode: LabelMode,
    procedure: &str,
    tau1: Option<f64>,
    tau2: f64,
    gamma: Option<f64>,
    epoch: usize,
    runtime_s: f64,
) -> BoundReport {
    BoundReport {
        seed,
        dataset: dataset.to_string(),
        label_mode,
        procedure: procedure.to_string(),
        tau1,
        tau2,
        gamma,
        epoch,
        train_err01: None,
        test_err01: None,
        train_xent: None,
        kl_upper_raw: None,
        kl_upper: None,
        epsilon: None,
        rhs_dp: None,
        rhs_lever: None,
        risk_bound_dp: None,
        risk_bound_lever: None,
        runtime_s,
    }
}

pub fn write_reports(path: &Path, reports: &[BoundReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for report in reports {
        writer.serialize(report)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<BoundReport>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut reports = Vec::new();
    for row in reader.deserialize() {
        reports.push(row?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn raw_fixture() -> RawRunOutput {
        RawRunOutput {
            seed: 3,
            dataset: "synth".to_string(),
            label_mode: LabelMode::True,
            procedure: "two-stage".to_string(),
            tau1: Some(1.0),
            tau2: 100.0,
            gamma: Some(2.0),
            epoch: 1000,
            m: 50,
            train_err01: 0.02,
            test_err01: 0.06,
            train_xent: 0.4,
            kl_estimate: Some(KlEstimate {
                logz_upper: 12.0,
                risk_term: 0.0,
                n_samples: 1000,
                kl_upper: 12.0,
            }),
            epsilon: Some(0.16),
            runtime_s: 1.5,
        }
    }

    #[test]
    fn assemble_two_stage_row() {
        let raw = raw_fixture();
        let params = BoundParams::with_half_delta_beta(50, 0.05, 0.16).unwrap();
        let settings = BoundSettings::default();
        let report = assemble_report(&raw, &params, &settings).unwrap();
        let expect_rhs = dp_pacbayes_rhs(12.0, &params).unwrap();
        assert_abs_diff_eq!(report.rhs_dp.unwrap(), expect_rhs, epsilon = 1e-15);
        assert_abs_diff_eq!(
            report.risk_bound_dp.unwrap(),
            kl_inverse(0.02, expect_rhs).unwrap(),
            epsilon = 1e-12
        );
        assert!(report.risk_bound_dp.unwrap() >= 0.02);
        assert!(!report.is_failed());
    }

    #[test]
    fn assemble_kl_zero_eps_zero_reduces_to_maurer_at_half_delta() {
        let mut raw = raw_fixture();
        raw.kl_estimate = Some(KlEstimate {
            logz_upper: 0.0,
            risk_term: 0.0,
            n_samples: 1,
            kl_upper: 0.0,
        });
        raw.epsilon = Some(0.0);
        let params = BoundParams::with_half_delta_beta(50, 0.05, 0.0).unwrap();
        let report = assemble_report(&raw, &params, &BoundSettings::default()).unwrap();
        let expect = (4.0 * 50f64.sqrt() / 0.05).ln() / 50.0;
        assert_abs_diff_eq!(report.rhs_dp.unwrap(), expect, epsilon = 1e-15);
        assert_abs_diff_eq!(
            report.risk_bound_dp.unwrap(),
            kl_inverse(0.02, expect).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn assemble_vacuous_rhs_gives_bound_one() {
        let mut raw = raw_fixture();
        raw.kl_estimate = Some(KlEstimate {
            logz_upper: 1e6,
            risk_term: 0.0,
            n_samples: 1,
            kl_upper: 1e6,
        });
        let params = BoundParams::with_half_delta_beta(50, 0.05, 0.16).unwrap();
        let report = assemble_report(&raw, &params, &BoundSettings::default()).unwrap();
        assert!(report.risk_bound_dp.unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn assemble_rejects_m_mismatch() {
        let raw = raw_fixture();
        let params = BoundParams::with_half_delta_beta(60, 0.05, 0.16).unwrap();
        assert!(assemble_report(&raw, &params, &BoundSettings::default()).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let raw = raw_fixture();
        let params = BoundParams::with_half_delta_beta(50, 0.05, 0.16).unwrap();
        let full = assemble_report(&raw, &params, &BoundSettings::default()).unwrap();
        let failed = failed_report(
            7,
            "synth",
            LabelMode::Random,
            "one-stage",
            None,
            10.0,
            None,
            0,
            0.1,
        );
        let mut one_stage = full.clone();
        one_stage.procedure = "one-stage".to_string();
        one_stage.tau1 = None;
        one_stage.gamma = None;
        one_stage.kl_upper_raw = None;
        one_stage.kl_upper = None;
        one_stage.epsilon = None;
        one_stage.rhs_dp = None;
        one_stage.risk_bound_dp = None;
        one_stage.train_err01 = Some(1.0 / 3.0); // exercise a non-terminating decimal

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.csv");
        let reports = vec![full, one_stage, failed];
        write_reports(&path, &reports).unwrap();
        let back = read_reports(&path).unwrap();
        assert_eq!(reports, back);
        assert!(back[2].is_failed());

        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "seed,dataset,label_mode,procedure,tau1,tau2,gamma,epoch,train_err01,test_err01,\
             train_xent,kl_upper_raw,kl_upper,epsilon,rhs_dp,rhs_lever,risk_bound_dp,\
             risk_bound_lever,runtime_s"
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig {
            dataset: DatasetSpec::Synth {
                config: SynthConfig::default(),
            },
            label_mode: LabelMode::True,
            procedure: Procedure::OneStage {
                tau_grid: vec![1.0, 10.0],
            },
            arch: vec![],
            sgld: SgldConfig {
                a0: 1e-3,
                b: 0.5,
                batch_size: 10,
                epochs: 10,
                stage_one_epochs: None,
                seed: 0,
                noise_scale: 1.0,
                window: 20,
            },
            bound: BoundSettings::default(),
            n_logz: 100,
            seeds: vec![1, 2],
            label_seed: 0,
            l_max: 4.0,
            report_epochs: vec![],
        };
        cfg.validate().unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![1];
        cfg.procedure = Procedure::OneStage { tau_grid: vec![] };
        assert!(cfg.validate().is_err());
        cfg.procedure = Procedure::OneStage {
            tau_grid: vec![1.0],
        };
        cfg.bound.delta = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Synth {
                config: SynthConfig {
                    seed: 9,
                    ..Default::default()
                },
            },
            label_mode: LabelMode::Random,
            procedure: Procedure::TwoStage {
                tau1: 1.0,
                tau2_grid: vec![10.0, 100.0],
                gamma: 2.0,
            },
            arch: vec![4, 100, 2],
            sgld: SgldConfig {
                a0: 1e-3,
                b: 0.5,
                batch_size: 10,
                epochs: 1000,
                stage_one_epochs: Some(100),
                seed: 0,
                noise_scale: 1.0,
                window: 20,
            },
            bound: BoundSettings::default(),
            n_logz: 100_000,
            seeds: vec![1, 2, 3],
            label_seed: 11,
            l_max: 4.0,
            report_epochs: vec![250, 500],
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(format!("{back:?}"), format!("{cfg:?}"));
    }
}

//! Certified generalization bounds for randomized neural-network
//! classifiers: PAC-Bayes certificates with data-independent, Gibbs and
//! differentially-private data-dependent priors, SGLD Gibbs-posterior
//! sampling, Monte Carlo KL estimation, and a deterministic experiment
//! harness producing CSV reports and SVG plots.

// Validation guards use `!(x > 0.0)` style comparisons on purpose: the
// negated form also rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod error;
pub mod math;
pub mod model;
pub mod plot;
pub mod priors;
pub mod report;
pub mod sgld;
pub mod sweep;

pub use bounds::{
    dp_pacbayes_rhs, exp_mechanism_privacy, gibbs_expected_norm_bound, gibbs_sample_privacy,
    kl_bin, kl_inverse, lever_bound, maurer_bound, max_info_approx, max_info_pure, optimize_beta,
    wasserstein_kl_penalty, BoundParams, ExponentialMechanismSpec, LeverVariant, PrivacyBudget,
    WassersteinPenaltyInput,
};
pub use data::{
    minibatch_stream, mnist_load, randomize_labels, synth_generate, Dataset, LabelMode, MnistPaths,
    Split, SynthConfig,
};
pub use error::{Error, Result};
pub use model::{
    bounded_xent, empirical_risks, error01, forward, grad_bounded_xent, psi_remap,
    BoundedXentConfig, MlpArchitecture, MlpParams,
};
pub use priors::{
    gaussian_kl, logz_upper_mc, posterior_risk_mc, prior_sample, GaussianPrior, GibbsBase,
    GibbsConfig, KlEstimate,
};
pub use report::{BoundReport, BoundSettings, DatasetSpec, ExperimentConfig, Procedure};
pub use sgld::{
    anneal_tau, one_stage_train, read_checkpoint, sgld_step, two_stage_train, AnnealSchedule,
    EnergySpec, SgldConfig, TrainRun, TwoStageRun,
};
pub use sweep::{run_one_stage_sweep, run_sweep, run_two_stage_sweep};

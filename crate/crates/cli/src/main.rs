//! Command-line front end: dataset generation, single training runs,
//! experiment sweeps, bound recomputation over existing result CSVs, plot
//! emission, and a checksum-verified MNIST fetch.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 run divergence
//! (sweeps return 4 for diverged cells only under --strict).

use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pacbound_core::bounds::{
    dp_pacbayes_rhs, kl_inverse, lever_bound, optimize_beta, BoundParams, LeverVariant,
};
use pacbound_core::data::{
    randomize_labels, synth_generate, write_dataset_csv, write_sidecar, LabelMode, MnistPaths,
    SynthConfig, SynthSidecar,
};
use pacbound_core::error::Error as CoreError;
use pacbound_core::plot::emit_plots;
use pacbound_core::report::{
    read_reports, write_reports, BoundReport, BoundSettings, DatasetSpec, ExperimentConfig,
    Procedure,
};
use pacbound_core::sgld::{write_checkpoint, SgldConfig};
use pacbound_core::sweep::{run_one_stage_cell, run_sweep, run_two_stage_cell};
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "pacbound",
    version,
    about = "Certified generalization bounds for randomized classifiers trained by SGLD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelModeArg {
    True,
    Random,
}

impl From<LabelModeArg> for LabelMode {
    fn from(v: LabelModeArg) -> Self {
        match v {
            LabelModeArg::True => LabelMode::True,
            LabelModeArg::Random => LabelMode::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LeverVariantArg {
    Conventional,
    AsDisplayed,
}

impl From<LeverVariantArg> for LeverVariant {
    fn from(v: LeverVariantArg) -> Self {
        match v {
            LeverVariantArg::Conventional => LeverVariant::Conventional,
            LeverVariantArg::AsDisplayed => LeverVariant::AsDisplayed,
        }
    }
}

/// Flags that override fields of the JSON experiment config.
#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    /// JSON experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SYNTH generator seed.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_heldout: Option<usize>,
    /// SYNTH input dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Directory holding the four MNIST IDX files (switches the dataset).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Keep only the first N examples of each MNIST split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_enum)]
    label_mode: Option<LabelModeArg>,
    #[arg(long)]
    label_seed: Option<u64>,
    /// Layer sizes, comma separated (e.g. 4,100,2).
    #[arg(long, value_delimiter = ',')]
    arch: Option<Vec<usize>>,
    /// Initial learning rate a0.
    #[arg(long)]
    a0: Option<f64>,
    /// Learning-rate decay exponent b.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Total epochs (T for one-stage, T2 for two-stage).
    #[arg(long)]
    epochs: Option<usize>,
    /// Stage-one epochs T1 (two-stage only).
    #[arg(long)]
    t1: Option<usize>,
    /// Posterior iterate window size.
    #[arg(long)]
    window: Option<usize>,
    /// Noise multiplier (1 = SGLD, 0 = plain gradient descent).
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Confidence parameter delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Max-information split beta (default delta / 2).
    #[arg(long)]
    beta: Option<f64>,
    /// Minimize the DP bound over beta instead of using delta / 2.
    #[arg(long)]
    optimize_beta: bool,
    #[arg(long, value_enum)]
    lever_variant: Option<LeverVariantArg>,
    /// Prior samples for the Monte Carlo KL bound.
    #[arg(long)]
    n_logz: Option<usize>,
    /// Sweep seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// One-stage temperature grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
    /// Stage-one temperature tau1 (two-stage).
    #[arg(long)]
    tau1: Option<f64>,
    /// Stage-two temperature grid, comma separated (two-stage).
    #[arg(long, value_delimiter = ',')]
    tau2_grid: Option<Vec<f64>>,
    /// Anchor precision gamma (two-stage).
    #[arg(long)]
    gamma: Option<f64>,
    /// Extra epochs at which report rows are emitted.
    #[arg(long, value_delimiter = ',')]
    report_epochs: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the SYNTH dataset as CSV files plus a JSON sidecar.
    SynthGen {
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        n_train: usize,
        #[arg(long, default_value_t = 100)]
        n_heldout: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        /// Replace labels with uniform random ones.
        #[arg(long)]
        random_labels: bool,
        #[arg(long, default_value_t = 0)]
        label_seed: u64,
    },
    /// Train one one-stage chain and write its report rows.
    Train {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Inverse temperature tau.
        #[arg(long, default_value_t = 100.0)]
        tau: f64,
        /// Chain seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long, short, default_value = "train.csv")]
        out: PathBuf,
        /// Write final iterate and window checkpoints here.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Train one two-stage chain (private prior + anchored posterior).
    /// tau1 and gamma come from --tau1 / --gamma (defaults 1 and 2).
    Train2 {
        #[command(flatten)]
        overrides: ConfigOverrides,
        #[arg(long, default_value_t = 100.0)]
        tau2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short, default_value = "train2.csv")]
        out: PathBuf,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Run the full sweep described by the config.
    Sweep {
        #[command(flatten)]
        overrides: ConfigOverrides,
        #[arg(long, short, default_value = "sweep.csv")]
        out: PathBuf,
        /// Fail (exit 4) if any cell diverged.
        #[arg(long)]
        strict: bool,
    },
    /// Recompute bound columns of an existing results CSV.
    Bound {
        /// Input results CSV.
        #[arg(long, short)]
        input: PathBuf,
        /// Training sample count the rows were computed on.
        #[arg(long)]
        m: u64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        optimize_beta: bool,
        #[arg(long, value_enum, default_value = "conventional")]
        lever_variant: LeverVariantArg,
        #[arg(long, short, default_value = "bounds.csv")]
        out: PathBuf,
    },
    /// Render SVG plots from a results CSV.
    Plot {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short, default_value = "plots")]
        out: PathBuf,
        /// Confidence parameter annotated on the figures.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Download the four MNIST IDX files (gzip) with checksum verification.
    MnistFetch {
        #[arg(long, short, default_value = "mnist")]
        out: PathBuf,
        /// Base URL of the MNIST mirror.
        #[arg(long, default_value = "https://ossci-datasets.s3.amazonaws.com/mnist/")]
        base_url: String,
    },
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synth {
            config: SynthConfig::default(),
        },
        label_mode: LabelMode::True,
        procedure: Procedure::OneStage {
            tau_grid: vec![1.0, 10.0, 100.0, 1000.0, 10_000.0],
        },
        arch: vec![],
        sgld: SgldConfig {
            a0: 1e-3,
            b: 0.5,
            batch_size: 10,
            epochs: 1000,
            stage_one_epochs: None,
            seed: 0,
            noise_scale: 1.0,
            window: 20,
        },
        bound: BoundSettings::default(),
        n_logz: 100_000,
        seeds: vec![1, 2, 3, 4, 5],
        label_seed: 0,
        l_max: 4.0,
        report_epochs: vec![],
    }
}

fn load_config(overrides: &ConfigOverrides) -> Result<ExperimentConfig, CoreError> {
    let mut cfg = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?
        }
        None => default_config(),
    };

    if let Some(dir) = &overrides.mnist_dir {
        let pick = |raw: &str| {
            let gz = dir.join(format!("{raw}.gz"));
            if gz.exists() {
                gz
            } else {
                dir.join(raw)
            }
        };
        cfg.dataset = DatasetSpec::Mnist {
            paths: MnistPaths {
                train_images: pick("train-images-idx3-ubyte"),
                train_labels: pick("train-labels-idx1-ubyte"),
                test_images: pick("t10k-images-idx3-ubyte"),
                test_labels: pick("t10k-labels-idx1-ubyte"),
            },
            limit: overrides.limit,
        };
    }
    if let DatasetSpec::Synth { config } = &mut cfg.dataset {
        if let Some(seed) = overrides.data_seed {
            config.seed = seed;
        }
        if let Some(n) = overrides.n_train {
            config.n_train = n;
        }
        if let Some(n) = overrides.n_heldout {
            config.n_heldout = n;
        }
        if let Some(d) = overrides.d {
            config.d = d;
        }
    } else if let DatasetSpec::Mnist { limit, .. } = &mut cfg.dataset {
        if overrides.limit.is_some() {
            *limit = overrides.limit;
        }
    }
    if let Some(mode) = overrides.label_mode {
        cfg.label_mode = mode.into();
    }
    if let Some(seed) = overrides.label_seed {
        cfg.label_seed = seed;
    }
    if let Some(arch) = &overrides.arch {
        cfg.arch = arch.clone();
    }
    if let Some(v) = overrides.a0 {
        cfg.sgld.a0 = v;
    }
    if let Some(v) = overrides.b {
        cfg.sgld.b = v;
    }
    if let Some(v) = overrides.batch_size {
        cfg.sgld.batch_size = v;
    }
    if let Some(v) = overrides.epochs {
        cfg.sgld.epochs = v;
    }
    if let Some(v) = overrides.t1 {
        cfg.sgld.stage_one_epochs = Some(v);
    }
    if let Some(v) = overrides.window {
        cfg.sgld.window = v;
    }
    if let Some(v) = overrides.noise_scale {
        cfg.sgld.noise_scale = v;
    }
    if let Some(v) = overrides.delta {
        cfg.bound.delta = v;
    }
    if let Some(v) = overrides.beta {
        cfg.bound.beta = Some(v);
    }
    if overrides.optimize_beta {
        cfg.bound.optimize_beta = true;
    }
    if let Some(v) = overrides.lever_variant {
        cfg.bound.lever_variant = v.into();
    }
    if let Some(v) = overrides.n_logz {
        cfg.n_logz = v;
    }
    if let Some(v) = &overrides.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &overrides.report_epochs {
        cfg.report_epochs = v.clone();
    }
    if let Some(grid) = &overrides.tau_grid {
        cfg.procedure = Procedure::OneStage {
            tau_grid: grid.clone(),
        };
    }
    if overrides.tau1.is_some() || overrides.tau2_grid.is_some() || overrides.gamma.is_some() {
        let (mut tau1, mut tau2_grid, mut gamma) = match &cfg.procedure {
            Procedure::TwoStage {
                tau1,
                tau2_grid,
                gamma,
            } => (*tau1, tau2_grid.clone(), *gamma),
            Procedure::OneStage { .. } => (1.0, vec![100.0], 2.0),
        };
        if let Some(v) = overrides.tau1 {
            tau1 = v;
        }
        if let Some(v) = &overrides.tau2_grid {
            tau2_grid = v.clone();
        }
        if let Some(v) = overrides.gamma {
            gamma = v;
        }
        cfg.procedure = Procedure::TwoStage {
            tau1,
            tau2_grid,
            gamma,
        };
    }
    Ok(cfg)
}

fn write_window_checkpoints(
    dir: &Path,
    final_params: &[f64],
    window: &[pacbound_core::model::MlpParams],
) -> Result<(), CoreError> {
    std::fs::create_dir_all(dir)?;
    write_checkpoint(&dir.join("final.ckpt"), final_params)?;
    for (i, params) in window.iter().enumerate() {
        write_checkpoint(&dir.join(format!("window_{i:03}.ckpt")), &params.flat)?;
    }
    Ok(())
}

fn recompute_bounds(
    rows: &mut [BoundReport],
    m: u64,
    settings: &BoundSettings,
) -> Result<(), CoreError> {
    for row in rows.iter_mut() {
        let Some(train_err) = row.train_err01 else {
            continue;
        };
        let q = train_err.clamp(0.0, 1.0);
        let rhs_lever = lever_bound(row.tau2, m, settings.delta, settings.lever_variant)?;
        row.rhs_lever = Some(rhs_lever);
        row.risk_bound_lever = Some(kl_inverse(q, rhs_lever)?);
        if let (Some(raw), Some(epsilon)) = (row.kl_upper_raw, row.epsilon) {
            let kl_upper = raw.max(0.0);
            row.kl_upper = Some(kl_upper);
            let rhs = if settings.optimize_beta {
                optimize_beta(kl_upper, m, settings.delta, epsilon)?.1
            } else {
                let params = BoundParams::new(
                    m,
                    settings.delta,
                    settings.beta.unwrap_or(settings.delta / 2.0),
                    epsilon,
                )?;
                dp_pacbayes_rhs(kl_upper, &params)?
            };
            row.rhs_dp = Some(rhs);
            row.risk_bound_dp = Some(kl_inverse(q, rhs)?);
        }
    }
    Ok(())
}

const MNIST_FILES: [(&str, &str); 4] = [
    (
        "train-images-idx3-ubyte.gz",
        "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609",
    ),
    (
        "train-labels-idx1-ubyte.gz",
        "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c",
    ),
    (
        "t10k-images-idx3-ubyte.gz",
        "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6",
    ),
    (
        "t10k-labels-idx1-ubyte.gz",
        "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6",
    ),
];

fn mnist_fetch(out: &Path, base_url: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(300))
        .build()?;
    for (name, want_sha) in MNIST_FILES {
        let target = out.join(name);
        if target.exists() {
            println!("{name}: already present, skipping");
            continue;
        }
        let url = format!("{}{}", base_url, name);
        println!("fetching {url}");
        let mut response = client.get(&url).send()?.error_for_status()?;
        let mut bytes = Vec::new();
        response.read_to_end(&mut bytes)?;
        let got_sha = hex::encode(Sha256::digest(&bytes));
        if got_sha != want_sha {
            bail!("{name}: sha256 mismatch: got {got_sha}, expected {want_sha}");
        }
        std::fs::write(&target, &bytes)?;
        println!("{name}: {} bytes, sha256 verified", bytes.len());
    }
    Ok(())
}

fn exit_code_for(err: &CoreError) -> i32 {
    match err {
        CoreError::Config(_) | CoreError::Domain(_) => 2,
        CoreError::Data(_)
        | CoreError::BadMagic { .. }
        | CoreError::Truncated(_)
        | CoreError::CountMismatch { .. }
        | CoreError::DimensionMismatch { .. }
        | CoreError::Csv(_)
        | CoreError::Json(_) => 3,
        CoreError::Divergence { .. } => 4,
        CoreError::Io(_) => 1,
    }
}

fn run(cli: Cli) -> Result<(), (i32, anyhow::Error)> {
    let core = |e: CoreError| -> (i32, anyhow::Error) { (exit_code_for(&e), e.into()) };
    match cli.command {
        Command::SynthGen {
            out,
            seed,
            n_train,
            n_heldout,
            d,
            random_labels,
            label_seed,
        } => {
            let config = SynthConfig {
                n_train,
                n_heldout,
                d,
                seed,
            };
            let (mut train, mut heldout, hyperplane) = synth_generate(&config).map_err(core)?;
            if random_labels {
                train = randomize_labels(&train, 2, label_seed).map_err(core)?;
                heldout =
                    randomize_labels(&heldout, 2, label_seed.wrapping_add(1)).map_err(core)?;
            }
            std::fs::create_dir_all(&out).map_err(|e| (1, e.into()))?;
            write_dataset_csv(&train, &out.join("train.csv")).map_err(core)?;
            write_dataset_csv(&heldout, &out.join("heldout.csv")).map_err(core)?;
            let sidecar = SynthSidecar {
                config,
                hyperplane,
                label_mode: train.label_mode,
                label_seed: random_labels.then_some(label_seed),
            };
            write_sidecar(&sidecar, &out.join("synth.json")).map_err(core)?;
            println!(
                "wrote {}/train.csv ({} rows), heldout.csv ({} rows), synth.json",
                out.display(),
                train.len(),
                heldout.len()
            );
            Ok(())
        }
        Command::Train {
            overrides,
            tau,
            seed,
            out,
            checkpoint_dir,
        } => {
            let cfg = load_config(&overrides).map_err(core)?;
            let (rows, run) = run_one_stage_cell(&cfg, tau, seed).map_err(core)?;
            write_reports(&out, &rows).map_err(core)?;
            if let Some(dir) = checkpoint_dir {
                write_window_checkpoints(&dir, &run.final_params.flat, &run.window)
                    .map_err(core)?;
            }
            for row in &rows {
                println!(
                    "epoch {:4}: train {:.4}, test {:.4}, Lever risk bound {:.4}",
                    row.epoch,
                    row.train_err01.unwrap_or(f64::NAN),
                    row.test_err01.unwrap_or(f64::NAN),
                    row.risk_bound_lever.unwrap_or(f64::NAN),
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train2 {
            overrides,
            tau2,
            seed,
            out,
            checkpoint_dir,
        } => {
            let tau1 = overrides.tau1.unwrap_or(1.0);
            let gamma = overrides.gamma.unwrap_or(2.0);
            let cfg = load_config(&overrides).map_err(core)?;
            let (rows, run) = run_two_stage_cell(&cfg, tau1, tau2, gamma, seed).map_err(core)?;
            write_reports(&out, &rows).map_err(core)?;
            if let Some(dir) = checkpoint_dir {
                write_window_checkpoints(
                    &dir,
                    &run.posterior.final_params.flat,
                    &run.posterior.window,
                )
                .map_err(core)?;
                write_checkpoint(&dir.join("prior_mean.ckpt"), &run.prior_mean.flat)
                    .map_err(core)?;
            }
            for row in &rows {
                println!(
                    "epoch {:4}: train {:.4}, test {:.4}, eps {:.4}, KL<= {:.2}, DP risk bound {:.4}",
                    row.epoch,
                    row.train_err01.unwrap_or(f64::NAN),
                    row.test_err01.unwrap_or(f64::NAN),
                    row.epsilon.unwrap_or(f64::NAN),
                    row.kl_upper.unwrap_or(f64::NAN),
                    row.risk_bound_dp.unwrap_or(f64::NAN),
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Sweep {
            overrides,
            out,
            strict,
        } => {
            let cfg = load_config(&overrides).map_err(core)?;
            let rows = run_sweep(&cfg).map_err(core)?;
            write_reports(&out, &rows).map_err(core)?;
            let failed = rows.iter().filter(|r| r.is_failed()).count();
            println!(
                "wrote {} ({} rows, {} diverged cells)",
                out.display(),
                rows.len(),
                failed
            );
            if strict && failed > 0 {
                return Err((4, anyhow::anyhow!("{failed} cells diverged (strict mode)")));
            }
            Ok(())
        }
        Command::Bound {
            input,
            m,
            delta,
            beta,
            optimize_beta,
            lever_variant,
            out,
        } => {
            let settings = BoundSettings {
                delta,
                beta,
                optimize_beta,
                lever_variant: lever_variant.into(),
            };
            if !(delta > 0.0 && delta < 1.0) {
                return Err((2, anyhow::anyhow!("delta must be in (0,1), got {delta}")));
            }
            let mut rows = read_reports(&input).map_err(core)?;
            recompute_bounds(&mut rows, m, &settings).map_err(core)?;
            write_reports(&out, &rows).map_err(core)?;
            println!(
                "recomputed bounds for {} rows into {}",
                rows.len(),
                out.display()
            );
            Ok(())
        }
        Command::Plot { input, out, delta } => {
            let rows = read_reports(&input).map_err(core)?;
            let written = emit_plots(&rows, delta, &out).map_err(core)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::MnistFetch { out, base_url } => mnist_fetch(&out, &base_url).map_err(|e| (3, e)),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err((code, err)) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(code);
    }
}

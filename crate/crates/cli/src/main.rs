//! `intact` — CLI for generating causal benchmarks, training the model,
//! evaluating treatment-effect estimates, and running sweeps.
//!
//! All failures exit nonzero with a single `error: ...` line on stderr.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use intact_vae::dataset::CausalDataset;
use intact_vae::estimate::{evaluate_model, EvalOptions, EvalReport, RunMeta};
use intact_vae::model::{IntactVae, ModelConfig};
use intact_vae::rng;
use intact_vae::selftest;
use intact_vae::semisynth::{self, Overlap};
use intact_vae::sweep::{self, SweepConfig};
use intact_vae::synth::{self, SynthSpec};
use intact_vae::train::{train, TrainConfig, TrainedModel};

#[derive(Parser)]
#[command(
    name = "intact",
    about = "Treatment-effect estimation under unobserved confounding",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Gen(GenArgs),
    /// Train a model on a dataset file and write a checkpoint and trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and emit one metrics row.
    Eval(EvalArgs),
    /// Run a many-models sweep from a config file.
    Sweep(SweepArgs),
    /// Run semi-synthetic replications over a covariate table.
    Ihdp(IhdpArgs),
    /// Run the numerical oracle suite.
    Selftest,
}

#[derive(Args)]
struct GenArgs {
    /// Generator seed (required for reproducibility).
    #[arg(long)]
    seed: u64,
    /// Causal setting: proxy_confounded, instrumental, ignorable.
    #[arg(long, default_value = "proxy_confounded")]
    setting: String,
    /// Outcome kind: linear, nonlinear_invertible.
    #[arg(long, default_value = "nonlinear_invertible")]
    outcome: String,
    /// Outcome-noise variance in [0, 1).
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Latent-noise level >= 0.
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long, default_value_t = 1500)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    covariate_dim: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV (from `gen` or in the same schema).
    #[arg(long)]
    data: PathBuf,
    /// Run seed (initialization, batching, reconstruction noise).
    #[arg(long)]
    seed: u64,
    /// Optional TOML config with [model]/[train] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    checkpoint_out: PathBuf,
    /// Per-epoch trace CSV output path.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Hidden sizes, comma separated (e.g. 16 or 64,64).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluation noise seed.
    #[arg(long)]
    seed: u64,
    /// Posterior/prior draws per unit.
    #[arg(long, default_value_t = 100)]
    mc_draws: usize,
    /// Setting label copied into the report row.
    #[arg(long, default_value = "unspecified")]
    setting: String,
    /// Outcome-kind label copied into the report row.
    #[arg(long, default_value = "unspecified")]
    outcome: String,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML config with a [sweep] section (plus [model]/[train]/[baseline]).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the file's sweep.base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the file's sweep.output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the file's sweep.parallelism.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct IhdpArgs {
    /// Covariate table; defaults to $INTACT_DATA_DIR/ihdp_covariates.csv,
    /// then ./data/ihdp_covariates.csv.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Base seed; replication r uses a stream derived from (seed, r).
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    replications: usize,
    /// First replication index.
    #[arg(long, default_value_t = 0)]
    rep_offset: usize,
    /// Fixed overlap parameter; calibrated per replication when omitted.
    #[arg(long)]
    overlap: Option<f64>,
    /// Treated-group mean-effect target when calibrating.
    #[arg(long, default_value_t = 4.0)]
    target_catt: f64,
    /// Optional TOML config with [model]/[train] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    mc_draws: usize,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ihdp(args) => cmd_ihdp(args),
        Command::Selftest => cmd_selftest(),
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<CausalDataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let ds = CausalDataset::read_csv(&mut std::io::BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))?;
    ds.validate()
        .with_context(|| format!("validating {}", path.display()))?;
    Ok(ds)
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let spec = SynthSpec {
        seed: args.seed,
        setting: config::parse_setting(&args.setting)?,
        outcome_kind: config::parse_outcome_kind(&args.outcome)?,
        alpha: args.alpha,
        beta: args.beta,
        covariate_dim: args.covariate_dim,
        n_points: args.n,
    };
    let (_, ds) = synth::generate(&spec)?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    write_atomically(&args.out, &buf)?;
    println!("wrote {} units to {}", ds.n(), args.out.display());
    Ok(())
}

fn load_model_train_configs(
    config_path: Option<&Path>,
    covariate_dim: usize,
    seed: u64,
) -> Result<(ModelConfig, TrainConfig)> {
    let file = match config_path {
        Some(p) => config::load(p)?,
        None => config::FileConfig::default(),
    };
    let mut model = ModelConfig::new(covariate_dim, 1, rng::derive_seed(seed, 101));
    model.hidden_sizes = vec![16];
    model.activation = intact_vae::nn::Activation::SmoothInvertible;
    file.model.apply(&mut model)?;
    let mut train_cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 1500,
        patience: 150,
        eval_every: 5,
        seed: rng::derive_seed(seed, 102),
        ..TrainConfig::default()
    };
    file.train.apply(&mut train_cfg);
    Ok((model, train_cfg))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let (mut model_cfg, mut train_cfg) =
        load_model_train_configs(args.config.as_deref(), ds.covariate_dim(), args.seed)?;
    if let Some(v) = args.latent_dim {
        model_cfg.latent_dim = v;
    }
    if let Some(v) = &args.hidden {
        model_cfg.hidden_sizes = v.clone();
    }
    if let Some(v) = args.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = args.max_epochs {
        train_cfg.max_epochs = v;
    }
    if let Some(v) = args.patience {
        train_cfg.patience = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }

    let model = IntactVae::new(model_cfg)?;
    let outcome = train(model, &ds, &train_cfg)?;

    let mut buf = Vec::new();
    outcome.trained.write_checkpoint(&mut buf)?;
    write_atomically(&args.checkpoint_out, &buf)?;

    if let Some(trace_path) = &args.trace_out {
        let mut t = Vec::new();
        writeln!(t, "# data = {}", args.data.display())?;
        writeln!(t, "# seed = {}", args.seed)?;
        writeln!(t, "# learning_rate = {}", train_cfg.learning_rate)?;
        writeln!(t, "# batch_size = {}", train_cfg.batch_size)?;
        writeln!(t, "# max_epochs = {}", train_cfg.max_epochs)?;
        writeln!(t, "# patience = {}", train_cfg.patience)?;
        writeln!(t, "# eval_every = {}", train_cfg.eval_every)?;
        writeln!(t, "# mc_samples = {}", train_cfg.mc_samples)?;
        writeln!(t, "epoch,train_elbo,validation_elbo")?;
        for e in &outcome.trace {
            writeln!(t, "{},{},{}", e.epoch, e.train_elbo, e.validation_elbo)?;
        }
        write_atomically(trace_path, &t)?;
    }
    println!(
        "trained to epoch {} (best validation elbo {}); checkpoint at {}",
        outcome.best_epoch,
        outcome.best_validation_elbo,
        args.checkpoint_out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let file = std::fs::File::open(&args.checkpoint)
        .with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let tm = TrainedModel::read_checkpoint(&mut std::io::BufReader::new(file))
        .with_context(|| format!("parsing {}", args.checkpoint.display()))?;
    let meta = RunMeta {
        seed: args.seed,
        setting: args.setting.clone(),
        outcome_kind: args.outcome.clone(),
        alpha: f64::NAN,
        beta: f64::NAN,
    };
    let report = evaluate_model(
        &tm,
        &ds,
        &meta,
        &EvalOptions {
            mc_draws: args.mc_draws,
            noise_seed: args.seed,
        },
    )?;
    let text = format!("{}\n{}\n", EvalReport::csv_header(), report.to_csv_row());
    match &args.out {
        Some(path) => write_atomically(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut file = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        file.sweep.base_seed = Some(seed);
    }
    let mut cfg: SweepConfig = file.to_sweep_config()?;
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    let out_path = args
        .out
        .clone()
        .or_else(|| file.sweep.output.as_ref().map(PathBuf::from))
        .context("sweep needs an output path (--out or sweep.output)")?;

    let outcome = sweep::run_sweep(&cfg)?;
    let mut rows = Vec::new();
    sweep::write_rows_csv(&mut rows, &cfg, &outcome.rows)?;
    write_atomically(&out_path, &rows)?;

    let summary_path = summary_path_for(&out_path);
    let mut summary = Vec::new();
    sweep::write_summary_csv(&mut summary, &cfg, &outcome.summary)?;
    write_atomically(&summary_path, &summary)?;

    let failed = outcome.rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "wrote {} rows to {} (summary at {}); {failed} failed",
        outcome.rows.len(),
        out_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn summary_path_for(rows_path: &Path) -> PathBuf {
    let stem = rows_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".into());
    let ext = rows_path
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    rows_path.with_file_name(format!("{stem}_summary.{ext}"))
}

fn resolve_covariates_path(flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    if let Ok(dir) = std::env::var("INTACT_DATA_DIR") {
        return Ok(Path::new(&dir).join("ihdp_covariates.csv"));
    }
    Ok(PathBuf::from("data/ihdp_covariates.csv"))
}

fn cmd_ihdp(args: IhdpArgs) -> Result<()> {
    let path = resolve_covariates_path(args.covariates.as_deref())?;
    let table = semisynth::load_covariates(&path)?;
    let overlap = match args.overlap {
        Some(v) => Overlap::Fixed(v),
        None => Overlap::CalibrateTreatedEffect(args.target_catt),
    };

    let file = match &args.config {
        Some(p) => config::load(p)?,
        None => config::FileConfig::default(),
    };
    let mut out = Vec::new();
    writeln!(out, "# covariates = {}", path.display())?;
    writeln!(out, "# seed = {}", args.seed)?;
    writeln!(out, "# replications = {}", args.replications)?;
    writeln!(out, "# rep_offset = {}", args.rep_offset)?;
    writeln!(out, "# target_catt = {}", args.target_catt)?;
    writeln!(out, "rep,{}", EvalReport::csv_header())?;

    let mut sum_pre = 0.0;
    let mut done = 0usize;
    for r in args.rep_offset..args.rep_offset + args.replications {
        let rep_seed = rng::derive_seed(args.seed, r as u64);
        let ds = semisynth::synthesize_ihdp(&table, rep_seed, overlap)?;

        // Defaults tuned for the covariate-table scale; a [model]/[train]
        // config section overrides them.
        let mut model_cfg =
            ModelConfig::new(ds.covariate_dim(), 10, rng::derive_seed(rep_seed, 101));
        model_cfg.hidden_sizes = vec![64];
        model_cfg.activation = intact_vae::nn::Activation::Relu;
        file.model.apply(&mut model_cfg)?;
        let mut train_cfg = TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 500,
            patience: 50,
            eval_every: 5,
            standardize_x: true,
            seed: rng::derive_seed(rep_seed, 102),
            ..TrainConfig::default()
        };
        file.train.apply(&mut train_cfg);

        let model = IntactVae::new(model_cfg)?;
        let outcome = train(model, &ds, &train_cfg)?;
        let meta = RunMeta {
            seed: rep_seed,
            setting: "ihdp".into(),
            outcome_kind: "response_surface".into(),
            alpha: f64::NAN,
            beta: f64::NAN,
        };
        let report = evaluate_model(
            &outcome.trained,
            &ds,
            &meta,
            &EvalOptions {
                mc_draws: args.mc_draws,
                noise_seed: rng::derive_seed(rep_seed, 103),
            },
        )?;
        sum_pre += report.eps_ate_pre;
        done += 1;
        writeln!(out, "{r},{}", report.to_csv_row())?;
    }
    write_atomically(&args.out, &out)?;
    println!(
        "ran {done} replications; mean pre-treatment ATE error {}; rows at {}",
        sum_pre / done as f64,
        args.out.display()
    );
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let results = selftest::run_selftest();
    for r in &results {
        println!(
            "{} {} - {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    if !selftest::all_passed(&results) {
        bail!(
            "{} of {} oracle checks failed",
            results.iter().filter(|r| !r.passed).count(),
            results.len()
        );
    }
    println!("all {} oracle checks passed", results.len());
    Ok(())
}

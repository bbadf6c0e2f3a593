//! The many-random-models sweep protocol.
//!
//! One sweep cell is a (setting, alpha, beta) combination; each cell runs
//! `n_models` independent generating models through the full pipeline:
//! generate, train, evaluate pre- and post-treatment metrics plus the
//! latent-recovery diagnostics, and (optionally) fit the naive regression
//! baseline on the same data. Each run writes one CSV row; a companion
//! summary table reports mean, median, standard deviation, and standard
//! error per cell and metric; reporting conventions for the spread vary,
//! so both dispersion measures are emitted.
//!
//! Runs are embarrassingly parallel. Every run derives its own seed from
//! `base_seed` and the global run index ([`rng::derive_seed`]), and within a
//! run the generator, the model init, training, evaluation noise, and the
//! baseline each get their own derived stream, so parallel and serial
//! execution produce identical rows.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::dataset::CausalDataset;
use crate::error::{Error, Result};
use crate::estimate::{
    ate_error, evaluate_model, naive_regression_baseline, sqrt_pehe, BaselineConfig, EvalOptions,
    EvalReport, RunMeta,
};
use crate::model::{IntactVae, ModelConfig};
use crate::nn::Activation;
use crate::rng;
use crate::synth::{self, CausalSetting, OutcomeKind, SynthSpec};
use crate::train::{train, TrainConfig};

/// Sweep-level configuration. Model-shape fields are templates applied to
/// every run; per-run seeds are derived internally.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_models: usize,
    pub settings: Vec<CausalSetting>,
    pub outcome_kind: OutcomeKind,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub base_seed: u64,
    /// Worker threads; 1 runs serially.
    pub parallelism: usize,
    pub n_points: usize,
    pub covariate_dim: usize,
    /// Divide each cell's outcomes by the across-models std of empirical
    /// true ATEs before any training (the cross-model normalization).
    pub normalize_ate: bool,
    pub run_baseline: bool,
    pub latent_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub balanced_prior: bool,
    pub separate_decoder_heads: bool,
    pub learn_decoder_noise: bool,
    pub fixed_noise_var: f64,
    pub noise_head_init: f64,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    /// Posterior/prior draws per unit at evaluation time.
    pub mc_draws: usize,
}

impl SweepConfig {
    /// Desk-scale defaults: 20 models per cell, the confounded setting with
    /// nonlinear outcomes at alpha = beta = 0.2, compact networks.
    pub fn desk_default(base_seed: u64) -> Self {
        Self {
            n_models: 20,
            settings: vec![CausalSetting::ProxyConfounded],
            outcome_kind: OutcomeKind::NonlinearInvertible,
            alphas: vec![0.2],
            betas: vec![0.2],
            base_seed,
            parallelism: 1,
            n_points: 1500,
            covariate_dim: 3,
            normalize_ate: false,
            run_baseline: true,
            latent_dim: 1,
            hidden_sizes: vec![16],
            activation: Activation::SmoothInvertible,
            balanced_prior: true,
            separate_decoder_heads: false,
            learn_decoder_noise: true,
            fixed_noise_var: 1.0,
            noise_head_init: -2.5,
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 100,
                max_epochs: 1500,
                patience: 150,
                eval_every: 5,
                ..TrainConfig::default()
            },
            baseline: BaselineConfig::default(),
            mc_draws: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 {
            return Err(Error::InvalidConfig("n_models must be at least 1".into()));
        }
        if self.settings.is_empty() || self.alphas.is_empty() || self.betas.is_empty() {
            return Err(Error::InvalidConfig(
                "settings, alphas, and betas must be non-empty".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(Error::InvalidConfig(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.normalize_ate && self.n_models < 2 {
            return Err(Error::InvalidConfig(
                "ATE normalization needs at least 2 models per cell".into(),
            ));
        }
        self.train.validate()?;
        Ok(())
    }

    /// Resolved key/value view, embedded in output headers.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = vec![
            ("n_models".to_string(), self.n_models.to_string()),
            (
                "settings".to_string(),
                self.settings
                    .iter()
                    .map(|s| s.name().to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            ("outcome_kind".to_string(), self.outcome_kind.name().into()),
            ("alphas".to_string(), list(&self.alphas)),
            ("betas".to_string(), list(&self.betas)),
            ("base_seed".to_string(), self.base_seed.to_string()),
            ("n_points".to_string(), self.n_points.to_string()),
            ("covariate_dim".to_string(), self.covariate_dim.to_string()),
            ("normalize_ate".to_string(), self.normalize_ate.to_string()),
            ("run_baseline".to_string(), self.run_baseline.to_string()),
            ("latent_dim".to_string(), self.latent_dim.to_string()),
            (
                "hidden_sizes".to_string(),
                self.hidden_sizes
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            ("activation".to_string(), self.activation.name().into()),
            (
                "balanced_prior".to_string(),
                self.balanced_prior.to_string(),
            ),
            (
                "separate_decoder_heads".to_string(),
                self.separate_decoder_heads.to_string(),
            ),
            (
                "learn_decoder_noise".to_string(),
                self.learn_decoder_noise.to_string(),
            ),
            (
                "fixed_noise_var".to_string(),
                self.fixed_noise_var.to_string(),
            ),
            (
                "noise_head_init".to_string(),
                self.noise_head_init.to_string(),
            ),
            ("mc_draws".to_string(), self.mc_draws.to_string()),
            (
                "learning_rate".to_string(),
                self.train.learning_rate.to_string(),
            ),
            ("batch_size".to_string(), self.train.batch_size.to_string()),
            ("max_epochs".to_string(), self.train.max_epochs.to_string()),
            ("patience".to_string(), self.train.patience.to_string()),
            ("mc_samples".to_string(), self.train.mc_samples.to_string()),
            (
                "standardize_y".to_string(),
                self.train.standardize_y.to_string(),
            ),
            (
                "standardize_x".to_string(),
                self.train.standardize_x.to_string(),
            ),
            (
                "baseline_hidden".to_string(),
                self.baseline
                    .hidden
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            (
                "baseline_learning_rate".to_string(),
                self.baseline.learning_rate.to_string(),
            ),
            (
                "baseline_max_epochs".to_string(),
                self.baseline.max_epochs.to_string(),
            ),
        ];
        out.sort();
        out
    }
}

/// One sweep row: the model's report plus baseline metrics and run status.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub run_index: usize,
    pub setting: CausalSetting,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub naive_eps_ate_pre: Option<f64>,
    pub naive_pehe_pre: Option<f64>,
    pub naive_eps_ate_post: Option<f64>,
    pub naive_pehe_post: Option<f64>,
    pub best_epoch: usize,
    pub status: String,
}

impl SweepRow {
    pub fn csv_header() -> String {
        format!(
            "run,{},naive_eps_ate_pre,naive_pehe_pre,naive_eps_ate_post,naive_pehe_post,best_epoch,status",
            EvalReport::csv_header()
        )
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let report = match &self.report {
            Some(r) => r.to_csv_row(),
            None => {
                // Keep the column count fixed for failed runs.
                let empty = EvalReport::csv_header().split(',').count() - 5;
                format!(
                    "{},{},{},{},{}{}",
                    self.seed,
                    self.setting.name(),
                    "",
                    self.alpha,
                    self.beta,
                    ",".repeat(empty)
                )
            }
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_index,
            report,
            opt(&self.naive_eps_ate_pre),
            opt(&self.naive_pehe_pre),
            opt(&self.naive_eps_ate_post),
            opt(&self.naive_pehe_post),
            self.best_epoch,
            self.status
        )
    }
}

/// Summary statistics for one metric within one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub setting: CausalSetting,
    pub alpha: f64,
    pub beta: f64,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub stderr: f64,
}

impl SummaryRow {
    pub fn csv_header() -> &'static str {
        "setting,alpha,beta,metric,count,mean,median,std,stderr"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.setting.name(),
            self.alpha,
            self.beta,
            self.metric,
            self.count,
            self.mean,
            self.median,
            self.std,
            self.stderr
        )
    }
}

/// Everything a sweep produces.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Clone)]
struct RunTask {
    run_index: usize,
    setting: CausalSetting,
    alpha: f64,
    beta: f64,
    seed: u64,
    dataset: CausalDataset,
}

fn execute_run(cfg: &SweepConfig, task: &RunTask) -> Result<SweepRow> {
    let model_cfg = ModelConfig {
        covariate_dim: cfg.covariate_dim,
        latent_dim: cfg.latent_dim,
        hidden_sizes: cfg.hidden_sizes.clone(),
        activation: cfg.activation,
        balanced_prior: cfg.balanced_prior,
        separate_decoder_heads: cfg.separate_decoder_heads,
        learn_decoder_noise: cfg.learn_decoder_noise,
        fixed_noise_var: cfg.fixed_noise_var,
        noise_head_init: cfg.noise_head_init,
        seed: rng::derive_seed(task.seed, 101),
    };
    let model = IntactVae::new(model_cfg)?;
    let train_cfg = TrainConfig {
        seed: rng::derive_seed(task.seed, 102),
        ..cfg.train.clone()
    };
    let outcome = train(model, &task.dataset, &train_cfg)?;

    let meta = RunMeta {
        seed: task.seed,
        setting: task.setting.name().into(),
        outcome_kind: cfg.outcome_kind.name().into(),
        alpha: task.alpha,
        beta: task.beta,
    };
    let opts = EvalOptions {
        mc_draws: cfg.mc_draws,
        noise_seed: rng::derive_seed(task.seed, 103),
    };
    let report = evaluate_model(&outcome.trained, &task.dataset, &meta, &opts)?;

    let mut row = SweepRow {
        run_index: task.run_index,
        setting: task.setting,
        alpha: task.alpha,
        beta: task.beta,
        seed: task.seed,
        report: Some(report),
        naive_eps_ate_pre: None,
        naive_pehe_pre: None,
        naive_eps_ate_post: None,
        naive_pehe_post: None,
        best_epoch: outcome.best_epoch,
        status: "ok".into(),
    };

    if cfg.run_baseline {
        let baseline_cfg = BaselineConfig {
            seed: rng::derive_seed(task.seed, 104),
            ..cfg.baseline.clone()
        };
        let pred = naive_regression_baseline(&task.dataset, &baseline_cfg)?;
        let restrict = |indices: Vec<usize>| {
            let set: std::collections::HashSet<usize> = indices.iter().copied().collect();
            let mut y0 = Vec::new();
            let mut y1 = Vec::new();
            let mut idx = Vec::new();
            for (k, &i) in pred.indices.iter().enumerate() {
                if set.contains(&i) {
                    idx.push(i);
                    y0.push(pred.y0[k]);
                    y1.push(pred.y1[k]);
                }
            }
            crate::estimate::PotentialPredictions {
                indices: idx,
                y0,
                y1,
            }
        };
        let pre = restrict(task.dataset.indices(crate::dataset::Split::Test));
        let post = restrict(task.dataset.train_validation_indices());
        row.naive_eps_ate_pre = Some(ate_error(&pre, &task.dataset)?);
        row.naive_pehe_pre = Some(sqrt_pehe(&pre, &task.dataset)?);
        row.naive_eps_ate_post = Some(ate_error(&post, &task.dataset)?);
        row.naive_pehe_post = Some(sqrt_pehe(&post, &task.dataset)?);
    }
    Ok(row)
}

/// Runs the sweep. Individual run failures are recorded as failed rows and
/// the sweep continues; configuration and generation errors abort.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;

    // Build every run's dataset up front (generation is cheap relative to
    // training); this is also where the per-cell ATE normalization needs
    // the whole cell at once.
    let mut tasks: Vec<RunTask> = Vec::new();
    let mut run_index = 0usize;
    for &setting in &cfg.settings {
        for &alpha in &cfg.alphas {
            for &beta in &cfg.betas {
                let mut cell: Vec<RunTask> = Vec::with_capacity(cfg.n_models);
                for _ in 0..cfg.n_models {
                    let seed = rng::derive_seed(cfg.base_seed, run_index as u64);
                    let spec = SynthSpec {
                        seed,
                        setting,
                        outcome_kind: cfg.outcome_kind,
                        alpha,
                        beta,
                        covariate_dim: cfg.covariate_dim,
                        n_points: cfg.n_points,
                    };
                    let (_, dataset) = synth::generate(&spec)?;
                    cell.push(RunTask {
                        run_index,
                        setting,
                        alpha,
                        beta,
                        seed,
                        dataset,
                    });
                    run_index += 1;
                }
                if cfg.normalize_ate {
                    let mut datasets: Vec<CausalDataset> =
                        cell.iter().map(|t| t.dataset.clone()).collect();
                    synth::normalize_ate_across_models(&mut datasets)?;
                    for (t, d) in cell.iter_mut().zip(datasets) {
                        t.dataset = d;
                    }
                }
                tasks.extend(cell);
            }
        }
    }

    let n_tasks = tasks.len();
    let results: Vec<Option<SweepRow>> = if cfg.parallelism <= 1 {
        tasks
            .iter()
            .map(|t| Some(run_or_failed_row(cfg, t)))
            .collect()
    } else {
        let slots: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; n_tasks]);
        let next: AtomicUsize = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..cfg.parallelism.min(n_tasks) {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= n_tasks {
                        break;
                    }
                    let row = run_or_failed_row(cfg, &tasks[k]);
                    slots.lock().expect("sweep worker poisoned")[k] = Some(row);
                });
            }
        });
        slots.into_inner().expect("sweep worker poisoned")
    };

    let rows: Vec<SweepRow> = results
        .into_iter()
        .map(|r| r.expect("every sweep slot filled"))
        .collect();
    let summary = summarize(&rows);
    Ok(SweepOutcome { rows, summary })
}

fn run_or_failed_row(cfg: &SweepConfig, task: &RunTask) -> SweepRow {
    execute_run(cfg, task).unwrap_or_else(|e| SweepRow {
        run_index: task.run_index,
        setting: task.setting,
        alpha: task.alpha,
        beta: task.beta,
        seed: task.seed,
        report: None,
        naive_eps_ate_pre: None,
        naive_pehe_pre: None,
        naive_eps_ate_post: None,
        naive_pehe_post: None,
        best_epoch: 0,
        status: format!("failed: {}", e.to_string().replace([',', '\n'], ";")),
    })
}

fn percentile_median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut cells: Vec<(CausalSetting, f64, f64)> = Vec::new();
    for row in rows {
        let key = (row.setting, row.alpha, row.beta);
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    let metrics: [(&str, fn(&SweepRow) -> Option<f64>); 8] = [
        ("eps_ate_pre", |r| r.report.as_ref().map(|p| p.eps_ate_pre)),
        ("eps_ate_post", |r| {
            r.report.as_ref().map(|p| p.eps_ate_post)
        }),
        ("pehe_pre", |r| r.report.as_ref().map(|p| p.pehe_pre)),
        ("pehe_post", |r| r.report.as_ref().map(|p| p.pehe_post)),
        ("naive_eps_ate_pre", |r| r.naive_eps_ate_pre),
        ("naive_pehe_pre", |r| r.naive_pehe_pre),
        ("naive_eps_ate_post", |r| r.naive_eps_ate_post),
        ("naive_pehe_post", |r| r.naive_pehe_post),
    ];
    let mut out = Vec::new();
    for (setting, alpha, beta) in cells {
        for (name, extract) in &metrics {
            let mut values: Vec<f64> = rows
                .iter()
                .filter(|r| r.setting == setting && r.alpha == alpha && r.beta == beta)
                .filter_map(extract)
                .collect();
            if values.is_empty() {
                continue;
            }
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            out.push(SummaryRow {
                setting,
                alpha,
                beta,
                metric: name.to_string(),
                count: values.len(),
                mean,
                median: percentile_median(&values),
                std: var.sqrt(),
                stderr: (var / n).sqrt(),
            });
        }
    }
    out
}

/// Writes the per-run rows CSV, preceded by `# key = value` lines of the
/// resolved configuration.
pub fn write_rows_csv<W: std::io::Write>(
    w: &mut W,
    cfg: &SweepConfig,
    rows: &[SweepRow],
) -> Result<()> {
    for (k, v) in cfg.resolved() {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "{}", SweepRow::csv_header())?;
    for row in rows {
        writeln!(w, "{}", row.to_csv_row())?;
    }
    Ok(())
}

/// Writes the summary CSV with the same configuration header.
pub fn write_summary_csv<W: std::io::Write>(
    w: &mut W,
    cfg: &SweepConfig,
    summary: &[SummaryRow],
) -> Result<()> {
    for (k, v) in cfg.resolved() {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "{}", SummaryRow::csv_header())?;
    for row in summary {
        writeln!(w, "{}", row.to_csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> SweepConfig {
        let mut cfg = SweepConfig::desk_default(seed);
        cfg.n_models = 2;
        cfg.n_points = 150;
        cfg.hidden_sizes = vec![8];
        cfg.train.max_epochs = 10;
        cfg.train.batch_size = 25;
        cfg.baseline.hidden = vec![8];
        cfg.baseline.max_epochs = 10;
        cfg.mc_draws = 10;
        cfg
    }

    #[test]
    fn sweep_produces_one_row_per_run() {
        let mut cfg = tiny_config(5);
        cfg.settings = vec![
            CausalSetting::ProxyConfounded,
            CausalSetting::Instrumental,
            CausalSetting::Ignorable,
        ];
        let out = run_sweep(&cfg).unwrap();
        assert_eq!(out.rows.len(), 3 * cfg.n_models);
        assert!(out.rows.iter().all(|r| r.status == "ok"));
        assert!(!out.summary.is_empty());
    }

    #[test]
    fn sweep_rows_are_deterministic() {
        let cfg = tiny_config(7);
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        let fmt = |rows: &[SweepRow]| {
            rows.iter()
                .map(|r| r.to_csv_row())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(fmt(&a.rows), fmt(&b.rows));
    }

    #[test]
    fn parallel_and_serial_sweeps_agree() {
        let mut cfg = tiny_config(9);
        cfg.n_models = 4;
        let serial = run_sweep(&cfg).unwrap();
        cfg.parallelism = 4;
        let parallel = run_sweep(&cfg).unwrap();
        let fmt = |rows: &[SweepRow]| {
            rows.iter()
                .map(|r| r.to_csv_row())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(fmt(&serial.rows), fmt(&parallel.rows));
    }

    #[test]
    fn csv_outputs_embed_the_resolved_config() {
        let cfg = tiny_config(11);
        let out = run_sweep(&cfg).unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &cfg, &out.rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# "));
        assert!(text.contains("# base_seed = 11"));
        assert!(text.contains(&SweepRow::csv_header()));
        let mut buf2 = Vec::new();
        write_summary_csv(&mut buf2, &cfg, &out.summary).unwrap();
        assert!(String::from_utf8(buf2).unwrap().contains("median"));
    }

    #[test]
    fn summary_emits_std_and_stderr() {
        let cfg = tiny_config(13);
        let out = run_sweep(&cfg).unwrap();
        let pehe = out.summary.iter().find(|s| s.metric == "pehe_pre").unwrap();
        assert_eq!(pehe.count, 2);
        assert!(pehe.stderr <= pehe.std + 1e-15);
        assert!((pehe.stderr - pehe.std / (2f64).sqrt()).abs() < 1e-12);
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vflkit::assessment::{
    build_perturbation_matrix, dominating_rates, majority_fractions, participants_sweep,
    partition_ratio_sweep, random_unit_sphere, reconstruct_and_rate, reward_shares,
    singular_spectrum, success_rate, ExperimentReport, SweepConfig,
};
use vflkit::config::{CorpusSpec, RunConfig, SEED_ENV};
use vflkit::data::{partition_vertical, PartitionSpec};
use vflkit::fuzz::{Fuzzer, SaliencyCalibration};
use vflkit::protocol::{evaluate, SystemCheckpoint, VFLSystem, ADVERSARY};
use vflkit::synthesis::{default_bound, write_candidates, Mode, Strategy};
use vflkit::variance::{
    heterolr_variance, splitnn_unit_variance, variance_monte_carlo, ScalarMixture,
};
use vflkit::{Error, Matrix};

/// Salts separating the sampled A-inputs from the tiny dataset S.
const SAMPLE_SALT: u64 = 0x5a;
const TINY_SALT: u64 = 0x5b;

#[derive(Parser)]
#[command(
    name = "vflkit",
    version,
    about = "Adversarial dominating input assessment for vertical federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides VFLKIT_SEED and the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the configured value (1).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CheckpointArg {
    /// Trained system to load; defaults to checkpoint.json in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a system and write its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Dominating rates of unperturbed inputs and reward shares.
    Dominance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
    },
    /// Gradient-based ADI synthesis over sampled inputs of A.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        mutation: Option<MutationArg>,
    },
    /// Greybox fuzzing campaign.
    Fuzz {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Wallclock budget in minutes.
        #[arg(long)]
        budget_mins: Option<f64>,
    },
    /// Analytic against Monte-Carlo output variance for configured mixtures.
    Variance {
        #[command(flatten)]
        common: Common,
    },
    /// Singular spectrum of the perturbation matrix and low-rank reconstruction.
    Svd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
    },
    /// Retrain and assess across partitions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "ratio")]
        kind: SweepKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Whitebox,
    Blackbox,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    Random,
    Bounded,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Ratio,
    Participants,
}

/// A failure with its exit code: 1 configuration, 2 data, 3 runtime.
enum Failure {
    Config(String),
    Data(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Run(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Data(m) | Self::Run(m) => m,
        }
    }

    /// Classifies errors raised while reading inputs.
    fn reading(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Partition(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Self::Config(e.to_string()),
            Error::Data { .. } => Self::Data(e.to_string()),
            _ => Self::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Run(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train { common } => cmd_train(&load_config(&common)?),
        Command::Dominance { common, ckpt } => cmd_dominance(&load_config(&common)?, &ckpt),
        Command::Synthesize {
            common,
            ckpt,
            mode,
            mutation,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = mode {
                cfg.synthesis.mode = match m {
                    ModeArg::Whitebox => Mode::Whitebox,
                    ModeArg::Blackbox => Mode::Blackbox,
                };
            }
            if let Some(m) = mutation {
                cfg.synthesis.strategy = match m {
                    MutationArg::Random => Strategy::Random,
                    MutationArg::Bounded => Strategy::Bounded,
                };
            }
            cmd_synthesize(&cfg, &ckpt)
        }
        Command::Fuzz {
            common,
            ckpt,
            budget_mins,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = budget_mins {
                if !(m.is_finite() && m > 0.0) {
                    return Err(Failure::Config(
                        "budget must be a positive number of minutes".into(),
                    ));
                }
                cfg.fuzz.budget_secs = Some(m * 60.0);
            }
            cmd_fuzz(&cfg, &ckpt)
        }
        Command::Variance { common } => cmd_variance(&load_config(&common)?),
        Command::Svd { common, ckpt } => cmd_svd(&load_config(&common)?, &ckpt),
        Command::Sweep { common, kind } => cmd_sweep(&load_config(&common)?, kind),
    }
}

/// Reads the config and applies overrides: seed from the flag, then the
/// environment, then the file.
fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config).map_err(Failure::reading)?;
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| {
            Failure::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
        })?),
        Err(_) => None,
    };
    let seed = common.seed.or(env_seed).unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(Failure::Config("workers must be at least 1".into()));
        }
        cfg.workers = w;
    }
    cfg.fuzz.workers = cfg.workers;
    if let Some(o) = &common.output {
        cfg.output_dir = o.clone();
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg)
}

/// A trained system with the test data split along its partition.
struct Loaded {
    system: VFLSystem,
    train_views: Vec<Matrix>,
    test_views: Vec<Matrix>,
}

impl Loaded {
    fn benign_test(&self) -> Vec<&Matrix> {
        self.test_views[1..].iter().collect()
    }

    fn test_refs(&self) -> Vec<&Matrix> {
        self.test_views.iter().collect()
    }
}

fn load_system(cfg: &RunConfig, ckpt: &CheckpointArg) -> CliResult<Loaded> {
    let path = ckpt
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.checkpoint_path());
    let checkpoint = SystemCheckpoint::load(&path)
        .map_err(|e| Failure::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let system = checkpoint
        .to_system()
        .map_err(|e| Failure::Data(format!("invalid checkpoint {}: {e}", path.display())))?;
    let data = cfg.prepare_data().map_err(Failure::reading)?;
    let spec = PartitionSpec::new(checkpoint.partition.clone(), data.train.dim())
        .map_err(|e| Failure::Data(format!("checkpoint does not fit the dataset: {e}")))?;
    let train_views = partition_vertical(&data.train.features, &spec)?;
    let test_views = partition_vertical(&data.test.features, &spec)?;
    Ok(Loaded {
        system,
        train_views,
        test_views,
    })
}

fn sample_indices(seed: u64, salt: u64, n: usize, k: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec()
}

fn summary(metric: &str, value: impl std::fmt::Display) {
    println!("{metric} = {value}");
}

fn write_report(cfg: &RunConfig, report: &ExperimentReport) -> CliResult<()> {
    let (json, _) = report.write(&cfg.output_dir)?;
    eprintln!("report written to {}", json.display());
    Ok(())
}

fn threshold_label(t: f64) -> String {
    format!("{}", (t * 100.0).round())
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let started = Instant::now();
    let data = cfg.prepare_data().map_err(Failure::reading)?;
    let train_cfg = cfg.train_config();
    train_cfg
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let outcome = cfg.model.train(&data.train, &data.spec, &train_cfg)?;
    let test_views = partition_vertical(&data.test.features, &data.spec)?;
    let metrics = evaluate(&outcome.system, &test_views, &data.test.labels)?;
    SystemCheckpoint::from_system(&outcome.system).save(&cfg.checkpoint_path())?;
    let last = outcome.loss_history.last().copied().unwrap_or(0.0);
    let (columns, row) = match metrics.auc_roc {
        Some(auc) => (
            vec!["accuracy", "final_loss", "auc_roc"],
            vec![metrics.accuracy, last, auc],
        ),
        None => (vec!["accuracy", "final_loss"], vec![metrics.accuracy, last]),
    };
    let mut report = ExperimentReport::new("train", cfg, cfg.seed, &columns)?;
    report.push_row("test", row)?;
    report.finish(started.elapsed().as_secs_f64());
    write_report(cfg, &report)?;
    summary("accuracy", metrics.accuracy);
    Ok(())
}

fn cmd_dominance(cfg: &RunConfig, ckpt: &CheckpointArg) -> CliResult<()> {
    let started = Instant::now();
    let l = load_system(cfg, ckpt)?;
    let th = &cfg.assessment.thresholds;
    let rates_a = dominating_rates(&l.system, ADVERSARY, &l.test_refs(), th, cfg.workers)?;
    let mut columns: Vec<String> = th
        .iter()
        .map(|t| format!("dominating_{}", threshold_label(*t)))
        .collect();
    columns.push("reward_share_a".into());
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut report = ExperimentReport::new("dominance", cfg, cfg.seed, &cols)?;
    let n = l.test_views[0].rows();
    let idx = sample_indices(cfg.seed, SAMPLE_SALT, n, cfg.assessment.sample);
    let sampled: Vec<Matrix> = l.test_views.iter().map(|v| v.select_rows(&idx)).collect();
    let shares = reward_shares(&l.system, &sampled.iter().collect::<Vec<_>>())?;
    let mut row = rates_a.clone();
    row.push(shares.shares[ADVERSARY]);
    report.push_row("participant_0", row)?;
    for p in 1..l.system.participant_count() {
        let mut row = dominating_rates(&l.system, p, &l.test_refs(), th, cfg.workers)?;
        row.push(shares.shares[p]);
        report.push_row(format!("participant_{p}"), row)?;
    }
    report.finish(started.elapsed().as_secs_f64());
    write_report(cfg, &report)?;
    summary(
        &format!("dominating_rate@{}", threshold_label(th[0])),
        rates_a[0],
    );
    Ok(())
}

fn cmd_synthesize(cfg: &RunConfig, ckpt: &CheckpointArg) -> CliResult<()> {
    let started = Instant::now();
    let l = load_system(cfg, ckpt)?;
    let mut syn = cfg.synthesis.clone();
    if syn.strategy == Strategy::Bounded && syn.bound.is_none() {
        syn.bound = Some(default_bound(
            &l.train_views[ADVERSARY],
            cfg.assessment.bound_multiplier,
        )?);
    }
    syn.validate(l.train_views[ADVERSARY].cols())
        .map_err(|e| Failure::Config(e.to_string()))?;
    let n = l.test_views[0].rows();
    let sample = l.test_views[ADVERSARY].select_rows(&sample_indices(
        cfg.seed,
        SAMPLE_SALT,
        n,
        cfg.assessment.sample,
    ));
    let s_idx = sample_indices(cfg.seed, TINY_SALT, n, cfg.assessment.tiny);
    let s: Vec<Matrix> = l.test_views[1..]
        .iter()
        .map(|v| v.select_rows(&s_idx))
        .collect();
    let cache = l.system.benign_cache(ADVERSARY, &l.benign_test())?;
    let th = &cfg.assessment.thresholds;
    let result = success_rate(
        &l.system,
        &sample,
        &s.iter().collect::<Vec<_>>(),
        &cache,
        &syn,
        th,
        cfg.workers,
    )?;
    write_candidates(&cfg.output_dir.join("candidates.jsonl"), &result.candidates)?;
    let mut report = ExperimentReport::new(
        "synthesize",
        cfg,
        cfg.seed,
        &["threshold", "success_rate", "mean_rounds"],
    )?;
    for (t, r) in &result.rates {
        report.push_row(threshold_label(*t), vec![*t, *r, result.mean_rounds()])?;
    }
    report.finish(started.elapsed().as_secs_f64());
    write_report(cfg, &report)?;
    summary(
        &format!("success_rate@{}", threshold_label(result.rates[0].0)),
        result.rates[0].1,
    );
    Ok(())
}

fn read_corpus(path: &Path, dim: usize) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if rows.is_empty()
        || rows
            .iter()
            .any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Failure::Data(format!(
            "{}: corpus must be a nonempty array of finite {dim}-vectors",
            path.display()
        )));
    }
    Ok(rows)
}

fn cmd_fuzz(cfg: &RunConfig, ckpt: &CheckpointArg) -> CliResult<()> {
    let l = load_system(cfg, ckpt)?;
    let n = l.test_views[0].rows();
    let corpus = match cfg.corpus_spec()? {
        CorpusSpec::Sample(k) => {
            let idx = sample_indices(cfg.seed, SAMPLE_SALT, n, k);
            idx.iter()
                .map(|&i| l.test_views[ADVERSARY].row(i).to_vec())
                .collect()
        }
        CorpusSpec::File(p) => read_corpus(&p, l.test_views[ADVERSARY].cols())?,
    };
    let s_idx = sample_indices(cfg.seed, TINY_SALT, n, cfg.assessment.tiny);
    let s: Vec<Matrix> = l.test_views[1..]
        .iter()
        .map(|v| v.select_rows(&s_idx))
        .collect();
    let cache = l.system.benign_cache(ADVERSARY, &l.benign_test())?;
    let calib = SaliencyCalibration::fit(&l.system, &l.train_views.iter().collect::<Vec<_>>())?;
    let bound = default_bound(&l.train_views[ADVERSARY], cfg.assessment.bound_multiplier)?;
    let fuzzer = Fuzzer::new(
        &l.system,
        &s.iter().collect::<Vec<_>>(),
        &cache,
        calib,
        bound,
        cfg.fuzz.clone(),
    )?;
    let result = fuzzer.run(&corpus)?;
    write_candidates(&cfg.output_dir.join("adis.jsonl"), &result.adis)?;
    result.write_log(&cfg.output_dir.join("campaign-log.jsonl"))?;
    let mut report = ExperimentReport::new(
        "fuzz",
        cfg,
        cfg.seed,
        &["threshold", "adis", "iterations", "mutations"],
    )?;
    for &(t, c) in &result.counts {
        report.push_row(
            threshold_label(t),
            vec![
                t,
                c as f64,
                result.iterations as f64,
                result.mutations as f64,
            ],
        )?;
    }
    report.finish(result.elapsed_secs);
    write_report(cfg, &report)?;
    if result.budget_exhausted {
        eprintln!(
            "budget exhausted after {} iterations; partial results written",
            result.iterations
        );
    }
    let t = cfg.fuzz.report_threshold();
    summary(&format!("adis@{}", threshold_label(t)), result.count_at(t));
    Ok(())
}

fn cmd_variance(cfg: &RunConfig) -> CliResult<()> {
    let started = Instant::now();
    let v = &cfg.variance;
    let columns = ["heterolr", "heterolr_mc", "splitnn", "splitnn_mc"];
    let mut report = ExperimentReport::new("variance", cfg, cfg.seed, &columns)?;
    let mut worst: f64 = 0.0;
    for (i, m) in v.mixtures.iter().enumerate() {
        let sm = ScalarMixture::new(m.weights.clone(), m.means.clone(), m.stds.clone())
            .map_err(|e| Failure::Config(format!("mixture {i}: {e}")))?;
        let hetero = heterolr_variance(&sm).value;
        let hetero_mc =
            variance_monte_carlo(|s| 1.0 / (1.0 + (-s).exp()), &sm, v.samples, cfg.seed)?;
        let split = splitnn_unit_variance(&sm, v.splitnn_mode).value;
        let split_mc = variance_monte_carlo(|s| s.max(0.0), &sm, v.samples, cfg.seed)?;
        worst = worst
            .max((hetero - hetero_mc).abs())
            .max((split - split_mc).abs());
        report.push_row(
            format!("mixture_{i}"),
            vec![hetero, hetero_mc, split, split_mc],
        )?;
    }
    report.finish(started.elapsed().as_secs_f64());
    write_report(cfg, &report)?;
    summary("max_abs_gap", worst);
    Ok(())
}

fn cmd_svd(cfg: &RunConfig, ckpt: &CheckpointArg) -> CliResult<()> {
    let started = Instant::now();
    let l = load_system(cfg, ckpt)?;
    let sc = &cfg.svd;
    let n = l.test_views[0].rows();
    if sc.h > n {
        return Err(Failure::Config(format!(
            "svd h = {} exceeds the {n} test rows",
            sc.h
        )));
    }
    let cache = l.system.benign_cache(ADVERSARY, &l.benign_test())?;
    let threshold = cfg.assessment.thresholds[0];
    let index = match sc.input_index {
        Some(i) if i < n => i,
        Some(i) => return Err(Failure::Config(format!("svd input index {i} out of range"))),
        None => {
            let fr = majority_fractions(&l.system, ADVERSARY, &l.test_refs(), cfg.workers)?;
            fr.iter()
                .position(|f| *f < threshold)
                .ok_or_else(|| Failure::Run("every test input of A already dominates".into()))?
        }
    };
    let x = l.test_views[ADVERSARY].row(index);
    let (target, _) = vflkit::assessment::majority_label(&l.system, &cache, x)?;
    let h_idx = sample_indices(cfg.seed, TINY_SALT, n, sc.h);
    let rows: Vec<Matrix> = l.test_views[1..]
        .iter()
        .map(|v| v.select_rows(&h_idx))
        .collect();
    let pm = build_perturbation_matrix(
        &l.system,
        &rows.iter().collect::<Vec<_>>(),
        x,
        target,
        &cache,
        &cfg.synthesis,
        cfg.workers,
    )?;
    let spectrum = singular_spectrum(&pm.columns);
    let random = singular_spectrum(&random_unit_sphere(
        pm.columns.rows(),
        pm.columns.cols(),
        cfg.seed,
    ));
    let mut report = ExperimentReport::new("svd", cfg, cfg.seed, &["value"])?;
    // σ₁₀/σ₁, or the last singular value when fewer than ten exist.
    let k = spectrum.len().min(10);
    let ratio = |s: &[f64]| if s[0] > 0.0 { s[k - 1] / s[0] } else { 0.0 };
    report.push_row(format!("sigma{k}_over_sigma1"), vec![ratio(&spectrum)])?;
    report.push_row(format!("random_sigma{k}_over_sigma1"), vec![ratio(&random)])?;
    report.push_row("dropped_columns", vec![pm.dropped.len() as f64])?;
    let mut last = f64::NAN;
    for &k in &sc.ranks {
        last = reconstruct_and_rate(&pm, k, &l.system, &cache)
            .map_err(|e| Failure::Config(e.to_string()))?;
        report.push_row(format!("rate_k{k}"), vec![last])?;
    }
    let mut w = csv::Writer::from_path(cfg.output_dir.join("spectrum.csv"))
        .map_err(|e| Failure::Run(e.to_string()))?;
    w.write_record(["index", "perturbation", "random"])
        .map_err(|e| Failure::Run(e.to_string()))?;
    for (i, (s, r)) in spectrum.iter().zip(&random).enumerate() {
        w.write_record([i.to_string(), s.to_string(), r.to_string()])
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    w.flush()?;
    report.finish(started.elapsed().as_secs_f64());
    write_report(cfg, &report)?;
    summary(
        &format!("rate_k{}", sc.ranks.last().copied().unwrap_or(0)),
        last,
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, kind: SweepKind) -> CliResult<()> {
    let data = cfg.prepare_data().map_err(Failure::reading)?;
    let sweep = SweepConfig {
        model: cfg.model.clone(),
        train: cfg.train_config(),
        synthesis: cfg.synthesis.clone(),
        sample: cfg.assessment.sample,
        tiny: cfg.assessment.tiny,
        threshold: cfg.assessment.thresholds[0],
        bound_multiplier: cfg.assessment.bound_multiplier,
        fuzz: cfg.sweep.fuzz.then(|| cfg.fuzz.clone()),
        fuzz_corpus: cfg.sweep.fuzz_corpus,
        workers: cfg.workers,
        seed: cfg.seed,
    };
    let (report, metric) = match kind {
        SweepKind::Ratio => (
            partition_ratio_sweep(&data.train, &data.test, &cfg.sweep.ratios, &sweep)?,
            "dominating_a",
        ),
        SweepKind::Participants => (
            participants_sweep(&data.train, &data.test, &cfg.sweep.counts, &sweep)?,
            "random_success",
        ),
    };
    write_report(cfg, &report)?;
    let values = report.column(metric).unwrap_or_default();
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    summary(metric, shown.join(","));
    Ok(())
}

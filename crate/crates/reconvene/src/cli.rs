//! Command-line pipeline orchestration.
//!
//! Exit codes: 0 success, 1 invalid flags, 2 i/o failure, 3 validation
//! failure. Human output goes to stdout, diagnostics to stderr. The
//! RECONVENE_THREADS variable is honored as a cap; all current kernels are
//! single-threaded, so any value behaves like 1.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use reconvene_core::graph::ModelGraph;
use reconvene_core::policy::{plan_for_policy, Policy, RandomMode};
use reconvene_core::prune::magnitude_prune;
use reconvene_core::rectify::{apply_plan, RectifyOptions};
use reconvene_core::sensitivity::{build_plan_with, PrunePlan, SensitivityOptions};
use reconvene_core::train::{evaluate, train, Dataset, Split, TrainConfig};
use reconvene_core::CoreError;

use crate::format::{self, FormatError};
use crate::presets;
use crate::profile::{compare, profile, profile_static, ComparisonReport, ProfileReport};
use crate::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "reconvene", version, about = "Pruning-at-initialization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unstructured prune, plan, rectify, and report on a model file
    Prune(PruneArgs),
    /// Measure static metrics and forward latency of a model
    Profile(ProfileArgs),
    /// Train a model on a dataset file
    Train(TrainArgs),
    /// Run every policy across a sparsity sweep and emit one table
    Compare(CompareArgs),
    /// Generate a seeded model from a named shape preset
    Genmodel(GenmodelArgs),
    /// Generate a seeded synthetic classification dataset
    Gendata(GendataArgs),
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Pruning degree p in [0, 1]
    #[arg(long)]
    sparsity: f64,
    #[arg(long, default_value = "reconvene")]
    policy: Policy,
    #[arg(long, default_value = "matched_count")]
    random_mode: RandomMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comparison report path [default: <out>.report.json]
    #[arg(long)]
    report: Option<PathBuf>,
    /// Prune plan path [default: <out>.plan.json]
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Skip reinitialization (structural transform only)
    #[arg(long)]
    no_reinit: bool,
    /// Leave linear layers out of the global sparsity average
    #[arg(long)]
    exclude_linear: bool,
    /// Timed forward passes per model; 0 skips latency entirely
    #[arg(long, default_value_t = 0)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training split dataset file
    #[arg(long)]
    data: PathBuf,
    /// Test split dataset file
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Comma-separated epochs for learning-rate drops, e.g. 80,120
    #[arg(long, default_value = "")]
    milestones: String,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trained (final-epoch) model output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Best-test-accuracy checkpoint output
    #[arg(long)]
    best: Option<PathBuf>,
    /// Per-epoch history as JSON lines
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated sparsity sweep, e.g. 0.5,0.8,0.9,0.95,0.97,0.98
    #[arg(long, default_value = "0.5,0.8,0.9,0.95,0.97,0.98")]
    sparsity: String,
    /// Comma-separated policy subset [default: all five]
    #[arg(long, default_value = "reconvene,upai,spai_all,inverted,random")]
    policies: String,
    #[arg(long, default_value = "matched_count")]
    random_mode: RandomMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    /// Timed forward passes per model; 0 keeps the table static-only
    #[arg(long, default_value_t = 0)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Train each variant on this dataset and report accuracy
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    train_batch: usize,
}

#[derive(Args)]
struct GenmodelArgs {
    /// One of: vgg16-cifar, vgg11-cifar, resnet20-shape-sequentialized, toy4
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GendataArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Input shape as c,h,w
    #[arg(long, default_value = "3,16,16")]
    shape: String,
    /// Noise standard deviation relative to unit-variance class prototypes
    #[arg(long, default_value_t = 1.0)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    train_count: usize,
    #[arg(long, default_value_t = 1000)]
    test_count: usize,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
}

enum CliError {
    Flags(String),
    Io(String),
    Validation(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Flags(_) => 1,
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Flags(m) | CliError::Io(m) | CliError::Validation(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful outputs, not flag errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    if let Ok(threads) = std::env::var("RECONVENE_THREADS") {
        if threads.trim() != "1" && !threads.trim().is_empty() {
            eprintln!("note: RECONVENE_THREADS={threads} requested; kernels are single-threaded, running with 1");
        }
    }
    let result = match cli.command {
        Command::Prune(args) => cmd_prune(args),
        Command::Profile(args) => cmd_profile(args),
        Command::Train(args) => cmd_train(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Genmodel(args) => cmd_genmodel(args),
        Command::Gendata(args) => cmd_gendata(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn check_sparsity(p: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(CliError::Flags(format!("--sparsity {p} outside [0, 1]")));
    }
    Ok(())
}

fn load_valid_model(path: &Path) -> Result<ModelGraph, CliError> {
    let graph = format::load_model(path)?;
    let report = graph.validate();
    if !report.is_ok() {
        let first = &report.violations[0];
        return Err(CliError::Validation(format!(
            "{}: invalid model ({} violations; first: {})",
            path.display(),
            report.violations.len(),
            first.message
        )));
    }
    Ok(graph)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Prune + plan + rectify one model under one policy; pure of file i/o.
fn prune_pipeline(
    graph: &ModelGraph,
    sparsity: f64,
    policy: Policy,
    random_mode: RandomMode,
    seed: u64,
    reinit: bool,
    include_linear: bool,
) -> Result<(ModelGraph, PrunePlan), CoreError> {
    let masked = magnitude_prune(graph, sparsity)?;
    let plan = if include_linear {
        plan_for_policy(&masked, policy, seed, random_mode)?
    } else {
        // the toggle only affects the threshold; policy transforms reuse it
        let base = build_plan_with(&masked, SensitivityOptions { include_linear_in_global: false })?;
        match policy {
            Policy::Reconvene => base,
            _ => plan_for_policy(&masked, policy, seed, random_mode)?,
        }
    };
    let rectified = apply_plan(&masked, &plan, seed, RectifyOptions { reinit })?;
    Ok((rectified, plan))
}

#[derive(Serialize)]
struct PruneReport<'a> {
    format_version: u32,
    config: PruneConfigEcho<'a>,
    plan: &'a PrunePlan,
    dense: &'a ProfileReport,
    pruned: &'a ProfileReport,
    comparison: &'a ComparisonReport,
}

#[derive(Serialize)]
struct PruneConfigEcho<'a> {
    model: String,
    sparsity: f64,
    policy: &'a str,
    random_mode: &'a str,
    seed: u64,
    reinit: bool,
    exclude_linear: bool,
    samples: usize,
    warmup: usize,
    batch: usize,
}

fn random_mode_name(mode: RandomMode) -> &'static str {
    match mode {
        RandomMode::MatchedCount => "matched_count",
        RandomMode::FairCoin => "fair_coin",
    }
}

fn cmd_prune(args: PruneArgs) -> Result<(), CliError> {
    check_sparsity(args.sparsity)?;
    let graph = load_valid_model(&args.model)?;
    let t0 = Instant::now();
    let (pruned, plan) = prune_pipeline(
        &graph,
        args.sparsity,
        args.policy,
        args.random_mode,
        args.seed,
        !args.no_reinit,
        !args.exclude_linear,
    )?;
    let search_s = t0.elapsed().as_secs_f64();

    let (dense_profile, pruned_profile) = if args.samples > 0 {
        (
            profile(&graph, args.batch, args.warmup, args.samples, args.seed)?,
            profile(&pruned, args.batch, args.warmup, args.samples, args.seed)?,
        )
    } else {
        (profile_static(&graph)?, profile_static(&pruned)?)
    };
    let comparison = compare(&dense_profile, &pruned_profile, None, None)?;

    format::save_model(&pruned, &args.out)?;
    let plan_path = args.plan.unwrap_or_else(|| sibling(&args.out, "plan.json"));
    write_json(&plan_path, &plan)?;
    let report_path = args.report.unwrap_or_else(|| sibling(&args.out, "report.json"));
    let report = PruneReport {
        format_version: 1,
        config: PruneConfigEcho {
            model: args.model.display().to_string(),
            sparsity: args.sparsity,
            policy: args.policy.name(),
            random_mode: random_mode_name(args.random_mode),
            seed: args.seed,
            reinit: !args.no_reinit,
            exclude_linear: args.exclude_linear,
            samples: args.samples,
            warmup: args.warmup,
            batch: args.batch,
        },
        plan: &plan,
        dense: &dense_profile,
        pruned: &pruned_profile,
        comparison: &comparison,
    };
    write_json(&report_path, &report)?;

    let (total, _) = pruned.param_counts();
    println!(
        "policy={} sparsity={} compression={:.4} params={}",
        args.policy.name(),
        args.sparsity,
        comparison.compression,
        total
    );
    eprintln!("search time: {search_s:.3}s");
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

#[derive(Serialize)]
struct ProfileReportEnvelope<'a> {
    format_version: u32,
    config: ProfileConfigEcho,
    profile: &'a ProfileReport,
}

#[derive(Serialize)]
struct ProfileConfigEcho {
    model: String,
    batch: usize,
    warmup: usize,
    samples: usize,
    seed: u64,
}

fn cmd_profile(args: ProfileArgs) -> Result<(), CliError> {
    if args.samples == 0 {
        return Err(CliError::Flags(String::from("--samples must be at least 1")));
    }
    if args.batch == 0 {
        return Err(CliError::Flags(String::from("--batch must be at least 1")));
    }
    let graph = load_valid_model(&args.model)?;
    let report = profile(&graph, args.batch, args.warmup, args.samples, args.seed)?;
    println!(
        "params={} nonzero={} storage_bytes={} flops={} latency_ms={:.3}±{:.3}",
        report.param_total,
        report.param_nonzero,
        report.storage_bytes,
        report.flops,
        report.latency_mean_ms.unwrap(),
        report.latency_std_ms.unwrap()
    );
    if let Some(path) = args.report {
        let envelope = ProfileReportEnvelope {
            format_version: 1,
            config: ProfileConfigEcho {
                model: args.model.display().to_string(),
                batch: args.batch,
                warmup: args.warmup,
                samples: args.samples,
                seed: args.seed,
            },
            profile: &report,
        };
        write_json(&path, &envelope)?;
    }
    Ok(())
}

fn parse_milestones(s: &str) -> Result<Vec<usize>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Flags(format!("--milestones entry '{t}' is not an integer")))
        })
        .collect()
}

fn load_split(path: &Path, want: Split, flag: &str) -> Result<Dataset, CliError> {
    let data = format::load_dataset(path)?;
    if data.split != want {
        return Err(CliError::Validation(format!(
            "{flag} {}: split is {:?}, expected {want:?}",
            path.display(),
            data.split
        )));
    }
    Ok(data)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let graph = load_valid_model(&args.model)?;
    let train_data = load_split(&args.data, Split::Train, "--data")?;
    let test_data = load_split(&args.test, Split::Test, "--test")?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        milestones: parse_milestones(&args.milestones)?,
        gamma: args.gamma,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        seed: args.seed,
    };
    config.validate().map_err(|e| CliError::Flags(e.to_string()))?;
    let t0 = Instant::now();
    let outcome = train(&graph, &train_data, &test_data, &config, || t0.elapsed().as_millis() as u64)?;
    for record in &outcome.history {
        println!(
            "epoch={} lr={} train_loss={:.4} test_acc={:.4}",
            record.epoch, record.lr, record.train_loss, record.test_acc
        );
    }
    println!(
        "best_epoch={} best_acc={:.4}",
        outcome.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| String::from("-")),
        outcome.best_accuracy
    );
    if let Some(path) = &args.history {
        let mut lines = String::new();
        for record in &outcome.history {
            lines.push_str(&serde_json::to_string(record).map_err(|e| CliError::Io(e.to_string()))?);
            lines.push('\n');
        }
        std::fs::write(path, lines).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &args.out {
        format::save_model(&outcome.final_graph, path)?;
    }
    if let Some(path) = &args.best {
        format::save_model(&outcome.best_graph, path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    policy: String,
    sparsity: f64,
    param_total: u64,
    param_nonzero: u64,
    storage_bytes: u64,
    flops: u64,
    compression: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    speedup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_delta_vs_dense: Option<f64>,
}

#[derive(Serialize)]
struct CompareReport {
    format_version: u32,
    config: CompareConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    dense_accuracy: Option<f64>,
    rows: Vec<CompareRow>,
}

#[derive(Serialize)]
struct CompareConfigEcho {
    model: String,
    sparsities: Vec<f64>,
    policies: Vec<String>,
    random_mode: String,
    seed: u64,
    samples: usize,
    warmup: usize,
    batch: usize,
    epochs: usize,
    trained: bool,
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let mut sparsities = Vec::new();
    for tok in args.sparsity.split(',') {
        let p: f64 = tok
            .trim()
            .parse()
            .map_err(|_| CliError::Flags(format!("--sparsity entry '{tok}' is not a number")))?;
        check_sparsity(p)?;
        sparsities.push(p);
    }
    let mut policies = Vec::new();
    for tok in args.policies.split(',') {
        let p: Policy = tok
            .trim()
            .parse()
            .map_err(|e| CliError::Flags(format!("--policies: {e}")))?;
        policies.push(p);
    }
    if args.train_data.is_some() != args.test_data.is_some() {
        return Err(CliError::Flags(String::from("--train-data and --test-data must be given together")));
    }
    let graph = load_valid_model(&args.model)?;
    let datasets = match (&args.train_data, &args.test_data) {
        (Some(tr), Some(te)) => {
            Some((load_split(tr, Split::Train, "--train-data")?, load_split(te, Split::Test, "--test-data")?))
        }
        _ => None,
    };
    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.train_batch,
        lr: args.lr,
        milestones: Vec::new(),
        gamma: 0.1,
        momentum: 0.9,
        weight_decay: 1e-4,
        seed: args.seed,
    };

    let dense_profile = if args.samples > 0 {
        profile(&graph, args.batch, args.warmup, args.samples, args.seed)?
    } else {
        profile_static(&graph)?
    };
    let dense_accuracy = match &datasets {
        Some((tr, te)) => Some(train(&graph, tr, te, &train_config, || 0)?.best_accuracy),
        None => None,
    };

    let mut rows = Vec::new();
    for &sparsity in &sparsities {
        for &policy in &policies {
            let (pruned, _plan) =
                prune_pipeline(&graph, sparsity, policy, args.random_mode, args.seed, true, true)?;
            let pruned_profile = if args.samples > 0 {
                profile(&pruned, args.batch, args.warmup, args.samples, args.seed)?
            } else {
                profile_static(&pruned)?
            };
            let accuracy = match &datasets {
                Some((tr, te)) => {
                    let outcome = train(&pruned, tr, te, &train_config, || 0)?;
                    Some(evaluate(&outcome.final_graph, te)?)
                }
                None => None,
            };
            let comparison = compare(&dense_profile, &pruned_profile, dense_accuracy, accuracy)?;
            rows.push(CompareRow {
                policy: policy.name().to_string(),
                sparsity,
                param_total: pruned_profile.param_total,
                param_nonzero: pruned_profile.param_nonzero,
                storage_bytes: pruned_profile.storage_bytes,
                flops: pruned_profile.flops,
                compression: comparison.compression,
                speedup: comparison.speedup,
                accuracy,
                accuracy_delta_vs_dense: comparison.accuracy_delta,
            });
            println!(
                "policy={} sparsity={} compression={:.4} params={}",
                policy.name(),
                sparsity,
                comparison.compression,
                pruned_profile.param_total
            );
        }
    }
    // deterministic row order regardless of any future parallelism
    rows.sort_by(|a, b| a.sparsity.total_cmp(&b.sparsity).then(a.policy.cmp(&b.policy)));
    let report = CompareReport {
        format_version: 1,
        config: CompareConfigEcho {
            model: args.model.display().to_string(),
            sparsities,
            policies: policies.iter().map(|p| p.name().to_string()).collect(),
            random_mode: random_mode_name(args.random_mode).to_string(),
            seed: args.seed,
            samples: args.samples,
            warmup: args.warmup,
            batch: args.batch,
            epochs: args.epochs,
            trained: datasets.is_some(),
        },
        dense_accuracy,
        rows,
    };
    write_json(&args.report, &report)
}

fn cmd_genmodel(args: GenmodelArgs) -> Result<(), CliError> {
    let Some(graph) = presets::build(&args.preset, args.seed) else {
        return Err(CliError::Flags(format!(
            "--preset '{}' unknown (expected one of: {})",
            args.preset,
            presets::PRESETS.join(", ")
        )));
    };
    format::save_model(&graph, &args.out)?;
    let (total, _) = graph.param_counts();
    println!("preset={} seed={} params={} out={}", args.preset, args.seed, total, args.out.display());
    Ok(())
}

fn cmd_gendata(args: GendataArgs) -> Result<(), CliError> {
    let dims: Vec<usize> = args
        .shape
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| CliError::Flags(format!("--shape entry '{t}' is not an integer"))))
        .collect::<Result<_, _>>()?;
    let [c, h, w] = dims[..] else {
        return Err(CliError::Flags(format!("--shape '{}' must be c,h,w", args.shape)));
    };
    if args.classes == 0 {
        return Err(CliError::Flags(String::from("--classes must be at least 1")));
    }
    if !(args.noise.is_finite() && args.noise >= 0.0) {
        return Err(CliError::Flags(format!("--noise {} must be a nonnegative number", args.noise)));
    }
    let config = SynthConfig { classes: args.classes, shape: (c, h, w), noise: args.noise, seed: args.seed };
    let train_set = generate(&config, args.train_count, Split::Train);
    let test_set = generate(&config, args.test_count, Split::Test);
    format::save_dataset(&train_set, &args.out_train)?;
    format::save_dataset(&test_set, &args.out_test)?;
    println!(
        "classes={} shape={},{},{} noise={} train={} test={}",
        args.classes, c, h, w, args.noise, args.train_count, args.test_count
    );
    Ok(())
}

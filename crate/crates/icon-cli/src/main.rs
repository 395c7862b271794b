//! Command-line front end: dataset generation, training, evaluation, the
//! cluster-vs-classifier probe, and ablation sweeps, all reproducible from a
//! single seed.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numerical abort,
//! 4 I/O error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use icon::datagen::{
    gen_assumption1_violation, gen_assumption2_violation, gen_spurious_shift, load_dataset,
    save_dataset, DomainDataset, SpuriousShiftConfig,
};
use icon::evaluation::{accuracy, confusion, mean_class_accuracy, probe_g_vs_f};
use icon::model::ModelState;
use icon::trainer::{parse_config, train, TrainConfig, TrainLog};
use icon::Error;

#[derive(Parser)]
#[command(name = "icon", version, about = "Invariant-consistency domain adaptation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV
    Generate(GenerateArgs),
    /// Train on a dataset and write metrics, summary, and a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Probe how often the classifier contradicts the cluster structure
    Probe(ProbeArgs),
    /// Sweep a parameter or a named suite over several seeds
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    #[value(name = "spurious_shift")]
    SpuriousShift,
    #[value(name = "assumption1_violation")]
    Assumption1Violation,
    #[value(name = "assumption2_violation")]
    Assumption2Violation,
}

impl Scenario {
    fn name(self) -> &'static str {
        match self {
            Scenario::SpuriousShift => "spurious_shift",
            Scenario::Assumption1Violation => "assumption1_violation",
            Scenario::Assumption2Violation => "assumption2_violation",
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Which generator to run
    #[arg(long, value_enum)]
    scenario: Scenario,
    /// Generator config file (flat `key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Override a generator config key, e.g. `--override n_per_domain=500`
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV produced by `generate`
    #[arg(long)]
    data: PathBuf,
    /// Training config file (flat `key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.csv, summary.json, model.ckpt
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for eval.json and confusion_t.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of target pairs to sample
    #[arg(long, default_value_t = 10_000)]
    n_pairs: usize,
    /// Output directory for probe.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// Baseline, consistency, consistency + invariance
    #[value(name = "components")]
    Components,
    /// Cluster count multipliers 0.5, 1, 2
    #[value(name = "cluster_count")]
    ClusterCount,
    /// Self-training and invariance weight sweeps
    #[value(name = "alpha_beta")]
    AlphaBeta,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Named suite to run
    #[arg(long, value_enum, conflicts_with_all = ["param", "values"])]
    suite: Option<Suite>,
    /// Config key to sweep (with --values)
    #[arg(long, requires = "values")]
    param: Option<String>,
    /// Comma-separated values for --param
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Base config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; runs use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds per setting
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Output directory for ablate.csv and runs.csv
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// What a command produced; printed as JSON on stdout.
#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    config: Option<String>,
    seed: u64,
    out: String,
    artifacts: Vec<String>,
}

impl RunManifest {
    fn print(&self) -> Result<(), Error> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        println!("{json}");
        Ok(())
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::LabelOutOfRange { .. } | Error::Evaluation(_) => 2,
        Error::NonFinite { .. } => 3,
        Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_) | Error::Dimension { .. } => {
            4
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn split_override(raw: &str) -> Result<(&str, &str), Error> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("override '{raw}' must be KEY=VALUE")))
}

fn read_to_string(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn ensure_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Builds the fully resolved training config: defaults, then the config
/// file, then --override flags, then the --seed flag.
fn resolve_train_config(
    config: &Option<PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<TrainConfig, Error> {
    let mut cfg = match config {
        Some(path) => parse_config(&read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    for raw in overrides {
        let (key, value) = split_override(raw)?;
        cfg.set(key, value)?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let mut cfg = SpuriousShiftConfig::default();
    if let Some(path) = &args.config {
        for (idx, raw) in read_to_string(path)?.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", idx + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
    }
    for raw in &args.overrides {
        let (key, value) = split_override(raw)?;
        cfg.set(key, value)?;
    }

    let dataset = match args.scenario {
        Scenario::SpuriousShift => gen_spurious_shift(&cfg, args.seed)?,
        Scenario::Assumption1Violation => gen_assumption1_violation(&cfg, args.seed)?,
        Scenario::Assumption2Violation => gen_assumption2_violation(&cfg, args.seed)?,
    };
    save_dataset(&dataset, &args.out)?;

    RunManifest {
        command: format!("generate --scenario {}", args.scenario.name()),
        config: args.config.map(|p| p.display().to_string()),
        seed: args.seed,
        out: args.out.display().to_string(),
        artifacts: vec![args.out.display().to_string()],
    }
    .print()
}

#[derive(serde::Serialize)]
struct TrainSummary<'a> {
    config: &'a TrainConfig,
    dataset: String,
    final_epoch: usize,
    final_metrics: &'a icon::trainer::EpochRecord,
    wall_clock_seconds: f64,
}

fn run_and_write_training(
    ds: &DomainDataset,
    cfg: &TrainConfig,
    data_path: &Path,
    out_dir: &Path,
) -> Result<(TrainLog, Vec<String>), Error> {
    ensure_dir(out_dir)?;
    let started = Instant::now();
    let log = train(ds, cfg)?;
    let wall_clock_seconds = started.elapsed().as_secs_f64();

    let metrics_path = out_dir.join("metrics.csv");
    write_file(&metrics_path, &log.metrics_csv())?;

    let summary = TrainSummary {
        config: cfg,
        dataset: data_path.display().to_string(),
        final_epoch: log.epochs.len() - 1,
        final_metrics: log.final_record(),
        wall_clock_seconds,
    };
    let summary_path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    write_file(&summary_path, &json)?;

    let ckpt_path = out_dir.join("model.ckpt");
    log.model.save(&ckpt_path)?;

    let artifacts = vec![
        data_path.display().to_string(),
        metrics_path.display().to_string(),
        summary_path.display().to_string(),
        ckpt_path.display().to_string(),
    ];
    Ok((log, artifacts))
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let cfg = resolve_train_config(&args.config, &args.overrides, args.seed)?;
    let ds = load_dataset(&args.data)?;
    let (_log, artifacts) = run_and_write_training(&ds, &cfg, &args.data, &args.out)?;
    RunManifest {
        command: "train".to_string(),
        config: args.config.map(|p| p.display().to_string()),
        seed: cfg.seed,
        out: args.out.display().to_string(),
        artifacts,
    }
    .print()
}

fn load_model_for(ds: &DomainDataset, path: &Path) -> Result<ModelState, Error> {
    let model = ModelState::load(path)?;
    if model.input_dim != ds.input_dim {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects input dimension {} but dataset has {}",
            model.input_dim, ds.input_dim
        )));
    }
    if model.num_classes != ds.num_classes {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} classes but dataset has {}",
            model.num_classes, ds.num_classes
        )));
    }
    Ok(model)
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let ds = load_dataset(&args.data)?;
    let model = load_model_for(&ds, &args.checkpoint)?;
    ensure_dir(&args.out)?;

    let acc_s = accuracy(&model, &ds.source)?;
    let target = ds.target_for_eval();
    let acc_t = accuracy(&model, target)?;
    let mean_class_t = mean_class_accuracy(&model, target)?;
    let cm = confusion(&model, target)?;

    let confusion_path = args.out.join("confusion_t.csv");
    write_file(&confusion_path, &cm.to_csv())?;
    let eval_json = serde_json::json!({
        "acc_s": acc_s,
        "acc_t": acc_t,
        "mean_class_acc_t": mean_class_t,
    });
    let eval_path = args.out.join("eval.json");
    write_file(&eval_path, &serde_json::to_string_pretty(&eval_json).unwrap())?;

    RunManifest {
        command: "eval".to_string(),
        config: None,
        seed: 0,
        out: args.out.display().to_string(),
        artifacts: vec![
            eval_path.display().to_string(),
            confusion_path.display().to_string(),
        ],
    }
    .print()
}

fn cmd_probe(args: ProbeArgs) -> Result<(), Error> {
    let ds = load_dataset(&args.data)?;
    let model = load_model_for(&ds, &args.checkpoint)?;
    let target = ds.target_for_eval();
    let probe = probe_g_vs_f(&model, target, args.n_pairs, args.seed)?;
    ensure_dir(&args.out)?;

    println!("probe_pct {}", probe.percentage);
    let probe_json = serde_json::json!({
        "probe_pct": probe.percentage,
        "f_failures": probe.f_failures,
        "pairs_examined": probe.pairs_examined,
        "no_failures": probe.no_failures(),
        "seed": args.seed,
    });
    let probe_path = args.out.join("probe.json");
    write_file(&probe_path, &serde_json::to_string_pretty(&probe_json).unwrap())?;

    RunManifest {
        command: "probe".to_string(),
        config: None,
        seed: args.seed,
        out: args.out.display().to_string(),
        artifacts: vec![probe_path.display().to_string()],
    }
    .print()
}

fn sweep_settings(args: &AblateArgs, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>, Error> {
    if let Some(suite) = args.suite {
        let settings = match suite {
            Suite::Components => vec![
                ("erm".to_string(), base.clone().erm_baseline()),
                ("con".to_string(), base.clone().consistency_only()),
                ("con_inv".to_string(), base.clone()),
            ],
            Suite::ClusterCount => [0.5, 1.0, 2.0]
                .iter()
                .map(|&m| {
                    let mut cfg = base.clone();
                    cfg.cluster_multiplier = m;
                    (format!("multiplier_{m}"), cfg)
                })
                .collect(),
            Suite::AlphaBeta => {
                let mut settings = Vec::new();
                for alpha in [0.25, 0.5, 0.75, 1.0] {
                    let mut cfg = base.clone();
                    cfg.alpha = alpha;
                    settings.push((format!("alpha_{alpha}"), cfg));
                }
                for beta in [0.05, 0.1, 0.15, 0.25] {
                    let mut cfg = base.clone();
                    cfg.beta = beta;
                    settings.push((format!("beta_{beta}"), cfg));
                }
                settings
            }
        };
        return Ok(settings);
    }
    let param = args
        .param
        .as_deref()
        .ok_or_else(|| Error::Config("ablate requires --suite or --param/--values".into()))?;
    if args.values.is_empty() {
        return Err(Error::Config("--values must list at least one value".into()));
    }
    args.values
        .iter()
        .map(|value| {
            let mut cfg = base.clone();
            cfg.set(param, value)?;
            cfg.validate()?;
            Ok((format!("{param}_{value}"), cfg))
        })
        .collect()
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Error> {
    let base = resolve_train_config(&args.config, &args.overrides, args.seed)?;
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let settings = sweep_settings(&args, &base)?;
    let ds = load_dataset(&args.data)?;
    ensure_dir(&args.out)?;

    let mut runs_csv = String::from("setting,seed,acc_t\n");
    let mut aggregate_csv = String::from("setting,runs,mean_acc_t,std_acc_t\n");
    for (name, setting) in &settings {
        let mut finals = Vec::with_capacity(args.seeds);
        for offset in 0..args.seeds {
            let mut cfg = setting.clone();
            cfg.seed = base.seed + offset as u64;
            let log = train(&ds, &cfg)?;
            let acc_t = log.final_record().acc_t;
            runs_csv.push_str(&format!("{name},{},{acc_t}\n", cfg.seed));
            finals.push(acc_t);
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let std = if finals.len() > 1 {
            (finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (finals.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        aggregate_csv.push_str(&format!("{name},{},{mean},{std}\n", finals.len()));
    }

    let aggregate_path = args.out.join("ablate.csv");
    write_file(&aggregate_path, &aggregate_csv)?;
    let runs_path = args.out.join("runs.csv");
    write_file(&runs_path, &runs_csv)?;

    RunManifest {
        command: "ablate".to_string(),
        config: args.config.map(|p| p.display().to_string()),
        seed: base.seed,
        out: args.out.display().to_string(),
        artifacts: vec![
            aggregate_path.display().to_string(),
            runs_path.display().to_string(),
        ],
    }
    .print()
}

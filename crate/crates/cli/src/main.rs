//! `adalign`: synthetic data, training, evaluation and self-checks for
//! spectral graph domain adaptation.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adalign::checkpoint::Checkpoint;
use adalign::graph::io::{load_domain, save_domain, DomainFiles};
use adalign::graph::{generate_csbm, CsbmSpec, GraphError};
use adalign::metrics::{discrepancy_report, DiscrepancyConfig};
use adalign::sampler::SamplerKind;
use adalign::trainer::{embed_domain, f1_scores, fit_with, parse_log, predict_domain, to_csv, DomainTensors, TrainConfig, CONFIG_KEYS};
use adalign::verify::{run_suite, Suite};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::manifest::RunManifest;

const LOG_FILE: &str = "metrics.log";
const CHECKPOINT_FILE: &str = "model.ckpt";
const SPEC_FILE: &str = "spec.kv";
const EVAL_FILE: &str = "eval.txt";

#[derive(Parser, Debug)]
#[command(name = "adalign", version, about = "Spectral distribution alignment for graph domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a source/target graph pair from a CSBM spec
    Synth(SynthArgs),
    /// Train on the `source` and `target` graphs of a data directory
    Train(TrainArgs),
    /// Score a checkpoint on a data directory
    Eval(EvalArgs),
    /// Run built-in property suites (all of them when none is named)
    Verify(VerifyArgs),
    /// Convert a metrics log to CSV
    ExportCurves(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// CSBM spec file (`key = value`); the canonical task when omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "ADALIGN_OUT_DIR", default_value = "adalign-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory holding `source.*` and `target.*` graph files
    #[arg(long)]
    data: PathBuf,
    /// Config file (`key = value`); flags take precedence over it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "ADALIGN_OUT_DIR", default_value = "adalign-out")]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

/// One flag per config field.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    frequencies: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    lr_model: Option<f64>,
    #[arg(long)]
    lr_sampler: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    sampler_steps: Option<usize>,
    #[arg(long)]
    target_extra_propagation: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
}

impl ConfigFlags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(&'static str, String)> {
            v.as_ref().map(|v| (key, v.to_string()))
        }
        [
            opt("lambda", &self.lambda),
            opt("kappa", &self.kappa),
            opt("frequencies", &self.frequencies),
            opt("components", &self.components),
            opt("lr_model", &self.lr_model),
            opt("lr_sampler", &self.lr_sampler),
            opt("epochs", &self.epochs),
            opt("grad_clip_norm", &self.grad_clip_norm),
            opt("seed", &self.seed),
            opt("sampler", &self.sampler),
            opt("sampler_steps", &self.sampler_steps),
            opt("target_extra_propagation", &self.target_extra_propagation),
            opt("eval_every", &self.eval_every),
            opt("hidden_dim", &self.hidden_dim),
            opt("emb_dim", &self.emb_dim),
            opt("num_layers", &self.num_layers),
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding the graphs to score
    #[arg(long)]
    data: PathBuf,
    /// Domain whose labels are scored
    #[arg(long, default_value = "target")]
    domain: String,
    /// Frequencies for the discrepancy report
    #[arg(long, default_value_t = 8192)]
    report_frequencies: usize,
    #[arg(long, default_value_t = 0.7)]
    kappa: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "ADALIGN_OUT_DIR", default_value = "adalign-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// gradcheck, cf, decomposition or mc
    suites: Vec<Suite>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Metrics log written by `train`
    log: PathBuf,
    /// Output CSV path
    out: PathBuf,
}

/// Config, bad input values and spec violations are usage errors (exit 2);
/// everything else is a runtime failure (exit 1).
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<adalign::Error>(),
            Some(adalign::Error::Config(_) | adalign::Error::Kv(_) | adalign::Error::Graph(GraphError::Spec { .. } | GraphError::Kv(_)))
        ) || matches!(cause.downcast_ref::<GraphError>(), Some(GraphError::Spec { .. } | GraphError::Kv(_)))
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth(&args),
        Command::Train(args) => train(&args),
        Command::Eval(args) => eval(&args),
        Command::Verify(args) => verify(&args),
        Command::ExportCurves(args) => export_curves(&args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let mut spec = match &args.spec {
        Some(path) => CsbmSpec::from_kv_str(&read_text(path)?).map_err(adalign::Error::from)?,
        None => CsbmSpec::canonical(0),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (source, target) = generate_csbm(&spec).map_err(adalign::Error::from)?;
    create_dir(&args.out_dir)?;
    let mut manifest = RunManifest::new("synth", spec.seed, &args.out_dir);
    if let Some(path) = &args.spec {
        manifest.add_input("spec", path)?;
    }
    fs::write(args.out_dir.join(SPEC_FILE), spec.to_kv_string())?;
    manifest.add_artifact(SPEC_FILE)?;
    for (name, graph) in [("source", &source), ("target", &target)] {
        save_domain(&args.out_dir, name, graph, true).map_err(adalign::Error::from)?;
        for suffix in ["edges", "features.csv", "labels"] {
            manifest.add_artifact(&format!("{name}.{suffix}"))?;
        }
    }
    manifest.write()?;
    info!(
        "wrote {} + {} nodes ({} / {} edges) to {}",
        source.num_nodes(),
        target.num_nodes(),
        source.edges().len(),
        target.edges().len(),
        args.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Defaults, then the config file, then flags; validated once at the end.
fn resolve_config(file: Option<&Path>, flags: &ConfigFlags) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = file {
        let text = read_text(path)?;
        for entry in adalign::kv::parse(&text).map_err(adalign::Error::from)? {
            config
                .set(&entry.key, &entry.value)
                .with_context(|| format!("{} line {}", path.display(), entry.line))?;
        }
    }
    for (key, value) in flags.overrides() {
        config.set(key, &value)?;
    }
    config.validate()?;
    Ok(config)
}

fn train(args: &TrainArgs) -> Result<ExitCode> {
    let config = resolve_config(args.config.as_deref(), &args.flags)?;
    let source = load_domain(&args.data, "source", None).map_err(adalign::Error::from)?;
    let target = load_domain(&args.data, "target", None).map_err(adalign::Error::from)?;
    create_dir(&args.out_dir)?;

    let mut manifest = RunManifest::new("train", config.seed, &args.out_dir);
    manifest.config = CONFIG_KEYS.iter().map(|k| (k.to_string(), config.get(k).expect("known key"))).collect();
    if let Some(path) = &args.config {
        manifest.add_input("config", path)?;
    }
    for name in ["source", "target"] {
        let files = DomainFiles::new(&args.data, name);
        manifest.add_input(&format!("{name}.edges"), &files.edges)?;
        manifest.add_input(&format!("{name}.features"), &files.features)?;
        if files.labels.exists() {
            manifest.add_input(&format!("{name}.labels"), &files.labels)?;
        }
    }
    manifest.write()?;

    let log_path = args.out_dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut write_error = None;
    let outcome = fit_with(&source, &target, &config, |record| {
        if let Err(e) = writeln!(log, "{}", record.to_line()).and_then(|_| log.flush()) {
            write_error.get_or_insert(e);
        }
        let f1 = record.micro_f1.map_or_else(|| "na".to_string(), |v| format!("{v:.4}"));
        info!("epoch {:>4}  l_source {:.4}  l_align {:.4}  micro_f1 {f1}", record.epoch, record.l_source, record.l_align);
    })
    .context("training aborted")?;
    if let Some(e) = write_error {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }

    let checkpoint = Checkpoint {
        encoder: outcome.state.encoder,
        sampler: outcome.state.sampler,
        target_extra_propagation: config.target_extra_propagation,
    };
    checkpoint.save(&args.out_dir.join(CHECKPOINT_FILE))?;
    manifest.add_artifact(LOG_FILE)?;
    manifest.add_artifact(CHECKPOINT_FILE)?;
    manifest.write()?;
    Ok(ExitCode::SUCCESS)
}

fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let in_dim = checkpoint.encoder.config().in_dim;
    let load = |name: &str| -> Result<Option<DomainTensors>> {
        if !DomainFiles::new(&args.data, name).features.exists() {
            return Ok(None);
        }
        let graph = load_domain(&args.data, name, None).map_err(adalign::Error::from)?;
        if graph.feature_dim() != in_dim {
            bail!("{name} graph has {} feature columns but the checkpoint expects {in_dim}", graph.feature_dim());
        }
        Ok(Some(DomainTensors::new(&graph)))
    };

    let mut lines = Vec::new();
    let scored = load_domain(&args.data, &args.domain, None).map_err(adalign::Error::from)?;
    let domain = load(&args.domain)?.expect("domain just loaded");
    let extra = if args.domain == "target" { checkpoint.target_extra_propagation } else { 0 };
    match scored.labels() {
        Some(labels) => {
            let pred = predict_domain(&checkpoint.encoder, &domain, extra)?;
            let (micro, macro_) = f1_scores(labels, &pred)?;
            lines.push(format!("domain:{} micro_f1:{micro} macro_f1:{macro_}", args.domain));
        }
        None => lines.push(format!("domain:{} micro_f1:na macro_f1:na", args.domain)),
    }

    if let (Some(source), Some(target)) = (load("source")?, load("target")?) {
        let z_s = embed_domain(&checkpoint.encoder, &source, 0)?;
        let z_t = embed_domain(&checkpoint.encoder, &target, checkpoint.target_extra_propagation)?;
        let config = DiscrepancyConfig { frequencies: args.report_frequencies, kappa: args.kappa, seed: args.seed, ..DiscrepancyConfig::default() };
        lines.push(discrepancy_report(&z_s, &z_t, &checkpoint.sampler, &config)?.to_line());
    }

    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    print!("{text}");
    create_dir(&args.out_dir)?;
    fs::write(args.out_dir.join(EVAL_FILE), text)?;
    Ok(ExitCode::SUCCESS)
}

fn verify(args: &VerifyArgs) -> Result<ExitCode> {
    let suites = if args.suites.is_empty() { Suite::ALL.to_vec() } else { args.suites.clone() };
    let mut all_passed = true;
    for suite in suites {
        let report = run_suite(suite)?;
        for check in &report.checks {
            println!("[{suite}] {check}");
        }
        let passed = report.passed();
        println!("suite {suite}: {}", if passed { "pass" } else { "FAIL" });
        all_passed &= passed;
    }
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn export_curves(args: &ExportArgs) -> Result<ExitCode> {
    let records = parse_log(&read_text(&args.log)?).with_context(|| format!("parsing {}", args.log.display()))?;
    fs::write(&args.out, to_csv(&records)).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

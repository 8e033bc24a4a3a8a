//! `dsen`: data generation, training, inference, evaluation and property checks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! assertion failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dsen::check::Suite;
use dsen::config::{keys_help, parse_angles, RunConfig};
use dsen::data::{gen_dataset, load_image, save_image, Dataset, DatasetManifest, GenSpec, Split};
use dsen::metrics::{evaluate, evaluate_inputs};
use dsen::model::{checkpoint, ModelGraph};
use dsen::refine::restore;
use dsen::train::{train, TrainOutputs};

const KEYS_HEADING: &str = "Configuration keys (key = value, `#` comments) with their defaults:";

#[derive(Parser)]
#[command(name = "dsen", version, about = "Rotation-equivariant single-image deraining")]
#[command(after_long_help = format!("{KEYS_HEADING}\n{}", keys_help()))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic rainy/clean PNG pairs and a manifest.
    GenData(GenDataArgs),
    /// Train a network and write its checkpoint, log and configuration.
    #[command(after_long_help = format!("{KEYS_HEADING}\n{}", keys_help()))]
    Train(TrainArgs),
    /// Derain one image.
    Infer(InferArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Run a property suite and report every property.
    Check(CheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Streak angles in degrees from vertical: `lo..hi` or `a,b,c`.
    #[arg(long, allow_hyphen_values = true)]
    angles: Option<String>,
    /// Pairs tagged `val`, taken from the end before the test pairs.
    #[arg(long)]
    val: Option<usize>,
    /// Pairs tagged `test`, taken from the end.
    #[arg(long)]
    test: Option<usize>,
    /// Configuration file supplying the `gen_*` and `streak*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint path; the effective configuration goes to `<out>.cfg`.
    #[arg(long)]
    out: PathBuf,
    /// Overrides applied after the file, e.g. `--set max_steps=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run this many stages instead of the trained count.
    #[arg(long)]
    stages: Option<usize>,
    /// Also write the predicted rain layer.
    #[arg(long)]
    rain: Option<PathBuf>,
    /// Architecture; defaults to `<ckpt>.cfg`.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Write the per-image report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stages: Option<usize>,
    /// Architecture; defaults to `<ckpt>.cfg`.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    suite: Suite,
}

/// Outcome that is not a failure of the program but of what it verified.
#[derive(Debug)]
struct AssertionFailed(usize);

impl std::fmt::Display for AssertionFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} propert{} failed", self.0, if self.0 == 1 { "y" } else { "ies" })
    }
}

impl std::error::Error for AssertionFailed {}

fn sidecar(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn load_model(ckpt: &Path, config: Option<&Path>, stages: Option<usize>) -> Result<ModelGraph> {
    let cfg_path = config.map(Path::to_path_buf).unwrap_or_else(|| sidecar(ckpt));
    if !cfg_path.exists() {
        bail!(
            "no architecture for {}: pass --config or keep {} next to the checkpoint",
            ckpt.display(),
            cfg_path.display()
        );
    }
    let cfg = RunConfig::load(&cfg_path)?;
    let params = checkpoint::load(ckpt)?;
    let model = ModelGraph::from_params(cfg.model, params)
        .with_context(|| format!("{} does not fit {}", ckpt.display(), cfg_path.display()))?;
    Ok(match stages {
        Some(t) => model.with_stages(t)?,
        None => model,
    })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => RunConfig::load(p)?.gen,
        None => GenSpec::default(),
    };
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(s) = a.size {
        spec.size = s;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(v) = a.val {
        spec.val = v;
    }
    if let Some(t) = a.test {
        spec.test = t;
    }
    if let Some(angles) = &a.angles {
        spec.streaks.angles = parse_angles(angles)?;
    }
    let manifest = gen_dataset(&spec, &a.out)?;
    println!("wrote {} pairs to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    for o in &a.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
        cfg.set(k.trim(), v.trim(), Path::new(""))?;
    }
    cfg.validate()?;
    let manifest_path = cfg.manifest.clone().context("configuration needs a `manifest` key")?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let data = Dataset::load(&manifest, cfg.split)?;
    if data.is_empty() {
        bail!("split `{}` of {} is empty", cfg.split, manifest_path.display());
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let log = cfg.log.clone().unwrap_or_else(|| log_path(&a.out));
    let cfg_out = sidecar(&a.out);
    // The sidecar lives elsewhere, so relative paths would no longer resolve.
    cfg.manifest = Some(std::path::absolute(&manifest_path)?);
    cfg.log = Some(std::path::absolute(&log)?);
    fs::write(&cfg_out, cfg.to_text()).with_context(|| format!("writing {}", cfg_out.display()))?;

    let mut model = ModelGraph::build(cfg.model.clone(), cfg.seed)?;
    println!(
        "training {} parameters, {} stages, {} pairs, {} steps",
        model.count_params(),
        cfg.model.stages,
        data.len(),
        cfg.train.max_steps
    );
    let outputs = TrainOutputs {
        checkpoint: Some(a.out.clone()),
        log: Some(log.clone()),
    };
    let records = train(&mut model, &data, &cfg.train, &outputs)?;
    match (records.first(), records.last()) {
        (Some(first), Some(last)) => println!("initial loss {:.6e}, final loss {:.6e}", first.loss, last.loss),
        _ => println!("no steps run"),
    }
    println!("checkpoint {}, log {}", a.out.display(), log.display());
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = load_model(&a.ckpt, a.config.as_deref(), a.stages)?;
    let image = load_image(&a.input)?;
    let (restored, rain) = restore(&model, &image)?;
    save_image(&restored, &a.out)?;
    if let Some(p) = &a.rain {
        save_image(&rain, p)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.ckpt, a.config.as_deref(), a.stages)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let data = Dataset::load(&manifest, a.split)?;
    if data.is_empty() {
        bail!("split `{}` of {} is empty", a.split, a.manifest.display());
    }
    let report = evaluate(&model, &data, &a.ckpt.display().to_string())?;
    let baseline = evaluate_inputs(&data)?;
    if let Some(p) = &a.out {
        fs::write(p, report.to_tsv()).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "{} {} images: PSNR {:.4} dB, SSIM {:.6} (rainy input: PSNR {:.4} dB, SSIM {:.6})",
        a.split,
        data.len(),
        report.mean_psnr,
        report.mean_ssim,
        baseline.mean_psnr,
        baseline.mean_ssim
    );
    Ok(())
}

fn check(a: CheckArgs) -> Result<()> {
    let outcomes = a.suite.run()?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    if failed > 0 {
        return Err(AssertionFailed(failed).into());
    }
    Ok(())
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            let usage = matches!(e.downcast_ref::<dsen::Error>(), Some(dsen::Error::Config(_)));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}

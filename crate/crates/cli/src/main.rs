//! `kpchange`: dataset generation, feature extraction, training, inference,
//! evaluation, gradient checks and the trend report.
//!
//! Exit codes: 0 on success, 1 when a check fails or a run aborts, 2 on usage,
//! configuration or input errors.

use clap::{Args, Parser, Subcommand};
use kpchange::cloud::ply::{load_ply, save_ply, PlyFormat};
use kpchange::config::RunConfig;
use kpchange::exec::{self, Execution};
use kpchange::features::compute_all_features;
use kpchange::metrics::ConfusionMatrix;
use kpchange::nets::{gradient_suite, Architecture};
use kpchange::synth::{generate_dataset, load_split, write_dataset, Split};
use kpchange::training::{predict_tile, train_from_config, Checkpoint, InferParams, TileData, Trainer};
use kpchange::trend::{default_variants, run_trend};
use kpchange::{CLASS_NAMES, N_CLASSES};
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "kpchange", version, about = "Multi-class 3D point cloud change segmentation")]
struct Cli {
    /// Single-threaded, prefetch-free execution for bit-reproducible runs.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration (see config/template.toml).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled dataset (PLY pairs plus manifests).
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Attach the ten hand-crafted features to a PLY pair.
    Features {
        #[arg(long)]
        pc1: PathBuf,
        #[arg(long)]
        pc2: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        r_stab: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a network on a generated dataset.
    Train {
        /// Dataset directory written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// Overrides the configured architecture.
        #[arg(long)]
        arch: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Label every PC2 point of a PLY pair with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pc1: PathBuf,
        #[arg(long)]
        pc2: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare predicted and reference labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference gradient checks over all layers and architectures.
    Gradcheck {
        /// One architecture, or all when omitted.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Repeated-seed comparison of the baseline, `Stability` input and encoder fusion.
    TrendReport {
        /// Number of training seeds per variant.
        #[arg(long, default_value_t = 3)]
        runs: u64,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failed(e: impl Display) -> CliError {
    CliError::Failed(e.to_string())
}

type CliResult = Result<(), CliError>;

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            RunConfig::parse_with_seed(&text, args.seed).map_err(usage)?
        }
        None => {
            let seed = args.seed.ok_or_else(|| usage("a seed is required: pass --seed or a --config with `seed`"))?;
            RunConfig::with_seed(seed)
        }
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Creates `dir`, refusing a non-empty one unless forced, and writes the
/// version stamp and configuration echo.
fn prepare_out(dir: &Path, force: bool, config_echo: &str) -> CliResult {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(usage(format!("output directory {} is not empty (use --force)", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
    fs::write(dir.join("VERSION"), format!("kpchange {VERSION}\n")).map_err(failed)?;
    fs::write(dir.join("config.toml"), config_echo).map_err(failed)?;
    Ok(())
}

fn parse_arch(name: &str) -> Result<Architecture, CliError> {
    name.parse().map_err(usage)
}

fn load_input(path: &Path) -> Result<kpchange::PointCloud, CliError> {
    if !path.exists() {
        return Err(usage(format!("input not found: {}", path.display())));
    }
    load_ply(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(failed)?;
    fs::write(path, text + "\n").map_err(failed)
}

fn gen_data(config: &ConfigArgs, out: &OutArgs) -> CliResult {
    let cfg = load_config(config)?;
    let d = &cfg.data;
    let (manifest, pairs) =
        generate_dataset(d.n_tiles, d.ratios, cfg.seed, cfg.tile_params(), Execution::current()).map_err(usage)?;
    prepare_out(&out.out, out.force, &cfg.canonical())?;
    write_dataset(&out.out, &manifest, &pairs, PlyFormat::BinaryLittleEndian).map_err(failed)?;
    println!("wrote {} tiles to {}", manifest.tiles.len(), out.out.display());
    Ok(())
}

fn features(pc1: &Path, pc2: &Path, k: Option<usize>, r_stab: Option<f64>, config: &ConfigArgs, out: &OutArgs) -> CliResult {
    let mut cfg = load_config(&ConfigArgs { config: config.config.clone(), seed: config.seed.or(Some(0)) })?;
    cfg.features.k = k.unwrap_or(cfg.features.k);
    cfg.features.r_stab = r_stab.unwrap_or(cfg.features.r_stab);
    cfg.validate().map_err(usage)?;
    let (mut c1, mut c2) = (load_input(pc1)?, load_input(pc2)?);
    let (f1, f2) = compute_all_features(&c1, &c2, &cfg.feature_params()).map_err(failed)?;
    c1.features = Some(f1.0);
    c2.features = Some(f2.0);
    prepare_out(&out.out, out.force, &cfg.canonical())?;
    save_ply(&c1, out.out.join("pc1.ply"), PlyFormat::BinaryLittleEndian).map_err(failed)?;
    save_ply(&c2, out.out.join("pc2.ply"), PlyFormat::BinaryLittleEndian).map_err(failed)?;
    println!("wrote features f0..f9 for {} + {} points", c1.len(), c2.len());
    Ok(())
}

fn load_tiles(dir: &Path, split: Split, cfg: &RunConfig) -> Result<Vec<TileData>, CliError> {
    let (_, pairs) = load_split(dir, split).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let params = cfg.feature_params();
    let with_features = !cfg.features.inputs.is_empty();
    exec::map_slice(Execution::current(), &pairs, |p| TileData::from_pair(p.clone(), with_features.then_some(&params)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(failed)
}

fn train(data: &Path, arch: Option<&str>, config: &ConfigArgs, out: &OutArgs) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(a) = arch {
        cfg.architecture.name = parse_arch(a)?.as_str().into();
    }
    cfg.validate().map_err(usage)?;
    let train_tiles = load_tiles(data, Split::Train, &cfg)?;
    let val_tiles = load_tiles(data, Split::Val, &cfg)?;
    if train_tiles.is_empty() {
        return Err(usage(format!("{} has no training tiles", data.display())));
    }
    prepare_out(&out.out, out.force, &cfg.canonical())?;
    let mut history = fs::File::create(out.out.join("history.jsonl")).map_err(failed)?;
    let mut write_err = None;
    let (_, outcome) = train_from_config(&cfg, &train_tiles, &val_tiles, |record| {
        let line = serde_json::to_string(record).expect("epoch records serialize");
        if let Err(e) = writeln!(history, "{line}") {
            write_err.get_or_insert(e);
        }
    })
    .map_err(failed)?;
    if let Some(e) = write_err {
        return Err(failed(e));
    }
    outcome.best.save(out.out.join("best.ckpt")).map_err(failed)?;
    outcome.last.save(out.out.join("last.ckpt")).map_err(failed)?;
    let summary = serde_json::json!({
        "architecture": cfg.architecture.name,
        "epochs": outcome.history.len(),
        "best_miou_ch": outcome.best.best_miou_ch,
        "aborted": outcome.aborted,
    });
    write_json(&out.out.join("summary.json"), &summary)?;
    println!("best mIoU_ch {:?} after {} epochs", outcome.best.best_miou_ch, outcome.history.len());
    match outcome.aborted {
        Some(reason) => Err(failed(format!("training aborted: {reason}"))),
        None => Ok(()),
    }
}

fn infer(checkpoint: &Path, pc1: &Path, pc2: &Path, out: &OutArgs) -> CliResult {
    if !checkpoint.exists() {
        return Err(usage(format!("checkpoint not found: {}", checkpoint.display())));
    }
    let ck = Checkpoint::load(checkpoint).map_err(|e| usage(format!("{}: {e}", checkpoint.display())))?;
    let trainer = Trainer::from_checkpoint(&ck).map_err(usage)?;
    let cfg = RunConfig::parse(&ck.config).map_err(usage)?;
    let (mut c1, mut c2) = (load_input(pc1)?, load_input(pc2)?);
    if !cfg.features.inputs.is_empty() {
        let (f1, f2) = compute_all_features(&c1, &c2, &cfg.feature_params()).map_err(failed)?;
        c1.features = Some(f1.0);
        c2.features = Some(f2.0);
    }
    let params = InferParams {
        radius: cfg.training.cylinder_radius,
        spacing: cfg.evaluation.spacing,
        batch_size: cfg.training.batch_size,
    };
    let labels = predict_tile(&trainer, &c1, &c2, params).map_err(failed)?;
    let mut pred = kpchange::PointCloud::new(c2.points.clone(), c2.epoch).with_labels(labels);
    pred.features = None;
    prepare_out(&out.out, out.force, &ck.config)?;
    save_ply(&pred, out.out.join("pred.ply"), PlyFormat::BinaryLittleEndian).map_err(failed)?;
    println!("labelled {} points", pred.len());
    Ok(())
}

fn eval(pred: &Path, truth: &Path, out: Option<&Path>, force: bool) -> CliResult {
    let (p, t) = (load_input(pred)?, load_input(truth)?);
    let pl = p.labels.ok_or_else(|| usage(format!("{} has no labels", pred.display())))?;
    let tl = t.labels.ok_or_else(|| usage(format!("{} has no labels", truth.display())))?;
    let mut cm = ConfusionMatrix::new(N_CLASSES);
    cm.accumulate(&tl, &pl).map_err(usage)?;
    let report = cm.report(&CLASS_NAMES);
    println!("{}", serde_json::to_string_pretty(&report).map_err(failed)?);
    if let Some(dir) = out {
        let echo = format!("pred = {:?}\ntruth = {:?}\n", pred.display().to_string(), truth.display().to_string());
        prepare_out(dir, force, &echo)?;
        write_json(&dir.join("metrics.json"), &report)?;
    }
    Ok(())
}

fn gradcheck(arch: Option<&str>, seed: u64, out: Option<&Path>, force: bool) -> CliResult {
    let archs = match arch {
        Some(a) => vec![parse_arch(a)?],
        None => Architecture::ALL.to_vec(),
    };
    let start = Instant::now();
    let cases = gradient_suite(&archs, seed).map_err(failed)?;
    for c in &cases {
        println!("{:<32} max rel err {:.3e} over {:>6} entries  {}", c.name, c.max_rel_error, c.checked, if c.passed { "PASS" } else { "FAIL" });
    }
    println!("{} cases in {:.1?}", cases.len(), start.elapsed());
    if let Some(dir) = out {
        let names: Vec<&str> = archs.iter().map(|a| a.as_str()).collect();
        prepare_out(dir, force, &format!("seed = {seed}\narchitectures = {names:?}\n"))?;
        write_json(&dir.join("gradcheck.json"), &cases)?;
    }
    let failures = cases.iter().filter(|c| !c.passed).count();
    if failures > 0 {
        return Err(failed(format!("{failures} gradient checks failed")));
    }
    Ok(())
}

fn trend_report(runs: u64, config: &ConfigArgs, out: &OutArgs) -> CliResult {
    let cfg = load_config(config)?;
    if runs == 0 {
        return Err(usage("--runs must be positive"));
    }
    prepare_out(&out.out, out.force, &cfg.canonical())?;
    let seeds: Vec<u64> = (0..runs).map(|i| cfg.seed.wrapping_add(i)).collect();
    let report = run_trend(&cfg, &default_variants(), &seeds, |name, seed, score| {
        log::info!("{name} seed {seed}: test mIoU_ch {score:?}");
    })
    .map_err(failed)?;
    for v in &report.variants {
        println!("{:<20} mIoU_ch {:?} ± {:?}", v.name, v.mean, v.std);
    }
    for c in &report.checks {
        println!("{}: {:?}", c.claim, c.holds);
    }
    write_json(&out.out.join("trend.json"), &report)
}

fn run(cli: Cli) -> CliResult {
    exec::set_strict(cli.strict);
    match &cli.command {
        Command::GenData { config, out } => gen_data(config, out),
        Command::Features { pc1, pc2, k, r_stab, config, out } => features(pc1, pc2, *k, *r_stab, config, out),
        Command::Train { data, arch, config, out } => train(data, arch.as_deref(), config, out),
        Command::Infer { checkpoint, pc1, pc2, out } => infer(checkpoint, pc1, pc2, out),
        Command::Eval { pred, truth, out, force } => eval(pred, truth, out.as_deref(), *force),
        Command::Gradcheck { arch, seed, out, force } => gradcheck(arch.as_deref(), *seed, out.as_deref(), *force),
        Command::TrendReport { runs, config, out } => trend_report(*runs, config, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(msg) | CliError::Failed(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}

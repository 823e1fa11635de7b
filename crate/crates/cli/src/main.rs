use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use point_transformer::config::RunConfig;
use point_transformer::harness::bench::{bench_knn, DEFAULT_KS, DEFAULT_REPEATS, DEFAULT_SIZES};
use point_transformer::harness::gradsuite::{self, SuiteConfig};
use point_transformer::harness::train::{write_ablation_csv, write_loss_csv};
use point_transformer::harness::{ablate, evaluate, train_with};
use point_transformer::network::PointTransformerNet;
use point_transformer::Error;

const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Parser)]
#[command(name = "point-transformer", version, about = "Point transformer training, checks and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (overrides `output_dir` in the config; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes loss.csv, metrics.json, metrics.csv, model.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the config's evaluation scenes.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every layer and attention variant.
    Gradcheck {
        #[arg(long, default_value_t = gradsuite::LAYER_TOLERANCE)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Time exact kNN over a grid of point counts and neighbour counts.
    BenchKnn {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES.to_vec())]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS.to_vec())]
        ks: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train each variant listed in the config's [ablate] section.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print a built-in configuration as TOML.
    Preset { name: Preset },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    ShapeAblation,
}

/// Usage-class failures (bad flags, unreadable or invalid config) exit 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    if !path.is_file() {
        return Err(UsageError(format!("config file not found: {}", path.display())).into());
    }
    let mut cfg = RunConfig::load(path).map_err(|e| UsageError(format!("invalid config: {e}")))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: Option<&RunConfig>) -> anyhow::Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn write_metrics(dir: &Path, m: &point_transformer::harness::MetricsReport) -> anyhow::Result<()> {
    let mut w = create(dir, "metrics.json")?;
    m.write_json(&mut w)?;
    writeln!(w)?;
    w.flush()?;
    let mut w = create(dir, "metrics.csv")?;
    m.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_train(config: &Path, common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(config, common.seed)?;
    let dir = out_dir(common, Some(&cfg))?;
    let scenes = cfg.train_scenes()?;
    let every = (cfg.iterations / 20).max(1);
    let mut out = train_with(&cfg, &scenes, |r| {
        if r.iteration % every == 0 || r.iteration + 1 == cfg.iterations {
            eprintln!("iter {:>6}  lr {:.2e}  loss {:.6}", r.iteration, r.lr, r.loss);
        }
    })?;
    let mut w = create(&dir, "loss.csv")?;
    write_loss_csv(&mut w, &out.curve)?;
    w.flush()?;
    out.net.save_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let m = evaluate(&mut out.net, &cfg.eval_scenes()?, cfg.model.fps_start)?;
    write_metrics(&dir, &m)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    eprintln!("OA {:.4}  mAcc {:.4}  mIoU {:.4}  -> {}", m.oa, m.macc, m.miou, dir.display());
    Ok(())
}

fn cmd_eval(config: &Path, checkpoint: &Path, common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(config, common.seed)?;
    let dir = out_dir(common, Some(&cfg))?;
    let mut net = PointTransformerNet::load_checkpoint(checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    if net.config().num_classes != cfg.data.num_classes {
        bail!(
            "checkpoint predicts {} classes but the config's data has {}",
            net.config().num_classes,
            cfg.data.num_classes
        );
    }
    let m = evaluate(&mut net, &cfg.eval_scenes()?, cfg.model.fps_start)?;
    write_metrics(&dir, &m)?;
    eprintln!("OA {:.4}  mAcc {:.4}  mIoU {:.4}", m.oa, m.macc, m.miou);
    Ok(())
}

fn cmd_gradcheck(tolerance: f64, common: &Common) -> anyhow::Result<bool> {
    let dir = out_dir(common, None)?;
    let cfg = SuiteConfig { seed: common.seed.unwrap_or(0), tolerance, ..SuiteConfig::default() };
    let rows = gradsuite::run_suite(&cfg, |r| {
        println!(
            "{:<24} {:<38} {:>10.3e}  tol {:e}  {}",
            r.component,
            r.variant,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        )
    })?;
    let mut w = create(&dir, "gradcheck.csv")?;
    gradsuite::write_csv(&mut w, &rows)?;
    w.flush()?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    eprintln!("{} rows, {failed} failed", rows.len());
    Ok(failed == 0)
}

fn cmd_bench(sizes: &[usize], ks: &[usize], repeats: usize, common: &Common) -> anyhow::Result<()> {
    if sizes.is_empty() || ks.is_empty() || sizes.contains(&0) || ks.contains(&0) || repeats == 0 {
        return Err(UsageError("--sizes, --ks and --repeats must be positive".into()).into());
    }
    let dir = out_dir(common, None)?;
    let table = bench_knn(sizes, ks, repeats, common.seed.unwrap_or(0))?;
    let mut text = Vec::new();
    table.write_csv(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    fs::write(dir.join("bench_knn.csv"), &text)?;
    for note in &table.notes {
        eprintln!("note: {note}");
    }
    for v in table.monotonicity_violations() {
        eprintln!("non-monotone: {v}");
    }
    Ok(())
}

fn cmd_ablate(config: &Path, common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(config, common.seed)?;
    let dir = out_dir(common, Some(&cfg))?;
    let rows = ablate(&cfg, |r| eprintln!("{}", r.csv_line()))?;
    if rows.is_empty() {
        eprintln!("warning: the [ablate] section requests no variants");
    }
    let mut w = create(&dir, "ablation.csv")?;
    write_ablation_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { config, common } => cmd_train(&config, &common)?,
        Command::Eval { config, checkpoint, common } => cmd_eval(&config, &checkpoint, &common)?,
        Command::Gradcheck { tolerance, common } => return cmd_gradcheck(tolerance, &common),
        Command::BenchKnn { sizes, ks, repeats, common } => cmd_bench(&sizes, &ks, repeats, &common)?,
        Command::Ablate { config, common } => cmd_ablate(&config, &common)?,
        Command::Preset { name } => {
            let cfg = match name {
                Preset::Desk => RunConfig::desk(),
                Preset::ShapeAblation => RunConfig::shape_ablation(),
            };
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

//! Command-line front end: reproducible runs for synthesis, training,
//! transfer, evaluation, and cost inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/shape error, 3 failed
//! `--expect-total` assertion.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TransferReport};
use crate::cost::{count_macs, count_params, CostReport, CountMode};
use crate::data::{
    build_set, extract_cube, make_splits, nearest_centroid_oa, normalize_scene, synth_scene,
    HsiScene, NormStats, SplitList, SplitSpec, TestRule,
};
use crate::io::{read_hsc, read_hsl, read_ppm, read_split, write_hsc, write_hsl, write_split};
use crate::metrics::evaluate;
use crate::models::{build_model, Arch, ModelGraph, CLASSIFIER_PREFIX};
use crate::train::{records_to_csv, train, OptimizerConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Assertion(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Assertion(m) => m,
        }
    }
}

macro_rules! data_err {
    ($($t:tt)*) => { CliError::Data(format!($($t)*)) };
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lwnet", version, about = "Lightweight 3-D CNNs for hyperspectral image classification")]
pub struct Cli {
    /// Optional TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled scene (HSC + HSL files).
    Synth(SynthArgs),
    /// Train a model from scratch on a scene.
    Train(TrainArgs),
    /// Transfer a checkpoint onto a new scene and fine-tune it.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on a stored split.
    Eval(EvalArgs),
    /// Print a per-layer parameter / MAC table for an architecture.
    Inspect(InspectArgs),
    /// Inflate an RGB image (PPM P6) into a 3l-band cube.
    Inflate(InflateArgs),
    /// Dump one sample cube for debugging.
    Extract(ExtractArgs),
}

/// Optimizer and sampling knobs accepted by train and finetune; unset
/// flags fall back to the config file, then to the built-in defaults.
#[derive(Debug, Args, Default, Clone)]
pub struct HyperArgs {
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epoch (1-based) at which the learning rate is multiplied by the
    /// drop factor.
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    #[arg(long)]
    pub lr_drop_factor: Option<f64>,
    /// Spatial window size S (odd).
    #[arg(long)]
    pub space_size: Option<usize>,
    /// Labeled pixels drawn per class for training.
    #[arg(long)]
    pub train_per_class: Option<usize>,
    /// Labeled pixels drawn per class for validation.
    #[arg(long)]
    pub val_per_class: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub arch: Option<String>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: Option<f64>,
    pub space_size: Option<usize>,
    pub train_per_class: Option<usize>,
    pub val_per_class: Option<usize>,
    pub seed: Option<u64>,
}

/// Fully resolved run settings: defaults, then config file, then flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub optimizer: OptimizerConfig,
    pub space_size: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
}

pub fn resolve(
    file: &FileConfig,
    flags: &HyperArgs,
    seed_flag: Option<u64>,
) -> Result<Resolved, CliError> {
    let defaults = OptimizerConfig::default();
    let optimizer = OptimizerConfig {
        learning_rate: flags.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        momentum: flags.momentum.or(file.momentum).unwrap_or(defaults.momentum),
        weight_decay: flags.weight_decay.or(file.weight_decay).unwrap_or(defaults.weight_decay),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        epochs: flags.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        lr_drop_epoch: flags.lr_drop_epoch.or(file.lr_drop_epoch).unwrap_or(defaults.lr_drop_epoch),
        lr_drop_factor: flags.lr_drop_factor.or(file.lr_drop_factor).unwrap_or(defaults.lr_drop_factor),
        seed: seed_flag.or(file.seed).unwrap_or(defaults.seed),
    };
    let space_size = flags.space_size.or(file.space_size).unwrap_or(27);
    if space_size % 2 == 0 {
        return Err(CliError::Usage(format!("--space-size must be odd, got {space_size}")));
    }
    Ok(Resolved {
        optimizer,
        space_size,
        train_per_class: flags.train_per_class.or(file.train_per_class).unwrap_or(25),
        val_per_class: flags.val_per_class.or(file.val_per_class).unwrap_or(10),
    })
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub bands: usize,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives scene.hsc and labels.hsl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene cube (*.hsc).
    #[arg(long)]
    pub scene: PathBuf,
    /// Label raster (*.hsl).
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory with train.txt / val.txt / test.txt; omitted = sample
    /// fresh splits and write them under --out.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, default_value = "lwnet20")]
    pub arch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Source checkpoint (*.lwck).
    #[arg(long)]
    pub from: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory with train.txt (for normalization) and the split under
    /// evaluation.
    #[arg(long)]
    pub splits: PathBuf,
    /// Which split to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    pub on: String,
    #[arg(long)]
    pub space_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Architecture name; or use --checkpoint.
    pub arch: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Accounting mode: full or paper.
    #[arg(long, default_value = "full")]
    pub mode: String,
    /// Band count for the MAC column; omit for a parameter-only table.
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub space_size: Option<usize>,
    /// Fail with exit code 3 unless total parameters equal this value.
    #[arg(long)]
    pub expect_total: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InflateArgs {
    /// RGB input image (binary PPM, P6).
    #[arg(long)]
    pub image: PathBuf,
    /// Repetition count l; output has 3l bands.
    #[arg(long, default_value_t = 12)]
    pub inflate_l: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub row: usize,
    #[arg(long)]
    pub col: usize,
    #[arg(long, default_value_t = 27)]
    pub space_size: usize,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn load_scene(scene: &Path, labels: &Path) -> Result<HsiScene, CliError> {
    let mut s = read_hsc(scene).map_err(data)?;
    read_hsl(labels, &mut s).map_err(data)?;
    Ok(s)
}

fn ensure_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| data_err!("cannot create {}: {e}", out.display()))
}

fn parse_arch(name: &str) -> Result<Arch, CliError> {
    name.parse().map_err(|_| {
        CliError::Usage(format!(
            "unknown architecture {name:?}; known: {}",
            Arch::ALL.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
        ))
    })
}

fn read_splits_dir(dir: &Path) -> Result<(SplitList, SplitList, SplitList), CliError> {
    let read = |name: &str| read_split(&dir.join(name)).map_err(data);
    Ok((read("train.txt")?, read("val.txt")?, read("test.txt")?))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    ensure_out(&args.out)?;
    let scene = synth_scene(args.classes, args.bands, args.height, args.width, args.noise, args.seed)
        .map_err(data)?;
    write_hsc(&args.out.join("scene.hsc"), &scene).map_err(data)?;
    write_hsl(&args.out.join("labels.hsl"), &scene).map_err(data)?;
    println!(
        "wrote {} ({}x{}, {} bands, {} classes)",
        args.out.join("scene.hsc").display(),
        scene.height,
        scene.width,
        scene.bands,
        args.classes
    );
    println!("nearest-centroid separability: OA {:.4}", nearest_centroid_oa(&scene));
    Ok(())
}

/// Everything train and finetune share: scene, normalized splits, and
/// resolved settings.
struct Prepared {
    scene: HsiScene,
    train_split: SplitList,
    val_split: SplitList,
    test_split: SplitList,
    resolved: Resolved,
}

fn prepare(args: &TrainArgs, file: &FileConfig) -> Result<Prepared, CliError> {
    ensure_out(&args.out)?;
    let resolved = resolve(file, &args.hyper, args.seed)?;
    let scene = load_scene(&args.scene, &args.labels)?;
    let (train_split, val_split, test_split) = match &args.splits {
        Some(dir) => read_splits_dir(dir)?,
        None => {
            let spec = SplitSpec {
                train_per_class: resolved.train_per_class,
                val_per_class: resolved.val_per_class,
                test_rule: TestRule::Remainder,
                seed: resolved.optimizer.seed,
            };
            let (tr, va, te) = make_splits(&scene, &spec).map_err(data)?;
            write_split(&args.out.join("train.txt"), "train", &tr).map_err(data)?;
            write_split(&args.out.join("val.txt"), "val", &va).map_err(data)?;
            write_split(&args.out.join("test.txt"), "test", &te).map_err(data)?;
            (tr, va, te)
        }
    };
    let stats = NormStats::from_training_pixels(&scene, &train_split).map_err(data)?;
    let scene = normalize_scene(&scene, &stats);
    Ok(Prepared { scene, train_split, val_split, test_split, resolved })
}

fn run_training(
    model: &mut ModelGraph<f32>,
    prep: &Prepared,
    out: &Path,
) -> Result<(), CliError> {
    let s = prep.resolved.space_size;
    let train_set = build_set::<f32>(&prep.scene, &prep.train_split, s).map_err(data)?;
    let val_set = build_set::<f32>(&prep.scene, &prep.val_split, s).map_err(data)?;
    let test_set = build_set::<f32>(&prep.scene, &prep.test_split, s).map_err(data)?;

    let records = train(model, &train_set, &val_set, &prep.resolved.optimizer).map_err(data)?;
    std::fs::write(out.join("records.csv"), records_to_csv(&records)).map_err(data)?;
    if let Some(last) = records.last() {
        println!(
            "epoch {}: train loss {:.4}, val loss {:.4}, val OA {:.4}",
            last.epoch, last.train_loss, last.val_loss, last.val_oa
        );
    }

    save_checkpoint(model, &out.join("model.lwck"), prep.resolved.optimizer.seed, "")
        .map_err(data)?;

    let report = evaluate(model, &test_set, prep.resolved.optimizer.batch_size).map_err(data)?;
    std::fs::write(out.join("metrics.csv"), report.to_csv()).map_err(data)?;
    print!("{}", report.render());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let prep = prepare(args, file)?;
    let arch = parse_arch(args.arch.as_deref().or(file.arch.as_deref()).unwrap_or("lwnet20"))?;
    let mut model = build_model::<f32>(arch, prep.scene.num_classes(), prep.resolved.optimizer.seed)
        .map_err(data)?;
    run_training(&mut model, &prep, &args.out)
}

pub fn cmd_finetune(args: &FinetuneArgs, file: &FileConfig) -> Result<(), CliError> {
    let prep = prepare(&args.train, file)?;
    let ckpt = Checkpoint::load(&args.from).map_err(data)?;
    let arch_name =
        args.train.arch.as_deref().or(file.arch.as_deref()).unwrap_or(&ckpt.meta.arch);
    if arch_name != ckpt.meta.arch {
        return Err(data_err!(
            "requested architecture {arch_name} but checkpoint holds {}",
            ckpt.meta.arch
        ));
    }
    let arch = parse_arch(arch_name)?;
    let mut model = build_model::<f32>(arch, prep.scene.num_classes(), prep.resolved.optimizer.seed)
        .map_err(data)?;
    let report = crate::checkpoint::transfer_into(&mut model, &ckpt, Some(CLASSIFIER_PREFIX))
        .map_err(data)?;
    print_transfer(&report);
    run_training(&mut model, &prep, &args.train.out)
}

fn print_transfer(report: &TransferReport) {
    println!(
        "transferred {} tensors, reinitialized {}:",
        report.transferred.len(),
        report.reinitialized.len()
    );
    for name in &report.reinitialized {
        println!("  reinitialized {name}");
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    ensure_out(&args.out)?;
    let (mut model, meta) = load_checkpoint(&args.checkpoint).map_err(data)?;
    let scene = load_scene(&args.scene, &args.labels)?;
    let (train_split, val_split, test_split) = read_splits_dir(&args.splits)?;
    let split = match args.on.as_str() {
        "train" => &train_split,
        "val" => &val_split,
        "test" => &test_split,
        other => return Err(CliError::Usage(format!("unknown split {other:?}"))),
    };
    if split.is_empty() {
        return Err(data_err!("split {:?} is empty", args.on));
    }
    let stats = NormStats::from_training_pixels(&scene, &train_split).map_err(data)?;
    let scene = normalize_scene(&scene, &stats);
    let size = args.space_size.unwrap_or(27);
    let set = build_set::<f32>(&scene, split, size).map_err(data)?;
    let report = evaluate(&mut model, &set, 20).map_err(data)?;
    std::fs::write(args.out.join("metrics.csv"), report.to_csv()).map_err(data)?;
    println!("checkpoint {} ({}, {} classes)", args.checkpoint.display(), meta.arch, meta.classes);
    print!("{}", report.render());
    Ok(())
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<(), CliError> {
    let mode = match args.mode.as_str() {
        "full" => CountMode::Full,
        "paper" => CountMode::Paper,
        other => return Err(CliError::Usage(format!("unknown mode {other:?}"))),
    };
    let (arch, classes) = match (&args.arch, &args.checkpoint) {
        (Some(name), None) => (parse_arch(name)?, 16),
        (None, Some(path)) => {
            let ckpt = Checkpoint::load(path).map_err(data)?;
            (parse_arch(&ckpt.meta.arch)?, ckpt.meta.classes)
        }
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of an architecture name or --checkpoint".into(),
            ))
        }
    };
    let model = build_model::<f32>(arch, classes, 0).map_err(data)?;
    let report: CostReport = match args.bands {
        Some(bands) => {
            let s = args.space_size.unwrap_or(27);
            count_macs(&model, [1, 1, bands, s, s], mode).map_err(data)?
        }
        None => count_params(&model, mode),
    };
    print!("{}", report.render());
    if let Some(expected) = args.expect_total {
        if report.total_params != expected {
            return Err(CliError::Assertion(format!(
                "expected {expected} total parameters, counted {}",
                report.total_params
            )));
        }
    }
    Ok(())
}

pub fn cmd_inflate(args: &InflateArgs) -> Result<(), CliError> {
    if args.inflate_l == 0 {
        return Err(CliError::Usage("--inflate-l must be at least 1".into()));
    }
    let (h, w, rgb) = read_ppm(&args.image).map_err(data)?;
    let scene = crate::data::inflate_rgb(h, w, &rgb, args.inflate_l);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_out(parent)?;
        }
    }
    write_hsc(&args.out, &scene).map_err(data)?;
    println!("wrote {} ({}x{}, {} bands)", args.out.display(), h, w, scene.bands);
    Ok(())
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<(), CliError> {
    let scene = load_scene(&args.scene, &args.labels)?;
    let cube = extract_cube(&scene, args.row, args.col, args.space_size).map_err(data)?;
    let mut csv = String::from("band,dr,dc,value\n");
    let s = args.space_size;
    for band in 0..cube.bands {
        for dr in 0..s {
            for dc in 0..s {
                writeln!(csv, "{band},{dr},{dc},{}", cube.data[(band * s + dr) * s + dc])
                    .expect("string write");
            }
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_out(parent)?;
        }
    }
    std::fs::write(&args.out, csv).map_err(data)?;
    println!("class {} cube ({} x {s} x {s}) -> {}", cube.label, cube.bands, args.out.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let file = load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a, &file),
        Command::Finetune(a) => cmd_finetune(a, &file),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Inflate(a) => cmd_inflate(a),
        Command::Extract(a) => cmd_extract(a),
    }
}

/// Parse and execute; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_precedence_defaults_file_flags() {
        let file = FileConfig { lr: Some(0.5), epochs: Some(5), ..FileConfig::default() };
        let flags = HyperArgs { lr: Some(0.25), ..HyperArgs::default() };
        let r = resolve(&file, &flags, None).unwrap();
        assert_eq!(r.optimizer.learning_rate, 0.25); // flag beats file
        assert_eq!(r.optimizer.epochs, 5); // file beats default
        assert_eq!(r.optimizer.momentum, 0.9); // default
        assert_eq!(r.optimizer.batch_size, 20);
    }

    #[test]
    fn even_space_size_is_usage_error() {
        let flags = HyperArgs { space_size: Some(8), ..HyperArgs::default() };
        let err = resolve(&FileConfig::default(), &flags, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from([
            "lwnet", "train", "--scene", "s.hsc", "--labels", "l.hsl", "--out", "run", "--lr",
            "0.02", "--space-size", "9",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.hyper.lr, Some(0.02));
                assert_eq!(a.hyper.space_size, Some(9));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["lwnet", "bogus"]).is_err());
    }

    #[test]
    fn inspect_asserts_totals() {
        let args = InspectArgs {
            arch: Some("lwnet20".into()),
            checkpoint: None,
            mode: "paper".into(),
            bands: None,
            space_size: None,
            expect_total: Some(763008),
        };
        cmd_inspect(&args).unwrap();
        let bad = InspectArgs { expect_total: Some(1), ..args };
        assert_eq!(cmd_inspect(&bad).unwrap_err().exit_code(), 3);
    }
}

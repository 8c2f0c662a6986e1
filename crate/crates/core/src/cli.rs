//! The `llie` command line: preprocess, stats, params, train, enhance, eval.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::image::{read_png, to_f32, to_u8, write_png};
use crate::metrics::{evaluate_folder_with, SsimMode};
use crate::preproc::{assemble_nine_channel, Preprocessor, PreprocessorKind, ResidualSource};
use crate::stats::{aggregate, folder_image_stats, list_pngs, DATASET_CSV_HEADER};
use crate::train::{train, PairedDataset, TrainConfig};
use crate::unet::{checkpoint_bytes, load_checkpoint, DType, DwUNet, Metadata, ModelConfig};

#[derive(Debug, Parser)]
#[command(name = "llie", version, about = "Low-light image enhancement toolkit")]
pub struct Cli {
    /// Seed for every random choice (training shuffle, crops, initialization).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded, fixed-order execution (the only mode this build has).
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply one preprocessor to every PNG in a folder.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// gamma:<g>, he, he:channel, clahe:<clip>:<tiles> or ext:<ckpt>
        #[arg(long)]
        preproc: PreprocessorKind,
    },
    /// Brightness statistics of a folder, raw and after each preprocessor.
    Stats {
        /// Image folder (same as `--in`).
        #[arg(value_name = "FOLDER", required_unless_present = "input")]
        folder: Option<PathBuf>,
        #[arg(long = "in", conflicts_with = "folder")]
        input: Option<PathBuf>,
        #[arg(long)]
        preproc: Vec<PreprocessorKind>,
        /// Also write per-image mean and std to this CSV.
        #[arg(long)]
        per_image: Option<PathBuf>,
        /// Write the summary CSV here instead of stdout.
        #[arg(long = "out", visible_alias = "csv")]
        output: Option<PathBuf>,
    },
    /// Per-layer parameter table of a model configuration.
    Params {
        /// Preset (tiny, mid, large) or a key=value config file.
        #[arg(long)]
        config: String,
        /// Also print the size of an fp16 checkpoint.
        #[arg(long)]
        fp16_size: bool,
    },
    /// Train from a key=value config file.
    Train(TrainArgs),
    /// Enhance a PNG file or every PNG in a folder with a checkpoint.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Must match the checkpoint when given.
        #[arg(long)]
        preproc1: Option<PreprocessorKind>,
        /// Must match the checkpoint when given.
        #[arg(long)]
        preproc2: Option<PreprocessorKind>,
    },
    /// PSNR and SSIM of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = SsimChoice::Luma)]
        ssim: SsimChoice,
        /// Write the CSV report here instead of stdout.
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `data` from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Precompute the preprocessed inputs once (stored under out_dir).
    #[arg(long)]
    pub cache_preproc: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SsimChoice {
    Luma,
    Channel,
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

fn cmd_preprocess(input: &Path, output: &Path, kind: &PreprocessorKind) -> Result<String> {
    require_exists(input, "input folder")?;
    let pre = Preprocessor::new(kind)?;
    let files = list_pngs(input)?;
    create_dir(output)?;
    for path in &files {
        let img = to_f32(&read_png(path)?);
        let out = pre.apply(&img).map_err(|e| e.at(path))?;
        write_png(output.join(file_name(path)), &to_u8(&out))?;
    }
    Ok(format!("{} images written to {}\n", files.len(), output.display()))
}

fn cmd_stats(
    input: &Path,
    kinds: &[PreprocessorKind],
    per_image: Option<&Path>,
    output: Option<&Path>,
) -> Result<String> {
    require_exists(input, "input folder")?;
    let mut summary = format!("{DATASET_CSV_HEADER}\n");
    let mut detail = String::from("variant,filename,mu,sigma\n");
    let mut variants: Vec<(String, Option<Preprocessor>)> = vec![("raw".into(), None)];
    for k in kinds {
        variants.push((k.to_string(), Some(Preprocessor::new(k)?)));
    }
    for (name, pre) in &variants {
        let rows = folder_image_stats(input, pre.as_ref())?;
        let stats = aggregate(&rows.iter().map(|(_, s)| *s).collect::<Vec<_>>())?;
        let _ = writeln!(summary, "{}", stats.csv_row(name));
        for (file, s) in &rows {
            let _ = writeln!(detail, "{name},{file},{:.4},{:.4}", s.mu, s.sigma);
        }
    }
    if let Some(p) = per_image {
        write_text(p, &detail)?;
    }
    match output {
        Some(p) => {
            write_text(p, &summary)?;
            Ok(String::new())
        }
        None => Ok(summary),
    }
}

fn model_config_arg(arg: &str) -> Result<ModelConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return ModelConfig::parse_text(&text).map_err(|e| e.at(path));
    }
    ModelConfig::from_preset(arg)
}

/// Metadata written with trained checkpoints, for size projections.
fn typical_metadata() -> Metadata {
    TrainConfig::default().checkpoint_metadata()
}

fn cmd_params(config: &str, fp16_size: bool, seed: u64) -> Result<String> {
    let cfg = model_config_arg(config)?;
    let model = DwUNet::build(cfg, seed)?;
    let mut out = format!("{}\n", model.count_params());
    if fp16_size {
        let bytes = checkpoint_bytes(&model, DType::F16, &typical_metadata())?.len();
        let _ = writeln!(out, "fp16 checkpoint: {bytes} bytes");
    }
    Ok(out)
}

fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> Result<String> {
    require_exists(&args.config, "config file")?;
    let mut cfg = TrainConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if args.out_dir.is_some() {
        cfg.out_dir = args.out_dir.clone();
    }
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    cfg.cache_preproc |= args.cache_preproc;
    let data_root = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("no dataset: set `data` in the config or pass --data".into()))?;
    require_exists(&data_root, "dataset folder")?;
    if cfg.out_dir.is_none() {
        return Err(Error::Config("no output folder: set `out_dir` or pass --out-dir".into()));
    }
    let dataset = PairedDataset::load(&data_root)?;
    let model = DwUNet::build(cfg.model, cfg.seed)?;
    let outcome = train(&cfg, &dataset, model, None)?;
    let mut out = String::new();
    if let Some(last) = outcome.log.last() {
        let _ = writeln!(out, "final epoch {}: loss {:.6}", last.epoch, last.loss);
    }
    for p in &outcome.checkpoints {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}

/// Preprocessor pair recorded in a checkpoint, checked against any overrides.
fn resolve_preprocessors(
    meta: &Metadata,
    overrides: [Option<&PreprocessorKind>; 2],
) -> Result<[PreprocessorKind; 2]> {
    let keys = ["preproc1", "preproc2"];
    let stored: Vec<Option<PreprocessorKind>> = keys
        .iter()
        .map(|k| meta.get(*k).map(|s| s.parse()).transpose())
        .collect::<Result<_>>()?;
    let mut resolved = Vec::with_capacity(2);
    for i in 0..2 {
        resolved.push(match (&stored[i], overrides[i]) {
            (Some(s), Some(o)) if s != o => {
                return Err(Error::Config(format!(
                    "preprocessor mismatch: checkpoint has {}={} {}={}, requested {}={} {}={}",
                    keys[0],
                    show(stored[0].as_ref()),
                    keys[1],
                    show(stored[1].as_ref()),
                    keys[0],
                    show(overrides[0]),
                    keys[1],
                    show(overrides[1]),
                )))
            }
            (Some(s), _) => s.clone(),
            (None, Some(o)) => o.clone(),
            (None, None) => {
                return Err(Error::Config(format!(
                    "checkpoint does not record {}; pass --{}",
                    keys[i], keys[i]
                )))
            }
        });
    }
    let [a, b]: [PreprocessorKind; 2] = resolved.try_into().expect("two preprocessors");
    Ok([a, b])
}

fn show(kind: Option<&PreprocessorKind>) -> String {
    kind.map_or_else(|| "(unset)".into(), |k| k.to_string())
}

fn cmd_enhance(
    ckpt: &Path,
    input: &Path,
    output: &Path,
    overrides: [Option<&PreprocessorKind>; 2],
) -> Result<String> {
    require_exists(ckpt, "checkpoint")?;
    require_exists(input, "input")?;
    let loaded = load_checkpoint(ckpt)?;
    let [k1, k2] = resolve_preprocessors(&loaded.metadata, overrides)?;
    let residual: ResidualSource = match loaded.metadata.get("residual") {
        Some(r) => r.parse()?,
        None => ResidualSource::First,
    };
    let (first, second) = (Preprocessor::new(&k1)?, Preprocessor::new(&k2)?);
    let model = loaded.model;
    let run = |src: &Path, dst: &Path| -> Result<()> {
        let low = to_f32(&read_png(src)?);
        let mut nine = assemble_nine_channel(&low, &first, &second).map_err(|e| e.at(src))?;
        nine.residual_source = residual;
        let out = model.enhance(&nine).map_err(|e| e.at(src))?;
        write_png(dst, &to_u8(&out))
    };
    if input.is_file() {
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        run(input, output)?;
        return Ok(format!("wrote {}\n", output.display()));
    }
    let files = list_pngs(input)?;
    create_dir(output)?;
    for path in &files {
        run(path, &output.join(file_name(path)))?;
    }
    Ok(format!("{} images written to {}\n", files.len(), output.display()))
}

fn cmd_eval(pred: &Path, gt: &Path, ssim: SsimChoice, output: Option<&Path>) -> Result<String> {
    require_exists(pred, "prediction folder")?;
    require_exists(gt, "ground-truth folder")?;
    let mode = match ssim {
        SsimChoice::Luma => SsimMode::Luma,
        SsimChoice::Channel => SsimMode::ChannelMean,
    };
    let csv = evaluate_folder_with(pred, gt, mode, &[])?.to_csv();
    match output {
        Some(p) => {
            write_text(p, &csv)?;
            Ok(String::new())
        }
        None => Ok(csv),
    }
}

/// Runs a parsed command and returns what it prints on success.
pub fn execute(cli: &Cli) -> Result<String> {
    let seed = cli.seed;
    match &cli.command {
        Command::Preprocess { input, output, preproc } => cmd_preprocess(input, output, preproc),
        Command::Stats {
            folder,
            input,
            preproc,
            per_image,
            output,
        } => {
            let input = folder.as_ref().or(input.as_ref()).expect("clap requires a folder");
            cmd_stats(input, preproc, per_image.as_deref(), output.as_deref())
        }
        Command::Params { config, fp16_size } => cmd_params(config, *fp16_size, seed.unwrap_or(0)),
        Command::Train(args) => cmd_train(args, seed),
        Command::Enhance {
            ckpt,
            input,
            output,
            preproc1,
            preproc2,
        } => cmd_enhance(ckpt, input, output, [preproc1.as_ref(), preproc2.as_ref()]),
        Command::Eval { pred, gt, ssim, output } => cmd_eval(pred, gt, *ssim, output.as_deref()),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

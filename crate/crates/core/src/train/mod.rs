//! Training: paired data, augmentation, L1 (+ optional perceptual) loss,
//! AdamW with warmup + cosine schedule, logging and checkpoints.
//!
//! Configuration is plain text, one `key = value` per line, `#` starts a
//! comment. Keys:
//!
//! | key                 | default      |
//! |---------------------|--------------|
//! | `data`              | dataset root with `low/` and `gt/` (needed by the CLI) |
//! | `out_dir`           | unset: nothing is written |
//! | `model`             | `tiny`; later `f1`, `n_blocks`, ... lines override it |
//! | `epochs`            | 500          |
//! | `lr`                | 2e-4         |
//! | `weight_decay`      | 1e-4         |
//! | `warmup_epochs`     | 10           |
//! | `crop`              | 384          |
//! | `batch_size`        | 8            |
//! | `seed`              | 0            |
//! | `lambda_perceptual` | 0, or 1 when a perceptual loss is supplied |
//! | `preproc1`          | `gamma:0.5`  |
//! | `preproc2`          | `clahe:2:8`  |
//! | `residual`          | `first`      |
//! | `checkpoint_every`  | 50           |
//! | `cache_preproc`     | false        |
//! | `deterministic`     | true         |
//!
//! Relative `data` and `out_dir` paths are resolved against the config file.

mod data;
mod optim;
mod synthetic;

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use data::{augment_pair, Augment, Pair, PairedDataset};
pub use optim::{lr_at, AdamW, AdamWConfig};
pub use synthetic::synthetic_pairs;

use crate::error::{Error, Result};
use crate::image::{to_f32, to_u8, Image, ImageF32};
use crate::metrics::psnr;
use crate::preproc::{
    assemble_nine_channel, images_to_tensor, NineChannelInput, Preprocessor, PreprocessorKind, ResidualSource,
};
use crate::tensor::{Graph, Tensor, Var};
use crate::unet::{read_checkpoint, save_checkpoint, write_checkpoint, DType, DwUNet, Metadata, Mode, ModelConfig, Param};

/// Extra differentiable loss term, e.g. a learned perceptual distance.
pub trait PerceptualLoss {
    fn name(&self) -> &str;
    /// Scalar loss on `[N, 3, H, W]` prediction and target.
    fn loss(&self, g: &mut Graph, pred: Var, gt: Var) -> Result<Var>;
}

/// `l1(pred, gt) + lambda * plugin(pred, gt)`.
pub fn total_loss(
    g: &mut Graph,
    pred: Var,
    gt: Var,
    lambda: f32,
    plugin: Option<&dyn PerceptualLoss>,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda_perceptual must be >= 0, got {lambda}")));
    }
    let l1 = g.l1_loss(pred, gt)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    let plugin = plugin.ok_or_else(|| {
        Error::Config(format!("lambda_perceptual = {lambda} but no perceptual loss is available"))
    })?;
    let p = plugin.loss(g, pred, gt)?;
    let p = g.mul_scalar(p, lambda)?;
    g.add(l1, p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub crop: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` means 0 without a perceptual loss and 1 with one.
    pub lambda_perceptual: Option<f32>,
    pub preproc1: PreprocessorKind,
    pub preproc2: PreprocessorKind,
    pub residual: ResidualSource,
    pub checkpoint_every: usize,
    pub cache_preproc: bool,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: None,
            out_dir: None,
            model: ModelConfig::tiny(),
            epochs: 500,
            lr_max: 2e-4,
            weight_decay: 1e-4,
            warmup_epochs: 10,
            crop: 384,
            batch_size: 8,
            seed: 0,
            lambda_perceptual: None,
            preproc1: PreprocessorKind::default_first(),
            preproc2: PreprocessorKind::default_second(),
            residual: ResidualSource::First,
            checkpoint_every: 50,
            cache_preproc: false,
            deterministic: true,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(value.into()),
            "out_dir" => self.out_dir = Some(value.into()),
            "model" => self.model = ModelConfig::from_preset(value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" | "lr_max" => self.lr_max = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, value)?,
            "crop" => self.crop = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "lambda_perceptual" => self.lambda_perceptual = Some(parse_value(key, value)?),
            "preproc1" => self.preproc1 = value.parse()?,
            "preproc2" => self.preproc2 = value.parse()?,
            "residual" => self.residual = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "cache_preproc" => self.cache_preproc = parse_bool(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            _ => {
                if !self.model.set(key, value)? {
                    return Err(Error::Config(format!("unknown training key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| e.at(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.crop == 0 || self.batch_size == 0 {
            return bad(format!(
                "crop and batch_size must be positive, got {} and {}",
                self.crop, self.batch_size
            ));
        }
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad(format!(
                "lr and weight_decay must be finite and >= 0, got {} and {}",
                self.lr_max, self.weight_decay
            ));
        }
        if let Some(l) = self.lambda_perceptual {
            if !(l >= 0.0) {
                return bad(format!("lambda_perceptual must be >= 0, got {l}"));
            }
        }
        self.model.validate()?;
        self.preproc1.validate()?;
        self.preproc2.validate()
    }

    pub fn lambda(&self, has_plugin: bool) -> f32 {
        self.lambda_perceptual.unwrap_or(if has_plugin { 1.0 } else { 0.0 })
    }

    pub fn lr(&self, epoch: usize) -> Result<f64> {
        lr_at(epoch, self.epochs, self.warmup_epochs, self.lr_max)
    }

    /// Metadata stored with every checkpoint so inference can rebuild the input.
    pub fn checkpoint_metadata(&self) -> Metadata {
        let mut meta = Metadata::new();
        meta.insert("preproc1".into(), self.preproc1.to_string());
        meta.insert("preproc2".into(), self.preproc2.to_string());
        meta.insert("residual".into(), self.residual.to_string());
        meta.insert("seed".into(), self.seed.to_string());
        meta
    }
}

/// Learning rate from the config's schedule.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    cfg.lr(epoch)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,loss,lr,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{:.8},{:.6e},{:.3}", self.epoch, self.loss, self.lr, self.seconds)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DwUNet,
    pub log: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Where the nine-channel inputs come from during training.
enum Inputs<'a> {
    OnTheFly {
        first: &'a Preprocessor,
        second: &'a Preprocessor,
    },
    Memory(Vec<NineChannelInput>),
    Disk(Vec<PathBuf>),
}

const CACHE_SLOTS: [&str; 3] = ["first", "original", "second"];

fn cache_meta(cfg: &TrainConfig, name: &str) -> Metadata {
    let mut meta = Metadata::new();
    meta.insert("source".into(), name.into());
    meta.insert("preproc1".into(), cfg.preproc1.to_string());
    meta.insert("preproc2".into(), cfg.preproc2.to_string());
    meta
}

fn write_cached(path: &Path, input: &NineChannelInput, meta: &Metadata) -> Result<()> {
    let tensors = input
        .planes
        .iter()
        .zip(CACHE_SLOTS)
        .map(|(img, name)| {
            let (w, h, c) = img.dims();
            Ok(Param {
                name: name.into(),
                tensor: Tensor::from_vec(vec![h, w, c], img.data().to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = write_checkpoint(&tensors, meta, DType::F32)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cached input; `Ok(None)` when the file is absent or was made with other preprocessors.
fn read_cached(path: &Path, meta: &Metadata) -> Result<Option<NineChannelInput>> {
    let Ok(bytes) = std::fs::read(path) else {
        return Ok(None);
    };
    let ckpt = read_checkpoint(&bytes).map_err(|e| e.at(path))?;
    if &ckpt.metadata != meta || ckpt.tensors.len() != 3 {
        return Ok(None);
    }
    let mut planes = Vec::with_capacity(3);
    for (p, name) in ckpt.tensors.into_iter().zip(CACHE_SLOTS) {
        let dims = p.tensor.dims().to_vec();
        if p.name != name || dims.len() != 3 {
            return Ok(None);
        }
        planes.push(Image::new(dims[1], dims[0], dims[2], p.tensor.into_data())?);
    }
    let planes: [ImageF32; 3] = planes.try_into().expect("three slots");
    NineChannelInput::new(planes).map(Some)
}

impl Inputs<'_> {
    fn get(&self, dataset: &PairedDataset, i: usize, residual: ResidualSource) -> Result<NineChannelInput> {
        let mut input = match self {
            Inputs::OnTheFly { first, second } => {
                let pair = dataset.get(i);
                assemble_nine_channel(&to_f32(&pair.low), first, second).map_err(|e| Error::Data(format!("{}: {e}", pair.name)))?
            }
            Inputs::Memory(items) => items[i].clone(),
            Inputs::Disk(paths) => {
                let bytes = std::fs::read(&paths[i]).map_err(|e| Error::io(&paths[i], e))?;
                let ckpt = read_checkpoint(&bytes).map_err(|e| e.at(&paths[i]))?;
                let planes = ckpt
                    .tensors
                    .into_iter()
                    .map(|p| {
                        let d = p.tensor.dims().to_vec();
                        Image::new(d[1], d[0], d[2], p.tensor.into_data())
                    })
                    .collect::<Result<Vec<_>>>()?;
                let planes: [ImageF32; 3] = planes
                    .try_into()
                    .map_err(|_| Error::Checkpoint(format!("{}: expected 3 slots", paths[i].display())))?;
                NineChannelInput::new(planes)?
            }
        };
        input.residual_source = residual;
        Ok(input)
    }
}

fn prepare_inputs<'a>(
    cfg: &TrainConfig,
    dataset: &PairedDataset,
    first: &'a Preprocessor,
    second: &'a Preprocessor,
) -> Result<Inputs<'a>> {
    if !cfg.cache_preproc {
        return Ok(Inputs::OnTheFly { first, second });
    }
    let assemble = |pair: &Pair| {
        assemble_nine_channel(&to_f32(&pair.low), first, second).map_err(|e| Error::Data(format!("{}: {e}", pair.name)))
    };
    let Some(out_dir) = &cfg.out_dir else {
        let items = dataset.pairs().iter().map(assemble).collect::<Result<Vec<_>>>()?;
        return Ok(Inputs::Memory(items));
    };
    let dir = out_dir.join("preproc_cache");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut paths = Vec::with_capacity(dataset.len());
    for pair in dataset.pairs() {
        let path = dir.join(format!("{}.dwun", pair.name));
        let meta = cache_meta(cfg, &pair.name);
        if read_cached(&path, &meta)?.is_none() {
            write_cached(&path, &assemble(pair)?, &meta)?;
        }
        paths.push(path);
    }
    Ok(Inputs::Disk(paths))
}

fn stack(tensors: Vec<Tensor>) -> Result<Tensor> {
    let mut dims = tensors[0].dims().to_vec();
    dims[0] = tensors.len();
    let mut data = Vec::with_capacity(dims.iter().product());
    for t in tensors {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(dims, data)
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(
    model: &mut DwUNet,
    opt: &mut AdamW,
    input: Tensor,
    target: Tensor,
    cfg: &TrainConfig,
    lambda: f32,
    plugin: Option<&dyn PerceptualLoss>,
    lr: f64,
) -> Result<f32> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let x = g.constant(input);
    let pred = model.forward_with(&mut g, &vars, x, cfg.residual, Mode::Train)?;
    let gt = g.constant(target);
    let loss = total_loss(&mut g, pred, gt, lambda, plugin)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    let grads: Vec<Vec<f32>> = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.tensor.numel()]))
        .collect();
    drop(g);
    let mut slices: Vec<&mut [f32]> = model.params_mut().iter_mut().map(|p| p.tensor.data_mut()).collect();
    let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
    opt.step(&mut slices, &grad_refs, lr)?;
    Ok(value)
}

fn append_line(path: &Path, line: &str, truncate: bool) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!truncate)
        .truncate(truncate)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains `model` in place of a fresh copy and returns it with the epoch log.
///
/// With `out_dir` set, writes `train_log.csv`, `checkpoints/epoch_NNNN.dwun`
/// every `checkpoint_every` epochs and `final.dwun` at the end (also for 0 epochs).
pub fn train(
    cfg: &TrainConfig,
    dataset: &PairedDataset,
    mut model: DwUNet,
    plugin: Option<&dyn PerceptualLoss>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mc = model.config();
    if mc.in_channels != 9 || mc.out_channels != 3 {
        return Err(Error::Config(format!(
            "training needs a 9 -> 3 channel model, got {} -> {}",
            mc.in_channels, mc.out_channels
        )));
    }
    let lambda = cfg.lambda(plugin.is_some());
    if lambda > 0.0 && plugin.is_none() {
        return Err(Error::Config(format!(
            "lambda_perceptual = {lambda} but no perceptual loss is available"
        )));
    }
    let first = Preprocessor::new(&cfg.preproc1)?;
    let second = Preprocessor::new(&cfg.preproc2)?;

    let mut checkpoints = Vec::new();
    let meta = cfg.checkpoint_metadata();
    let log_path = match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.csv");
            append_line(&p, LOG_HEADER, true)?;
            Some(p)
        }
        None => None,
    };
    let inputs = prepare_inputs(cfg, dataset, &first, &second)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr(epoch)?;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut xs = Vec::with_capacity(batch.len());
            let mut ys = Vec::with_capacity(batch.len());
            for &i in batch {
                let input = inputs.get(dataset, i, cfg.residual)?;
                let gt = to_f32(&dataset.get(i).gt);
                let aug = Augment::sample(input.width(), input.height(), cfg.crop, &mut rng);
                xs.push(input.map_planes(|p| aug.apply(p))?.to_tensor());
                ys.push(images_to_tensor(&[aug.apply(&gt)?]));
            }
            let value = train_step(&mut model, &mut opt, stack(xs)?, stack(ys)?, cfg, lambda, plugin, lr)?;
            if !value.is_finite() {
                let names: Vec<&str> = batch.iter().map(|&i| dataset.get(i).name.as_str()).collect();
                return Err(Error::Numeric(format!(
                    "loss is {value} at epoch {epoch}, batch {b} (samples {batch:?}: {names:?})"
                )));
            }
            loss_sum += value as f64 * batch.len() as f64;
            seen += batch.len();
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / seen as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {:.6} lr {:.3e} ({:.1}s)", entry.loss, lr, entry.seconds);
        if let Some(p) = &log_path {
            append_line(p, &entry.csv_row(), false)?;
        }
        log.push(entry);
        if let Some(dir) = &cfg.out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join("checkpoints").join(format!("epoch_{:04}.dwun", epoch + 1));
                let mut meta = meta.clone();
                meta.insert("epoch".into(), (epoch + 1).to_string());
                save_checkpoint(&model, &path, DType::F32, &meta)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("final.dwun");
        let mut meta = meta.clone();
        meta.insert("epoch".into(), cfg.epochs.to_string());
        save_checkpoint(&model, &path, DType::F32, &meta)?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome {
        model,
        log,
        checkpoints,
    })
}

/// Full-image fit of a model on a dataset: mean absolute error of the clamped
/// float output and mean PSNR of the 8-bit output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub l1: f64,
    pub psnr: f64,
}

pub fn evaluate_fit(
    model: &DwUNet,
    dataset: &PairedDataset,
    first: &Preprocessor,
    second: &Preprocessor,
    residual: ResidualSource,
) -> Result<FitReport> {
    let (mut l1, mut db) = (0.0, 0.0);
    for pair in dataset.pairs() {
        let mut input = assemble_nine_channel(&to_f32(&pair.low), first, second)?;
        input.residual_source = residual;
        let out = model.enhance(&input)?;
        let gt = to_f32(&pair.gt);
        l1 += out
            .data()
            .iter()
            .zip(gt.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / out.data().len() as f64;
        db += psnr(&to_u8(&out), &pair.gt)?;
    }
    let n = dataset.len() as f64;
    Ok(FitReport { l1: l1 / n, psnr: db / n })
}

//! Three-level depthwise-separable U-Net with a global residual.
//!
//! ```text
//! stem 3x3 (in -> f1) + GELU
//! enc1: N blocks @ f1   -> down 3x3/2 -> enc2: N blocks @ 2f1 -> down 3x3/2
//! enc3: N blocks @ 4f1                                          (bottleneck)
//! dec2: up x2, 3x3 (4f1 -> 2f1), concat enc2, 1x1 fuse (4f1 -> 2f1), N blocks
//! dec1: up x2, 3x3 (2f1 -> f1),  concat enc1, 1x1 fuse (2f1 -> f1),  N blocks
//! head 3x3 (f1 -> out), zero-initialized, + residual slot of the input
//! ```
//!
//! A block is an inverted residual: 1x1 expand, GELU, depthwise 3x3,
//! GroupNorm, GELU, 1x1 project, skip add.

mod checkpoint;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_into, read_checkpoint, save_checkpoint, write_checkpoint,
    Checkpoint, DType, LoadedCheckpoint, Metadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use crate::error::{Error, Result};
use crate::image::ImageF32;
use crate::preproc::{images_to_tensor, tensor_to_image, NineChannelInput, ResidualSource};
use crate::tensor::{Conv2dParams, Graph, Tensor, Var};

pub const GROUP_NORM_EPS: f32 = 1e-5;
/// Spatial dims are padded to a multiple of this (two stride-2 stages).
pub const SPATIAL_MULTIPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub f1: usize,
    pub n_blocks: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub gn_groups: usize,
}

impl ModelConfig {
    fn preset(f1: usize, n_blocks: usize) -> Self {
        Self {
            f1,
            n_blocks,
            in_channels: 9,
            out_channels: 3,
            expansion: 4,
            gn_groups: 2,
        }
    }

    pub fn tiny() -> Self {
        Self::preset(22, 2)
    }

    pub fn mid() -> Self {
        Self::preset(32, 3)
    }

    pub fn large() -> Self {
        Self::preset(48, 4)
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "tiny" => Ok(Self::tiny()),
            "mid" => Ok(Self::mid()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (expected tiny, mid or large)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Config(format!("invalid model config {self}: {why}")));
        if self.f1 == 0 || self.n_blocks == 0 || self.expansion == 0 {
            return bad("f1, n_blocks and expansion must be >= 1".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        if self.gn_groups == 0 || self.f1 % self.gn_groups != 0 {
            return bad(format!("f1 must be divisible by gn_groups={}", self.gn_groups));
        }
        if self.out_channels > self.in_channels {
            return bad("residual needs out_channels <= in_channels".into());
        }
        Ok(())
    }

    /// Applies `key=value` overrides (`preset`, `f1`, `n_blocks`, `in_channels`,
    /// `out_channels`, `expansion`, `gn_groups`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = || -> Result<usize> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {value:?}")))
        };
        match key {
            "preset" | "model" => *self = Self::from_preset(value)?,
            "f1" => self.f1 = num()?,
            "n_blocks" => self.n_blocks = num()?,
            "in_channels" => self.in_channels = num()?,
            "out_channels" => self.out_channels = num()?,
            "expansion" => self.expansion = num()?,
            "gn_groups" => self.gn_groups = num()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("f1", self.f1.to_string()),
            ("n_blocks", self.n_blocks.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("expansion", self.expansion.to_string()),
            ("gn_groups", self.gn_groups.to_string()),
        ]
    }

    /// Parses a preset name or a `key=value` text (one per line, `#` comments).
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::tiny();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::Config(format!("line {}: unknown model key {:?}", lineno + 1, k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "f1={} n_blocks={} in={} out={} expansion={} gn_groups={}",
            self.f1, self.n_blocks, self.in_channels, self.out_channels, self.expansion, self.gn_groups
        )
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.contains('=') {
            Self::parse_text(s)
        } else {
            Self::from_preset(s)
        }
    }
}

/// Forward behaviour: inference clamps the output to [0, 1], training does not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug)]
pub struct DwUNet {
    config: ModelConfig,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// One row of the parameter table: a layer and its parameter count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub layer: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamTable {
    pub layers: Vec<LayerParams>,
    pub total: usize,
}

impl fmt::Display for ParamTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.layers.iter().map(|l| l.layer.len()).max().unwrap_or(5).max(5);
        for l in &self.layers {
            writeln!(f, "{:<width$}  {:>9}", l.layer, l.count)?;
        }
        write!(f, "{:<width$}  {:>9}", "total", self.total)
    }
}

type Layout = Vec<(String, Vec<usize>)>;

fn push_conv(out: &mut Layout, name: &str, cin: usize, cout: usize, k: usize, groups: usize) {
    out.push((format!("{name}.weight"), vec![cout, cin / groups, k, k]));
    out.push((format!("{name}.bias"), vec![cout]));
}

fn push_blocks(out: &mut Layout, cfg: &ModelConfig, prefix: &str, c: usize) {
    let e = cfg.expansion * c;
    for b in 0..cfg.n_blocks {
        let p = format!("{prefix}.block{b}");
        push_conv(out, &format!("{p}.expand"), c, e, 1, 1);
        push_conv(out, &format!("{p}.dw"), e, e, 3, e);
        out.push((format!("{p}.norm.gain"), vec![e]));
        out.push((format!("{p}.norm.bias"), vec![e]));
        push_conv(out, &format!("{p}.project"), e, c, 1, 1);
    }
}

/// Shapes of every parameter, in construction order.
fn layout(cfg: &ModelConfig) -> Layout {
    let f1 = cfg.f1;
    let mut out = Vec::new();
    push_conv(&mut out, "stem", cfg.in_channels, f1, 3, 1);
    push_blocks(&mut out, cfg, "enc1", f1);
    push_conv(&mut out, "down1", f1, 2 * f1, 3, 1);
    push_blocks(&mut out, cfg, "enc2", 2 * f1);
    push_conv(&mut out, "down2", 2 * f1, 4 * f1, 3, 1);
    push_blocks(&mut out, cfg, "enc3", 4 * f1);
    push_conv(&mut out, "dec2.up", 4 * f1, 2 * f1, 3, 1);
    push_conv(&mut out, "dec2.fuse", 4 * f1, 2 * f1, 1, 1);
    push_blocks(&mut out, cfg, "dec2", 2 * f1);
    push_conv(&mut out, "dec1.up", 2 * f1, f1, 3, 1);
    push_conv(&mut out, "dec1.fuse", 2 * f1, f1, 1, 1);
    push_blocks(&mut out, cfg, "dec1", f1);
    push_conv(&mut out, "head", f1, cfg.out_channels, 3, 1);
    out
}

impl DwUNet {
    /// Builds a model with deterministic initialization: Kaiming-uniform
    /// (fan-in, ReLU gain) conv weights, zero biases, unit GroupNorm gain and
    /// an all-zero head.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout(&config)
            .into_iter()
            .map(|(name, dims)| {
                let numel: usize = dims.iter().product();
                let data = if name.starts_with("head.") || name.ends_with(".bias") {
                    vec![0.0; numel]
                } else if name.ends_with(".gain") {
                    vec![1.0; numel]
                } else {
                    let fan_in: usize = dims[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
                };
                Ok(Param {
                    name,
                    tensor: Tensor::from_vec(dims, data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(config, params)
    }

    /// Assembles a model from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        let mut by_name: HashMap<String, Tensor> = HashMap::with_capacity(params.len());
        for p in params {
            if by_name.insert(p.name.clone(), p.tensor).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor name {:?}", p.name)));
            }
        }
        let mut ordered = Vec::with_capacity(expected.len());
        for (name, dims) in &expected {
            let tensor = by_name.remove(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor {name:?} for model config {config}"))
            })?;
            if tensor.dims() != dims.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name:?}: checkpoint has {:?}, config {config} needs {dims:?}",
                    tensor.dims()
                )));
            }
            ordered.push(Param {
                name: name.clone(),
                tensor,
            });
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Checkpoint(format!(
                "unknown tensor name {extra:?} for model config {config}"
            )));
        }
        let index = ordered.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Ok(Self {
            config,
            params: ordered,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i].tensor)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Per-layer parameter counts (layer = name without its last component).
    pub fn count_params(&self) -> ParamTable {
        let mut layers: Vec<LayerParams> = Vec::new();
        for p in &self.params {
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
            match layers.last_mut() {
                Some(last) if last.layer == layer => last.count += p.tensor.numel(),
                _ => layers.push(LayerParams {
                    layer: layer.to_string(),
                    count: p.tensor.numel(),
                }),
            }
        }
        ParamTable {
            total: layers.iter().map(|l| l.count).sum(),
            layers,
        }
    }

    /// Registers every parameter as a trainable leaf, in parameter order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(&p.tensor)).collect()
    }

    /// Binds parameters as constants (for no-grad evaluation).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.tensor.detached())).collect()
    }

    /// Network output *before* the residual add (head output, cropped).
    pub fn forward_correction(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).dims4("unet forward")?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Graph(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        let p = |name: &str| vars[self.index[name]];
        let pad_h = (SPATIAL_MULTIPLE - h % SPATIAL_MULTIPLE) % SPATIAL_MULTIPLE;
        let pad_w = (SPATIAL_MULTIPLE - w % SPATIAL_MULTIPLE) % SPATIAL_MULTIPLE;
        let input = if pad_h + pad_w > 0 {
            g.pad_reflect(x, 0, pad_h, 0, pad_w)?
        } else {
            x
        };

        let conv = |g: &mut Graph, x: Var, name: &str, params: Conv2dParams| {
            g.conv2d(x, p(&format!("{name}.weight")), Some(p(&format!("{name}.bias"))), params)
        };
        let blocks = |g: &mut Graph, mut x: Var, prefix: &str, c: usize| -> Result<Var> {
            let e = self.config.expansion * c;
            for b in 0..self.config.n_blocks {
                let name = format!("{prefix}.block{b}");
                let y = conv(g, x, &format!("{name}.expand"), Conv2dParams::default())?;
                let y = g.gelu(y)?;
                let y = conv(g, y, &format!("{name}.dw"), Conv2dParams::depthwise3x3(e))?;
                let y = g.group_norm(
                    y,
                    self.config.gn_groups,
                    p(&format!("{name}.norm.gain")),
                    p(&format!("{name}.norm.bias")),
                    GROUP_NORM_EPS,
                )?;
                let y = g.gelu(y)?;
                let y = conv(g, y, &format!("{name}.project"), Conv2dParams::default())?;
                x = g.add(x, y)?;
            }
            Ok(x)
        };

        let f1 = self.config.f1;
        let stem = conv(g, input, "stem", Conv2dParams::same3x3())?;
        let stem = g.gelu(stem)?;
        let e1 = blocks(g, stem, "enc1", f1)?;
        let d1 = conv(g, e1, "down1", Conv2dParams::down3x3())?;
        let e2 = blocks(g, d1, "enc2", 2 * f1)?;
        let d2 = conv(g, e2, "down2", Conv2dParams::down3x3())?;
        let e3 = blocks(g, d2, "enc3", 4 * f1)?;

        let up = g.upsample_bilinear2(e3)?;
        let up = conv(g, up, "dec2.up", Conv2dParams::same3x3())?;
        let cat = g.concat_channels(&[up, e2])?;
        let fused = conv(g, cat, "dec2.fuse", Conv2dParams::default())?;
        let u2 = blocks(g, fused, "dec2", 2 * f1)?;

        let up = g.upsample_bilinear2(u2)?;
        let up = conv(g, up, "dec1.up", Conv2dParams::same3x3())?;
        let cat = g.concat_channels(&[up, e1])?;
        let fused = conv(g, cat, "dec1.fuse", Conv2dParams::default())?;
        let u1 = blocks(g, fused, "dec1", f1)?;

        let head = conv(g, u1, "head", Conv2dParams::same3x3())?;
        if pad_h + pad_w > 0 {
            g.crop(head, 0, 0, h, w)
        } else {
            Ok(head)
        }
    }

    /// Full forward: correction + residual slot, clamped in [`Mode::Infer`].
    pub fn forward_with(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        residual: ResidualSource,
        mode: Mode,
    ) -> Result<Var> {
        let correction = self.forward_correction(g, vars, x)?;
        let offset = if self.config.in_channels == self.config.out_channels {
            0
        } else {
            residual.channel_offset()
        };
        if offset + self.config.out_channels > self.config.in_channels {
            return Err(Error::Config(format!(
                "residual slot {residual:?} is outside the {}-channel input",
                self.config.in_channels
            )));
        }
        let skip = g.slice_channels(x, offset, self.config.out_channels)?;
        let out = g.add(correction, skip)?;
        match mode {
            Mode::Train => Ok(out),
            Mode::Infer => g.clamp01(out),
        }
    }

    /// No-grad inference on a planar input tensor.
    pub fn infer(&self, input: &Tensor, residual: ResidualSource) -> Result<Tensor> {
        let mut g = Graph::no_grad();
        let vars = self.bind_frozen(&mut g);
        let x = g.constant(input.detached());
        let out = self.forward_with(&mut g, &vars, x, residual, Mode::Infer)?;
        Ok(g.into_value(out))
    }

    pub fn enhance(&self, input: &NineChannelInput) -> Result<ImageF32> {
        let out = self.infer(&input.to_tensor(), input.residual_source)?;
        tensor_to_image(&out, 0)
    }

    /// Runs a 3-in/3-out model directly on an RGB image.
    pub fn enhance_rgb(&self, img: &ImageF32) -> Result<ImageF32> {
        let out = self.infer(&images_to_tensor(std::slice::from_ref(img)), ResidualSource::First)?;
        tensor_to_image(&out, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(ModelConfig::from_preset("Tiny").unwrap(), ModelConfig::tiny());
        assert_eq!((ModelConfig::mid().f1, ModelConfig::mid().n_blocks), (32, 3));
        assert_eq!((ModelConfig::large().f1, ModelConfig::large().n_blocks), (48, 4));
        assert!(ModelConfig::from_preset("bogus").is_err());
    }

    #[test]
    fn config_text() {
        let cfg: ModelConfig = "preset=mid\nexpansion=2 # narrower\n".parse().unwrap();
        assert_eq!(cfg.f1, 32);
        assert_eq!(cfg.expansion, 2);
        assert!("f1=23\ngn_groups=2".parse::<ModelConfig>().is_err());
        assert!("colour=blue".parse::<ModelConfig>().is_err());
    }

    #[test]
    fn table_sums_to_total() {
        let model = DwUNet::build(ModelConfig::tiny(), 0).unwrap();
        let table = model.count_params();
        assert_eq!(table.total, model.num_params());
        assert_eq!(table.layers.iter().map(|l| l.count).sum::<usize>(), table.total);
        assert_eq!(table.layers[0].layer, "stem");
        assert_eq!(table.layers.last().unwrap().layer, "head");
    }

    #[test]
    fn toy_model_closed_form() {
        let cfg = ModelConfig {
            f1: 4,
            n_blocks: 1,
            in_channels: 3,
            out_channels: 3,
            expansion: 1,
            gn_groups: 2,
        };
        // conv: cout * cin/groups * k*k + cout; block at width c:
        // expand c*c+c, dw 9c+c, norm 2c, project c*c+c
        let block = |c: usize| (c * c + c) + (9 * c + c) + 2 * c + (c * c + c);
        let expected = (4 * 3 * 9 + 4) // stem
            + block(4)
            + (8 * 4 * 9 + 8) // down1
            + block(8)
            + (16 * 8 * 9 + 16) // down2
            + block(16)
            + (8 * 16 * 9 + 8) + (8 * 16 + 8) // dec2 up, fuse
            + block(8)
            + (4 * 8 * 9 + 4) + (4 * 8 + 4) // dec1 up, fuse
            + block(4)
            + (3 * 4 * 9 + 3); // head
        assert_eq!(expected, 4703);
        let table = DwUNet::build(cfg, 0).unwrap().count_params();
        assert_eq!(table.total, expected);
    }

    #[test]
    fn names_unique() {
        let model = DwUNet::build(ModelConfig::mid(), 0).unwrap();
        let mut names: Vec<_> = model.params().iter().map(|p| &p.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), model.params().len());
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let model = DwUNet::build(ModelConfig::tiny(), 0).unwrap();
        let err = model.infer(&Tensor::zeros(&[1, 3, 8, 8]), ResidualSource::First);
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}

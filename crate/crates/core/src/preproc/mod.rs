//! Frozen brightness-normalizing preprocessors and the 9-channel network input.
//!
//! Preprocessors are named by compact spec strings so they can be passed on
//! the command line and recorded in checkpoints:
//!
//! | spec                   | preprocessor                                   |
//! |------------------------|------------------------------------------------|
//! | `gamma:<g>`            | pointwise `x^g`                                |
//! | `he` / `he:channel`    | global histogram equalization (luma / per-channel) |
//! | `clahe:<clip>:<tiles>` | CLAHE on Lab L (`clip` may be `inf`)           |
//! | `ext:<path>`           | frozen network loaded from a checkpoint        |

mod hist;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use hist::{
    apply_clahe, apply_hist_eq, apply_hist_eq_with, equalize_lightness, HistEqMode, UNBOUNDED_CLIP,
};

use crate::error::{Error, Result};
use crate::image::{Image, ImageF32};
use crate::tensor::Tensor;
use crate::unet::{load_checkpoint, DwUNet};

pub const DEFAULT_GAMMA: f32 = 0.5;
pub const DEFAULT_CLAHE_CLIP: f32 = 2.0;
pub const DEFAULT_CLAHE_TILES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum PreprocessorKind {
    Gamma(f32),
    HistEq(HistEqMode),
    Clahe { clip_limit: f32, tiles: usize },
    External(PathBuf),
}

impl PreprocessorKind {
    pub fn default_first() -> Self {
        PreprocessorKind::Gamma(DEFAULT_GAMMA)
    }

    pub fn default_second() -> Self {
        PreprocessorKind::Clahe {
            clip_limit: DEFAULT_CLAHE_CLIP,
            tiles: DEFAULT_CLAHE_TILES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PreprocessorKind::Gamma(g) if !(g > 0.0 && g.is_finite()) => {
                Err(Error::Config(format!("gamma exponent must be > 0, got {g}")))
            }
            PreprocessorKind::Clahe { clip_limit, tiles } if clip_limit.is_nan() || clip_limit < 1.0 || tiles < 1 => {
                Err(Error::Config(format!(
                    "clahe needs clip_limit >= 1 and tiles >= 1, got {clip_limit} and {tiles}"
                )))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PreprocessorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessorKind::Gamma(g) => write!(f, "gamma:{g}"),
            PreprocessorKind::HistEq(HistEqMode::Luma) => write!(f, "he"),
            PreprocessorKind::HistEq(HistEqMode::PerChannel) => write!(f, "he:channel"),
            PreprocessorKind::Clahe { clip_limit, tiles } => write!(f, "clahe:{clip_limit}:{tiles}"),
            PreprocessorKind::External(p) => write!(f, "ext:{}", p.display()),
        }
    }
}

impl FromStr for PreprocessorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("bad preprocessor spec {s:?}: {why}"));
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let kind = match (head.trim().to_ascii_lowercase().as_str(), rest) {
            ("gamma", Some(g)) => PreprocessorKind::Gamma(
                g.trim().parse().map_err(|_| bad("gamma exponent is not a number"))?,
            ),
            ("gamma", None) => PreprocessorKind::default_first(),
            ("he", None) => PreprocessorKind::HistEq(HistEqMode::Luma),
            ("he", Some("luma")) => PreprocessorKind::HistEq(HistEqMode::Luma),
            ("he", Some("channel")) => PreprocessorKind::HistEq(HistEqMode::PerChannel),
            ("clahe", None) => PreprocessorKind::default_second(),
            ("clahe", Some(args)) => {
                let (clip, tiles) = args
                    .split_once(':')
                    .ok_or_else(|| bad("expected clahe:<clip>:<tiles>"))?;
                PreprocessorKind::Clahe {
                    clip_limit: clip.trim().parse().map_err(|_| bad("clip limit is not a number"))?,
                    tiles: tiles.trim().parse().map_err(|_| bad("tiles is not an integer"))?,
                }
            }
            ("ext", Some(path)) if !path.is_empty() => PreprocessorKind::External(path.into()),
            _ => return Err(bad("expected gamma:<g>, he, clahe:<clip>:<tiles> or ext:<path>")),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// A preprocessor ready to run. External networks are loaded once here.
#[derive(Clone, Debug)]
pub enum Preprocessor {
    Gamma(f32),
    HistEq(HistEqMode),
    Clahe { clip_limit: f32, tiles: usize },
    External { path: PathBuf, model: Box<DwUNet> },
}

impl Preprocessor {
    pub fn new(kind: &PreprocessorKind) -> Result<Self> {
        kind.validate()?;
        Ok(match kind {
            PreprocessorKind::Gamma(g) => Preprocessor::Gamma(*g),
            PreprocessorKind::HistEq(m) => Preprocessor::HistEq(*m),
            PreprocessorKind::Clahe { clip_limit, tiles } => Preprocessor::Clahe {
                clip_limit: *clip_limit,
                tiles: *tiles,
            },
            PreprocessorKind::External(path) => Preprocessor::External {
                path: path.clone(),
                model: Box::new(load_external(path)?),
            },
        })
    }

    pub fn kind(&self) -> PreprocessorKind {
        match self {
            Preprocessor::Gamma(g) => PreprocessorKind::Gamma(*g),
            Preprocessor::HistEq(m) => PreprocessorKind::HistEq(*m),
            Preprocessor::Clahe { clip_limit, tiles } => PreprocessorKind::Clahe {
                clip_limit: *clip_limit,
                tiles: *tiles,
            },
            Preprocessor::External { path, .. } => PreprocessorKind::External(path.clone()),
        }
    }

    pub fn apply(&self, img: &ImageF32) -> Result<ImageF32> {
        match self {
            Preprocessor::Gamma(g) => apply_gamma(img, *g),
            Preprocessor::HistEq(mode) => apply_hist_eq_with(img, *mode),
            Preprocessor::Clahe { clip_limit, tiles } => apply_clahe(img, *clip_limit, *tiles),
            Preprocessor::External { model, .. } => model.enhance_rgb(img),
        }
    }
}

fn load_external(path: &Path) -> Result<DwUNet> {
    let model = load_checkpoint(path)?.model;
    let cfg = model.config();
    if cfg.in_channels != 3 || cfg.out_channels != 3 {
        return Err(Error::Config(format!(
            "external preprocessor {} must map 3 channels to 3, has {} -> {}",
            path.display(),
            cfg.in_channels,
            cfg.out_channels
        )));
    }
    Ok(model)
}

/// Pointwise power law `x^gamma`; preserves 0 and 1.
pub fn apply_gamma(img: &ImageF32, gamma: f32) -> Result<ImageF32> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma exponent must be > 0, got {gamma}")));
    }
    Ok(img.map(|v| v.max(0.0).powf(gamma)))
}

/// Which of the three 3-channel slots feeds the global residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResidualSource {
    #[default]
    First,
    Original,
    Second,
}

impl ResidualSource {
    /// Index of the slot's first channel in the stacked input.
    pub fn channel_offset(self) -> usize {
        match self {
            ResidualSource::First => 0,
            ResidualSource::Original => 3,
            ResidualSource::Second => 6,
        }
    }
}

impl fmt::Display for ResidualSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualSource::First => "first",
            ResidualSource::Original => "original",
            ResidualSource::Second => "second",
        })
    }
}

impl FromStr for ResidualSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "first" => Ok(ResidualSource::First),
            "original" => Ok(ResidualSource::Original),
            "second" => Ok(ResidualSource::Second),
            _ => Err(Error::Config(format!(
                "residual source must be first, original or second, got {s:?}"
            ))),
        }
    }
}

/// `[preprocessed-1 | original | preprocessed-2]`, each an H×W RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct NineChannelInput {
    pub planes: [ImageF32; 3],
    pub residual_source: ResidualSource,
}

impl NineChannelInput {
    pub fn new(planes: [ImageF32; 3]) -> Result<Self> {
        let dims = planes[0].dims();
        if dims.2 != 3 || planes.iter().any(|p| p.dims() != dims) {
            return Err(Error::Shape(format!(
                "nine-channel slots must all be {}x{}x3, got {:?}",
                dims.0,
                dims.1,
                planes.iter().map(|p| p.dims()).collect::<Vec<_>>()
            )));
        }
        Ok(Self {
            planes,
            residual_source: ResidualSource::First,
        })
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn residual_plane(&self) -> &ImageF32 {
        &self.planes[self.residual_source.channel_offset() / 3]
    }

    /// Applies the same crop and flips to every slot.
    pub fn map_planes(&self, f: impl Fn(&ImageF32) -> Result<ImageF32>) -> Result<Self> {
        let [a, b, c] = &self.planes;
        Ok(Self {
            planes: [f(a)?, f(b)?, f(c)?],
            residual_source: self.residual_source,
        })
    }

    /// Planar `[1, 9, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        images_to_tensor(&self.planes)
    }
}

/// Stacks interleaved images channel-wise into one planar `[1, C, H, W]` tensor.
pub fn images_to_tensor(images: &[ImageF32]) -> Tensor {
    let (w, h) = (images[0].width(), images[0].height());
    let channels: usize = images.iter().map(|i| i.channels()).sum();
    let mut data = Vec::with_capacity(channels * w * h);
    for img in images {
        let c = img.channels();
        for ch in 0..c {
            data.extend(img.data().iter().skip(ch).step_by(c));
        }
    }
    Tensor::from_vec(vec![1, channels, h, w], data).expect("image stack dims are consistent")
}

/// Converts one sample of a planar `[N, 3, H, W]` (or `[N, 1, H, W]`) tensor back to an image.
pub fn tensor_to_image(t: &Tensor, sample: usize) -> Result<ImageF32> {
    let dims = t.dims();
    if dims.len() != 4 || (dims[1] != 3 && dims[1] != 1) || sample >= dims[0] {
        return Err(Error::Shape(format!(
            "cannot read sample {sample} of tensor {dims:?} as an image"
        )));
    }
    let (c, h, w) = (dims[1], dims[2], dims[3]);
    let plane = h * w;
    let base = sample * c * plane;
    let src = &t.data()[base..base + c * plane];
    let mut data = Vec::with_capacity(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            data.push(src[ch * plane + i]);
        }
    }
    Image::new(w, h, c, data)
}

pub fn assemble_nine_channel(
    low: &ImageF32,
    first: &Preprocessor,
    second: &Preprocessor,
) -> Result<NineChannelInput> {
    if low.channels() != 3 {
        return Err(Error::Shape(format!(
            "nine-channel assembly needs an RGB image, got {} channels",
            low.channels()
        )));
    }
    NineChannelInput::new([first.apply(low)?, low.clone(), second.apply(low)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{to_f32, to_u8, ImageU8};

    fn ramp(w: usize, h: usize) -> ImageF32 {
        let data = (0..w * h * 3)
            .map(|i| ((i * 37) % 256) as f32 / 255.0)
            .collect();
        Image::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn gamma_fixed_points_and_sqrt() {
        let img = Image::new(3, 1, 1, vec![0.0f32, 1.0, 0.25]).unwrap();
        for g in [0.3f32, 0.5, 1.0, 2.2] {
            let out = apply_gamma(&img, g).unwrap();
            assert_eq!(out.data()[0], 0.0);
            assert_eq!(out.data()[1], 1.0);
        }
        assert_eq!(apply_gamma(&img, 0.5).unwrap().data()[2], 0.5);
    }

    #[test]
    fn gamma_rejects_nonpositive() {
        let img = ImageF32::filled(1, 1, 3, 0.5).unwrap();
        assert!(matches!(apply_gamma(&img, 0.0), Err(Error::Config(_))));
        assert!(matches!(apply_gamma(&img, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn gamma_shifts_dark_mean() {
        // (15.5/255)^0.5 * 255 = 62.86
        let img = ImageF32::filled(4, 4, 3, 15.5 / 255.0).unwrap();
        let out = apply_gamma(&img, 0.5).unwrap();
        let mean = out.data()[0] as f64 * 255.0;
        assert!((mean - 62.87).abs() < 0.01, "{mean}");
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["gamma:0.5", "he", "he:channel", "clahe:2:8", "clahe:inf:1", "ext:model.dwun"] {
            let kind: PreprocessorKind = s.parse().unwrap();
            assert_eq!(kind.to_string().parse::<PreprocessorKind>().unwrap(), kind);
        }
        assert_eq!(
            "clahe:2.0:8".parse::<PreprocessorKind>().unwrap(),
            PreprocessorKind::default_second()
        );
    }

    #[test]
    fn spec_strings_rejected() {
        for s in ["", "gamma:0", "gamma:-1", "gamma:x", "clahe:0.5:8", "clahe:2:0", "clahe:2", "median", "ext:"] {
            assert!(s.parse::<PreprocessorKind>().is_err(), "{s:?} should fail");
        }
    }

    #[test]
    fn nine_channel_layout() {
        let low = ramp(6, 5);
        let first = Preprocessor::new(&PreprocessorKind::Gamma(0.5)).unwrap();
        let second = Preprocessor::new(&PreprocessorKind::default_second()).unwrap();
        let nine = assemble_nine_channel(&low, &first, &second).unwrap();
        assert_eq!(nine.planes[1], low);
        assert_eq!(nine.residual_source, ResidualSource::First);
        let t = nine.to_tensor();
        assert_eq!(t.dims(), &[1, 9, 5, 6]);
        let plane = 30;
        for c in 0..3 {
            let slot = &t.data()[(3 + c) * plane..(4 + c) * plane];
            let expect: Vec<f32> = low.data().iter().skip(c).step_by(3).copied().collect();
            assert_eq!(slot, &expect[..]);
        }
    }

    #[test]
    fn identity_gamma_slots_match() {
        let low = ramp(4, 4);
        let p = Preprocessor::new(&PreprocessorKind::Gamma(1.0)).unwrap();
        let nine = assemble_nine_channel(&low, &p, &p).unwrap();
        assert_eq!(nine.planes[0], nine.planes[1]);
        assert_eq!(nine.planes[1], nine.planes[2]);
    }

    #[test]
    fn tensor_image_round_trip() {
        let img = ramp(7, 3);
        let t = images_to_tensor(std::slice::from_ref(&img));
        assert_eq!(tensor_to_image(&t, 0).unwrap(), img);
    }

    #[test]
    fn gamma_one_is_byte_exact() {
        let bytes = ImageU8::new(16, 16, 3, (0..768).map(|i| (i % 256) as u8).collect()).unwrap();
        let out = to_u8(&apply_gamma(&to_f32(&bytes), 1.0).unwrap());
        assert_eq!(out, bytes);
    }
}

//! Paired low/normal-light data and the shared crop/flip augmentation.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{read_png, Image, ImageF32, ImageU8};
use crate::stats::list_pngs;

#[derive(Clone, Debug)]
pub struct Pair {
    pub name: String,
    pub low: ImageU8,
    pub gt: ImageU8,
}

/// Low-light / ground-truth pairs matched by file name, kept as bytes.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pairs: Vec<Pair>,
}

impl PairedDataset {
    pub fn from_pairs(pairs: Vec<Pair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("dataset has no pairs".into()));
        }
        for p in &pairs {
            if p.low.dims() != p.gt.dims() {
                return Err(Error::Data(format!(
                    "{}: low is {:?} but gt is {:?}",
                    p.name,
                    p.low.dims(),
                    p.gt.dims()
                )));
            }
            if p.low.channels() != 3 {
                return Err(Error::Data(format!("{}: expected an RGB image", p.name)));
            }
        }
        Ok(Self { pairs })
    }

    /// Reads `root/low/*.png` and the same names from `root/gt/`.
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let (low_dir, gt_dir) = (root.join("low"), root.join("gt"));
        let mut pairs = Vec::new();
        for low_path in list_pngs(&low_dir)? {
            let name = low_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let gt_path: PathBuf = gt_dir.join(&name);
            if !gt_path.is_file() {
                return Err(Error::Data(format!(
                    "{name}: no ground truth at {}",
                    gt_path.display()
                )));
            }
            pairs.push(Pair {
                low: read_png(&low_path)?,
                gt: read_png(&gt_path)?,
                name,
            });
        }
        Self::from_pairs(pairs).map_err(|e| e.at(root))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn get(&self, i: usize) -> &Pair {
        &self.pairs[i]
    }
}

/// One crop window and flip decision, shared by every image of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl Augment {
    /// Samples a window for a `width`×`height` image, padded up to `size` if smaller.
    pub fn sample(width: usize, height: usize, size: usize, rng: &mut impl Rng) -> Self {
        let (w, h) = (width.max(size), height.max(size));
        Self {
            x0: rng.random_range(0..=w - size),
            y0: rng.random_range(0..=h - size),
            size,
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
        }
    }

    pub fn apply<T: Copy>(&self, img: &Image<T>) -> Result<Image<T>> {
        let padded = img.pad_reflect_to(self.size, self.size)?;
        let mut out = padded.crop(self.x0, self.y0, self.size, self.size)?;
        if self.flip_h {
            out = out.flip_horizontal();
        }
        if self.flip_v {
            out = out.flip_vertical();
        }
        Ok(out)
    }
}

/// Random `crop`×`crop` window plus random flips, applied identically to both images.
pub fn augment_pair(
    low: &ImageF32,
    gt: &ImageF32,
    crop: usize,
    rng: &mut impl Rng,
) -> Result<(ImageF32, ImageF32)> {
    if low.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "augment_pair: {:?} vs {:?}",
            low.dims(),
            gt.dims()
        )));
    }
    let aug = Augment::sample(low.width(), low.height(), crop, rng);
    Ok((aug.apply(low)?, aug.apply(gt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> ImageF32 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.random::<f32>()).collect();
        Image::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn lol_sized_crop() {
        let img = noise(600, 400, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, b) = augment_pair(&img, &img, 384, &mut rng).unwrap();
        assert_eq!(a.dims(), (384, 384, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (low, gt) = (noise(40, 30, 1), noise(40, 30, 2));
        let run = || augment_pair(&low, &gt, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn small_images_are_padded() {
        let img = noise(10, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = augment_pair(&img, &img, 16, &mut rng).unwrap();
        assert_eq!(a.dims(), (16, 16, 3));
    }

    #[test]
    fn mismatched_pair_rejected() {
        let img = ImageU8::filled(4, 4, 3, 0).unwrap();
        let other = ImageU8::filled(4, 5, 3, 0).unwrap();
        let pair = Pair { name: "a.png".into(), low: img, gt: other };
        assert!(PairedDataset::from_pairs(vec![pair]).is_err());
        assert!(PairedDataset::from_pairs(vec![]).is_err());
    }
}

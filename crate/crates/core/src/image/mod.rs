//! Interleaved raster images in byte and normalized-float form.

pub(crate) mod color;
mod png;

pub use color::{lab_to_rgb, rgb_to_gray, rgb_to_lab, LabImage};
pub use png::{decode_png, encode_png, read_png, write_png};

use crate::error::{Error, Result};

/// Row-major interleaved raster with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// 8-bit image, values in [0, 255].
pub type ImageU8 = Image<u8>;
/// Float working image, nominal range [0, 1].
pub type ImageF32 = Image<f32>;

impl<T: Copy> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.channels)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies out the `w`×`h` window whose top-left corner is (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Self::new(w, h, c, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(self.width - 1 - x, y, c));
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let c = self.channels;
        let row = self.width * c;
        let mut data = Vec::with_capacity(self.data.len());
        for y in (0..self.height).rev() {
            data.extend_from_slice(&self.data[y * row..(y + 1) * row]);
        }
        Self {
            data,
            ..*self
        }
    }

    /// Mirror-pads (without repeating the edge pixel) to at least `min_w`×`min_h`.
    pub fn pad_reflect_to(&self, min_w: usize, min_h: usize) -> Result<Self> {
        let w = self.width.max(min_w);
        let h = self.height.max(min_h);
        if w == self.width && h == self.height {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in 0..h {
            let sy = reflect_index(y, self.height);
            for x in 0..w {
                let sx = reflect_index(x, self.width);
                for c in 0..self.channels {
                    data.push(self.get(sx, sy, c));
                }
            }
        }
        Self::new(w, h, self.channels, data)
    }
}

/// Reflect-101 index: `-1 -> 1`, `n -> n-2`, periodic with period `2(n-1)`.
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

pub fn to_f32(img: &ImageU8) -> ImageF32 {
    img.map(|b| b as f32 / 255.0)
}

/// Clamps to [0, 1], scales by 255 and rounds half away from zero. NaN maps to 0.
pub fn to_u8(img: &ImageF32) -> ImageU8 {
    let nan_count = img.data().iter().filter(|v| v.is_nan()).count();
    let out = img.map(|v| if v.is_nan() { 0 } else { quantize(v) });
    if nan_count > 0 {
        log::warn!("to_u8: {nan_count} NaN values mapped to 0");
    }
    out
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    // f32::round is half-away-from-zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

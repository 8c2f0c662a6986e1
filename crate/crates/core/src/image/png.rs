//! 8-bit PNG I/O (RGB and grayscale only).

use std::io::Cursor;
use std::path::Path;

use ::png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use super::ImageU8;
use crate::error::{Error, Result};

pub fn decode_png(bytes: &[u8]) -> Result<ImageU8> {
    let mut decoder = Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Png(format!("malformed file: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != BitDepth::Eight {
        return Err(Error::Png(format!(
            "unsupported bit depth {} (only 8-bit is supported)",
            depth as u8
        )));
    }
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        other => {
            return Err(Error::Png(format!(
                "unsupported color type {other:?} (only 8-bit RGB and grayscale)"
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(format!("malformed file: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let row = w * channels;
    // Strip any per-row padding from the output buffer.
    let data = if frame.line_size == row {
        buf.truncate(row * h);
        buf
    } else {
        buf.chunks(frame.line_size)
            .take(h)
            .flat_map(|r| r[..row].iter().copied())
            .collect()
    };
    ImageU8::new(w, h, channels, data)
}

pub fn encode_png(img: &ImageU8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(if img.channels() == 1 {
            ColorType::Grayscale
        } else {
            ColorType::Rgb
        });
        encoder.set_depth(BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(img.data())
            .map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| e.at(path))
}

pub fn write_png(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{ColorSpace, Image};
use crate::error::{Error, Result};

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn unsupported(path: &Path, feature: &str) -> Error {
    Error::UnsupportedPng {
        path: path.to_path_buf(),
        feature: feature.to_string(),
    }
}

/// Reads an 8- or 16-bit gray/RGB PNG. 16-bit samples are shifted down to
/// 8 bits; palettes without transparency are expanded to RGB.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;

    let info = reader.info();
    match info.color_type {
        ColorType::Rgba | ColorType::GrayscaleAlpha => return Err(unsupported(path, "alpha channel")),
        ColorType::Indexed if info.trns.is_some() => return Err(unsupported(path, "palette with transparency")),
        ColorType::Grayscale if info.trns.is_some() => {
            return Err(unsupported(path, "grayscale with transparency key"))
        }
        ColorType::Rgb if info.trns.is_some() => return Err(unsupported(path, "RGB with transparency key")),
        _ => {}
    }
    let (width, height) = (info.width as usize, info.height as usize);

    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    let buf = &buf[..frame.buffer_size()];

    let (colorspace, channels) = match frame.color_type {
        ColorType::Grayscale => (ColorSpace::Gray, 1),
        ColorType::Rgb => (ColorSpace::Rgb, 3),
        other => return Err(unsupported(path, &format!("{other:?} output"))),
    };
    let samples: Vec<f64> = match frame.bit_depth {
        BitDepth::Eight => buf.iter().map(|&v| v as f64).collect(),
        BitDepth::Sixteen => buf.chunks_exact(2).map(|b| b[0] as f64).collect(),
        other => return Err(unsupported(path, &format!("{other:?} bit depth after expansion"))),
    };
    if samples.len() != width * height * channels {
        return Err(decode_err(path, "decoded sample count does not match header"));
    }

    let n = width * height;
    let mut data = vec![0.0; samples.len()];
    for (i, px) in samples.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * n + i] = v;
        }
    }
    Image::new(width, height, colorspace, data)
}

/// Writes an 8-bit PNG; samples are clamped to `[0, 255]` and rounded.
/// YCbCr images are converted to RGB first.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rgb;
    let img = if img.colorspace() == ColorSpace::YCbCr601 {
        rgb = img.to_rgb()?;
        &rgb
    } else {
        img
    };
    let channels = img.channels();
    let n = img.pixel_count();
    let mut bytes = vec![0u8; n * channels];
    for c in 0..channels {
        for (i, &v) in img.plane(c).iter().enumerate() {
            bytes[i * channels + c] = v.clamp(0.0, 255.0).round() as u8;
        }
    }

    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(if channels == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    });
    encoder.set_depth(BitDepth::Eight);
    let enc_err = |e: png::EncodingError| Error::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = encoder.write_header().map_err(enc_err)?;
    writer.write_image_data(&bytes).map_err(enc_err)?;
    writer.finish().map_err(enc_err)?;
    Ok(())
}

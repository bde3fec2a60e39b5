//! Full-range BT.601 conversion between RGB and YCbCr.

use super::{ColorSpace, Image};
use crate::error::{Error, Result};

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
const CB_SCALE: f64 = 0.564;
const CR_SCALE: f64 = 0.713;
const CHROMA_OFFSET: f64 = 128.0;

#[inline]
pub(crate) fn rgb_to_ycbcr_px(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    (
        y,
        CHROMA_OFFSET + (b - y) * CB_SCALE,
        CHROMA_OFFSET + (r - y) * CR_SCALE,
    )
}

#[inline]
pub(crate) fn ycbcr_to_rgb_px(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + (cr - CHROMA_OFFSET) / CR_SCALE;
    let b = y + (cb - CHROMA_OFFSET) / CB_SCALE;
    let g = (y - KR * r - KB * b) / KG;
    (r, g, b)
}

fn convert(
    img: &Image,
    from: ColorSpace,
    to: ColorSpace,
    f: impl Fn(f64, f64, f64) -> (f64, f64, f64),
) -> Result<Image> {
    if img.colorspace() != from {
        return Err(Error::ColorSpace {
            expected: from,
            found: img.colorspace(),
        });
    }
    let n = img.pixel_count();
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    let (o0, rest) = out.split_at_mut(n);
    let (o1, o2) = rest.split_at_mut(n);
    let (s0, rest) = src.split_at(n);
    let (s1, s2) = rest.split_at(n);
    for i in 0..n {
        let (a, b, c) = f(s0[i], s1[i], s2[i]);
        o0[i] = a;
        o1[i] = b;
        o2[i] = c;
    }
    Image::new(img.width(), img.height(), to, out)
}

/// RGB to full-range BT.601 YCbCr. Values stay real; nothing is clamped.
pub fn rgb_to_ycbcr(img: &Image) -> Result<Image> {
    convert(img, ColorSpace::Rgb, ColorSpace::YCbCr601, rgb_to_ycbcr_px)
}

/// Exact algebraic inverse of [`rgb_to_ycbcr`]. No clamping.
pub fn ycbcr_to_rgb(img: &Image) -> Result<Image> {
    convert(img, ColorSpace::YCbCr601, ColorSpace::Rgb, ycbcr_to_rgb_px)
}

use super::Image;

/// The eight symmetries of the square: rotations by multiples of 90° and
/// the four axial/diagonal reflections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum D4 {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipX,
    FlipY,
    Transpose,
    AntiTranspose,
}

impl D4 {
    pub const ALL: [D4; 8] = [
        D4::Identity,
        D4::Rot90,
        D4::Rot180,
        D4::Rot270,
        D4::FlipX,
        D4::FlipY,
        D4::Transpose,
        D4::AntiTranspose,
    ];

    /// (transpose, flip_x, flip_y): the source of output pixel `(x, y)` is
    /// found by first flipping the output coordinates, then transposing.
    fn parts(self) -> (bool, bool, bool) {
        match self {
            D4::Identity => (false, false, false),
            D4::Rot90 => (true, true, false),
            D4::Rot180 => (false, true, true),
            D4::Rot270 => (true, false, true),
            D4::FlipX => (false, true, false),
            D4::FlipY => (false, false, true),
            D4::Transpose => (true, false, false),
            D4::AntiTranspose => (true, true, true),
        }
    }

    pub fn inverse(self) -> D4 {
        match self {
            D4::Rot90 => D4::Rot270,
            D4::Rot270 => D4::Rot90,
            other => other,
        }
    }

    pub fn swaps_axes(self) -> bool {
        self.parts().0
    }

    /// Output dimensions for an input of `width x height`.
    pub fn dims(self, width: usize, height: usize) -> (usize, usize) {
        if self.swaps_axes() {
            (height, width)
        } else {
            (width, height)
        }
    }

    /// Source coordinate in the input image for output coordinate `(x, y)`.
    #[inline]
    pub fn source(self, x: usize, y: usize, out_w: usize, out_h: usize) -> (usize, usize) {
        let (t, fx, fy) = self.parts();
        let xx = if fx { out_w - 1 - x } else { x };
        let yy = if fy { out_h - 1 - y } else { y };
        if t {
            (yy, xx)
        } else {
            (xx, yy)
        }
    }

    pub fn apply(self, img: &Image) -> Image {
        if self == D4::Identity {
            return img.clone();
        }
        let (w, h) = self.dims(img.width(), img.height());
        let mut data = Vec::with_capacity(img.data().len());
        for c in 0..img.channels() {
            let plane = img.plane(c);
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = self.source(x, y, w, h);
                    data.push(plane[sy * img.width() + sx]);
                }
            }
        }
        Image::new(w, h, img.colorspace(), data).expect("D4 preserves sample count")
    }

    /// Applies the transform to a per-pixel map of `width x height`.
    pub fn apply_map<T: Copy>(self, map: &[T], width: usize, height: usize) -> Vec<T> {
        let (w, h) = self.dims(width, height);
        let mut out = Vec::with_capacity(map.len());
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x, y, w, h);
                out.push(map[sy * width + sx]);
            }
        }
        out
    }
}

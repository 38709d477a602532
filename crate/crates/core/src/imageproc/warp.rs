use crate::error::{ensure, Result};
use crate::image::{BinaryMask, DisparityMap, ImageBuffer};

/// Rectified convention: left pixel (x, y) corresponds to right pixel
/// (x - d, y) with `d >= 0` read from the left-referenced disparity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpDirection {
    /// Synthesize the right view from a left image: `out(x) = L(x + d(x))`.
    /// The disparity is read at the target pixel, which is exact for
    /// fronto-parallel layers away from occlusion boundaries.
    LeftToRight,
    /// Bring a right image into the left frame: `out(x) = R(x - d(x))`.
    RightToLeft,
}

impl WarpDirection {
    fn source_x(self, x: usize, d: f64) -> f64 {
        match self {
            WarpDirection::LeftToRight => x as f64 + d,
            WarpDirection::RightToLeft => x as f64 - d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: ImageBuffer,
    /// Pixels whose source fell inside the frame with a valid disparity.
    pub valid: BinaryMask,
}

/// Horizontal resampling by disparity with linear interpolation between the
/// two neighbouring columns. Invalid pixels are zero.
pub fn warp_by_disparity(image: &ImageBuffer, disparity: &DisparityMap, direction: WarpDirection) -> Result<Warped> {
    ensure!(
        image.height == disparity.height && image.width == disparity.width,
        "warp: image {}x{} vs disparity {}x{}",
        image.width,
        image.height,
        disparity.width,
        disparity.height
    );
    let (w, h, ch) = (image.width, image.height, image.channels);
    let mut out = ImageBuffer::zeros(h, w, ch);
    let mut valid = BinaryMask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            if !disparity.is_valid(x, y) {
                continue;
            }
            let sx = direction.source_x(x, disparity.get(x, y));
            if !(sx >= 0.0 && sx <= (w - 1) as f64) {
                continue;
            }
            let x0 = sx.floor() as usize;
            let t = sx - x0 as f64;
            for c in 0..ch {
                let a = image.get(x0, y, c);
                let v = if t == 0.0 { a } else { a * (1.0 - t) + image.get(x0 + 1, y, c) * t };
                out.set(x, y, c, v);
            }
            valid.set(x, y, true);
        }
    }
    Ok(Warped { image: out, valid })
}

/// Nearest-neighbour variant for binary masks; the result stays binary.
/// Returns (warped mask, in-frame validity).
pub fn warp_mask_by_disparity(
    mask: &BinaryMask,
    disparity: &DisparityMap,
    direction: WarpDirection,
) -> Result<(BinaryMask, BinaryMask)> {
    ensure!(
        mask.height == disparity.height && mask.width == disparity.width,
        "warp_mask: mask and disparity sizes differ"
    );
    let (w, h) = (mask.width, mask.height);
    let mut out = BinaryMask::empty(h, w);
    let mut valid = BinaryMask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            if !disparity.is_valid(x, y) {
                continue;
            }
            let sx = direction.source_x(x, disparity.get(x, y)).round();
            if sx < 0.0 || sx > (w - 1) as f64 {
                continue;
            }
            valid.set(x, y, true);
            out.set(x, y, mask.get(sx as usize, y));
        }
    }
    Ok((out, valid))
}

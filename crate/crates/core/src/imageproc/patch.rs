use crate::error::{ensure, Result};
use crate::image::ImageBuffer;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Patch {
    /// `[C, size, size]`.
    pub values: Tensor,
    /// Row-major spatial flags; false where the tap fell outside the frame
    /// (those entries are zero).
    pub in_frame: Vec<bool>,
}

/// `size`x`size` neighbourhood centred on (x, y).
pub fn extract_patch(image: &ImageBuffer, center: (isize, isize), size: usize) -> Result<Patch> {
    ensure!(size % 2 == 1, "patch size must be odd, got {size}");
    let planar = image.to_planar();
    let idx = patch_indices(image.height, image.width, image.channels, center, size);
    let values = idx.iter().map(|i| i.map_or(0.0, |i| planar[i])).collect();
    let in_frame = idx[..size * size].iter().map(Option::is_some).collect();
    Ok(Patch { values: Tensor::new(values, &[image.channels, size, size])?, in_frame })
}

/// Flat indices into a planar `[C, H, W]` buffer for the patch around
/// `center`, channel-major; out-of-frame taps are `None`.
pub fn patch_indices(h: usize, w: usize, channels: usize, center: (isize, isize), size: usize) -> Vec<Option<usize>> {
    let r = (size / 2) as isize;
    let mut out = Vec::with_capacity(channels * size * size);
    for c in 0..channels {
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (center.0 + dx, center.1 + dy);
                if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                    out.push(None);
                } else {
                    out.push(Some(c * h * w + y as usize * w + x as usize));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> ImageBuffer {
        ImageBuffer::from_fn(5, 6, 3, |x, y, c| (x + 6 * y + 30 * c) as f64 / 100.0)
    }

    #[test]
    fn size_one_is_the_pixel() {
        let p = extract_patch(&img(), (2, 3), 1).unwrap();
        assert_eq!(p.values.to_vec(), img().pixel(2, 3).to_vec());
    }

    #[test]
    fn corner_patch_zero_fills_five_of_nine() {
        let p = extract_patch(&img(), (0, 0), 3).unwrap();
        assert_eq!(p.in_frame.iter().filter(|v| !**v).count(), 5);
        let v = p.values.to_vec();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[4], img().get(0, 0, 0));
    }

    #[test]
    fn interior_patch_is_the_subarray() {
        let image = img();
        let p = extract_patch(&image, (3, 2), 3).unwrap();
        let v = p.values.to_vec();
        for c in 0..3 {
            for dy in 0..3 {
                for dx in 0..3 {
                    assert_eq!(v[c * 9 + dy * 3 + dx], image.get(2 + dx, 1 + dy, c));
                }
            }
        }
        assert!(p.in_frame.iter().all(|&f| f));
    }

    #[test]
    fn even_size_is_rejected() {
        assert!(extract_patch(&img(), (1, 1), 4).is_err());
    }
}

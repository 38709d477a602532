use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageBuffer};

/// [0, 1] -> 0..=255 with round-half-to-even.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// 8-bit PNG to [0, 1] floats. Grayscale files stay single-channel, anything
/// else is converted to RGB.
pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let (data, channels, w, h) = match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            (g.into_raw(), 1, w, h)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            (rgb.into_raw(), 3, w, h)
        }
    };
    ImageBuffer::new(h as usize, w as usize, channels, data.into_iter().map(|v| v as f64 / 255.0).collect())
}

pub fn write_png(image: &ImageBuffer, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let bytes: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (image.width as u32, image.height as u32);
    let result = if image.channels == 1 {
        GrayImage::from_raw(w, h, bytes).map(|g| g.save(path))
    } else {
        RgbImage::from_raw(w, h, bytes).map(|g| g.save(path))
    };
    result
        .ok_or_else(|| Error::format(path, "buffer size does not match dimensions"))?
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Masks are stored as 0/255 grayscale.
pub fn write_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let bytes = mask.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .ok_or_else(|| Error::format(path, "mask size mismatch"))?
        .save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Any value >= 128 reads as set.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(BinaryMask {
        height: h as usize,
        width: w as usize,
        data: img.into_raw().into_iter().map(|v| v >= 128).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_to_even() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128); // 127.5 -> 128 (even)
        assert_eq!(quantize(1.5 / 255.0), 2);
        assert_eq!(quantize(2.5 / 255.0), 2);
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(5, 7, 3, |x, y, c| ((x * 31 + y * 17 + c * 90) % 256) as f64 / 255.0);
        let p = dir.path().join("a.png");
        write_png(&img, &p).unwrap();
        assert_eq!(read_png(&p).unwrap(), img);

        let m = BinaryMask::from_fn(4, 6, |x, y| (x + y) % 3 == 0);
        let q = dir.path().join("m.png");
        write_mask_png(&m, &q).unwrap();
        assert_eq!(read_mask_png(&q).unwrap(), m);
    }

    #[test]
    fn corrupt_png_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"\x89PNG not really").unwrap();
        let err = read_png(&p).unwrap_err().to_string();
        assert!(err.contains("broken.png"), "{err}");
    }
}

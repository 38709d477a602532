use crate::error::{ensure, Result};
use crate::image::{BinaryMask, ImageBuffer};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ensure!(a.same_dims(b), "mse: image dimensions differ");
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB with peak 1.0. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR over the pixels selected by `mask` (all channels).
pub fn psnr_masked(a: &ImageBuffer, b: &ImageBuffer, mask: &BinaryMask) -> Result<f64> {
    ensure!(a.same_dims(b), "psnr: image dimensions differ");
    ensure!(mask.height == a.height && mask.width == a.width, "psnr: mask does not match the image");
    let ch = a.channels;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..ch {
            let d = a.data[i * ch + c] - b.data[i * ch + c];
            sum += d * d;
        }
        n += ch;
    }
    ensure!(n > 0, "psnr: empty mask");
    Ok(psnr_from_mse(sum / n as f64))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut g: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Mean structural similarity over all fully-contained 11x11 Gaussian
/// windows (sigma 1.5) and all channels, for images in [0, 1].
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ensure!(a.same_dims(b), "ssim: image dimensions differ");
    ensure!(
        a.height >= SSIM_WINDOW && a.width >= SSIM_WINDOW,
        "ssim: image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
        a.width,
        a.height
    );
    let g = gaussian_window();
    let (w, h, ch) = (a.width, a.height, a.channels);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);

    // Separable valid-mode filtering of one plane.
    let filter = |plane: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; h * ow];
        for y in 0..h {
            for x in 0..ow {
                tmp[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * plane[y * w + x + k]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * tmp[(y + k) * ow + x]).sum();
            }
        }
        out
    };

    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = (0..w * h).map(|i| a.data[i * ch + c]).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.data[i * ch + c]).collect();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let (mu_a, mu_b) = (filter(&pa), filter(&pb));
        let (e_aa, e_bb, e_ab) = (filter(&aa), filter(&bb), filter(&ab));
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    Ok(total / (oh * ow * ch) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 3, |x, y, c| 0.5 + 0.4 * ((x as f64 * 0.7 + y as f64 * 0.3 + c as f64).sin()))
    }

    #[test]
    fn psnr_examples() {
        let a = ImageBuffer::from_fn(4, 4, 1, |_, _, _| 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = ImageBuffer::from_fn(4, 4, 1, |_, _, _| 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = ImageBuffer::from_fn(4, 4, 1, |_, _, _| 0.51);
        assert!((psnr(&a, &c).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = pattern(16, 14);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = ImageBuffer::from_fn(14, 16, 3, |x, y, c| 1.0 - a.get(x, y, c));
        let s = ssim(&a, &neg).unwrap();
        assert!(s < 1.0);
        assert!((s - ssim(&neg, &a).unwrap()).abs() < 1e-10);
        assert!((-1.0..=1.0).contains(&s));
    }

    /// Values frozen from scikit-image `structural_similarity` with
    /// gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    /// data_range=1.0 on the same analytic patterns.
    #[test]
    fn ssim_matches_reference_implementation() {
        let a =
            ImageBuffer::from_fn(24, 32, 3, |x, y, c| 0.5 + 0.4 * (0.7 * x as f64 + 0.3 * y as f64 + c as f64).sin());
        let b = ImageBuffer::from_fn(24, 32, 3, |x, y, c| {
            0.5 + 0.35 * (0.5 * x as f64 - 0.4 * y as f64 + 2.0 * c as f64).cos()
        });
        assert!((ssim(&a, &b).unwrap() - 0.026800693403523534).abs() < 1e-4);
        let b2 = ImageBuffer::from_fn(24, 32, 3, |x, y, c| a.get(x, y, c) + 0.1 * (3.1 * (x * y) as f64 + 0.2).sin());
        assert!((ssim(&a, &b2).unwrap() - 0.9580244949959749).abs() < 1e-4);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = pattern(10, 20);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn masked_psnr_uses_only_masked_pixels() {
        let a = ImageBuffer::from_fn(2, 2, 1, |_, _, _| 0.5);
        let mut b = a.clone();
        b.set(0, 0, 0, 0.6);
        let all = BinaryMask::full(2, 2);
        let one = BinaryMask::from_fn(2, 2, |x, y| x == 1 && y == 1);
        assert_eq!(psnr_masked(&a, &b, &one).unwrap(), f64::INFINITY);
        assert!(psnr_masked(&a, &b, &all).unwrap() < 30.0);
    }
}

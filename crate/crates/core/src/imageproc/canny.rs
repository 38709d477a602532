use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::ImageBuffer;

/// Thresholds apply to the gradient magnitude in intensity units per pixel
/// (Sobel response divided by 8), so a sharp unit step scores about 0.4
/// after the default blur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { low_threshold: 0.1, high_threshold: 0.2, sigma: 1.0 }
    }
}

/// Canny edge map: Gaussian blur, Sobel gradients, non-maximum suppression,
/// hysteresis. Colour input is averaged to gray first. The result is a
/// single-channel image holding 0.0 or 1.0.
pub fn canny(image: &ImageBuffer, params: &CannyParams) -> Result<ImageBuffer> {
    let CannyParams { low_threshold: low, high_threshold: high, sigma } = *params;
    ensure!(low > 0.0 && low < high, "canny thresholds must satisfy 0 < low < high, got {low} / {high}");
    ensure!(sigma > 0.0, "canny sigma must be positive, got {sigma}");

    let (w, h) = (image.width, image.height);
    let gray = image.to_gray().data;
    let blurred = gaussian_blur(&gray, w, h, sigma);

    let mut mag = vec![0.0; w * h];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let at = |x: usize, y: usize| blurred[y * w + x];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y * w + x;
            gx[i] = dx / 8.0;
            gy[i] = dy / 8.0;
            mag[i] = gx[i].hypot(gy[i]);
        }
    }

    // Non-maximum suppression along the quantised gradient direction. Ties
    // keep the pixel on the negative side so plateaus two pixels wide thin
    // to one.
    let mut thin = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m < low {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (ox, oy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let prev = mag[((y as isize - oy) as usize) * w + (x as isize - ox) as usize];
            let next = mag[((y as isize + oy) as usize) * w + (x as isize + ox) as usize];
            if m > prev && m >= next {
                thin[i] = m;
            }
        }
    }

    let mut edges = vec![0.0; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            edges[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if edges[j] == 0.0 && thin[j] >= low {
                    edges[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    ImageBuffer::new(h, w, 1, edges)
}

/// Separable Gaussian blur (radius ceil(3 sigma)) with clamp-to-edge borders.
pub(crate) fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= norm);

    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + clamp(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

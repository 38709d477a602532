use crate::dataio::StereoSample;
use crate::error::{ensure, Result};
use crate::image::DisparityMap;
use crate::par::prelude::*;

/// Gray-level standard deviation below which the input counts as textureless.
pub const TEXTURELESS_STD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatch {
    /// Integer disparities; pixels failing the left-right check are invalid.
    pub disparity: DisparityMap,
    pub low_confidence: bool,
}

/// Box sum with the window clipped to the frame.
fn box_sum(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let mut prefix = vec![0.0; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + line[x];
        }
        for x in 0..w {
            let (a, b) = (x.saturating_sub(r), (x + r + 1).min(w));
            rows[y * w + x] = prefix[b] - prefix[a];
        }
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        let mut prefix = vec![0.0; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x];
        }
        for y in 0..h {
            let (a, b) = (y.saturating_sub(r), (y + r + 1).min(h));
            out[y * w + x] = prefix[b] - prefix[a];
        }
    }
    out
}

/// Winner-take-all SAD block matching on gray images, left referenced, with
/// a left-right consistency check (tolerance 1 px). Ties go to the smaller
/// disparity. Matching costs are aggregated over `block`x`block` windows.
pub fn estimate_disparity_blockmatch(sample: &StereoSample, max_disparity: usize, block: usize) -> Result<BlockMatch> {
    let (l, r) = (sample.left.to_gray(), sample.right.to_gray());
    ensure!(l.width == r.width && l.height == r.height, "left and right views differ in size");
    let (w, h) = (l.width, l.height);
    ensure!(max_disparity < w, "max_disparity {max_disparity} must be below the width {w}");
    ensure!(block % 2 == 1, "block size must be odd, got {block}");
    let radius = block / 2;

    // cost[d][y*w + x]: aggregated |L(x) - R(x - d)|, unmatched columns cost 1
    let cost: Vec<Vec<f64>> = (0..=max_disparity)
        .into_par_iter()
        .map(|d| {
            let mut raw = vec![1.0; w * h];
            for y in 0..h {
                for x in d..w {
                    raw[y * w + x] = (l.data[y * w + x] - r.data[y * w + x - d]).abs();
                }
            }
            box_sum(&raw, w, h, radius)
        })
        .collect();

    let mut left_d = vec![0usize; w * h];
    let mut right_d = vec![0usize; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut best = 0;
            for d in 1..=max_disparity.min(x) {
                if cost[d][i] < cost[best][i] {
                    best = d;
                }
            }
            left_d[i] = best;
            // right pixel x matches left pixel x + d
            let mut best = 0;
            for d in 1..=max_disparity.min(w - 1 - x) {
                if cost[d][i + d] < cost[best][i + best] {
                    best = d;
                }
            }
            right_d[i] = best;
        }
    }

    let mut disparity = DisparityMap::constant(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d = left_d[i];
            disparity.values[i] = d as f64;
            disparity.valid[i] = right_d[y * w + x - d].abs_diff(d) <= 1;
        }
    }

    let n = (w * h) as f64;
    let mean = l.data.iter().sum::<f64>() / n;
    let std = (l.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let low_confidence = std < TEXTURELESS_STD;
    if low_confidence {
        log::warn!("{}: textureless input, disparity estimate is low-confidence", sample.id);
    }
    Ok(BlockMatch { disparity, low_confidence })
}

//! Stereo-aware training samples: a virtual fronto-parallel occluder is pasted
//! onto a real stereo pair, so the hidden content under it is known exactly.

mod blockmatch;
mod persist;

pub use blockmatch::{estimate_disparity_blockmatch, BlockMatch, TEXTURELESS_STD};
pub use persist::{load_inference_input, load_training_set, save_training_set, TrainingManifest, TrainingRecord};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::StereoSample;
use crate::error::{ensure, Error, Result};
use crate::image::{BinaryMask, DisparityMap, ImageBuffer};
use crate::imageproc::{canny, warp_by_disparity, warp_mask_by_disparity, CannyParams, WarpDirection};
use crate::maskbank::MaskBank;
use crate::par::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenParams {
    pub crop_size: usize,
    /// Fixed square context with a centred square hole instead of bank masks.
    pub square_masks: bool,
    /// Added to the occluder disparity on top of the maximum under S.
    pub disparity_margin: f64,
    pub block: usize,
    /// `None` means a quarter of the image width.
    pub max_disparity: Option<usize>,
    pub retries: usize,
    pub canny: CannyParams,
}

impl Default for DatagenParams {
    fn default() -> Self {
        Self {
            crop_size: 256,
            square_masks: false,
            disparity_margin: 0.0,
            block: 9,
            max_disparity: None,
            retries: 10,
            canny: CannyParams::default(),
        }
    }
}

/// Network-facing part of a sample; everything lives in the left crop frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub cc_left: ImageBuffer,
    pub edges: BinaryMask,
    pub cc_right_warped: ImageBuffer,
    /// Pixels of `cc_right_warped` that carry right-view content.
    pub stereo_validity: BinaryMask,
    pub context_mask: BinaryMask,
    pub synthesis_mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub scene_id: String,
    /// Bank entry index; `None` in square-mask mode.
    pub mask_id: Option<usize>,
    pub input: NetworkInput,
    pub cs_left: ImageBuffer,
    pub gt_left: ImageBuffer,
    /// Right view over the same crop window.
    pub right: ImageBuffer,
    /// Estimated scene disparity over the crop.
    pub disparity: DisparityMap,
    pub gt_disparity: Option<DisparityMap>,
    pub object_disparity: f64,
    pub crop_origin: (usize, usize),
}

/// Independent per-sample seed derived from the master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

fn place(mask: &BinaryMask, ox: isize, oy: isize, size: usize) -> BinaryMask {
    BinaryMask::from_fn(size, size, |x, y| mask.get_signed(x as isize - ox, y as isize - oy))
}

/// Context and synthesis masks in crop coordinates plus the bank index.
fn sample_masks(
    rng: &mut ChaCha8Rng,
    bank: Option<&MaskBank>,
    params: &DatagenParams,
) -> Result<(BinaryMask, BinaryMask, Option<usize>)> {
    let size = params.crop_size;
    if params.square_masks {
        let (outer, inner) = (size / 2, size / 4);
        ensure!(inner >= 1, "crop {size} too small for square masks");
        let ox = rng.random_range(0..=size - outer);
        let oy = rng.random_range(0..=size - outer);
        let off = (outer - inner) / 2;
        let s = BinaryMask::from_fn(size, size, |x, y| {
            (ox + off..ox + off + inner).contains(&x) && (oy + off..oy + off + inner).contains(&y)
        });
        let c = BinaryMask::from_fn(size, size, |x, y| {
            (ox..ox + outer).contains(&x) && (oy..oy + outer).contains(&y) && !s.get(x, y)
        });
        return Ok((c, s, None));
    }
    let bank = bank.ok_or_else(|| Error::contract("a mask bank is required unless square masks are used"))?;
    ensure!(!bank.is_empty(), "mask bank is empty");
    for _ in 0..params.retries.max(1) {
        let id = rng.random_range(0..bank.len());
        let pair = &bank.entries[id];
        let (mw, mh) = (pair.context.width, pair.context.height);
        if mw > size || mh > size {
            continue;
        }
        // a quarter of the mask may hang over each border
        let ox = rng.random_range(-((mw / 4) as i64)..=(size - mw + mw / 4) as i64) as isize;
        let oy = rng.random_range(-((mh / 4) as i64)..=(size - mh + mh / 4) as i64) as isize;
        let c = place(&pair.context, ox, oy, size);
        let s = place(&pair.synthesis, ox, oy, size);
        if !c.is_empty() && !s.is_empty() {
            return Ok((c, s, Some(id)));
        }
    }
    Err(Error::data(format!("no mask fitted a {size}x{size} crop after {} attempts", params.retries.max(1))))
}

/// Block-matched disparity with the configured search range.
pub fn estimate_for(sample: &StereoSample, params: &DatagenParams) -> Result<BlockMatch> {
    let max_d = params.max_disparity.unwrap_or(sample.left.width / 4).min(sample.left.width - 1);
    estimate_disparity_blockmatch(sample, max_d, params.block)
}

/// One training sample from a scene and its disparity estimate.
pub fn generate_sample_with_estimate(
    sample: &StereoSample,
    estimate: &DisparityMap,
    bank: Option<&MaskBank>,
    seed: u64,
    params: &DatagenParams,
) -> Result<TrainingSample> {
    let (w, h, size) = (sample.left.width, sample.left.height, params.crop_size);
    ensure!(size <= w && size <= h, "crop {size} does not fit {}: {w}x{h}", sample.id);
    ensure!(sample.right.width == w && sample.right.height == h, "{}: left and right views differ in size", sample.id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.random_range(0..=w - size);
    let y0 = rng.random_range(0..=h - size);
    let (context, synthesis, mask_id) = sample_masks(&mut rng, bank, params)?;

    let gt_left = sample.left.crop(x0 as isize, y0 as isize, size, size);
    let right = sample.right.crop(x0 as isize, y0 as isize, size, size);
    let cc_left = gt_left.masked(&context);
    let cs_left = gt_left.masked(&synthesis);
    let edges_img = canny(&cc_left.add(&cs_left)?, &params.canny)?;
    let edges = BinaryMask::from_fn(size, size, |x, y| edges_img.get(x, y, 0) > 0.5);

    let disparity = estimate.crop(x0 as isize, y0 as isize, size, size);
    let mut max_under_s = f64::NEG_INFINITY;
    for i in 0..size * size {
        if synthesis.data[i] && disparity.valid[i] {
            max_under_s = max_under_s.max(disparity.values[i]);
        }
    }
    if !max_under_s.is_finite() {
        return Err(Error::data(format!("{}: no valid disparity under the synthesis mask", sample.id)));
    }
    let object_disparity = max_under_s + params.disparity_margin;

    // occluder context seen from the right camera, then pulled back into the
    // left frame through the scene disparity
    let context_full =
        BinaryMask::from_fn(h, w, |x, y| context.get_signed(x as isize - x0 as isize, y as isize - y0 as isize));
    let context_right = context_full.shifted(object_disparity.round() as isize, 0);
    let cc_right = sample.right.masked(&context_right);
    let warped = warp_by_disparity(&cc_right, estimate, WarpDirection::RightToLeft)?;
    let (support, _) = warp_mask_by_disparity(&context_right, estimate, WarpDirection::RightToLeft)?;
    let support = support.intersection(&warped.valid);
    let stereo_validity = support.crop(x0 as isize, y0 as isize, size, size);
    let cc_right_warped = warped.image.masked(&support).crop(x0 as isize, y0 as isize, size, size);

    Ok(TrainingSample {
        id: String::new(),
        scene_id: sample.id.clone(),
        mask_id,
        input: NetworkInput {
            cc_left,
            edges,
            cc_right_warped,
            stereo_validity,
            context_mask: context,
            synthesis_mask: synthesis,
        },
        cs_left,
        gt_left,
        right,
        disparity,
        gt_disparity: sample.gt_disparity.as_ref().map(|d| d.crop(x0 as isize, y0 as isize, size, size)),
        object_disparity,
        crop_origin: (x0, y0),
    })
}

/// Like [`generate_sample_with_estimate`], estimating disparity first.
pub fn generate_sample(
    sample: &StereoSample,
    bank: Option<&MaskBank>,
    seed: u64,
    params: &DatagenParams,
) -> Result<TrainingSample> {
    let est = estimate_for(sample, params)?;
    generate_sample_with_estimate(sample, &est.disparity, bank, seed, params)
}

/// `count` samples cycling over the scenes. A sample whose scene fails
/// (no fitting mask, no valid disparity) moves on to the next scene; the run
/// fails only when every scene fails for some sample.
pub fn generate_dataset(
    scenes: &[StereoSample],
    bank: Option<&MaskBank>,
    count: usize,
    seed: u64,
    params: &DatagenParams,
) -> Result<Vec<TrainingSample>> {
    ensure!(count >= 1, "sample count must be at least 1");
    if scenes.is_empty() {
        return Err(Error::data("no input scenes"));
    }
    let estimates =
        scenes.par_iter().map(|s| estimate_for(s, params).map(|b| b.disparity)).collect::<Result<Vec<_>>>()?;
    let n = scenes.len();
    let results: Vec<Result<TrainingSample>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..n {
                let k = (i + attempt) % n;
                let sample_seed = derive_seed(seed, (i * n + attempt) as u64);
                match generate_sample_with_estimate(&scenes[k], &estimates[k], bank, sample_seed, params) {
                    Ok(mut s) => {
                        s.id = format!("{i:06}");
                        return Ok(s);
                    }
                    Err(e @ Error::Data(_)) => {
                        log::warn!("sample {i}: scene {} skipped: {e}", scenes[k].id);
                        last = Some(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last.unwrap_or_else(|| Error::data("generation failed")))
        })
        .collect();
    results.into_iter().collect()
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkInput, TrainingSample};
use crate::dataio::{read_json, read_mask_png, read_pfm, read_png, write_json, write_mask_png, write_pfm, write_png};
use crate::error::{ensure, Result};
use crate::image::{BinaryMask, DisparityMap, ImageBuffer};
use crate::imageproc::{canny, CannyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub scene_id: String,
    pub mask_id: Option<usize>,
    pub object_disparity: f64,
    pub crop_origin: (usize, usize),
    /// Directory holding the sample's files, relative to the set root.
    pub dir: String,
    pub has_gt_disparity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub crop_size: usize,
    pub entries: Vec<TrainingRecord>,
}

fn valid_mask(d: &DisparityMap) -> BinaryMask {
    BinaryMask { height: d.height, width: d.width, data: d.valid.clone() }
}

fn with_validity(mut d: DisparityMap, valid: &BinaryMask) -> Result<DisparityMap> {
    ensure!(valid.width == d.width && valid.height == d.height, "disparity validity size mismatch");
    d.valid = valid.data.clone();
    Ok(d)
}

/// One directory per sample under `root/samples/` plus `root/manifest.json`.
pub fn save_training_set(root: &Path, samples: &[TrainingSample]) -> Result<TrainingManifest> {
    ensure!(!samples.is_empty(), "nothing to save");
    let crop_size = samples[0].gt_left.width;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("samples/{}", s.id);
        let dir = root.join(&rel);
        let inp = &s.input;
        write_png(&s.gt_left, &dir.join("gt_left.png"))?;
        write_png(&s.right, &dir.join("right.png"))?;
        write_png(&inp.cc_left, &dir.join("cc_left.png"))?;
        write_png(&s.cs_left, &dir.join("cs_left.png"))?;
        write_mask_png(&inp.edges, &dir.join("edges.png"))?;
        write_png(&inp.cc_right_warped, &dir.join("cc_right_warped.png"))?;
        write_mask_png(&inp.stereo_validity, &dir.join("stereo_validity.png"))?;
        write_mask_png(&inp.context_mask, &dir.join("context_mask.png"))?;
        write_mask_png(&inp.synthesis_mask, &dir.join("synthesis_mask.png"))?;
        write_pfm(&s.disparity, &dir.join("disparity.pfm"))?;
        write_mask_png(&valid_mask(&s.disparity), &dir.join("disparity_valid.png"))?;
        if let Some(gt) = &s.gt_disparity {
            write_pfm(gt, &dir.join("gt_disparity.pfm"))?;
            write_mask_png(&valid_mask(gt), &dir.join("gt_disparity_valid.png"))?;
        }
        entries.push(TrainingRecord {
            id: s.id.clone(),
            scene_id: s.scene_id.clone(),
            mask_id: s.mask_id,
            object_disparity: s.object_disparity,
            crop_origin: s.crop_origin,
            dir: rel,
            has_gt_disparity: s.gt_disparity.is_some(),
        });
    }
    let manifest = TrainingManifest { crop_size, entries };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads a set written by [`save_training_set`], in manifest order.
pub fn load_training_set(root: &Path) -> Result<Vec<TrainingSample>> {
    let manifest: TrainingManifest = read_json(&root.join("manifest.json"))?;
    manifest
        .entries
        .iter()
        .map(|r| {
            let dir = root.join(&r.dir);
            let gt_disparity = if r.has_gt_disparity {
                Some(with_validity(
                    read_pfm(&dir.join("gt_disparity.pfm"))?,
                    &read_mask_png(&dir.join("gt_disparity_valid.png"))?,
                )?)
            } else {
                None
            };
            Ok(TrainingSample {
                id: r.id.clone(),
                scene_id: r.scene_id.clone(),
                mask_id: r.mask_id,
                input: NetworkInput {
                    cc_left: read_png(&dir.join("cc_left.png"))?,
                    edges: read_mask_png(&dir.join("edges.png"))?,
                    cc_right_warped: read_png(&dir.join("cc_right_warped.png"))?,
                    stereo_validity: read_mask_png(&dir.join("stereo_validity.png"))?,
                    context_mask: read_mask_png(&dir.join("context_mask.png"))?,
                    synthesis_mask: read_mask_png(&dir.join("synthesis_mask.png"))?,
                },
                cs_left: read_png(&dir.join("cs_left.png"))?,
                gt_left: read_png(&dir.join("gt_left.png"))?,
                right: read_png(&dir.join("right.png"))?,
                disparity: with_validity(
                    read_pfm(&dir.join("disparity.pfm"))?,
                    &read_mask_png(&dir.join("disparity_valid.png"))?,
                )?,
                gt_disparity,
                object_disparity: r.object_disparity,
                crop_origin: r.crop_origin,
            })
        })
        .collect()
}

/// Network inputs from a sample directory. Only `cc_left.png`,
/// `context_mask.png` and `synthesis_mask.png` are required; a missing edge
/// map is computed with Canny and missing stereo context is left empty.
pub fn load_inference_input(dir: &Path, canny_params: &CannyParams) -> Result<NetworkInput> {
    let cc_left = read_png(&dir.join("cc_left.png"))?.to_rgb();
    let context_mask = read_mask_png(&dir.join("context_mask.png"))?;
    let synthesis_mask = read_mask_png(&dir.join("synthesis_mask.png"))?;
    let (w, h) = (cc_left.width, cc_left.height);
    let edges_path = dir.join("edges.png");
    let edges = if edges_path.is_file() {
        read_mask_png(&edges_path)?
    } else {
        log::info!("{}: no edge map, generating one with Canny", dir.display());
        let e = canny(&cc_left, canny_params)?;
        BinaryMask::from_fn(h, w, |x, y| e.get(x, y, 0) > 0.5)
    };
    let right_path = dir.join("cc_right_warped.png");
    let (cc_right_warped, stereo_validity) = if right_path.is_file() {
        (read_png(&right_path)?.to_rgb(), read_mask_png(&dir.join("stereo_validity.png"))?)
    } else {
        log::info!("{}: no stereo context", dir.display());
        (ImageBuffer::zeros(h, w, 3), BinaryMask::empty(h, w))
    };
    for (name, m) in [
        ("context_mask", &context_mask),
        ("synthesis_mask", &synthesis_mask),
        ("edges", &edges),
        ("stereo_validity", &stereo_validity),
    ] {
        ensure!(
            m.width == w && m.height == h,
            "{}: {name} is {}x{}, cc_left is {w}x{h}",
            dir.display(),
            m.width,
            m.height
        );
    }
    Ok(NetworkInput { cc_left, edges, cc_right_warped, stereo_validity, context_mask, synthesis_mask })
}

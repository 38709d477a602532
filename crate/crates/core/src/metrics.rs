//! Evaluation: DispE, PSNR/SSIM over the full crop or the synthesis region,
//! a feature-space distance, and report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::datagen::{estimate_disparity_blockmatch, TrainingSample};
use crate::dataio::{write_json, write_png, StereoSample};
use crate::error::{ensure, Error, Result};
use crate::image::{BinaryMask, DisparityMap, ImageBuffer};
use crate::imageproc::{psnr_masked, ssim, SSIM_WINDOW};
use crate::losses::perceptual_loss;
use crate::network::FeatureExtractor;

pub const FEATURE_DIST_LABEL: &str = "feature-dist (non-comparable to paper LPIPS)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispEConfig {
    pub p1: f64,
    pub p2: f64,
}

impl Default for DispEConfig {
    fn default() -> Self {
        Self { p1: 3.0, p2: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispEResult {
    /// Percentage of erroneous pixels among the evaluated ones.
    pub percent: f64,
    pub evaluated: usize,
    /// Pixels with invalid or non-positive ground truth.
    pub excluded: usize,
}

/// Percentage of pixels where the estimate misses the ground truth by more
/// than `p1` px and by more than `p2` relative. Validity of the estimate is
/// not consulted.
pub fn disp_e(est: &DisparityMap, gt: &DisparityMap, cfg: &DispEConfig) -> Result<DispEResult> {
    ensure!(
        est.width == gt.width && est.height == gt.height,
        "disp_e: estimate {}x{} vs ground truth {}x{}",
        est.width,
        est.height,
        gt.width,
        gt.height
    );
    ensure!(cfg.p1 > 0.0 && cfg.p2 > 0.0, "disp_e thresholds must be positive");
    let (mut bad, mut evaluated, mut excluded) = (0usize, 0usize, 0usize);
    for ((&e, &g), &valid) in est.values.iter().zip(&gt.values).zip(&gt.valid) {
        if !valid || g <= 0.0 {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let err = (e - g).abs();
        if err > cfg.p1 && err / g > cfg.p2 {
            bad += 1;
        }
    }
    let percent = if evaluated == 0 { 0.0 } else { 100.0 * bad as f64 / evaluated as f64 };
    Ok(DispEResult { percent, evaluated, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Context plus synthesis: every pixel a sample has ground truth for.
    #[default]
    Full,
    /// Metrics restricted to the synthesis mask.
    Synthesis,
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scope::Full),
            "synthesis" | "synthesis_only" => Ok(Scope::Synthesis),
            other => Err(Error::contract(format!("unknown scope {other:?} (expected full or synthesis)"))),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scope::Full => "full",
            Scope::Synthesis => "synthesis",
        })
    }
}

/// JSON has no infinity; write it as the string "inf".
fn finite_or_tag<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub id: String,
    #[serde(serialize_with = "finite_or_tag")]
    pub psnr: f64,
    pub ssim: f64,
    /// Mean absolute error over synthesis pixels and channels.
    pub l1_synthesis: f64,
    pub feature_dist: f64,
    pub disp_e: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    #[serde(serialize_with = "finite_or_tag")]
    pub psnr: f64,
    pub ssim: f64,
    pub l1_synthesis: f64,
    pub feature_dist: f64,
    pub disp_e: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scope: Scope,
    pub feature_dist_label: String,
    pub samples: Vec<SampleMetrics>,
    pub aggregate: Aggregate,
}

/// Anything that turns a sample into a composited left image.
pub trait Inpainter {
    fn inpaint(&self, samples: &[&TrainingSample]) -> Result<Vec<ImageBuffer>>;
}

/// Returns the ground truth; useful to pin metric sentinels.
pub struct GroundTruthInpainter;

impl Inpainter for GroundTruthInpainter {
    fn inpaint(&self, samples: &[&TrainingSample]) -> Result<Vec<ImageBuffer>> {
        Ok(samples.iter().map(|s| s.gt_left.clone()).collect())
    }
}

/// Bounding box of `mask` grown to at least `min` px per side and clipped to
/// the frame: (x0, y0, w, h).
fn support_box(mask: &BinaryMask, min: usize) -> Option<(usize, usize, usize, usize)> {
    let (x0, y0, x1, y1) = mask.bbox()?;
    let grow = |lo: usize, hi: usize, limit: usize| {
        let mut lo = lo as isize;
        let mut hi = hi as isize;
        while ((hi - lo + 1) as usize) < min.min(limit) {
            if lo > 0 {
                lo -= 1;
            }
            if ((hi - lo + 1) as usize) < min.min(limit) && hi < limit as isize - 1 {
                hi += 1;
            }
        }
        (lo as usize, (hi - lo + 1) as usize)
    };
    let (bx, bw) = grow(x0, x1, mask.width);
    let (by, bh) = grow(y0, y1, mask.height);
    Some((bx, by, bw, bh))
}

/// SSIM inside the bounding box of `region` with every pixel outside the
/// region replaced by ground truth in both images.
pub fn ssim_region(output: &ImageBuffer, gt: &ImageBuffer, region: &BinaryMask) -> Result<f64> {
    let s = region;
    let Some((x0, y0, w, h)) = support_box(s, SSIM_WINDOW) else {
        return Ok(1.0);
    };
    let mut a = gt.clone();
    for y in 0..gt.height {
        for x in 0..gt.width {
            if s.get(x, y) {
                for c in 0..gt.channels {
                    a.set(x, y, c, output.get(x, y, c));
                }
            }
        }
    }
    let (xa, ya) = (x0 as isize, y0 as isize);
    ssim(&a.crop(xa, ya, w, h), &gt.crop(xa, ya, w, h))
}

fn l1_on(output: &ImageBuffer, gt: &ImageBuffer, s: &BinaryMask) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..gt.height {
        for x in 0..gt.width {
            if s.get(x, y) {
                for c in 0..gt.channels {
                    sum += (output.get(x, y, c) - gt.get(x, y, c)).abs();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metrics of one composited result against its sample.
pub fn sample_metrics(
    output: &ImageBuffer,
    sample: &TrainingSample,
    scope: Scope,
    fe: &FeatureExtractor,
    dispe: &DispEConfig,
) -> Result<SampleMetrics> {
    let gt = &sample.gt_left;
    ensure!(output.same_dims(gt), "{}: output and ground truth differ in size", sample.id);
    let s = &sample.input.synthesis_mask;
    let region = match scope {
        Scope::Full => s.union(&sample.input.context_mask),
        Scope::Synthesis => s.clone(),
    };
    let (p, q) = (psnr_masked(output, gt, &region)?, ssim_region(output, gt, &region)?);
    let feature_dist =
        perceptual_loss(fe, &output.masked(&region).to_tensor(), &gt.masked(&region).to_tensor())?.item();
    let disp_e = match &sample.gt_disparity {
        Some(gt_d) => {
            let pair = StereoSample {
                id: sample.id.clone(),
                left: output.clone(),
                right: sample.right.clone(),
                gt_disparity: None,
            };
            let max_d = (output.width / 4).max(1);
            let est = estimate_disparity_blockmatch(&pair, max_d, 9)?;
            Some(disp_e(&est.disparity, gt_d, dispe)?.percent)
        }
        None => None,
    };
    Ok(SampleMetrics {
        id: sample.id.clone(),
        psnr: p,
        ssim: q,
        l1_synthesis: l1_on(output, gt, s),
        feature_dist,
        disp_e,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Run `inpainter` over `samples` (batches of `batch_size`) and score every
/// result. Results are ordered by sample id.
pub fn evaluate_inpainting(
    inpainter: &dyn Inpainter,
    samples: &[TrainingSample],
    scope: Scope,
    batch_size: usize,
    fe: &FeatureExtractor,
    dispe: &DispEConfig,
) -> Result<(EvalReport, Vec<ImageBuffer>)> {
    ensure!(!samples.is_empty(), "no samples to evaluate");
    let mut order: Vec<&TrainingSample> = samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut outputs = Vec::with_capacity(order.len());
    for chunk in order.chunks(batch_size.max(1)) {
        outputs.extend(inpainter.inpaint(chunk)?);
    }
    let per: Vec<SampleMetrics> =
        order.iter().zip(&outputs).map(|(s, o)| sample_metrics(o, s, scope, fe, dispe)).collect::<Result<_>>()?;
    let disp: Vec<f64> = per.iter().filter_map(|m| m.disp_e).collect();
    let aggregate = Aggregate {
        psnr: mean(per.iter().map(|m| m.psnr)),
        ssim: mean(per.iter().map(|m| m.ssim)),
        l1_synthesis: mean(per.iter().map(|m| m.l1_synthesis)),
        feature_dist: mean(per.iter().map(|m| m.feature_dist)),
        disp_e: (!disp.is_empty()).then(|| mean(disp.iter().copied())),
        samples: per.len(),
    };
    Ok((EvalReport { scope, feature_dist_label: FEATURE_DIST_LABEL.to_string(), samples: per, aggregate }, outputs))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scope: {}", self.scope);
        let _ = writeln!(out, "columns: id psnr_db ssim l1_synthesis {} dispe_percent", self.feature_dist_label);
        for m in &self.samples {
            let _ = writeln!(
                out,
                "{} {:.4} {:.6} {:.6} {:.6} {}",
                m.id,
                m.psnr,
                m.ssim,
                m.l1_synthesis,
                m.feature_dist,
                fmt_opt(m.disp_e)
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(out, "[aggregate over {} samples]", a.samples);
        let _ = writeln!(out, "psnr_db {:.4}", a.psnr);
        let _ = writeln!(out, "ssim {:.6}", a.ssim);
        let _ = writeln!(out, "l1_synthesis {:.6}", a.l1_synthesis);
        let _ = writeln!(out, "{} {:.6}", self.feature_dist_label, a.feature_dist);
        let _ = writeln!(out, "dispe_percent {}", fmt_opt(a.disp_e));
        out
    }

    /// `report.txt`, `summary.json` and one side-by-side PNG per sample
    /// (input | output | ground truth | |difference|).
    pub fn write(&self, dir: &Path, samples: &[TrainingSample], outputs: &[ImageBuffer]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("report.txt"), self.to_text()).map_err(|e| Error::io(dir.join("report.txt"), e))?;
        write_json(&dir.join("summary.json"), self)?;
        for (m, out) in self.samples.iter().zip(outputs) {
            let s =
                samples.iter().find(|s| s.id == m.id).ok_or_else(|| Error::data(format!("sample {} missing", m.id)))?;
            write_png(&side_by_side(&s.input.cc_left, out, &s.gt_left), &dir.join(format!("{}_compare.png", m.id)))?;
        }
        Ok(())
    }
}

fn side_by_side(input: &ImageBuffer, output: &ImageBuffer, gt: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (gt.width, gt.height);
    let panels = [input.to_rgb(), output.to_rgb(), gt.to_rgb()];
    ImageBuffer::from_fn(h, 4 * w, 3, |x, y, c| {
        let (k, px) = (x / w, x % w);
        if k < 3 {
            panels[k].get(px, y, c)
        } else {
            (panels[1].get(px, y, c) - panels[2].get(px, y, c)).abs()
        }
    })
}

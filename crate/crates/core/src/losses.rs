//! Training objectives: stereo consistency through patch NCC, masked L1
//! reconstruction, perceptual and style terms on fixed features, total
//! variation, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{BinaryMask, DisparityMap, ImageBuffer};
use crate::imageproc::{patch_indices, warp_by_disparity, WarpDirection};
use crate::network::FeatureExtractor;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub synthesis: f64,
    pub context: f64,
    pub perceptual: f64,
    pub style: f64,
    pub tv: f64,
    pub disparity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { synthesis: 6.0, context: 1.0, perceptual: 0.05, style: 120.0, tv: 0.1, disparity: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            ensure!(w >= 0.0 && w.is_finite(), "loss weight {name} must be >= 0, got {w}");
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("synthesis", self.synthesis),
            ("context", self.context),
            ("perceptual", self.perceptual),
            ("style", self.style),
            ("tv", self.tv),
            ("disparity", self.disparity),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisparityLossConfig {
    pub patch_size: usize,
    /// Use every `stride`-th synthesis pixel in raster order.
    pub stride: usize,
}

impl Default for DisparityLossConfig {
    fn default() -> Self {
        Self { patch_size: 7, stride: 1 }
    }
}

/// `Φ = Σ|x·y| / (‖x‖_F ‖y‖_F)` over whole tensors; 0 for two zero tensors.
pub fn ncc(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    ensure!(x.shape() == y.shape(), "ncc: shapes {:?} and {:?} differ", x.shape(), y.shape());
    let n = x.numel();
    x.reshape(&[1, n])?.ncc_rows(&y.reshape(&[1, n])?)?.reshape(&[])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DisparityLossStats {
    /// Synthesis pixels that contributed a patch comparison.
    pub used: usize,
    /// Synthesis pixels skipped for invalid disparity or an out-of-frame match.
    pub skipped: usize,
}

/// Mean over synthesis pixels `i` of `1 − Φ(P_I(i), P_R(i))`, where `P_R` is
/// the patch of the other view warped into this frame by `disparity`.
/// `inpainted` is a `[N, 3, H, W]` batch and `index` selects the sample.
pub fn disparity_loss(
    inpainted: &Tensor,
    index: usize,
    other_view: &ImageBuffer,
    synthesis: &BinaryMask,
    disparity: &DisparityMap,
    cfg: &DisparityLossConfig,
) -> Result<(Tensor, DisparityLossStats)> {
    let (n, c, h, w) = inpainted.dims4("disparity_loss")?;
    ensure!(c == 3 && index < n, "disparity_loss: bad batch index {index} for {:?}", inpainted.shape());
    ensure!(
        cfg.patch_size % 2 == 1 && cfg.patch_size >= 3 && cfg.stride >= 1,
        "disparity_loss: patch size must be odd >= 3 and stride >= 1"
    );
    ensure!(
        other_view.width == w && other_view.height == h && synthesis.width == w && synthesis.height == h,
        "disparity_loss: size mismatch"
    );
    let warped = warp_by_disparity(&other_view.to_rgb(), disparity, WarpDirection::RightToLeft)?;
    let planar = warped.image.to_planar();
    let base = index * c * h * w;
    let k = c * cfg.patch_size * cfg.patch_size;

    let mut x_idx = Vec::new();
    let mut y_val = Vec::new();
    let mut stats = DisparityLossStats::default();
    let mut seen = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !synthesis.get(x, y) {
                continue;
            }
            seen += 1;
            if (seen - 1) % cfg.stride != 0 {
                continue;
            }
            if !disparity.is_valid(x, y) || !warped.valid.get(x, y) {
                stats.skipped += 1;
                continue;
            }
            stats.used += 1;
            for i in patch_indices(h, w, c, (x as isize, y as isize), cfg.patch_size) {
                x_idx.push(i.map(|i| base + i));
                y_val.push(i.map_or(0.0, |i| planar[i]));
            }
        }
    }
    if stats.used == 0 {
        if stats.skipped > 0 {
            log::warn!("disparity loss: all {} synthesis pixels lack a valid match", stats.skipped);
        }
        return Ok((Tensor::scalar(0.0), stats));
    }
    let p = stats.used;
    let xs = inpainted.gather(x_idx, &[p, k])?;
    let ys = Tensor::new(y_val, &[p, k])?;
    let phi = xs.ncc_rows(&ys)?;
    Ok((phi.mean().neg().add_scalar(1.0), stats))
}

/// Batch mean of [`disparity_loss`].
pub fn disparity_loss_batch(
    inpainted: &Tensor,
    others: &[&ImageBuffer],
    synthesis: &[&BinaryMask],
    disparities: &[&DisparityMap],
    cfg: &DisparityLossConfig,
) -> Result<(Tensor, DisparityLossStats)> {
    let n = inpainted.shape().first().copied().unwrap_or(0);
    ensure!(
        others.len() == n && synthesis.len() == n && disparities.len() == n,
        "disparity_loss_batch: {n} images but {}/{}/{} views/masks/maps",
        others.len(),
        synthesis.len(),
        disparities.len()
    );
    let mut total = Tensor::scalar(0.0);
    let mut stats = DisparityLossStats::default();
    for i in 0..n {
        let (l, s) = disparity_loss(inpainted, i, others[i], synthesis[i], disparities[i], cfg)?;
        total = total.add(&l)?;
        stats.used += s.used;
        stats.skipped += s.skipped;
    }
    Ok((total.scale(1.0 / n as f64), stats))
}

/// `(‖S⊙(I−I_gt)‖₁ / N, ‖C⊙(I−I_gt)‖₁ / N)` with `N` the element count of
/// `I_gt`. Masks are `[N, 1, H, W]`.
pub fn reconstruction_losses(i: &Tensor, gt: &Tensor, s: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
    let diff = i.sub(gt)?;
    let n = gt.numel() as f64;
    Ok((diff.mask_channels(s)?.l1_norm().scale(1.0 / n), diff.mask_channels(c)?.l1_norm().scale(1.0 / n)))
}

/// `Σ_p ‖Ψ_p(I) − Ψ_p(I_gt)‖₁ / N_{Ψ_p}`.
pub fn perceptual_loss(fe: &FeatureExtractor, i: &Tensor, gt: &Tensor) -> Result<Tensor> {
    ensure!(i.shape() == gt.shape(), "perceptual_loss: shapes differ");
    let fi = fe.extract(i)?;
    let fg = fe.extract(&gt.detach())?;
    let mut total = Tensor::scalar(0.0);
    for (a, b) in fi.iter().zip(&fg) {
        total = total.add(&a.sub(&b.detach())?.l1_norm().scale(1.0 / a.numel() as f64))?;
    }
    Ok(total)
}

/// `Σ_p ‖K_p (Ψ_pᵀΨ_p(I) − Ψ_pᵀΨ_p(I_gt))‖₁ / C_p²` with `K_p = 1/(C_p H_p W_p)`,
/// averaged over the batch.
pub fn style_loss(fe: &FeatureExtractor, i: &Tensor, gt: &Tensor) -> Result<Tensor> {
    ensure!(i.shape() == gt.shape(), "style_loss: shapes differ");
    let fi = fe.extract(i)?;
    let fg = fe.extract(&gt.detach())?;
    let mut total = Tensor::scalar(0.0);
    for (a, b) in fi.iter().zip(&fg) {
        let (n, c, h, w) = a.dims4("style_loss features")?;
        let k = 1.0 / (c * h * w) as f64;
        let d = a.gram()?.sub(&b.detach().gram()?)?;
        total = total.add(&d.l1_norm().scale(k / (c * c) as f64 / n as f64))?;
    }
    Ok(total)
}

/// Anisotropic total variation over pixels in `S` (`[N, 1, H, W]`), each
/// term divided by the element count of `I`; neighbours beyond the border
/// are skipped.
pub fn tv_loss(i: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = i.dims4("tv_loss")?;
    ensure!(s.shape() == [n, 1, h, w], "tv_loss: mask shape {:?}", s.shape());
    let m = s.data();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (dx, dy) in [(1usize, 0usize), (0, 1)] {
        for bn in 0..n {
            for y in 0..h - dy {
                for x in 0..w - dx {
                    if m[(bn * h + y) * w + x] != 1.0 {
                        continue;
                    }
                    for ch in 0..c {
                        let base = (bn * c + ch) * h * w;
                        a.push(Some(base + (y + dy) * w + x + dx));
                        b.push(Some(base + y * w + x));
                    }
                }
            }
        }
    }
    drop(m);
    if a.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let len = a.len();
    let diff = i.gather(a, &[len])?.sub(&i.gather(b, &[len])?)?;
    Ok(diff.l1_norm().scale(1.0 / i.numel() as f64))
}

/// The six loss terms, each a scalar tensor.
#[derive(Debug, Clone)]
pub struct LossComponents {
    pub synthesis: Tensor,
    pub context: Tensor,
    pub perceptual: Tensor,
    pub style: Tensor,
    pub tv: Tensor,
    pub disparity: Tensor,
}

/// Plain values of [`LossComponents`] plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub synthesis: f64,
    pub context: f64,
    pub perceptual: f64,
    pub style: f64,
    pub tv: f64,
    pub disparity: f64,
}

/// Rounding can push `1 − Φ` a few ulps below zero.
const NEGATIVE_SLACK: f64 = 1e-12;

impl LossComponents {
    fn parts(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("synthesis", &self.synthesis),
            ("context", &self.context),
            ("perceptual", &self.perceptual),
            ("style", &self.style),
            ("tv", &self.tv),
            ("disparity", &self.disparity),
        ]
    }

    pub fn values(&self, total: f64) -> LossValues {
        LossValues {
            total,
            synthesis: self.synthesis.item(),
            context: self.context.item(),
            perceptual: self.perceptual.item(),
            style: self.style.item(),
            tv: self.tv.item(),
            disparity: self.disparity.item(),
        }
    }
}

/// Weighted sum of the six components.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> Result<Tensor> {
    weights.validate()?;
    let mut total = Tensor::scalar(0.0);
    for ((name, t), (_, w)) in components.parts().into_iter().zip(weights.named()) {
        ensure!(t.numel() == 1, "loss component {name} is not a scalar");
        let v = t.item();
        ensure!(v >= -NEGATIVE_SLACK, "loss component {name} is negative: {v}");
        if w != 0.0 {
            total = total.add(&t.scale(w))?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;

    fn ramp(n: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
        (0..n * c * h * w).map(|i| 0.05 + ((i * k) % 89) as f64 / 100.0).collect()
    }

    fn components(v: f64) -> LossComponents {
        let s = || Tensor::scalar(v);
        LossComponents { synthesis: s(), context: s(), perceptual: s(), style: s(), tv: s(), disparity: s() }
    }

    #[test]
    fn total_of_unit_components_is_the_weight_sum() {
        let t = total_loss(&components(1.0), &LossWeights::default()).unwrap().item();
        assert!((t - 127.25).abs() < 1e-12);
        assert_eq!(total_loss(&components(0.0), &LossWeights::default()).unwrap().item(), 0.0);
        let zero = LossWeights { synthesis: 0.0, context: 0.0, perceptual: 0.0, style: 0.0, tv: 0.0, disparity: 0.0 };
        assert_eq!(total_loss(&components(3.0), &zero).unwrap().item(), 0.0);
        assert!(total_loss(&components(-1.0), &LossWeights::default()).is_err());
    }

    #[test]
    fn ncc_examples() {
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        assert!((ncc(&x, &x).unwrap().item() - 1.0).abs() < 1e-15);
        assert!((ncc(&x, &x.scale(-3.0)).unwrap().item() - 1.0).abs() < 1e-15);
        let a = Tensor::new(vec![1.0, 0.0], &[2]).unwrap();
        let b = Tensor::new(vec![0.0, 1.0], &[2]).unwrap();
        assert_eq!(ncc(&a, &b).unwrap().item(), 0.0);
    }

    #[test]
    fn reconstruction_example() {
        let gt = Tensor::zeros(&[1, 1, 10, 10]);
        let mut v = vec![0.0; 100];
        v[37] = 0.5;
        let i = Tensor::new(v.clone(), &[1, 1, 10, 10]).unwrap();
        let mut s = vec![0.0; 100];
        s[37] = 1.0;
        let s = Tensor::new(s, &[1, 1, 10, 10]).unwrap();
        let c = Tensor::new((0..100).map(|k| if k < 30 { 1.0 } else { 0.0 }).collect(), &[1, 1, 10, 10]).unwrap();
        let (ls, lc) = reconstruction_losses(&i, &gt, &s, &c).unwrap();
        assert!((ls.item() - 0.005).abs() < 1e-15);
        assert_eq!(lc.item(), 0.0);
        let i2 = Tensor::new(v.iter().map(|x| x * 2.0).collect(), &[1, 1, 10, 10]).unwrap();
        assert!((reconstruction_losses(&i2, &gt, &s, &c).unwrap().0.item() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn tv_example() {
        let i = Tensor::new(vec![0.0, 1.0, 0.0, 1.0], &[1, 1, 2, 2]).unwrap();
        assert_eq!(tv_loss(&i, &Tensor::ones(&[1, 1, 2, 2])).unwrap().item(), 0.5);
        assert_eq!(tv_loss(&i, &Tensor::zeros(&[1, 1, 2, 2])).unwrap().item(), 0.0);
        assert_eq!(tv_loss(&Tensor::full(&[1, 3, 4, 4], 0.3), &Tensor::ones(&[1, 1, 4, 4])).unwrap().item(), 0.0);
    }

    #[test]
    fn identity_extractor_perceptual_is_mean_abs_difference() {
        let a = Tensor::new(ramp(1, 3, 4, 4, 7), &[1, 3, 4, 4]).unwrap();
        let b = Tensor::new(ramp(1, 3, 4, 4, 11), &[1, 3, 4, 4]).unwrap();
        let direct: f64 = a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 48.0;
        let p = perceptual_loss(&FeatureExtractor::identity(), &a, &b).unwrap().item();
        assert!((p - direct).abs() < 1e-14);
        let big = Tensor::new(ramp(1, 3, 8, 8, 5), &[1, 3, 8, 8]).unwrap();
        assert_eq!(perceptual_loss(&FeatureExtractor::new(0).unwrap(), &big, &big).unwrap().item(), 0.0);
    }

    #[test]
    fn style_hand_fixture() {
        // 2 channels, 2x2: F_I rows [1,2,3,4] and [0,1,0,1]; F_gt rows [1,1,1,1] and [2,0,0,0]
        let i = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 0.0, 1.0], &[1, 2, 2, 2]).unwrap();
        let g = Tensor::new(vec![1.0, 1.0, 1.0, 1.0, 2.0, 0.0, 0.0, 0.0], &[1, 2, 2, 2]).unwrap();
        // G_I = [[30, 6], [6, 2]], G_gt = [[4, 2], [2, 4]]; |diff| sum = 26+4+4+2 = 36
        let expect = 36.0 / 8.0 / 4.0;
        let got = style_loss(&FeatureExtractor::identity(), &i, &g).unwrap().item();
        assert!((got - expect).abs() < 1e-10, "{got}");
    }

    #[test]
    fn style_is_permutation_invariant() {
        let a = ramp(1, 2, 2, 2, 13);
        let b = ramp(1, 2, 2, 2, 5);
        let perm = |v: &[f64]| vec![v[3], v[0], v[2], v[1], v[7], v[4], v[6], v[5]];
        let fe = FeatureExtractor::identity();
        let t = |v: Vec<f64>| Tensor::new(v, &[1, 2, 2, 2]).unwrap();
        let x = style_loss(&fe, &t(a.clone()), &t(b.clone())).unwrap().item();
        let y = style_loss(&fe, &t(perm(&a)), &t(perm(&b))).unwrap().item();
        assert!((x - y).abs() < 1e-12);
    }

    fn disparity_fixture() -> (ImageBuffer, BinaryMask, DisparityMap) {
        let right = ImageBuffer::from_fn(8, 8, 3, |x, y, c| 0.1 + ((x * 3 + y * 5 + c * 7) % 11) as f64 / 12.0);
        let s = BinaryMask::from_fn(8, 8, |x, y| (x, y) == (4, 3));
        (right, s, DisparityMap::constant(8, 8, 2.0))
    }

    #[test]
    fn disparity_loss_hand_evaluation() {
        let (right, s, d) = disparity_fixture();
        let cfg = DisparityLossConfig { patch_size: 3, stride: 1 };
        let inp: Vec<f64> = ramp(1, 3, 8, 8, 17);
        let t = Tensor::new(inp.clone(), &[1, 3, 8, 8]).unwrap();
        let (l, stats) = disparity_loss(&t, 0, &right, &s, &d, &cfg).unwrap();
        assert_eq!(stats, DisparityLossStats { used: 1, skipped: 0 });
        // scalar evaluation: patch around (4,3) against right patch around (2,3)
        let (mut num, mut nx, mut ny) = (0.0, 0.0, 0.0);
        for c in 0..3 {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let (x, y) = ((4 + dx) as usize, (3 + dy) as usize);
                    let a = inp[c * 64 + y * 8 + x];
                    let b = right.get(x - 2, y, c);
                    num += (a * b).abs();
                    nx += a * a;
                    ny += b * b;
                }
            }
        }
        let expect = 1.0 - num / (nx.sqrt() * ny.sqrt());
        assert!((l.item() - expect).abs() < 1e-10);
    }

    #[test]
    fn disparity_loss_zero_on_matching_view_and_empty_mask() {
        let (right, s, d) = disparity_fixture();
        let cfg = DisparityLossConfig::default();
        let warped = warp_by_disparity(&right, &d, WarpDirection::RightToLeft).unwrap();
        // fill the 2 invalid columns so the whole patch matches
        let mut img = warped.image.clone();
        for y in 0..8 {
            for x in 0..2 {
                for c in 0..3 {
                    img.set(x, y, c, 0.0);
                }
            }
        }
        let t = img.to_tensor();
        let (l, _) = disparity_loss(&t, 0, &right, &s, &d, &cfg).unwrap();
        assert!(l.item().abs() < 1e-12, "{}", l.item());
        let (l, _) = disparity_loss(&t, 0, &right, &BinaryMask::empty(8, 8), &d, &cfg).unwrap();
        assert_eq!(l.item(), 0.0);
        let invalid = DisparityMap::constant(8, 8, 20.0);
        let (l, st) = disparity_loss(&t, 0, &right, &s, &invalid, &cfg).unwrap();
        assert_eq!((l.item(), st.skipped), (0.0, 1));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (right, _, d) = disparity_fixture();
        let s = BinaryMask::from_fn(8, 8, |x, y| (3..6).contains(&x) && (2..5).contains(&y));
        let s_t = s.to_tensor();
        let c_t = BinaryMask::from_fn(8, 8, |x, y| y == 6 && x > 1).to_tensor();
        let gt = Tensor::new(ramp(1, 3, 8, 8, 29), &[1, 3, 8, 8]).unwrap();
        let fe = FeatureExtractor::with_channels(4, &[4, 4]).unwrap();
        let cfg = DisparityLossConfig { patch_size: 3, stride: 2 };
        let x0 = (ramp(1, 3, 8, 8, 17), vec![1, 3, 8, 8]);
        let checks: Vec<(&str, Box<dyn Fn(&Tensor) -> Result<Tensor>>)> = vec![
            ("synthesis", Box::new(|i| Ok(reconstruction_losses(i, &gt, &s_t, &c_t)?.0))),
            ("context", Box::new(|i| Ok(reconstruction_losses(i, &gt, &s_t, &c_t)?.1))),
            ("perceptual", Box::new(|i| perceptual_loss(&fe, i, &gt))),
            ("style", Box::new(|i| style_loss(&fe, i, &gt))),
            ("tv", Box::new(|i| tv_loss(i, &s_t))),
            ("disparity", Box::new(|i| Ok(disparity_loss(i, 0, &right, &s, &d, &cfg)?.0))),
        ];
        for (name, f) in checks {
            let r = check_gradients(&[x0.clone()], |xs| f(&xs[0])).unwrap();
            assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
        }
    }
}

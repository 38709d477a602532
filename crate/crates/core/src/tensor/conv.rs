//! 2-D convolution (cross-correlation) and partial convolution.
//!
//! Both lower to im2col + GEMM per batch sample. Samples are processed in
//! parallel; weight gradients are reduced over samples in index order so the
//! result does not depend on scheduling.

use super::ops::gemm;
use super::Tensor;
use crate::error::{ensure, Error, Result};
use crate::par::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        ensure!(k % 2 == 1, "kernel size must be odd, got {k}");
        ensure!(stride >= 1, "stride must be >= 1");
        ensure!(
            h + 2 * pad >= k && w + 2 * pad >= k,
            "kernel {k} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        );
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self { cin, h, w, k, stride, pad, oh, ow })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Source row/col of kernel tap (ki, kj) for output (oy, ox), if in frame.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki) as isize - self.pad as isize;
        let x = (ox * self.stride + kj) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let plane = self.out_plane();
        let mut cols = vec![0.0; self.patch_len() * plane];
        for ci in 0..self.cin {
            let src = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, xx)) = self.source(oy, ox, ki, kj) {
                                dst[oy * self.ow + ox] = src[y * self.w + xx];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let plane = self.out_plane();
        let mut x = vec![0.0; self.cin * self.h * self.w];
        for ci in 0..self.cin {
            let dst = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, xx)) = self.source(oy, ox, ki, kj) {
                                dst[y * self.w + xx] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, k, k]` weights,
/// zero padding, optional `[Cout]` bias. Output is `[N, Cout, H', W']` with
/// `H' = (H + 2 padding - k) / stride + 1`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, cin, h, w) = input.dims4("conv2d input")?;
    let (cout, wcin, kh, kw) = weight.dims4("conv2d weight")?;
    ensure!(wcin == cin && kh == kw, "conv2d: weight {:?} incompatible with input {:?}", weight.shape(), input.shape());
    if let Some(b) = bias {
        ensure!(b.shape() == [cout], "conv2d: bias shape {:?}, expected [{cout}]", b.shape());
    }
    input.ensure_finite("conv2d input")?;
    let geo = Geometry::new(cin, h, w, kh, stride, padding)?;
    let (plane, plen) = (geo.out_plane(), geo.patch_len());

    let x = input.to_vec();
    let wt = weight.to_vec();
    let bias_v = bias.map(Tensor::to_vec);

    let mut out = vec![0.0; n * cout * plane];
    out.par_chunks_mut(cout * plane).enumerate().for_each(|(b, dst)| {
        let cols = geo.im2col(&x[b * cin * h * w..(b + 1) * cin * h * w]);
        gemm(cout, plen, plane, &wt, false, &cols, false, dst, 0.0);
        if let Some(bv) = &bias_v {
            for (co, row) in dst.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v += bv[co]);
            }
        }
    });

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    let need_dx = input.requires_grad();
    let need_dw = weight.requires_grad();
    Ok(Tensor::from_op(
        out,
        vec![n, cout, geo.oh, geo.ow],
        parents,
        Box::new(move |g| {
            let per_sample: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)> = (0..n)
                .into_par_iter()
                .map(|b| {
                    let gy = &g[b * cout * plane..(b + 1) * cout * plane];
                    let xb = &x[b * cin * h * w..(b + 1) * cin * h * w];
                    let dw = need_dw.then(|| {
                        let cols = geo.im2col(xb);
                        let mut dw = vec![0.0; cout * plen];
                        gemm(cout, plane, plen, gy, false, &cols, true, &mut dw, 0.0);
                        dw
                    });
                    let dx = need_dx.then(|| {
                        let mut dcols = vec![0.0; plen * plane];
                        gemm(plen, cout, plane, &wt, true, gy, false, &mut dcols, 0.0);
                        geo.col2im(&dcols)
                    });
                    (dx, dw)
                })
                .collect();

            let mut dx_all = need_dx.then(|| Vec::with_capacity(n * cin * h * w));
            let mut dw_all = need_dw.then(|| vec![0.0; cout * plen]);
            for (dx, dw) in per_sample {
                if let (Some(acc), Some(dx)) = (dx_all.as_mut(), dx) {
                    acc.extend_from_slice(&dx);
                }
                if let (Some(acc), Some(dw)) = (dw_all.as_mut(), dw) {
                    acc.iter_mut().zip(&dw).for_each(|(a, d)| *a += d);
                }
            }
            let mut grads = vec![dx_all, dw_all];
            if has_bias {
                let mut db = vec![0.0; cout];
                for b in 0..n {
                    for (co, acc) in db.iter_mut().enumerate() {
                        let off = (b * cout + co) * plane;
                        *acc += g[off..off + plane].iter().sum::<f64>();
                    }
                }
                grads.push(Some(db));
            }
            grads
        }),
    ))
}

/// Per-location renormalisation of a partial convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialConvRatio {
    /// `in_frame_taps / sum(mask)` where the window holds a valid pixel, else 0.
    pub ratio: Vec<f64>,
    /// 1 where the window holds a valid pixel, else 0; `[N, 1, H', W']` flat.
    pub updated_mask: Vec<f64>,
    pub out_h: usize,
    pub out_w: usize,
}

/// Window statistics of a binary `[N, 1, H, W]` mask for a `k`x`k` kernel.
///
/// The numerator counts only taps inside the frame, so a fully valid mask
/// yields a ratio of exactly 1 everywhere, including at zero-padded borders.
pub fn partial_conv_ratio(mask: &Tensor, k: usize, stride: usize, padding: usize) -> Result<PartialConvRatio> {
    let (n, mc, h, w) = mask.dims4("partial_conv mask")?;
    ensure!(mc == 1, "partial_conv mask must have one channel, got {mc}");
    let m = mask.data();
    ensure!(m.iter().all(|&v| v == 0.0 || v == 1.0), "partial_conv mask must be binary (0/1)");
    let geo = Geometry::new(1, h, w, k, stride, padding)?;
    let plane = geo.out_plane();
    let mut ratio = vec![0.0; n * plane];
    let mut updated = vec![0.0; n * plane];
    for b in 0..n {
        let mb = &m[b * h * w..(b + 1) * h * w];
        for oy in 0..geo.oh {
            for ox in 0..geo.ow {
                let mut taps = 0usize;
                let mut valid = 0usize;
                for ki in 0..k {
                    for kj in 0..k {
                        if let Some((y, x)) = geo.source(oy, ox, ki, kj) {
                            taps += 1;
                            if mb[y * w + x] == 1.0 {
                                valid += 1;
                            }
                        }
                    }
                }
                if valid > 0 {
                    let i = b * plane + oy * geo.ow + ox;
                    ratio[i] = taps as f64 / valid as f64;
                    updated[i] = 1.0;
                }
            }
        }
    }
    Ok(PartialConvRatio { ratio, updated_mask: updated, out_h: geo.oh, out_w: geo.ow })
}

#[derive(Debug, Clone)]
pub struct PartialConvOutput {
    pub output: Tensor,
    /// `[N, 1, H', W']`, constant.
    pub mask: Tensor,
}

/// Partial convolution: `W . (X * M) * (taps / sum M) + b` where the window
/// holds a valid pixel, 0 elsewhere. The mask is a constant of the graph.
pub fn partial_conv2d(
    input: &Tensor,
    mask: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<PartialConvOutput> {
    let (n, _, h, w) = input.dims4("partial_conv2d input")?;
    ensure!(mask.shape() == [n, 1, h, w], "partial_conv2d: mask shape {:?}, expected [{n}, 1, {h}, {w}]", mask.shape());
    let k = *weight.shape().get(2).ok_or_else(|| Error::contract("partial_conv2d: weight must be 4-d"))?;
    let stats = partial_conv_ratio(mask, k, stride, padding)?;
    let masked = input.mask_channels(mask)?;
    let conv = conv2d(&masked, weight, None, stride, padding)?;
    let output = renormalise(&conv, &stats, bias)?;
    let mask = Tensor::raw(stats.updated_mask, vec![n, 1, stats.out_h, stats.out_w]);
    Ok(PartialConvOutput { output, mask })
}

/// `z = (y * ratio + b) * updated_mask`, ratio and mask broadcast over channels.
fn renormalise(y: &Tensor, stats: &PartialConvRatio, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, c, oh, ow) = y.dims4("partial_conv2d")?;
    let plane = oh * ow;
    if let Some(b) = bias {
        ensure!(b.shape() == [c], "partial_conv2d: bias shape {:?}, expected [{c}]", b.shape());
    }
    let ratio = stats.ratio.clone();
    let upd = stats.updated_mask.clone();
    let bv = bias.map(Tensor::to_vec).unwrap_or_else(|| vec![0.0; c]);
    let yv = y.data();
    let mut out = vec![0.0; yv.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in 0..plane {
                out[off + i] = (yv[off + i] * ratio[b * plane + i] + bv[ch]) * upd[b * plane + i];
            }
        }
    }
    drop(yv);
    let mut parents = vec![y.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        out,
        vec![n, c, oh, ow],
        parents,
        Box::new(move |g| {
            let mut dy = vec![0.0; g.len()];
            let mut db = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for i in 0..plane {
                        let gu = g[off + i] * upd[b * plane + i];
                        dy[off + i] = gu * ratio[b * plane + i];
                        db[ch] += gu;
                    }
                }
            }
            let mut grads = vec![Some(dy)];
            if has_bias {
                grads.push(Some(db));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;

    /// Direct-summation oracle, independent of im2col/GEMM.
    fn conv_direct(
        x: &[f64],
        dims: (usize, usize, usize, usize),
        wt: &[f64],
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let (n, cin, h, w) = dims;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * cout * oh * ow];
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let y = (oy * stride + ki) as isize - pad as isize;
                                    let xx = (ox * stride + kj) as isize - pad as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                        acc += x[((b * cin + ci) * h + y as usize) * w + xx as usize]
                                            * wt[((co * cin + ci) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out[((b * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);

        let y = conv2d(&x, &k, Some(&b), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        let oracle = conv_direct(&[1.0; 9], (1, 1, 3, 3), &[1.0; 9], 1, 3, 1, 1);
        assert_eq!(oracle[0], 4.0);
        assert_eq!(y.to_vec(), oracle);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| (i as f64).sin()).collect();
        let x = Tensor::new(data.clone(), &[2, 3, 4, 5]).unwrap();
        let mut wt = vec![0.0; 9];
        for c in 0..3 {
            wt[c * 3 + c] = 1.0;
        }
        let k = Tensor::new(wt, &[3, 3, 1, 1]).unwrap();
        let y = conv2d(&x, &k, Some(&Tensor::zeros(&[3])), 1, 0).unwrap();
        assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn matches_direct_summation_with_stride() {
        let dims = (2, 3, 7, 6);
        let x: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let wt: Vec<f64> = (0..4 * 3 * 9).map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0).collect();
        let y = conv2d(
            &Tensor::new(x.clone(), &[2, 3, 7, 6]).unwrap(),
            &Tensor::new(wt.clone(), &[4, 3, 3, 3]).unwrap(),
            None,
            2,
            1,
        )
        .unwrap();
        let oracle = conv_direct(&x, dims, &wt, 4, 3, 2, 1);
        for (a, b) in y.to_vec().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_even_kernel_and_nan() {
        let x = Tensor::ones(&[1, 1, 4, 4]);
        assert!(matches!(conv2d(&x, &Tensor::ones(&[1, 1, 2, 2]), None, 1, 0), Err(Error::Contract(_))));
        assert!(matches!(conv2d(&x, &Tensor::ones(&[1, 2, 3, 3]), None, 1, 0), Err(Error::Contract(_))));
        let bad = Tensor::raw(vec![f64::NAN; 16], vec![1, 1, 4, 4]);
        assert!(matches!(conv2d(&bad, &Tensor::ones(&[1, 1, 3, 3]), None, 1, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn partial_full_mask_gives_nine() {
        let x = Tensor::ones(&[1, 1, 5, 5]);
        let m = Tensor::ones(&[1, 1, 5, 5]);
        let out = partial_conv2d(&x, &m, &Tensor::ones(&[1, 1, 3, 3]), Some(&Tensor::zeros(&[1])), 1, 0).unwrap();
        assert_eq!(out.output.to_vec(), vec![9.0; 9]);
        assert_eq!(out.mask.to_vec(), vec![1.0; 9]);
    }

    #[test]
    fn partial_renormalises_and_zeroes_holes() {
        // 3x3 window with 3 valid entries -> 3 * 9/3 = 9.
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let m = Tensor::new(vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[1, 1, 3, 3]).unwrap();
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let out = partial_conv2d(&x, &m, &k, Some(&Tensor::zeros(&[1])), 1, 0).unwrap();
        assert_eq!(out.output.item(), 9.0);

        let hole = Tensor::zeros(&[1, 1, 3, 3]);
        let out = partial_conv2d(&x, &hole, &k, Some(&Tensor::ones(&[1])), 1, 0).unwrap();
        assert_eq!(out.output.item(), 0.0);
        assert_eq!(out.mask.item(), 0.0);
    }

    #[test]
    fn partial_rejects_non_binary_mask() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let m = Tensor::full(&[1, 1, 3, 3], 0.5);
        let r = partial_conv2d(&x, &m, &Tensor::ones(&[1, 1, 3, 3]), None, 1, 0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn conv_and_partial_gradients() {
        let x: Vec<f64> = (0..2 * 2 * 6 * 6).map(|i| ((i * 13) % 29) as f64 / 14.0 - 1.0).collect();
        let wt: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
        let b = vec![0.1, -0.2, 0.3];
        let mask: Vec<f64> = (0..2 * 36).map(|i| if (i * 5) % 7 < 4 { 1.0 } else { 0.0 }).collect();
        let inputs = [(x, vec![2, 2, 6, 6]), (wt, vec![3, 2, 3, 3]), (b, vec![3])];
        for stride in [1, 2] {
            let r =
                check_gradients(&inputs, |t| Ok(conv2d(&t[0], &t[1], Some(&t[2]), stride, 1)?.square().sum())).unwrap();
            assert!(r.max_rel_error < 1e-4, "conv stride {stride}: {r:?}");
            let m = Tensor::new(mask.clone(), &[2, 1, 6, 6]).unwrap();
            let r = check_gradients(&inputs, |t| {
                Ok(partial_conv2d(&t[0], &m, &t[1], Some(&t[2]), stride, 1)?.output.square().sum())
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "partial stride {stride}: {r:?}");
        }
    }
}

//! Elementwise, reduction, shape and small linear-algebra operations.

use super::Tensor;
use crate::error::{ensure, Result};

impl Tensor {
    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        ensure!(self.shape() == other.shape(), "{op}: shape mismatch {:?} vs {:?}", self.shape(), other.shape());
        Ok(())
    }

    /// Elementwise map with derivative `df(x, y)` in terms of input and output.
    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
        let x = self.to_vec();
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let dx = g.iter().zip(x.iter().zip(&y_saved)).map(|(g, (&x, &y))| g * df(x, y)).collect();
                vec![Some(dx)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let a = self.to_vec();
        let b = other.to_vec();
        let data = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let da = g.iter().zip(&b).map(|(g, y)| g * y).collect();
                let db = g.iter().zip(&a).map(|(g, x)| g * x).collect();
                vec![Some(da), Some(db)]
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| sign(x))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(move |x| if x > 0.0 { x } else { slope * x }, move |x, _| if x > 0.0 { 1.0 } else { slope })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// Multiply an `[N, C, H, W]` tensor by a constant `[N, 1, H, W]` mask
    /// broadcast over channels. The mask is not differentiated.
    pub fn mask_channels(&self, mask: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("mask_channels")?;
        ensure!(
            mask.shape() == [n, 1, h, w],
            "mask_channels: mask shape {:?} does not broadcast onto {:?}",
            mask.shape(),
            self.shape()
        );
        let m = mask.to_vec();
        let plane = h * w;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            let mb = &m[b * plane..(b + 1) * plane];
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in 0..plane {
                    out[off + i] = x[off + i] * mb[i];
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for b in 0..n {
                    let mb = &m[b * plane..(b + 1) * plane];
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in 0..plane {
                            dx[off + i] = g[off + i] * mb[i];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], Vec::new(), vec![self.clone()], Box::new(move |g| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Entrywise 1-norm, `sum |x|`.
    pub fn l1_norm(&self) -> Tensor {
        let x = self.to_vec();
        let s = x.iter().map(|v| v.abs()).sum();
        Tensor::from_op(
            vec![s],
            Vec::new(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(x.iter().map(|&v| g[0] * sign(v)).collect())]),
        )
    }

    /// Frobenius norm, `sqrt(sum x^2)`. The gradient at the origin is taken as zero.
    pub fn frobenius_norm(&self) -> Tensor {
        let x = self.to_vec();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        Tensor::from_op(
            vec![norm],
            Vec::new(),
            vec![self.clone()],
            Box::new(move |g| {
                let dx = if norm > 0.0 { x.iter().map(|v| g[0] * v / norm).collect() } else { vec![0.0; x.len()] };
                vec![Some(dx)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        ensure!(
            shape.iter().product::<usize>() == self.numel(),
            "reshape {:?} -> {:?} changes the element count",
            self.shape(),
            shape
        );
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], Box::new(|g| vec![Some(g.to_vec())])))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        ensure!(self.shape().len() == 2, "transpose needs a matrix, got {:?}", self.shape());
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            vec![c, r],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        ensure!(
            self.shape().len() == 2 && other.shape().len() == 2 && self.shape()[1] == other.shape()[0],
            "matmul: incompatible shapes {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let a = self.to_vec();
        let b = other.to_vec();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut out, 0.0);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, false, &b, true, &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, &a, true, g, false, &mut db, 0.0);
                vec![Some(da), Some(db)]
            }),
        ))
    }

    pub(crate) fn dims4(&self, op: &str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(crate::error::Error::contract(format!("{op}: expected [N, C, H, W], got {:?}", self.shape()))),
        }
    }

    /// Nearest-neighbour 2x upsampling of an `[N, C, H, W]` tensor.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("upsample_nearest_2x")?;
        let (h2, w2) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = vec![0.0; n * c * h2 * w2];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[i * w2 + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            vec![n, c, h2, w2],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &g[p * h2 * w2..(p + 1) * h2 * w2];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dst[(i / 2) * w + j / 2] += src[i * w2 + j];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// 2x2 average pooling with stride 2 (H and W must be even).
    pub fn avg_pool_2x(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("avg_pool_2x")?;
        ensure!(h % 2 == 0 && w % 2 == 0, "avg_pool_2x: odd spatial size {h}x{w}");
        let (h2, w2) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; n * c * h2 * w2];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1];
                    let b = src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1];
                    dst[i * w2 + j] = 0.25 * (a + b);
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            vec![n, c, h2, w2],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &g[p * h2 * w2..(p + 1) * h2 * w2];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for i in 0..h {
                        for j in 0..w {
                            dst[i * w + j] = 0.25 * src[(i / 2) * w2 + j / 2];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Concatenate `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        ensure!(!parts.is_empty(), "concat_channels of nothing");
        let (n, _, h, w) = parts[0].dims4("concat_channels")?;
        let mut chans = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
            ensure!(
                (pn, ph, pw) == (n, h, w),
                "concat_channels: {:?} does not match batch/spatial dims of {:?}",
                p.shape(),
                parts[0].shape()
            );
            chans.push(pc);
        }
        let total: usize = chans.iter().sum();
        let plane = h * w;
        let mut out = vec![0.0; n * total * plane];
        for b in 0..n {
            let mut c0 = 0;
            for (p, &pc) in parts.iter().zip(&chans) {
                let x = p.data();
                let src = &x[b * pc * plane..(b + 1) * pc * plane];
                out[(b * total + c0) * plane..(b * total + c0 + pc) * plane].copy_from_slice(src);
                c0 += pc;
            }
        }
        let chans_saved = chans.clone();
        Ok(Tensor::from_op(
            out,
            vec![n, total, h, w],
            parts.iter().map(|&t| t.clone()).collect(),
            Box::new(move |g| {
                let mut grads: Vec<Vec<f64>> = chans_saved.iter().map(|&pc| vec![0.0; n * pc * plane]).collect();
                for b in 0..n {
                    let mut c0 = 0;
                    for (dst, &pc) in grads.iter_mut().zip(&chans_saved) {
                        dst[b * pc * plane..(b + 1) * pc * plane]
                            .copy_from_slice(&g[(b * total + c0) * plane..(b * total + c0 + pc) * plane]);
                        c0 += pc;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Gather flat elements into a new tensor of `shape`; `None` entries are
    /// zero-filled and receive no gradient. Gradients scatter-add back, so
    /// repeated indices are handled.
    pub fn gather(&self, indices: Vec<Option<usize>>, shape: &[usize]) -> Result<Tensor> {
        ensure!(
            indices.len() == shape.iter().product::<usize>(),
            "gather: {} indices for shape {:?}",
            indices.len(),
            shape
        );
        let len = self.numel();
        ensure!(indices.iter().flatten().all(|&i| i < len), "gather: index out of range for {len} elements");
        let x = self.data();
        let out = indices.iter().map(|i| i.map_or(0.0, |i| x[i])).collect();
        drop(x);
        Ok(Tensor::from_op(
            out,
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; len];
                for (gv, idx) in g.iter().zip(&indices) {
                    if let Some(i) = idx {
                        dx[*i] += gv;
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Per-sample Gram matrices: `[N, C, H, W] -> [N, C, C]` with
    /// `G[c1, c2] = sum_hw F[c1, hw] * F[c2, hw]`.
    pub fn gram(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("gram")?;
        let hw = h * w;
        let x = self.to_vec();
        let mut out = vec![0.0; n * c * c];
        for b in 0..n {
            let f = &x[b * c * hw..(b + 1) * c * hw];
            gemm(c, hw, c, f, false, f, true, &mut out[b * c * c..(b + 1) * c * c], 0.0);
        }
        Ok(Tensor::from_op(
            out,
            vec![n, c, c],
            vec![self.clone()],
            Box::new(move |g| {
                // dF = (dG + dG^T) F
                let mut dx = vec![0.0; n * c * hw];
                let mut sym = vec![0.0; c * c];
                for b in 0..n {
                    let gb = &g[b * c * c..(b + 1) * c * c];
                    for i in 0..c {
                        for j in 0..c {
                            sym[i * c + j] = gb[i * c + j] + gb[j * c + i];
                        }
                    }
                    let f = &x[b * c * hw..(b + 1) * c * hw];
                    gemm(c, c, hw, &sym, false, f, false, &mut dx[b * c * hw..(b + 1) * c * hw], 0.0);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Row-wise normalised cross-correlation of two `[P, K]` tensors:
    /// `phi_p = sum_k |x_pk * y_pk| / (max(|x_p|, eps) * max(|y_p|, eps))`,
    /// defined as 0 when both rows are zero.
    pub fn ncc_rows(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "ncc_rows")?;
        ensure!(self.shape().len() == 2, "ncc_rows expects [P, K], got {:?}", self.shape());
        let (p, k) = (self.shape()[0], self.shape()[1]);
        let x = self.to_vec();
        let y = other.to_vec();
        let mut phi = vec![0.0; p];
        let mut norms = vec![(0.0, 0.0, false, false); p];
        for r in 0..p {
            let xr = &x[r * k..(r + 1) * k];
            let yr = &y[r * k..(r + 1) * k];
            let nx_raw = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny_raw = yr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let num: f64 = xr.iter().zip(yr).map(|(a, b)| (a * b).abs()).sum();
            let nx = nx_raw.max(NCC_EPS);
            let ny = ny_raw.max(NCC_EPS);
            phi[r] = if nx_raw == 0.0 && ny_raw == 0.0 { 0.0 } else { num / (nx * ny) };
            norms[r] = (nx, ny, nx_raw > NCC_EPS, ny_raw > NCC_EPS);
        }
        let phi_saved = phi.clone();
        Ok(Tensor::from_op(
            phi,
            vec![p],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; p * k];
                let mut dy = vec![0.0; p * k];
                for r in 0..p {
                    let (nx, ny, x_live, y_live) = norms[r];
                    let f = phi_saved[r];
                    if f == 0.0 && !x_live && !y_live {
                        continue;
                    }
                    let gr = g[r];
                    for i in r * k..(r + 1) * k {
                        let (a, b) = (x[i], y[i]);
                        // d|a b|/da = sign(a) |b|
                        let mut ga = sign(a) * b.abs() / (nx * ny);
                        let mut gb = sign(b) * a.abs() / (nx * ny);
                        if x_live {
                            ga -= f * a / (nx * nx);
                        }
                        if y_live {
                            gb -= f * b / (ny * ny);
                        }
                        dx[i] = gr * ga;
                        dy[i] = gr * gb;
                    }
                }
                vec![Some(dx), Some(dy)]
            }),
        ))
    }
}

/// Denominator floor of the NCC score.
pub const NCC_EPS: f64 = 1e-8;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Row-major `out = op(a) * op(b) + beta * out` where `op` optionally
/// transposes; `a` is logically `[m, k]`, `b` is `[k, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    out: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the row-major buffers whose
    // lengths were checked against m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

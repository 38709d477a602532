//! Image, disparity and binary-mask containers shared by every module.

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Interleaved (row-major, channel-last) image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    /// Values are clamped into [0, 1]; NaN is rejected.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "image must be non-empty, got {height}x{width}");
        ensure!(channels == 1 || channels == 3, "channels must be 1 or 3, got {channels}");
        ensure!(
            data.len() == height * width * channels,
            "image buffer holds {} values, expected {}",
            data.len(),
            height * width * channels
        );
        ensure!(data.iter().all(|v| !v.is_nan()), "image contains NaN");
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Self { height, width, channels, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Mean over channels.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks(self.channels).map(|p| p.iter().sum::<f64>() / self.channels as f64).collect();
        ImageBuffer { height: self.height, width: self.width, channels: 1, data }
    }

    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer { height: self.height, width: self.width, channels: 3, data }
    }

    /// Window of `width`x`height` at (x0, y0); parts outside the frame are zero.
    pub fn crop(&self, x0: isize, y0: isize, width: usize, height: usize) -> ImageBuffer {
        let mut out = ImageBuffer::zeros(height, width, self.channels);
        for y in 0..height {
            let sy = y0 + y as isize;
            if sy < 0 || sy >= self.height as isize {
                continue;
            }
            for x in 0..width {
                let sx = x0 + x as isize;
                if sx < 0 || sx >= self.width as isize {
                    continue;
                }
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(sx as usize, sy as usize, c));
                }
            }
        }
        out
    }

    /// Zero every pixel outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> ImageBuffer {
        assert!(mask.height == self.height && mask.width == self.width, "mask/image size mismatch");
        let mut out = self.clone();
        for (i, &keep) in mask.data.iter().enumerate() {
            if !keep {
                out.data[i * self.channels..(i + 1) * self.channels].fill(0.0);
            }
        }
        out
    }

    /// Pixelwise sum clamped to [0, 1].
    pub fn add(&self, other: &ImageBuffer) -> Result<ImageBuffer> {
        ensure!(self.same_dims(other), "image add: dimension mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| (a + b).min(1.0)).collect();
        Ok(ImageBuffer { data, ..*self.dims_only() })
    }

    fn dims_only(&self) -> Box<ImageBuffer> {
        Box::new(ImageBuffer { height: self.height, width: self.width, channels: self.channels, data: Vec::new() })
    }

    /// Planar `[C, H, W]` values.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for i in 0..plane {
            for c in 0..self.channels {
                out[c * plane + i] = self.data[i * self.channels + c];
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f64]) -> Result<Self> {
        let plane = height * width;
        ensure!(planar.len() == plane * channels, "planar buffer length mismatch");
        let mut data = vec![0.0; plane * channels];
        for i in 0..plane {
            for c in 0..channels {
                data[i * channels + c] = planar[c * plane + i];
            }
        }
        Self::new(height, width, channels, data)
    }

    /// `[1, C, H, W]` constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::raw(self.to_planar(), vec![1, self.channels, self.height, self.width])
    }

    /// Sample `index` of an `[N, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4("ImageBuffer::from_tensor")?;
        ensure!(index < n, "sample {index} out of batch of {n}");
        let data = t.data();
        Self::from_planar(h, w, c, &data[index * c * h * w..(index + 1) * c * h * w])
    }
}

/// Per-pixel horizontal disparity (left-view referenced) with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    /// Non-finite entries are marked invalid.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == height * width,
            "disparity map holds {} values, expected {}",
            values.len(),
            height * width
        );
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Ok(Self { height, width, values, valid })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, values: vec![value; height * width], valid: vec![true; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        let valid = values.iter().map(|v: &f64| v.is_finite()).collect();
        Self { height, width, values, valid }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Window at (x0, y0); out-of-frame entries are invalid.
    pub fn crop(&self, x0: isize, y0: isize, width: usize, height: usize) -> DisparityMap {
        let mut out =
            DisparityMap { height, width, values: vec![0.0; height * width], valid: vec![false; height * width] };
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = (x0 + x as isize, y0 + y as isize);
                if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                    let i = sy as usize * self.width + sx as usize;
                    out.values[y * width + x] = self.values[i];
                    out.valid[y * width + x] = self.valid[i];
                }
            }
        }
        out
    }
}

/// Binary map, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![true; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-frame coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        BinaryMask { data, ..*self }
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        BinaryMask { data, ..*self }
    }

    pub fn is_disjoint(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !(*a && *b))
    }

    pub fn invert(&self) -> BinaryMask {
        BinaryMask { data: self.data.iter().map(|v| !v).collect(), ..*self }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }

    /// `out(x, y) = self(x + dx, y + dy)`; pixels sourced outside are unset.
    pub fn shifted(&self, dx: isize, dy: isize) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |x, y| self.get_signed(x as isize + dx, y as isize + dy))
    }

    /// Window at (x0, y0) of size `width`x`height`.
    pub fn crop(&self, x0: isize, y0: isize, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(height, width, |x, y| self.get_signed(x0 + x as isize, y0 + y as isize))
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    /// `[1, 1, H, W]` constant tensor of 0/1.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::raw(self.as_f64(), vec![1, 1, self.height, self.width])
    }

    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        ensure!(values.len() == height * width, "mask length mismatch");
        ensure!(values.iter().all(|&v| v == 0.0 || v == 1.0), "mask values must be 0 or 1");
        Ok(Self { height, width, data: values.iter().map(|&v| v == 1.0).collect() })
    }
}

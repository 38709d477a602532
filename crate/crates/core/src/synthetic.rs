//! Procedural stereo scenes: fronto-parallel textured layers rendered with
//! the painter's algorithm, with exact left-referenced ground-truth disparity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::StereoSample;
use crate::image::{DisparityMap, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    /// Axis-aligned rectangles with sides in `[min_object, max_object]`.
    #[default]
    Rect,
    /// Vertical bars `bar_width` wide spanning roughly half the height.
    Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneParams {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub objects: usize,
    pub shape: ObjectShape,
    pub min_object: usize,
    pub max_object: usize,
    pub bar_width: usize,
    pub background_disparity: u32,
    /// Foreground disparities are drawn from `background + 4 ..= max_disparity`.
    pub max_disparity: u32,
    /// Minimum gap between objects and the frame border.
    pub margin: usize,
}

impl Default for SyntheticSceneParams {
    fn default() -> Self {
        Self {
            count: 10,
            width: 64,
            height: 64,
            seed: 0,
            objects: 1,
            shape: ObjectShape::Rect,
            min_object: 10,
            max_object: 20,
            bar_width: 5,
            background_disparity: 2,
            max_disparity: 12,
            margin: 8,
        }
    }
}

#[derive(Debug, Clone)]
struct Texture {
    base: [f64; 3],
    spacing: f64,
    lattice_w: usize,
    lattice: Vec<f64>,
    stripe: (f64, f64, f64),
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, extent_w: usize, extent_h: usize) -> Self {
        let base = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
        let spacing = rng.random_range(3.0..6.0);
        let lattice_w = (extent_w as f64 / spacing) as usize + 3;
        let lattice_h = (extent_h as f64 / spacing) as usize + 3;
        let lattice = (0..lattice_w * lattice_h * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let stripe = (rng.random_range(0.2..0.9), rng.random_range(-0.6..0.6), rng.random_range(0.0..6.3));
        Self { base, spacing, lattice_w, lattice, stripe }
    }

    fn sample(&self, u: f64, v: f64, c: usize) -> f64 {
        let (gx, gy) = (u.max(0.0) / self.spacing, v.max(0.0) / self.spacing);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (tx, ty) = (gx - ix as f64, gy - iy as f64);
        let at = |x: usize, y: usize| self.lattice[((y * self.lattice_w) + x) * 3 + c];
        let noise = at(ix, iy) * (1.0 - tx) * (1.0 - ty)
            + at(ix + 1, iy) * tx * (1.0 - ty)
            + at(ix, iy + 1) * (1.0 - tx) * ty
            + at(ix + 1, iy + 1) * tx * ty;
        let (fx, fy, phase) = self.stripe;
        let stripe = (fx * u + fy * v + phase + c as f64).sin();
        self.base[c] + 0.22 * noise + 0.08 * stripe
    }
}

#[derive(Debug, Clone)]
struct Layer {
    disparity: u32,
    /// x0, y0, w, h in left-view coordinates; `None` for the background.
    rect: Option<(usize, usize, usize, usize)>,
    texture: Texture,
}

impl Layer {
    fn covers(&self, u: isize, y: usize) -> bool {
        match self.rect {
            None => true,
            Some((x0, y0, w, h)) => u >= x0 as isize && u < (x0 + w) as isize && y >= y0 && y < y0 + h,
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() / 255.0
}

/// Render scene `index`. Pixel values are exact multiples of 1/255 so the
/// images survive an 8-bit PNG round trip unchanged.
pub fn render_scene(params: &SyntheticSceneParams, index: usize) -> StereoSample {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64 + 1);
    let (w, h) = (params.width, params.height);
    let extent_w = w + params.max_disparity as usize + 2;

    let mut layers = vec![Layer {
        disparity: params.background_disparity,
        rect: None,
        texture: Texture::random(&mut rng, extent_w, h),
    }];
    let d_lo = params.background_disparity + 4;
    let d_hi = params.max_disparity.max(d_lo);
    for _ in 0..params.objects {
        let (ow, oh) = match params.shape {
            ObjectShape::Rect => (
                rng.random_range(params.min_object..=params.max_object),
                rng.random_range(params.min_object..=params.max_object),
            ),
            ObjectShape::Bar => (params.bar_width, rng.random_range(h / 3..=h / 2)),
        };
        let d = rng.random_range(d_lo..=d_hi);
        let x_lo = params.margin + d as usize;
        let x_hi = w.saturating_sub(ow + params.margin).max(x_lo);
        let y_hi = h.saturating_sub(oh + params.margin).max(params.margin);
        let x0 = rng.random_range(x_lo..=x_hi);
        let y0 = rng.random_range(params.margin..=y_hi);
        layers.push(Layer {
            disparity: d,
            rect: Some((x0, y0, ow.min(w - x0.min(w)), oh.min(h - y0.min(h)))),
            texture: Texture::random(&mut rng, extent_w, h),
        });
    }
    // painter's order: far to near, stable for equal disparities
    layers.sort_by_key(|l| l.disparity);

    let top = |u_of: &dyn Fn(u32) -> isize, y: usize| -> &Layer {
        layers.iter().rev().find(|l| l.covers(u_of(l.disparity), y)).unwrap()
    };

    let mut left = ImageBuffer::zeros(h, w, 3);
    let mut right = ImageBuffer::zeros(h, w, 3);
    let mut disparity = DisparityMap::constant(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let l = top(&|_| x as isize, y);
            for c in 0..3 {
                left.set(x, y, c, quantize(l.texture.sample(x as f64, y as f64, c)));
            }
            disparity.values[y * w + x] = l.disparity as f64;

            // right pixel x shows the nearest layer whose left position x + d it covers
            let r = top(&|d| x as isize + d as isize, y);
            let u = (x + r.disparity as usize) as f64;
            for c in 0..3 {
                right.set(x, y, c, quantize(r.texture.sample(u, y as f64, c)));
            }
        }
    }
    StereoSample { id: format!("scene_{index:04}"), left, right, gt_disparity: Some(disparity) }
}

/// Iterator over `params.count` rendered scenes.
pub struct SyntheticScenes {
    params: SyntheticSceneParams,
    next: usize,
}

impl SyntheticScenes {
    pub fn new(params: SyntheticSceneParams) -> Self {
        Self { params, next: 0 }
    }
}

impl Iterator for SyntheticScenes {
    type Item = StereoSample;

    fn next(&mut self) -> Option<StereoSample> {
        if self.next >= self.params.count {
            return None;
        }
        let s = render_scene(&self.params, self.next);
        self.next += 1;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.params.count - self.next;
        (n, Some(n))
    }
}

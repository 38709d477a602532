//! Partial-convolution UNet generator and the fixed feature extractor used by
//! the perceptual and style losses.

mod checkpoint;
mod features;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use features::FeatureExtractor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::NetworkInput;
use crate::error::{ensure, Result};
use crate::image::BinaryMask;
use crate::tensor::{conv2d, partial_conv2d, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    pub growth: usize,
    pub max_channels: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 32, input_channels: 8, growth: 2, max_channels: 256, leaky_slope: 0.2, seed: 0 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.depth >= 1, "UNet depth must be >= 1");
        ensure!(self.base_channels >= 4, "UNet base_channels must be >= 4");
        ensure!(self.input_channels >= 1, "UNet needs input channels");
        ensure!(self.growth >= 1, "UNet growth must be >= 1");
        Ok(())
    }

    /// Feature channels at encoder level `l` (level 0 is the input).
    pub fn channels(&self, level: usize) -> usize {
        if level == 0 {
            return self.input_channels;
        }
        let mut c = self.base_channels;
        for _ in 1..level {
            c = (c * self.growth).min(self.max_channels);
        }
        c.min(self.max_channels)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn kaiming(name: String, cin: usize, cout: usize, slope: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let fan_in = (cin * 9) as f64;
        let bound = (6.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
        // stored at f32 precision so checkpoints are exact
        let w = (0..cout * cin * 9).map(|_| rng.random_range(-bound..bound) as f32 as f64).collect();
        Ok(Self {
            name,
            weight: Tensor::parameter(w, &[cout, cin, 3, 3])?,
            bias: Tensor::parameter(vec![0.0; cout], &[cout])?,
        })
    }
}

/// Encoder of stride-2 3x3 partial convolutions, decoder of nearest
/// upsampling, skip concatenation and 3x3 partial convolutions, sigmoid head.
#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    pub encoder: Vec<ConvLayer>,
    /// `decoder[l]` produces level `l`; `decoder[0]` is the RGB head.
    pub decoder: Vec<ConvLayer>,
}

fn mask_union(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure!(a.shape() == b.shape(), "mask union shape mismatch");
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x.max(*y)).collect();
    Tensor::new(data, a.shape())
}

impl UNet {
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let slope = config.leaky_slope;
        let mut encoder = Vec::new();
        for l in 1..=config.depth {
            encoder.push(ConvLayer::kaiming(
                format!("enc{l}"),
                config.channels(l - 1),
                config.channels(l),
                slope,
                &mut rng,
            )?);
        }
        let mut decoder = Vec::new();
        for l in 0..config.depth {
            let cin = config.channels(l + 1) + config.channels(l);
            let cout = if l == 0 { 3 } else { config.channels(l) };
            decoder.push(ConvLayer::kaiming(format!("dec{l}"), cin, cout, slope, &mut rng)?);
        }
        Ok(Self { config, encoder, decoder })
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    /// Trainable tensors in a fixed order (weight, bias per layer).
    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.layers()
            .flat_map(|l| {
                [(format!("{}.weight", l.name), l.weight.clone()), (format!("{}.bias", l.name), l.bias.clone())]
            })
            .collect()
    }

    fn check_input(&self, inputs: &Tensor) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = inputs.dims4("unet input")?;
        ensure!(
            c == self.config.input_channels,
            "unet input has {c} channels, config expects {}",
            self.config.input_channels
        );
        let f = 1 << self.config.depth;
        ensure!(h % f == 0 && w % f == 0, "unet input {h}x{w} is not divisible by 2^depth = {f}");
        Ok((n, h, w))
    }

    /// `inputs` is `[N, Cin, H, W]`, `mask` `[N, 1, H, W]` binary validity.
    pub fn forward(&self, inputs: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (n, h, w) = self.check_input(inputs)?;
        ensure!(mask.shape() == [n, 1, h, w], "unet mask shape {:?}, expected [{n}, 1, {h}, {w}]", mask.shape());
        let slope = self.config.leaky_slope;
        let mut feats = vec![inputs.clone()];
        let mut masks = vec![mask.clone()];
        for (l, layer) in self.encoder.iter().enumerate() {
            let pc = partial_conv2d(&feats[l], &masks[l], &layer.weight, Some(&layer.bias), 2, 1)?;
            feats.push(pc.output.leaky_relu(slope));
            masks.push(pc.mask);
        }
        let mut x = feats[self.config.depth].clone();
        let mut m = masks[self.config.depth].clone();
        for l in (0..self.config.depth).rev() {
            let up = x.upsample_nearest_2x()?;
            let up_m = m.upsample_nearest_2x()?;
            let cat = Tensor::concat_channels(&[&up, &feats[l]])?;
            let cat_m = mask_union(&up_m, &masks[l])?;
            let layer = &self.decoder[l];
            let pc = partial_conv2d(&cat, &cat_m, &layer.weight, Some(&layer.bias), 1, 1)?;
            x = if l == 0 { pc.output.sigmoid() } else { pc.output.leaky_relu(slope) };
            m = pc.mask;
        }
        Ok(x)
    }

    /// The same network with ordinary convolutions and no masks.
    pub fn forward_plain(&self, inputs: &Tensor) -> Result<Tensor> {
        self.check_input(inputs)?;
        let slope = self.config.leaky_slope;
        let mut feats = vec![inputs.clone()];
        for (l, layer) in self.encoder.iter().enumerate() {
            feats.push(conv2d(&feats[l], &layer.weight, Some(&layer.bias), 2, 1)?.leaky_relu(slope));
        }
        let mut x = feats[self.config.depth].clone();
        for l in (0..self.config.depth).rev() {
            let cat = Tensor::concat_channels(&[&x.upsample_nearest_2x()?, &feats[l]])?;
            let layer = &self.decoder[l];
            let y = conv2d(&cat, &layer.weight, Some(&layer.bias), 1, 1)?;
            x = if l == 0 { y.sigmoid() } else { y.leaky_relu(slope) };
        }
        Ok(x)
    }
}

/// Batched network tensors: `[N, 8, H, W]` inputs laid out as cc_left (3),
/// edges (1), cc_right_warped (3), stereo validity (1), and the
/// `[N, 1, H, W]` validity mask `C ∪ stereo support`. With
/// `stereo = false` the stereo channels are zero and the mask is `C`.
pub fn assemble_batch(inputs: &[&NetworkInput], stereo: bool) -> Result<(Tensor, Tensor)> {
    ensure!(!inputs.is_empty(), "empty batch");
    let (h, w) = (inputs[0].cc_left.height, inputs[0].cc_left.width);
    let plane = h * w;
    let mut data = Vec::with_capacity(inputs.len() * 8 * plane);
    let mut mask = Vec::with_capacity(inputs.len() * plane);
    for inp in inputs {
        ensure!(
            inp.cc_left.height == h && inp.cc_left.width == w,
            "batch mixes {}x{} and {}x{} samples",
            w,
            h,
            inp.cc_left.width,
            inp.cc_left.height
        );
        data.extend(inp.cc_left.to_rgb().to_planar());
        data.extend(inp.edges.as_f64());
        if stereo {
            data.extend(inp.cc_right_warped.to_rgb().to_planar());
            data.extend(inp.stereo_validity.as_f64());
            mask.extend(inp.context_mask.union(&inp.stereo_validity).as_f64());
        } else {
            data.extend(std::iter::repeat_n(0.0, 4 * plane));
            mask.extend(inp.context_mask.as_f64());
        }
    }
    let n = inputs.len();
    Ok((Tensor::new(data, &[n, 8, h, w])?, Tensor::new(mask, &[n, 1, h, w])?))
}

/// `[N, 1, H, W]` constant from per-sample masks.
pub fn mask_batch(masks: &[&BinaryMask]) -> Result<Tensor> {
    ensure!(!masks.is_empty(), "empty batch");
    let (h, w) = (masks[0].height, masks[0].width);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        ensure!(m.height == h && m.width == w, "mask sizes differ within a batch");
        data.extend(m.as_f64());
    }
    Tensor::new(data, &[masks.len(), 1, h, w])
}

/// `I = C ⊙ cc_left + (1 − C) ⊙ output`: context pixels are copied verbatim,
/// everything else comes from the network.
pub fn composite(output: &Tensor, cc_left: &Tensor, context: &Tensor, synthesis: &Tensor) -> Result<Tensor> {
    ensure!(output.shape() == cc_left.shape(), "composite: output and cc_left shapes differ");
    ensure!(context.shape() == synthesis.shape(), "composite: mask shapes differ");
    ensure!(
        context.data().iter().zip(synthesis.data().iter()).all(|(c, s)| c * s == 0.0),
        "composite: context and synthesis masks overlap"
    );
    let outside: Vec<f64> = context.data().iter().map(|c| 1.0 - c).collect();
    let outside = Tensor::new(outside, context.shape())?;
    output.mask_channels(&outside)?.add(&cc_left.mask_channels(context)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_parameter_gradients;

    fn small(depth: usize) -> UNet {
        UNet::new(UNetConfig { depth, base_channels: 4, input_channels: 3, seed: 3, ..Default::default() }).unwrap()
    }

    fn input(n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..n * c * h * w).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        Tensor::new(data, &[n, c, h, w]).unwrap()
    }

    #[test]
    fn channel_schedule_caps() {
        let c = UNetConfig { base_channels: 64, ..Default::default() };
        assert_eq!((1..=5).map(|l| c.channels(l)).collect::<Vec<_>>(), vec![64, 128, 256, 256, 256]);
    }

    #[test]
    fn output_shape_and_divisibility() {
        let net = small(2);
        let out = net.forward(&input(2, 3, 8, 12), &Tensor::ones(&[2, 1, 8, 12])).unwrap();
        assert_eq!(out.shape(), &[2, 3, 8, 12]);
        assert!(out.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(net.forward(&input(1, 3, 6, 8), &Tensor::ones(&[1, 1, 6, 8])).is_err());
    }

    #[test]
    fn zero_weights_give_constant_half() {
        let net = small(2);
        for p in net.parameters() {
            p.assign(&vec![0.0; p.numel()]).unwrap();
        }
        let out = net.forward(&input(1, 3, 8, 8), &Tensor::ones(&[1, 1, 8, 8])).unwrap();
        assert!(out.to_vec().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn full_mask_matches_plain_twin_bitwise() {
        let net = small(2);
        let x = input(1, 3, 16, 16);
        let a = net.forward(&x, &Tensor::ones(&[1, 1, 16, 16])).unwrap().to_vec();
        let b = net.forward_plain(&x).unwrap().to_vec();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn invalid_input_gives_zero_first_layer() {
        let net = small(1);
        let pc = partial_conv2d(
            &input(1, 3, 8, 8),
            &Tensor::zeros(&[1, 1, 8, 8]),
            &net.encoder[0].weight,
            Some(&net.encoder[0].bias),
            2,
            1,
        )
        .unwrap();
        assert!(pc.output.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let net = small(2);
        let x = input(1, 3, 16, 16);
        let mask = Tensor::new(
            (0..256).map(|i| if (i / 16 + i % 16) % 5 == 0 { 0.0 } else { 1.0 }).collect(),
            &[1, 1, 16, 16],
        )
        .unwrap();
        let probe =
            Tensor::new((0..768).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.5).collect(), &[1, 3, 16, 16]).unwrap();
        let report = check_parameter_gradients(&net.parameters(), Some(6), || {
            net.forward(&x, &mask)?.mul(&probe).map(|t| t.sum())
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn composite_copies_context() {
        let out = input(1, 3, 4, 4);
        let cc = Tensor::full(&[1, 3, 4, 4], 0.25);
        let c = Tensor::new((0..16).map(|i| (i % 2) as f64).collect(), &[1, 1, 4, 4]).unwrap();
        let s =
            Tensor::new((0..16).map(|i| if i % 2 == 0 && i < 8 { 1.0 } else { 0.0 }).collect(), &[1, 1, 4, 4]).unwrap();
        let i = composite(&out, &cc, &c, &s).unwrap().to_vec();
        let o = out.to_vec();
        for ch in 0..3 {
            for p in 0..16 {
                let v = i[ch * 16 + p];
                assert_eq!(v, if p % 2 == 1 { 0.25 } else { o[ch * 16 + p] });
            }
        }
        assert!(composite(&out, &cc, &c, &c).is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::tensor::{conv2d, Tensor};

#[derive(Debug, Clone)]
enum Stage {
    /// Optional 2x average pool, 3x3 conv, leaky relu. Weights are constants.
    Conv {
        pool: bool,
        weight: Tensor,
        bias: Tensor,
    },
    Identity,
}

/// Fixed random-weight convolutional stack standing in for pretrained VGG
/// features. Stage `p` (0-based) has spatial size `H / 2^p`.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    stages: Vec<Stage>,
    pub seed: u64,
}

pub const DEFAULT_FEATURE_CHANNELS: [usize; 4] = [16, 32, 64, 64];

impl FeatureExtractor {
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_channels(seed, &DEFAULT_FEATURE_CHANNELS)
    }

    pub fn with_channels(seed: u64, channels: &[usize]) -> Result<Self> {
        ensure!(channels.len() >= 2, "feature extractor needs at least two stages");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_FEA7);
        let mut cin = 3;
        let mut stages = Vec::new();
        for (p, &cout) in channels.iter().enumerate() {
            let bound = (6.0 / (1.04 * (cin * 9) as f64)).sqrt();
            let w = (0..cout * cin * 9).map(|_| rng.random_range(-bound..bound)).collect();
            stages.push(Stage::Conv {
                pool: p > 0,
                weight: Tensor::new(w, &[cout, cin, 3, 3])?,
                bias: Tensor::zeros(&[cout]),
            });
            cin = cout;
        }
        Ok(Self { stages, seed })
    }

    /// Single stage returning the image itself.
    pub fn identity() -> Self {
        Self { stages: vec![Stage::Identity], seed: 0 }
    }

    pub fn stages(&self) -> usize {
        self.stages.len()
    }

    pub fn extract(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let (_, _, h, w) = image.dims4("feature extractor input")?;
        let f = 1usize << (self.stages.len() - 1);
        ensure!(
            h % f == 0 && w % f == 0,
            "image {h}x{w} too small or not divisible for {} feature stages",
            self.stages.len()
        );
        let mut x = image.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = match stage {
                Stage::Identity => x,
                Stage::Conv { pool, weight, bias } => {
                    let inp = if *pool { x.avg_pool_2x()? } else { x };
                    conv2d(&inp, weight, Some(bias), 1, 1)?.leaky_relu(0.2)
                }
            };
            out.push(x.clone());
        }
        Ok(out)
    }
}

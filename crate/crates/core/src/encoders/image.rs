use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impl_params;
use crate::tensor::{PoolMode, Tape, Tensor, Var};

/// Images beyond this many (most recent first) are ignored.
pub const MAX_IMAGES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEncoderConfig {
    /// Output channels of each conv block; every block halves the extent.
    pub channels: Vec<usize>,
    pub input_size: usize,
    pub out_dim: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 64],
            input_size: 64,
            out_dim: 32,
        }
    }
}

/// Two 3x3 convolutions (pad 1) with relu, then 2x2 max pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub k1: Tensor,
    pub b1: Tensor,
    pub k2: Tensor,
    pub b2: Tensor,
}

impl_params!(ConvBlock { k1, b1, k2, b2 });

impl ConvBlock {
    fn init(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            k1: Tensor::randn(&[c_out, c_in, 3, 3], (2.0 / (9 * c_in) as f64).sqrt(), rng),
            b1: Tensor::zeros(&[c_out]),
            k2: Tensor::randn(&[c_out, c_out, 3, 3], (2.0 / (9 * c_out) as f64).sqrt(), rng),
            b2: Tensor::zeros(&[c_out]),
        }
    }

    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, x: Var) -> Result<Var> {
        let k1 = tape.param(&self.k1);
        let b1 = tape.param(&self.b1);
        let k2 = tape.param(&self.k2);
        let b2 = tape.param(&self.b2);
        let y = tape.conv2d(x, k1, 1, 1)?;
        let y = tape.channel_add(y, b1)?;
        let y = tape.relu(y)?;
        let y = tape.conv2d(y, k2, 1, 1)?;
        let y = tape.channel_add(y, b2)?;
        let y = tape.relu(y)?;
        tape.pool(y, PoolMode::Max, 2, 2)
    }
}

/// Mini-VGG stack: conv blocks, global average pool, per-feature affine
/// standardisation, relu projection.
///
/// `feat_mean` and `feat_inv_std` start as the identity and are normally
/// initialised from feature statistics with [`Self::fit_standardizer`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoderParams {
    pub blocks: Vec<ConvBlock>,
    pub feat_mean: Tensor,
    pub feat_inv_std: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    input_size: usize,
}

impl_params!(ImageEncoderParams { blocks, feat_mean, feat_inv_std, proj_w, proj_b });

impl ImageEncoderParams {
    pub fn init(cfg: &ImageEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let depth = cfg.channels.len();
        if depth == 0 || cfg.input_size % (1 << depth) != 0 {
            return Err(Error::dim(format!(
                "input size {} is not divisible by 2^{depth}",
                cfg.input_size
            )));
        }
        let mut blocks = Vec::with_capacity(depth);
        let mut c_in = 3;
        for &c in &cfg.channels {
            blocks.push(ConvBlock::init(c_in, c, rng));
            c_in = c;
        }
        Ok(Self {
            blocks,
            feat_mean: Tensor::zeros(&[c_in]),
            feat_inv_std: Tensor::ones(&[c_in]),
            proj_w: Tensor::randn(&[c_in, cfg.out_dim], (2.0 / c_in as f64).sqrt(), rng),
            proj_b: Tensor::full(&[1, cfg.out_dim], 0.01),
            input_size: cfg.input_size,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn feature_dim(&self) -> usize {
        self.proj_w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.proj_w.shape()[1]
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let s = self.input_size;
        if image.shape() != [3, s, s] {
            return Err(Error::dim(format!(
                "image must be [3,{s},{s}], got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Conv stack and global average pool for one image on `tape`.
    pub fn backbone<'p>(&'p self, tape: &mut Tape<'p>, image: Var) -> Result<Var> {
        self.check_input(tape.value(image))?;
        let mut x = image;
        for block in &self.blocks {
            x = block.forward(tape, x)?;
        }
        tape.global_avg_pool(x)
    }

    /// Sets the standardisation statistics from a sample of backbone
    /// features. Near-constant features keep unit scale.
    pub fn fit_standardizer(&mut self, features: &[&Tensor]) -> Result<()> {
        let d = self.feature_dim();
        if features.is_empty() {
            return Err(Error::InsufficientData("no features to standardise".into()));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            if f.shape() != [d] {
                return Err(Error::dim(format!("feature must be [{d}], got {:?}", f.shape())));
            }
            for (m, v) in mean.iter_mut().zip(f.data()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f.data()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        self.feat_mean = Tensor::vector(mean);
        self.feat_inv_std = Tensor::vector(
            var.into_iter()
                .map(|v| if v.sqrt() > 1e-6 { 1.0 / v.sqrt() } else { 1.0 })
                .collect(),
        );
        Ok(())
    }

    /// Inference-only backbone features, `[feature_dim]`.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        self.check_input(image)?;
        let mut tape = Tape::new();
        let x = tape.constant_ref(image);
        let f = self.backbone(&mut tape, x)?;
        Ok(tape.value(f).clone())
    }
}

/// Mean of per-image features, standardised, then the relu projection.
pub fn project_features<'p>(tape: &mut Tape<'p>, features: &[Var], p: &'p ImageEncoderParams) -> Result<Var> {
    if features.is_empty() {
        return Err(Error::InsufficientData("no images to encode".into()));
    }
    let pooled = tape.mean_of(features)?;
    let mean = tape.param(&p.feat_mean);
    let inv_std = tape.param(&p.feat_inv_std);
    let pooled = tape.sub(pooled, mean)?;
    let pooled = tape.mul(pooled, inv_std)?;
    let pooled = tape.reshape(pooled, &[1, p.feature_dim()])?;
    let w = tape.param(&p.proj_w);
    let b = tape.param(&p.proj_b);
    let y = tape.linear(pooled, w, b)?;
    let y = tape.relu(y)?;
    tape.reshape(y, &[p.out_dim()])
}

/// Image view vector from up to [`MAX_IMAGES`] images ordered most recent
/// first; extra images are dropped.
pub fn encode_images<'p>(tape: &mut Tape<'p>, images: &[Tensor], p: &'p ImageEncoderParams) -> Result<Var> {
    let recent = &images[..images.len().min(MAX_IMAGES)];
    let feats = recent
        .iter()
        .map(|img| {
            let x = tape.constant(img.clone());
            p.backbone(tape, x)
        })
        .collect::<Result<Vec<_>>>()?;
    project_features(tape, &feats, p)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generator::GeneratorParams;
use super::GanModel;
use crate::encoders::{project_features, ImageEncoderConfig, ImageEncoderParams};
use crate::error::{Error, Result};
use crate::imageio::downsample2x;
use crate::tensor::{Adam, AdamConfig, Params, Tape, Tensor};

pub const DEFAULT_LAMBDA: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleFitConfig {
    pub channels: Vec<usize>,
    pub samples: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for StyleFitConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            samples: 96,
            steps: 300,
            lr: 3e-3,
            seed: 5,
        }
    }
}

/// Resizes a square image to the generator resolution by repeated 2x2
/// averaging.
pub fn to_generator_size(image: &Tensor, size: usize) -> Result<Tensor> {
    let mut img = image.clone();
    loop {
        match img.shape() {
            [3, h, w] if h == w && *h == size => return Ok(img),
            [3, h, w] if h == w && *h > size && h % 2 == 0 => img = downsample2x(&img)?,
            s => {
                return Err(Error::dim(format!(
                    "cannot bring image {s:?} to [3,{size},{size}] by halving"
                )))
            }
        }
    }
}

/// Learns the map from image features to w-space by regressing the `w`
/// that produced generated samples from their backbone features. The conv
/// backbone stays at its seeded initialisation.
pub fn fit_style_encoder(gen: &GeneratorParams, config: &StyleFitConfig) -> Result<ImageEncoderParams> {
    if config.samples == 0 || config.lr <= 0.0 {
        return Err(Error::invalid("style", "samples and lr must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cfg = ImageEncoderConfig {
        channels: config.channels.clone(),
        input_size: gen.output_size(),
        out_dim: gen.w_dim(),
    };
    let mut enc = ImageEncoderParams::init(&cfg, &mut rng)?;
    let mut pairs = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let w = gen.map_latent(&gen.sample_latent(&mut rng))?;
        let img = gen.synthesize(&w, rng.random())?;
        pairs.push((enc.features(&img)?, w));
    }
    enc.fit_standardizer(&pairs.iter().map(|(f, _)| f).collect::<Vec<_>>())?;

    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let inv = 1.0 / pairs.len() as f64;
    for _ in 0..config.steps {
        let grads = {
            let mut tape = Tape::new();
            let mut terms = Vec::with_capacity(pairs.len());
            for (f, w) in &pairs {
                let fv = tape.constant(f.clone());
                let pred = project_features(&mut tape, &[fv], &enc)?;
                let target = tape.constant(w.clone());
                let d = tape.sub(pred, target)?;
                let sq = tape.mul(d, d)?;
                terms.push(tape.sum(sq)?);
            }
            let all = tape.concat(&terms)?;
            let total = tape.sum(all)?;
            let loss = tape.scale(total, inv)?;
            tape.backward(loss)?;
            // Features were computed off-tape, so the backbone gets zero
            // gradients and stays frozen.
            enc.grads_from(&tape)
        };
        adam.step(&mut enc, &grads)?;
    }
    Ok(enc)
}

/// Style vector of a source image in the generator's w-space.
pub fn style_vector(encoder: &ImageEncoderParams, image: &Tensor) -> Result<Tensor> {
    let img = to_generator_size(image, encoder.input_size())?;
    let f = encoder.features(&img)?;
    let mut tape = Tape::new();
    let fv = tape.constant(f);
    let w = project_features(&mut tape, &[fv], encoder)?;
    let w = tape.value(w).clone();
    if !w.is_finite() {
        return Err(Error::NonFinite("style vector"));
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantMeta {
    pub variant_id: String,
    pub source_id: String,
    pub lambda: f64,
    pub z_seed: u64,
    pub noise_seed: u64,
    /// SHA-256 over the image's f64 values.
    pub image_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub meta: VariantMeta,
    pub w: Tensor,
    pub image: Tensor,
}

pub fn image_hash(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

/// `k` images styled after `source_image`: variant `i` uses
/// `w_i = lambda * w_src + (1 - lambda) * map_latent(z_i)`. Latents are
/// drawn from `seed`; all variants share the noise seed `seed`.
pub fn generate_variants(
    model: &GanModel,
    source_id: &str,
    source_image: &Tensor,
    k: usize,
    lambda: f64,
    seed: u64,
) -> Result<Vec<Variant>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda", format!("{lambda} outside [0,1]")));
    }
    let style = model
        .style
        .as_ref()
        .ok_or_else(|| Error::NotTrained(format!("style encoder for {}", model.industry)))?;
    let w_src = style_vector(style, source_image)?;
    let gen = &model.generator;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|i| {
            let z_seed: u64 = master.random();
            let z = gen.sample_latent(&mut ChaCha8Rng::seed_from_u64(z_seed));
            let w_z = gen.map_latent(&z)?;
            let w = Tensor::new(
                vec![w_src.len()],
                w_src
                    .data()
                    .iter()
                    .zip(w_z.data())
                    .map(|(s, m)| lambda * s + (1.0 - lambda) * m)
                    .collect(),
            )?;
            let image = gen.synthesize(&w, seed)?;
            Ok(Variant {
                meta: VariantMeta {
                    variant_id: format!("{source_id}~{seed:x}~{i}"),
                    source_id: source_id.to_string(),
                    lambda,
                    z_seed,
                    noise_seed: seed,
                    image_hash: image_hash(&image),
                },
                w,
                image,
            })
        })
        .collect()
}

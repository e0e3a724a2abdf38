//! Style-based generator, discriminator, adversarial training and
//! source-conditioned variant generation.

pub mod discriminator;
pub mod generator;
pub mod style;
pub mod training;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use discriminator::{DiscriminatorConfig, DiscriminatorParams};
pub use generator::{GeneratorConfig, GeneratorParams, MappingParams, IMAGE_SIZE};
pub use style::{
    fit_style_encoder, generate_variants, image_hash, style_vector, to_generator_size, StyleFitConfig, Variant,
    VariantMeta, DEFAULT_LAMBDA,
};
pub use training::{channel_means, discriminator_accuracy, train_gan, GanOutcome, GanStepStats, GanTrainConfig, MIN_IMAGES};

use crate::encoders::{ImageEncoderConfig, ImageEncoderParams};
use crate::error::{Error, Result};
use crate::imageio::tensor_from_rgb;
use crate::tensor::{Checkpoint, Tensor};
use crate::train::corpus::random_shapes;

/// A trained generator for one industry, with its discriminator and the
/// style encoder used to condition on source assets.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub industry: String,
    pub generator_config: GeneratorConfig,
    pub generator: GeneratorParams,
    pub discriminator_config: DiscriminatorConfig,
    pub discriminator: DiscriminatorParams,
    pub style: Option<ImageEncoderParams>,
}

#[derive(Serialize, Deserialize)]
struct GanMeta {
    industry: String,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    style: Option<ImageEncoderConfig>,
}

impl GanModel {
    pub fn new(
        industry: impl Into<String>,
        generator_config: GeneratorConfig,
        generator: GeneratorParams,
        discriminator_config: DiscriminatorConfig,
        discriminator: DiscriminatorParams,
    ) -> Self {
        Self {
            industry: industry.into(),
            generator_config,
            generator,
            discriminator_config,
            discriminator,
            style: None,
        }
    }

    /// Trains the adversarial pair and then the style encoder.
    pub fn train(
        industry: &str,
        images: &[Tensor],
        steps: usize,
        config: &GanTrainConfig,
        style: &StyleFitConfig,
        checkpoint_dir: Option<&Path>,
    ) -> Result<(Self, Vec<GanStepStats>)> {
        let out = train_gan(images, steps, config, checkpoint_dir)?;
        let mut model = Self::new(
            industry,
            config.generator.clone(),
            out.generator,
            config.discriminator.clone(),
            out.discriminator,
        );
        model.style = Some(fit_style_encoder(&model.generator, style)?);
        Ok((model, out.history))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_params(&self.generator, "generator");
        ck.extend_from(&self.discriminator, "discriminator");
        if let Some(style) = &self.style {
            ck.extend_from(style, "style");
        }
        let meta = GanMeta {
            industry: self.industry.clone(),
            generator: self.generator_config.clone(),
            discriminator: self.discriminator_config.clone(),
            style: self.style.as_ref().map(|s| ImageEncoderConfig {
                channels: s.blocks.iter().map(|b| b.k1.shape()[0]).collect(),
                input_size: s.input_size(),
                out_dim: s.out_dim(),
            }),
        };
        ck.meta.insert("kind".into(), "gan".into());
        ck.meta.insert("config".into(), serde_json::to_value(meta)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get("kind").and_then(|v| v.as_str()) != Some("gan") {
            return Err(Error::Checkpoint("not a GAN checkpoint".into()));
        }
        let meta: GanMeta = serde_json::from_value(
            ck.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("GAN checkpoint has no config".into()))?,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = GeneratorParams::init(&meta.generator, &mut rng)?;
        ck.load_into(&mut generator, "generator")?;
        let mut discriminator = DiscriminatorParams::init(&meta.discriminator, &mut rng)?;
        ck.load_into(&mut discriminator, "discriminator")?;
        discriminator.set_input_size(meta.discriminator.input_size);
        let style = match &meta.style {
            Some(cfg) => {
                let mut s = ImageEncoderParams::init(cfg, &mut rng)?;
                ck.load_into(&mut s, "style")?;
                Some(s)
            }
            None => None,
        };
        Ok(Self {
            industry: meta.industry,
            generator_config: meta.generator,
            generator,
            discriminator_config: meta.discriminator,
            discriminator,
            style,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Industry name to checkpoint path, stored as `registry.json`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRegistry {
    pub models: BTreeMap<String, PathBuf>,
}

impl ModelRegistry {
    pub const FILE: &'static str = "registry.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(Self::FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn register(&mut self, industry: &str, path: PathBuf) {
        self.models.insert(industry.to_string(), path);
    }

    pub fn path_for(&self, industry: &str) -> Result<&Path> {
        self.models
            .get(industry)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::NotTrained(format!("no generator for industry {industry}")))
    }
}

/// Seeded corpus of random shapes pictures at `size`, values in `[-1, 1]`.
pub fn shapes_corpus(n: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| tensor_from_rgb(&random_shapes(size, &mut rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> GanModel {
        let gc = GeneratorConfig {
            z_dim: 8,
            w_dim: 8,
            mapping_layers: 3,
            const_channels: 8,
            channels: vec![8, 6, 4, 4],
        };
        let dc = DiscriminatorConfig {
            input_size: 32,
            channels: vec![2, 3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GeneratorParams::init(&gc, &mut rng).unwrap();
        let d = DiscriminatorParams::init(&dc, &mut rng).unwrap();
        let mut m = GanModel::new("Fashion", gc, g, dc, d);
        let fit = StyleFitConfig {
            channels: vec![4, 4],
            samples: 8,
            steps: 5,
            ..StyleFitConfig::default()
        };
        m.style = Some(fit_style_encoder(&m.generator, &fit).unwrap());
        m
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        assert_eq!(GanModel::load(&path).unwrap(), m);
    }

    #[test]
    fn registry_reports_missing_industry_as_not_trained() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ModelRegistry::load(dir.path()).unwrap();
        r.register("Fashion", "fashion.ckpt".into());
        r.save(dir.path()).unwrap();
        let r = ModelRegistry::load(dir.path()).unwrap();
        assert_eq!(r.path_for("Fashion").unwrap(), Path::new("fashion.ckpt"));
        assert!(matches!(r.path_for("Automobile"), Err(Error::NotTrained(_))));
    }

    #[test]
    fn lambda_one_ignores_latents() {
        let m = tiny_model();
        let src = shapes_corpus(1, 64, 1).remove(0);
        let vs = generate_variants(&m, "a1", &src, 4, 1.0, 42).unwrap();
        assert!(vs.windows(2).all(|p| p[0].image == p[1].image));
        assert!(vs.windows(2).all(|p| p[0].meta.z_seed != p[1].meta.z_seed));
    }

    #[test]
    fn lambda_zero_ignores_the_source() {
        let m = tiny_model();
        let srcs = shapes_corpus(2, 64, 2);
        let a = generate_variants(&m, "a", &srcs[0], 3, 0.0, 9).unwrap();
        let b = generate_variants(&m, "b", &srcs[1], 3, 0.0, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn mixed_styles_lie_on_the_segment() {
        let m = tiny_model();
        let src = shapes_corpus(1, 32, 5).remove(0);
        let w_src = style_vector(m.style.as_ref().unwrap(), &src).unwrap();
        for v in generate_variants(&m, "s", &src, 3, DEFAULT_LAMBDA, 1).unwrap() {
            let z = m.generator.sample_latent(&mut ChaCha8Rng::seed_from_u64(v.meta.z_seed));
            let w_z = m.generator.map_latent(&z).unwrap();
            for ((w, s), q) in v.w.data().iter().zip(w_src.data()).zip(w_z.data()) {
                let (lo, hi) = (s.min(*q), s.max(*q));
                assert!(*w >= lo - 1e-12 && *w <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn five_variants_have_distinct_ids_and_images() {
        let m = tiny_model();
        let src = shapes_corpus(1, 32, 6).remove(0);
        let vs = generate_variants(&m, "src", &src, 5, DEFAULT_LAMBDA, 77).unwrap();
        let ids: std::collections::BTreeSet<_> = vs.iter().map(|v| v.meta.variant_id.clone()).collect();
        assert_eq!(ids.len(), 5);
        let hashes: std::collections::BTreeSet<_> = vs.iter().map(|v| v.meta.image_hash.clone()).collect();
        assert!(5 - hashes.len() < 2);
        assert!(vs.iter().all(|v| v.meta.source_id == "src" && v.meta.lambda == DEFAULT_LAMBDA));
    }

    #[test]
    fn rejects_bad_lambda_and_untrained_style() {
        let mut m = tiny_model();
        let src = shapes_corpus(1, 32, 6).remove(0);
        assert!(generate_variants(&m, "s", &src, 1, 1.5, 0).is_err());
        m.style = None;
        assert!(matches!(generate_variants(&m, "s", &src, 1, 0.5, 0), Err(Error::NotTrained(_))));
    }
}

//! Generator fixtures and conditioning checks shared by the GAN tests.

use personaforge::gan::{
    fit_style_encoder, generate_variants, style_vector, DiscriminatorParams, GanModel, GanTrainConfig,
    GeneratorParams, StyleFitConfig,
};
use personaforge::tensor::Tensor;
use personaforge::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each image is split vertically at a random column into a red left part
/// and a blue right part.
pub fn two_color_corpus(n: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let cut = rng.random_range(size / 4..3 * size / 4);
            let mut data = Vec::with_capacity(3 * size * size);
            for c in 0..3 {
                for _ in 0..size {
                    for x in 0..size {
                        let red = x < cut;
                        data.push(match (c, red) {
                            (0, true) | (2, false) => 0.9,
                            _ => -0.9,
                        });
                    }
                }
            }
            Tensor::new(vec![3, size, size], data).unwrap()
        })
        .collect()
}

/// Untrained model with a fitted style encoder, for conditioning checks.
pub fn untrained_model(config: &GanTrainConfig, seed: u64) -> Result<GanModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GeneratorParams::init(&config.generator, &mut rng)?;
    let d = DiscriminatorParams::init(&config.discriminator, &mut rng)?;
    let mut m = GanModel::new("fashion", config.generator.clone(), g, config.discriminator.clone(), d);
    let fit = StyleFitConfig {
        samples: 16,
        steps: 10,
        ..StyleFitConfig::default()
    };
    m.style = Some(fit_style_encoder(&m.generator, &fit)?);
    Ok(m)
}

pub struct Endpoints {
    /// λ=1: every variant of one source is the same image.
    pub pure_source: bool,
    /// λ=0: two different sources give bitwise identical variants.
    pub source_free: bool,
    /// λ=0.7: each w lies coordinatewise between w_src and map_latent(z).
    pub on_segment: bool,
}

impl Endpoints {
    pub fn all(&self) -> bool {
        self.pure_source && self.source_free && self.on_segment
    }
}

pub fn lambda_endpoints(model: &GanModel, a: &Tensor, b: &Tensor, seed: u64) -> Result<Endpoints> {
    let k = 4;
    let ones = generate_variants(model, "a", a, k, 1.0, seed)?;
    let pure_source = ones.windows(2).all(|p| p[0].image == p[1].image);

    let za = generate_variants(model, "a", a, k, 0.0, seed)?;
    let zb = generate_variants(model, "b", b, k, 0.0, seed)?;
    let sources_differ = style_vector(model.style.as_ref().unwrap(), a)? != style_vector(model.style.as_ref().unwrap(), b)?;
    let source_free = sources_differ && za.iter().zip(&zb).all(|(x, y)| x.image == y.image);

    let w_src = style_vector(model.style.as_ref().unwrap(), a)?;
    let mixed = generate_variants(model, "a", a, k, 0.7, seed)?;
    let mut on_segment = true;
    for v in &mixed {
        let z = model.generator.sample_latent(&mut ChaCha8Rng::seed_from_u64(v.meta.z_seed));
        let w_z = model.generator.map_latent(&z)?;
        for ((w, s), m) in v.w.data().iter().zip(w_src.data()).zip(w_z.data()) {
            let (lo, hi) = if s < m { (s, m) } else { (m, s) };
            on_segment &= *lo - 1e-12 <= *w && *w <= *hi + 1e-12;
        }
    }
    Ok(Endpoints {
        pure_source,
        source_free,
        on_segment,
    })
}

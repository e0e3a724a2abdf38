use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{DiscriminatorConfig, DiscriminatorParams};
use super::generator::{GeneratorConfig, GeneratorParams};
use super::GanModel;
use crate::error::{Error, Result};
use crate::tensor::{accumulate, Adam, AdamConfig, Params, Tape, Tensor};

pub const MIN_IMAGES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub r1_gamma: f64,
    /// R1 is applied on every `r1_every`-th discriminator step, weighted by
    /// `r1_every` so its average strength matches a per-step penalty.
    pub r1_every: usize,
    /// Finite-difference step for the R1 parameter gradient.
    pub r1_step: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Only the discriminator learns; used for sanity runs.
    pub freeze_generator: bool,
    /// Decay of the moving average of generator weights that is returned
    /// and checkpointed. 0 returns the raw weights.
    #[serde(default = "default_ema_beta")]
    pub ema_beta: f64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            adam: AdamConfig {
                lr: 2e-4,
                beta1: 0.5,
                beta2: 0.99,
                eps: 1e-8,
            },
            r1_gamma: 1.0,
            r1_every: 16,
            r1_step: 1e-4,
            seed: 17,
            checkpoint_every: 0,
            freeze_generator: false,
            ema_beta: default_ema_beta(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

fn default_ema_beta() -> f64 {
    0.99
}

/// `avg = beta * avg + (1 - beta) * current`, tensor by tensor.
fn update_average(avg: &mut GeneratorParams, current: &GeneratorParams, beta: f64) {
    let current: Vec<&Tensor> = current.named_tensors().into_iter().map(|(_, t)| t).collect();
    let mut i = 0;
    avg.visit_mut("", &mut |_, t| {
        for (a, c) in t.data_mut().iter_mut().zip(current[i].data()) {
            *a = beta * *a + (1.0 - beta) * c;
        }
        i += 1;
    });
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanStepStats {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub r1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub history: Vec<GanStepStats>,
}

fn check_images(images: &[Tensor], size: usize) -> Result<()> {
    if images.len() < MIN_IMAGES {
        return Err(Error::InsufficientData(format!(
            "GAN training needs at least {MIN_IMAGES} images, got {}",
            images.len()
        )));
    }
    if let Some(bad) = images.iter().find(|t| t.shape() != [3, size, size]) {
        return Err(Error::dim(format!(
            "training images must be [3,{size},{size}], got {:?}",
            bad.shape()
        )));
    }
    Ok(())
}

fn diverged(step: usize, detail: String) -> Error {
    Error::Diverged { epoch: 0, step, detail }
}

/// Non-saturating GAN training with alternating discriminator and
/// generator updates and lazy R1 on real batches.
///
/// With `checkpoint_dir` set and `checkpoint_every > 0`, the current pair
/// is written to `gan-step{N}.ckpt` there.
pub fn train_gan(
    images: &[Tensor],
    steps: usize,
    config: &GanTrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<GanOutcome> {
    config.generator.validate()?;
    if !(0.0..1.0).contains(&config.ema_beta) {
        return Err(Error::invalid("ema_beta", format!("{} outside [0, 1)", config.ema_beta)));
    }
    if config.batch_size == 0 || config.r1_every == 0 || config.adam.lr <= 0.0 || config.r1_step <= 0.0 {
        return Err(Error::invalid("gan", "batch size, r1 interval, lr and r1 step must be positive"));
    }
    let size = config.generator.output_size();
    if config.discriminator.input_size != size {
        return Err(Error::invalid(
            "discriminator.input_size",
            format!("must equal generator output {size}"),
        ));
    }
    check_images(images, size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gen = GeneratorParams::init(&config.generator, &mut rng)?;
    let mut disc = DiscriminatorParams::init(&config.discriminator, &mut rng)?;
    let mut avg = gen.clone();
    let mut g_opt = Adam::new(config.adam);
    let mut d_opt = Adam::new(config.adam);
    let b = config.batch_size;
    let inv_b = 1.0 / b as f64;
    let mut history = Vec::with_capacity(steps);

    for step in 1..=steps {
        // Discriminator.
        let reals: Vec<&Tensor> = (0..b).map(|_| &images[rng.random_range(0..images.len())]).collect();
        let fakes = (0..b)
            .map(|_| {
                let z = gen.sample_latent(&mut rng);
                let w = gen.map_latent(&z)?;
                gen.synthesize(&w, rng.random())
            })
            .collect::<Result<Vec<_>>>()?;
        let (d_loss, mut d_grads) = {
            let mut tape = Tape::new();
            let mut terms = Vec::with_capacity(2 * b);
            for (real, fake) in reals.iter().zip(&fakes) {
                let x = tape.constant((*real).clone());
                let l = disc.forward(&mut tape, x)?;
                let l = tape.scale(l, -1.0)?;
                terms.push(tape.softplus(l)?);
                let x = tape.constant(fake.clone());
                let l = disc.forward(&mut tape, x)?;
                terms.push(tape.softplus(l)?);
            }
            let total = tape.concat(&terms)?;
            let total = tape.sum(total)?;
            let loss = tape.scale(total, inv_b)?;
            tape.backward(loss)?;
            (tape.value(loss).data()[0], disc.grads_from(&tape))
        };
        let mut r1 = None;
        if step % config.r1_every == 0 {
            let weight = config.r1_every as f64 * inv_b;
            let mut total = 0.0;
            let mut acc = None;
            for real in &reals {
                let (p, g) = disc.r1_penalty(real, config.r1_gamma, config.r1_step)?;
                total += p;
                accumulate(&mut acc, g)?;
            }
            for (dg, rg) in d_grads.iter_mut().zip(acc.unwrap_or_default()) {
                dg.axpy(weight, &rg)?;
            }
            r1 = Some(total * inv_b);
        }
        if !d_loss.is_finite() || d_grads.iter().any(|g| !g.is_finite()) {
            return Err(diverged(step, format!("discriminator loss {d_loss}")));
        }
        d_opt.step(&mut disc, &d_grads)?;

        // Generator.
        let g_loss = {
            let mut tape = Tape::new();
            let mut terms = Vec::with_capacity(b);
            for _ in 0..b {
                let z = tape.constant(gen.sample_latent(&mut rng));
                let w = gen.map_latent_on(&mut tape, z)?;
                let img = gen.synthesize_on(&mut tape, w, rng.random())?;
                let l = disc.forward(&mut tape, img)?;
                let l = tape.scale(l, -1.0)?;
                terms.push(tape.softplus(l)?);
            }
            let total = tape.concat(&terms)?;
            let total = tape.sum(total)?;
            let loss = tape.scale(total, inv_b)?;
            let value = tape.value(loss).data()[0];
            if !config.freeze_generator {
                tape.backward(loss)?;
                let grads = gen.grads_from(&tape);
                if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(diverged(step, format!("generator loss {value}")));
                }
                drop(tape);
                g_opt.step(&mut gen, &grads)?;
                update_average(&mut avg, &gen, config.ema_beta);
            }
            value
        };

        debug!("gan step {step}: d {d_loss:.4} g {g_loss:.4} r1 {r1:?}");
        history.push(GanStepStats { step, d_loss, g_loss, r1 });
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                let model = GanModel::new("checkpoint", config.generator.clone(), avg.clone(), config.discriminator.clone(), disc.clone());
                model.save(&dir.join(format!("gan-step{step}.ckpt")))?;
            }
        }
    }
    if let Some(last) = history.last() {
        info!("gan trained {steps} steps: d {:.4} g {:.4}", last.d_loss, last.g_loss);
    }
    Ok(GanOutcome {
        generator: avg,
        discriminator: disc,
        history,
    })
}

/// Fraction of reals scored positive plus fakes scored negative.
pub fn discriminator_accuracy(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    reals: &[Tensor],
    n_fake: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0;
    for r in reals {
        if disc.logit(r)? > 0.0 {
            correct += 1;
        }
    }
    for _ in 0..n_fake {
        let w = gen.map_latent(&gen.sample_latent(&mut rng))?;
        if disc.logit(&gen.synthesize(&w, rng.random())?)? <= 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / (reals.len() + n_fake).max(1) as f64)
}

/// Per-channel pixel means over a set of `[3, h, w]` images.
pub fn channel_means(images: &[Tensor]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for img in images {
        let hw = img.len() / 3;
        for (c, plane) in img.data().chunks(hw).enumerate().take(3) {
            out[c] += plane.iter().sum::<f64>() / hw as f64;
        }
    }
    out.map(|v| v / images.len().max(1) as f64)
}

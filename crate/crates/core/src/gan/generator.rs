use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impl_params;
use crate::tensor::{Tape, Tensor, Var};

pub const IMAGE_SIZE: usize = 32;
const LEAK: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    pub const_channels: usize,
    /// Output channels per synthesis block. The first block works on the
    /// 4x4 constant; every later block doubles the extent.
    pub channels: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            z_dim: 64,
            w_dim: 64,
            mapping_layers: 3,
            const_channels: 64,
            channels: vec![64, 32, 16, 8],
        }
    }
}

impl GeneratorConfig {
    pub fn output_size(&self) -> usize {
        4 << self.channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.w_dim == 0 || self.mapping_layers == 0 || self.const_channels == 0 {
            return Err(Error::invalid("generator", "dimensions must be positive"));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::invalid("generator.channels", "need at least one block of positive width"));
        }
        Ok(())
    }
}

/// `z -> w` MLP, relu after every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl_params!(MappingParams { weights, biases });

impl MappingParams {
    pub fn zeros(z_dim: usize, w_dim: usize, layers: usize) -> Self {
        let dims: Vec<usize> = std::iter::once(z_dim).chain(std::iter::repeat_n(w_dim, layers)).collect();
        Self {
            weights: dims.windows(2).map(|d| Tensor::zeros(&[d[0], d[1]])).collect(),
            biases: dims[1..].iter().map(|&d| Tensor::zeros(&[1, d])).collect(),
        }
    }

    pub fn init(z_dim: usize, w_dim: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(z_dim, w_dim, layers);
        for w in &mut p.weights {
            let fan_in = w.shape()[0];
            *w = Tensor::randn(w.shape(), (2.0 / fan_in as f64).sqrt(), rng);
        }
        p
    }

    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, z: Var) -> Result<Var> {
        let n = tape.value(z).len();
        let mut h = tape.reshape(z, &[1, n])?;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let (wv, bv) = (tape.param(w), tape.param(b));
            h = tape.linear(h, wv, bv)?;
            h = tape.relu(h)?;
        }
        let out = tape.value(h).len();
        tape.reshape(h, &[out])
    }
}

/// Upsample (except in the first block), 3x3 conv, noise, leaky relu,
/// instance norm, then a per-channel scale and shift computed from `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthBlock {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub noise_strength: Tensor,
    pub scale_w: Tensor,
    pub scale_b: Tensor,
    pub shift_w: Tensor,
    pub shift_b: Tensor,
}

impl_params!(SynthBlock { kernel, bias, noise_strength, scale_w, scale_b, shift_w, shift_b });

impl SynthBlock {
    fn init(c_in: usize, c_out: usize, w_dim: usize, rng: &mut impl Rng) -> Self {
        let style_std = 0.1 / (w_dim as f64).sqrt();
        Self {
            kernel: Tensor::randn(&[c_out, c_in, 3, 3], (2.0 / (9 * c_in) as f64).sqrt(), rng),
            bias: Tensor::zeros(&[c_out]),
            noise_strength: Tensor::full(&[c_out], 0.1),
            scale_w: Tensor::randn(&[w_dim, c_out], style_std, rng),
            scale_b: Tensor::zeros(&[1, c_out]),
            shift_w: Tensor::randn(&[w_dim, c_out], style_std, rng),
            shift_b: Tensor::zeros(&[1, c_out]),
        }
    }

    fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        x: Var,
        w_row: Var,
        upsample: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let x = if upsample { tape.upsample2x(x)? } else { x };
        let kernel = tape.param(&self.kernel);
        let bias = tape.param(&self.bias);
        let y = tape.conv2d(x, kernel, 1, 1)?;
        let y = tape.channel_add(y, bias)?;

        let shape = tape.shape(y).to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let plane = Tensor::randn(&[h, w], 1.0, rng);
        let tiled: Vec<f64> = (0..c).flat_map(|_| plane.data().iter().copied()).collect();
        let noise = tape.constant(Tensor::new(vec![c, h, w], tiled)?);
        let strength = tape.param(&self.noise_strength);
        let noise = tape.channel_mul(noise, strength)?;
        let y = tape.add(y, noise)?;

        let y = tape.leaky_relu(y, LEAK)?;
        let y = tape.instance_norm(y, NORM_EPS)?;
        let (sw, sb) = (tape.param(&self.scale_w), tape.param(&self.scale_b));
        let scale = tape.linear(w_row, sw, sb)?;
        let scale = tape.reshape(scale, &[c])?;
        let scale = tape.affine(scale, 1.0, 1.0)?;
        let (hw, hb) = (tape.param(&self.shift_w), tape.param(&self.shift_b));
        let shift = tape.linear(w_row, hw, hb)?;
        let shift = tape.reshape(shift, &[c])?;
        let y = tape.channel_mul(y, scale)?;
        tape.channel_add(y, shift)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub mapping: MappingParams,
    pub constant: Tensor,
    pub blocks: Vec<SynthBlock>,
    pub rgb_kernel: Tensor,
    pub rgb_bias: Tensor,
}

impl_params!(GeneratorParams { mapping, constant, blocks, rgb_kernel, rgb_bias });

impl GeneratorParams {
    pub fn init(config: &GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mapping = MappingParams::init(config.z_dim, config.w_dim, config.mapping_layers, rng);
        let constant = Tensor::randn(&[config.const_channels, 4, 4], 1.0, rng);
        let mut blocks = Vec::with_capacity(config.channels.len());
        let mut c_in = config.const_channels;
        for &c in &config.channels {
            blocks.push(SynthBlock::init(c_in, c, config.w_dim, rng));
            c_in = c;
        }
        Ok(Self {
            mapping,
            constant,
            blocks,
            rgb_kernel: Tensor::randn(&[3, c_in, 1, 1], (1.0 / c_in as f64).sqrt(), rng),
            rgb_bias: Tensor::zeros(&[3]),
        })
    }

    pub fn z_dim(&self) -> usize {
        self.mapping.weights[0].shape()[0]
    }

    pub fn w_dim(&self) -> usize {
        self.mapping.weights.last().map_or(0, |w| w.shape()[1])
    }

    pub fn output_size(&self) -> usize {
        4 << self.blocks.len().saturating_sub(1)
    }

    /// Synthesis on the tape; also returns the activation after each block.
    pub fn synthesize_traced<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        w: Var,
        noise_seed: u64,
    ) -> Result<(Var, Vec<Var>)> {
        let w_dim = self.w_dim();
        if tape.value(w).len() != w_dim {
            return Err(Error::dim(format!("style vector must have {w_dim} values")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let w_row = tape.reshape(w, &[1, w_dim])?;
        let mut x = tape.param(&self.constant);
        let mut trace = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(tape, x, w_row, i > 0, &mut rng)?;
            trace.push(x);
        }
        let (k, b) = (tape.param(&self.rgb_kernel), tape.param(&self.rgb_bias));
        let y = tape.conv2d(x, k, 1, 0)?;
        let y = tape.channel_add(y, b)?;
        Ok((tape.tanh(y)?, trace))
    }

    pub fn synthesize_on<'p>(&'p self, tape: &mut Tape<'p>, w: Var, noise_seed: u64) -> Result<Var> {
        Ok(self.synthesize_traced(tape, w, noise_seed)?.0)
    }

    pub fn map_latent_on<'p>(&'p self, tape: &mut Tape<'p>, z: Var) -> Result<Var> {
        let z_dim = self.z_dim();
        if tape.value(z).len() != z_dim {
            return Err(Error::dim(format!("latent must have {z_dim} values")));
        }
        if !tape.value(z).is_finite() {
            return Err(Error::NonFinite("latent input"));
        }
        self.mapping.forward(tape, z)
    }

    pub fn map_latent(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let w = self.map_latent_on(&mut tape, zv)?;
        Ok(tape.value(w).clone())
    }

    /// Image `[3, s, s]` in `[-1, 1]`; a pure function of `(w, noise_seed)`.
    pub fn synthesize(&self, w: &Tensor, noise_seed: u64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let img = self.synthesize_on(&mut tape, wv, noise_seed)?;
        Ok(tape.value(img).clone())
    }

    pub fn sample_latent(&self, rng: &mut impl Rng) -> Tensor {
        Tensor::randn(&[self.z_dim()], 1.0, rng)
    }
}

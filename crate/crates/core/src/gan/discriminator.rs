use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impl_params;
use crate::tensor::{Params, PoolMode, Tape, Tensor, Var};

const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    /// Channels after the 1x1 input conv and after each downsampling block.
    pub channels: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            channels: vec![8, 16, 32, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownBlock {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl_params!(DownBlock { kernel, bias });

/// 1x1 conv from RGB, then (3x3 conv, leaky relu, 2x2 average pool) per
/// block, then a linear layer to one logit.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub rgb_kernel: Tensor,
    pub rgb_bias: Tensor,
    pub blocks: Vec<DownBlock>,
    pub out_w: Tensor,
    pub out_b: Tensor,
    input_size: usize,
}

impl_params!(DiscriminatorParams { rgb_kernel, rgb_bias, blocks, out_w, out_b });

impl DiscriminatorParams {
    pub fn init(config: &DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        let depth = config.channels.len().saturating_sub(1);
        if config.channels.is_empty() || config.channels.contains(&0) {
            return Err(Error::invalid("discriminator.channels", "need positive widths"));
        }
        if config.input_size == 0 || config.input_size % (1 << depth) != 0 {
            return Err(Error::invalid(
                "discriminator.input_size",
                format!("{} is not divisible by {}", config.input_size, 1 << depth),
            ));
        }
        let c0 = config.channels[0];
        let blocks = config
            .channels
            .windows(2)
            .map(|c| DownBlock {
                kernel: Tensor::randn(&[c[1], c[0], 3, 3], (2.0 / (9 * c[0]) as f64).sqrt(), rng),
                bias: Tensor::zeros(&[c[1]]),
            })
            .collect();
        let last = *config.channels.last().unwrap_or(&c0);
        let side = config.input_size >> depth;
        let flat = last * side * side;
        Ok(Self {
            rgb_kernel: Tensor::randn(&[c0, 3, 1, 1], (2.0 / 3.0f64).sqrt(), rng),
            rgb_bias: Tensor::zeros(&[c0]),
            blocks,
            out_w: Tensor::randn(&[flat, 1], (1.0 / flat as f64).sqrt(), rng),
            out_b: Tensor::zeros(&[1, 1]),
            input_size: config.input_size,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub(crate) fn set_input_size(&mut self, size: usize) {
        self.input_size = size;
    }

    /// Scalar logit for an image `[3, s, s]`.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, x: Var) -> Result<Var> {
        let s = self.input_size;
        if tape.shape(x) != [3, s, s] {
            return Err(Error::dim(format!(
                "discriminator expects [3,{s},{s}], got {:?}",
                tape.shape(x)
            )));
        }
        let (k, b) = (tape.param(&self.rgb_kernel), tape.param(&self.rgb_bias));
        let mut h = tape.conv2d(x, k, 1, 0)?;
        h = tape.channel_add(h, b)?;
        h = tape.leaky_relu(h, LEAK)?;
        for block in &self.blocks {
            let (k, b) = (tape.param(&block.kernel), tape.param(&block.bias));
            h = tape.conv2d(h, k, 1, 1)?;
            h = tape.channel_add(h, b)?;
            h = tape.leaky_relu(h, LEAK)?;
            h = tape.pool(h, PoolMode::Avg, 2, 2)?;
        }
        let n = tape.value(h).len();
        let h = tape.reshape(h, &[1, n])?;
        let (w, b) = (tape.param(&self.out_w), tape.param(&self.out_b));
        let logit = tape.linear(h, w, b)?;
        tape.reshape(logit, &[1])
    }

    pub fn logit(&self, image: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).data()[0])
    }

    /// Gradient of the logit with respect to the input image.
    pub fn input_grad(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let out = self.forward(&mut tape, x)?;
        tape.backward(out)?;
        Ok(tape.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(image.shape())))
    }

    fn param_grads_at(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, x)?;
        tape.backward(out)?;
        Ok(self.grads_from(&tape))
    }

    /// R1 penalty `gamma/2 * |grad_x D(x)|^2` at a real image, and its
    /// gradient with respect to the discriminator parameters.
    ///
    /// The parameter gradient is `gamma * H g` with `g = grad_x D` and `H`
    /// the mixed second derivative `d^2 D / (dtheta dx)`. The product is a
    /// directional derivative of `grad_theta D` along `g`, taken by central
    /// differences with step `h` along the unit direction.
    pub fn r1_penalty(&self, image: &Tensor, gamma: f64, h: f64) -> Result<(f64, Vec<Tensor>)> {
        let g = self.input_grad(image)?;
        let norm_sq: f64 = g.data().iter().map(|v| v * v).sum();
        let penalty = 0.5 * gamma * norm_sq;
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            return Ok((0.0, self.grads_from(&Tape::new())));
        }
        let mut up = image.clone();
        up.axpy(h / norm, &g)?;
        let mut down = image.clone();
        down.axpy(-h / norm, &g)?;
        let gu = self.param_grads_at(&up)?;
        let gd = self.param_grads_at(&down)?;
        let coef = gamma * norm / (2.0 * h);
        let grads = gu
            .into_iter()
            .zip(gd)
            .map(|(mut a, b)| {
                a.axpy(-1.0, &b)?;
                Ok(a.map(|v| v * coef))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((penalty, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DiscriminatorParams {
        let cfg = DiscriminatorConfig {
            input_size: 8,
            channels: vec![2, 3, 3],
        };
        let mut d = DiscriminatorParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        d.visit_mut("", &mut |_, t| {
            if t.shape().len() <= 2 {
                *t = Tensor::uniform(t.shape(), -0.2, 0.2, &mut rng);
            }
        });
        d
    }

    #[test]
    fn logit_is_finite_and_shape_checked() {
        let d = DiscriminatorParams::init(&DiscriminatorConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let img = Tensor::uniform(&[3, 32, 32], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(d.logit(&img).unwrap().is_finite());
        assert!(matches!(d.logit(&Tensor::zeros(&[3, 16, 16])), Err(Error::Dimension(_))));
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let d = tiny();
        let img = Tensor::uniform(&[3, 8, 8], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let err = grad_check_params(&d, |tape, p| {
            let x = tape.constant(img.clone());
            let l = p.forward(tape, x)?;
            tape.softplus(l)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn r1_gradient_matches_differentiated_penalty() {
        let d = tiny();
        let img = Tensor::uniform(&[3, 8, 8], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let gamma = 1.0;
        let (penalty, grads) = d.r1_penalty(&img, gamma, 1e-4).unwrap();
        let g = d.input_grad(&img).unwrap();
        let expect = 0.5 * gamma * g.data().iter().map(|v| v * v).sum::<f64>();
        assert!((penalty - expect).abs() < 1e-12);

        // Oracle: differentiate the penalty numerically in parameter space.
        let analytic: Vec<f64> = grads.into_iter().flat_map(Tensor::into_data).collect();
        let mut probe = d.clone();
        let mut flat = 0;
        let mut worst: f64 = 0.0;
        let names: Vec<(String, usize)> = d.named_tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
        for (name, len) in names {
            for j in 0..len {
                let eps = 1e-5;
                let bump = |p: &mut DiscriminatorParams, delta: f64| {
                    p.visit_mut("", &mut |n, t| {
                        if n == name {
                            t.data_mut()[j] += delta;
                        }
                    })
                };
                bump(&mut probe, eps);
                let up = probe.r1_penalty(&img, gamma, 1e-4).unwrap().0;
                bump(&mut probe, -2.0 * eps);
                let down = probe.r1_penalty(&img, gamma, 1e-4).unwrap().0;
                bump(&mut probe, eps);
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[flat];
                worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6));
                flat += 1;
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CROP_PAD: i64 = 4;
const MAX_BRIGHTNESS: f64 = 0.1;
const MAX_DEGREES: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Hflip,
    CropPad4,
    Brightness,
    Rotate,
}

impl Recipe {
    pub const ALL: [Recipe; 4] = [Recipe::Hflip, Recipe::CropPad4, Recipe::Brightness, Recipe::Rotate];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hflip" => Ok(Recipe::Hflip),
            "crop-pad4" | "crop_pad4" => Ok(Recipe::CropPad4),
            "brightness" => Ok(Recipe::Brightness),
            "rotate" => Ok(Recipe::Rotate),
            other => Err(Error::invalid("recipe", format!("unknown recipe {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    pub recipe: Recipe,
    pub seed: u64,
}

fn dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        ref s => Err(Error::dim(format!("augment expects [C,H,W], got {s:?}"))),
    }
}

fn at(data: &[f64], h: usize, w: usize, c: usize, y: i64, x: i64) -> f64 {
    let y = y.clamp(0, h as i64 - 1) as usize;
    let x = x.clamp(0, w as i64 - 1) as usize;
    data[(c * h + y) * w + x]
}

/// Label-preserving transform of a `[C,H,W]` image with values in [-1, 1].
/// Output has the same shape and stays in [-1, 1]; it depends only on
/// `(image, recipe, seed)`.
///
/// - `Hflip`: mirror left-right (seed unused).
/// - `CropPad4`: shift by a nonzero offset of up to 4 pixels per axis,
///   replicating edge pixels.
/// - `Brightness`: scale intensity in [0, 1] terms by up to 10% either way,
///   then clamp.
/// - `Rotate`: rotate about the centre by up to 10 degrees either way with
///   bilinear sampling and edge replication.
pub fn augment(image: &Tensor, recipe: Recipe, seed: u64) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    let src = image.data();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out: Vec<f64> = match recipe {
        Recipe::Hflip => (0..c * h * w)
            .map(|i| {
                let (ch, y, x) = (i / (h * w), i / w % h, i % w);
                src[(ch * h + y) * w + (w - 1 - x)]
            })
            .collect(),
        Recipe::CropPad4 => {
            let (dy, dx) = loop {
                let d = (rng.random_range(-CROP_PAD..=CROP_PAD), rng.random_range(-CROP_PAD..=CROP_PAD));
                if d != (0, 0) {
                    break d;
                }
            };
            (0..c * h * w)
                .map(|i| {
                    let (ch, y, x) = (i / (h * w), (i / w % h) as i64, (i % w) as i64);
                    at(src, h, w, ch, y + dy, x + dx)
                })
                .collect()
        }
        Recipe::Brightness => {
            let factor = 1.0 + rng.random_range(-MAX_BRIGHTNESS..=MAX_BRIGHTNESS);
            src.iter()
                .map(|&v| (((v + 1.0) / 2.0 * factor).clamp(0.0, 1.0)) * 2.0 - 1.0)
                .collect()
        }
        Recipe::Rotate => {
            let theta = rng.random_range(-MAX_DEGREES..=MAX_DEGREES).to_radians();
            let (sin, cos) = theta.sin_cos();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            (0..c * h * w)
                .map(|i| {
                    let (ch, y, x) = (i / (h * w), (i / w % h) as f64, (i % w) as f64);
                    // Inverse map: where the output pixel comes from.
                    let sx = cos * (x - cx) + sin * (y - cy) + cx;
                    let sy = -sin * (x - cx) + cos * (y - cy) + cy;
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    let (x0, y0) = (x0 as i64, y0 as i64);
                    let p = |yy, xx| at(src, h, w, ch, yy, xx);
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x0 + 1) * fx;
                    let bottom = p(y0 + 1, x0) * (1.0 - fx) + p(y0 + 1, x0 + 1) * fx;
                    (top * (1.0 - fy) + bottom * fy).clamp(-1.0, 1.0)
                })
                .collect()
        }
    };
    Tensor::new(vec![c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(seed: u64) -> Tensor {
        Tensor::uniform(&[3, 16, 16], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn hflip_is_an_involution() {
        let x = img(1);
        let once = augment(&x, Recipe::Hflip, 0).unwrap();
        assert_ne!(once, x);
        assert_eq!(augment(&once, Recipe::Hflip, 9).unwrap(), x);
    }

    #[test]
    fn brightening_saturated_pixels_stays_in_range() {
        let x = Tensor::full(&[3, 4, 4], 1.0);
        for seed in 0..20 {
            let y = augment(&x, Recipe::Brightness, seed).unwrap();
            assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn crop_pad_moves_pixels() {
        let x = img(2);
        for seed in 0..10 {
            assert!(augment(&x, Recipe::CropPad4, seed).unwrap().l2_distance(&x) > 0.0);
        }
    }

    #[test]
    fn unknown_recipe_names_are_rejected() {
        assert!(Recipe::parse("shear").is_err());
        assert_eq!(Recipe::parse("crop-pad4").unwrap(), Recipe::CropPad4);
    }

    #[test]
    fn non_image_input_is_rejected() {
        assert!(augment(&Tensor::zeros(&[4, 4]), Recipe::Hflip, 0).is_err());
    }

    proptest! {
        #[test]
        fn recipes_keep_shape_range_and_determinism(seed in any::<u64>(), k in 0usize..4, img_seed in 0u64..50) {
            let x = img(img_seed);
            let r = Recipe::ALL[k];
            let y = augment(&x, r, seed).unwrap();
            prop_assert_eq!(y.shape(), x.shape());
            prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert_eq!(augment(&x, r, seed).unwrap(), y);
        }
    }
}

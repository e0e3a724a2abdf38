//! Conversions between 8-bit RGB images and `[3,h,w]` tensors in `[-1,1]`.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `p / 127.5 - 1` per channel.
pub fn tensor_from_rgb(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px.0[c] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches data")
}

/// Inverse of [`tensor_from_rgb`]; values are clamped then rounded.
pub fn rgb_from_tensor(t: &Tensor) -> Result<RgbImage> {
    let [c, h, w] = t.shape() else {
        return Err(Error::dim(format!("image tensor must be [3,h,w], got {:?}", t.shape())));
    };
    if *c != 3 {
        return Err(Error::dim(format!("image tensor must have 3 channels, got {c}")));
    }
    let (h, w) = (*h, *w);
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| {
            let v = d[ch * h * w + y as usize * w + x as usize];
            ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
        };
        Rgb([at(0), at(1), at(2)])
    }))
}

pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(tensor_from_rgb(&img))
}

pub fn save_png(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    rgb_from_tensor(t)?.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Loads an image and checks it is `size`x`size`.
pub fn load_png_sized(path: &Path, size: usize) -> Result<Tensor> {
    let t = load_png(path)?;
    if t.shape() != [3, size, size] {
        return Err(Error::dim(format!(
            "{} is {:?}, expected [3,{size},{size}]",
            path.display(),
            t.shape()
        )));
    }
    Ok(t)
}

/// Halves both spatial extents by averaging 2x2 blocks.
pub fn downsample2x(t: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *t.shape() else {
        return Err(Error::dim(format!("downsample expects [c,h,w], got {:?}", t.shape())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("cannot halve {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = t.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                out.push((d[base] + d[base + 1] + d[base + w] + d[base + w + 1]) / 4.0);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

//! Slice-level numeric kernels used by the tape.
//!
//! All buffers are row-major. Accumulating variants add into `out` instead
//! of overwriting it.

/// `out[m,n] += a[m,k] * b[k,n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, &mut out, m, k, n);
    out
}

/// Dot product with four independent partial sums so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `out[m,n] += a[k,m]^T * b[k,n]`
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += a_pi * bv;
            }
        }
    }
}

/// Geometry of a 2-D convolution or pooling window sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Returns `None` when the window does not fit or the output extent is
    /// not integral.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || kh == 0 || kw == 0 {
            return None;
        }
        let ph = height + 2 * pad;
        let pw = width + 2 * pad;
        if kh > ph || kw > pw {
            return None;
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output columns `ox` whose input column `ox*stride + k - pad` lies in
/// `[0, width)`, as a half-open range.
fn valid_cols(g: &ConvGeom, k: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(k).div_ceil(g.stride);
    let hi = if g.width + g.pad > k {
        ((g.width + g.pad - k - 1) / g.stride + 1).min(g.out_w)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds `input[c,h,w]` into columns `[c*kh*kw, out_h*out_w]`.
pub fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let positions = g.positions();
    let mut cols = vec![0.0; g.patch_len() * positions];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize || lo >= hi {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (j, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = src[start + j * g.stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds columns back onto `grad_input[c,h,w]`, accumulating overlaps.
pub fn col2im_acc(cols: &[f64], g: &ConvGeom, grad_input: &mut [f64]) {
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize || lo >= hi {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let s = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let start = lo * g.stride + kx - g.pad;
                    for (j, v) in s[lo..hi].iter().enumerate() {
                        dst[start + j * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input[c_in,h,w]` with `kernel[c_out,c_in,kh,kw]`.
pub fn conv2d_forward(input: &[f64], kernel: &[f64], c_out: usize, g: &ConvGeom) -> Vec<f64> {
    let cols = im2col(input, g);
    matmul(kernel, &cols, c_out, g.patch_len(), g.positions())
}

/// Max or average pooling over `input[c,h,w]`.
///
/// Returns the pooled values and, for max pooling, the flat input index of
/// the selected element per output (first maximum in scan order).
pub fn pool_forward(input: &[f64], g: &ConvGeom, max: bool) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.channels * g.positions());
    let mut argmax = Vec::new();
    let area = (g.kh * g.kw) as f64;
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                let mut acc = 0.0;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let idx = base + (oy * g.stride + ky) * g.width + ox * g.stride + kx;
                        let v = input[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                        acc += v;
                    }
                }
                if max {
                    out.push(best);
                    argmax.push(best_idx);
                } else {
                    out.push(acc / area);
                }
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_rejects_non_integral_extent() {
        assert!(ConvGeom::new(1, 5, 5, 2, 2, 2, 0).is_none());
        assert!(ConvGeom::new(1, 4, 4, 2, 2, 2, 0).is_some());
        assert!(ConvGeom::new(1, 2, 2, 3, 3, 1, 0).is_none());
        assert!(ConvGeom::new(1, 2, 2, 3, 3, 1, 1).is_some());
    }

    #[test]
    fn im2col_roundtrip_counts_overlaps() {
        let g = ConvGeom::new(1, 3, 3, 2, 2, 1, 0).unwrap();
        let cols = vec![1.0; g.patch_len() * g.positions()];
        let mut back = vec![0.0; 9];
        col2im_acc(&cols, &g, &mut back);
        assert_eq!(back, vec![1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]);
    }
}

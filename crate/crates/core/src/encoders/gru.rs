//! Gated recurrent unit with update/reset/candidate gates.
//!
//! ```text
//! z  = sigmoid(x W_z + h U_z + b_z)
//! r  = sigmoid(x W_r + h U_r + b_r)
//! h~ = tanh(x W_h + (r * h) U_h + b_h)
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! Row-vector convention: `x` is `[1, input]`, `h` is `[1, hidden]`.

use rand::Rng;

use crate::error::Result;
use crate::impl_params;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl_params!(GruParams { w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h });

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Tensor::zeros(&[input, hidden]),
            w_r: Tensor::zeros(&[input, hidden]),
            w_h: Tensor::zeros(&[input, hidden]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[1, hidden]),
            b_r: Tensor::zeros(&[1, hidden]),
            b_h: Tensor::zeros(&[1, hidden]),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let wx = (6.0 / (input + hidden) as f64).sqrt();
        let wh = (6.0 / (2 * hidden) as f64).sqrt();
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            *w = Tensor::uniform(&[input, hidden], -wx, wx, rng);
        }
        for u in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            *u = Tensor::uniform(&[hidden, hidden], -wh, wh, rng);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.u_z.shape()[0]
    }
}

/// One recurrence step from already-projected inputs `x W_*`.
fn cell<'p>(tape: &mut Tape<'p>, xz: Var, xr: Var, xh: Var, h: Var, p: &'p GruParams) -> Result<Var> {
    let u_z = tape.param(&p.u_z);
    let u_r = tape.param(&p.u_r);
    let u_h = tape.param(&p.u_h);
    let b_z = tape.param(&p.b_z);
    let b_r = tape.param(&p.b_r);
    let b_h = tape.param(&p.b_h);

    let hz = tape.matmul(h, u_z)?;
    let z = tape.add(xz, hz)?;
    let z = tape.add(z, b_z)?;
    let z = tape.sigmoid(z)?;

    let hr = tape.matmul(h, u_r)?;
    let r = tape.add(xr, hr)?;
    let r = tape.add(r, b_r)?;
    let r = tape.sigmoid(r)?;

    let rh = tape.mul(r, h)?;
    let rh = tape.matmul(rh, u_h)?;
    let cand = tape.add(xh, rh)?;
    let cand = tape.add(cand, b_h)?;
    let cand = tape.tanh(cand)?;

    let keep = tape.affine(z, -1.0, 1.0)?;
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

pub fn gru_step<'p>(tape: &mut Tape<'p>, x: Var, h: Var, p: &'p GruParams) -> Result<Var> {
    let w_z = tape.param(&p.w_z);
    let w_r = tape.param(&p.w_r);
    let w_h = tape.param(&p.w_h);
    let xz = tape.matmul(x, w_z)?;
    let xr = tape.matmul(x, w_r)?;
    let xh = tape.matmul(x, w_h)?;
    cell(tape, xz, xr, xh, h, p)
}

/// Runs the GRU over the rows of `xs: [T, input]` from a zero state and
/// returns the final hidden state. `reverse` reads from row `T-1` to row 0.
pub fn gru_run<'p>(tape: &mut Tape<'p>, xs: Var, p: &'p GruParams, reverse: bool) -> Result<Var> {
    let steps = tape.shape(xs)[0];
    let w_z = tape.param(&p.w_z);
    let w_r = tape.param(&p.w_r);
    let w_h = tape.param(&p.w_h);
    let xz_all = tape.matmul(xs, w_z)?;
    let xr_all = tape.matmul(xs, w_r)?;
    let xh_all = tape.matmul(xs, w_h)?;
    let mut h = tape.constant(Tensor::zeros(&[1, p.hidden()]));
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let xz = tape.row(xz_all, t)?;
        let xr = tape.row(xr_all, t)?;
        let xh = tape.row(xh_all, t)?;
        h = cell(tape, xz, xr, xh, h, p)?;
    }
    Ok(h)
}

//! Central finite-difference gradient checking.

use super::{Params, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Largest relative error between the tape's gradient and a central
/// difference, over every coordinate of every input point.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(points: &[Tensor], f: F) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    grad_check_eps(points, DEFAULT_EPS, f)
}

pub fn grad_check_eps<F>(points: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.backward(out)?;
        vars.iter()
            .zip(points)
            .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect::<Vec<_>>()
    };

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        Ok(value.data()[0])
    };

    let mut worst: f64 = 0.0;
    let mut probe = points.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..points[pi].len() {
            let orig = points[pi].data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[pi].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// [`grad_check`] over every tensor of a parameter set. `f` must bind the
/// tensors it uses with [`Tape::param`].
pub fn grad_check_params<P, F>(model: &P, f: F) -> Result<f64>
where
    P: Params + Clone,
    F: for<'t> Fn(&mut Tape<'t>, &'t P) -> Result<Var>,
{
    let eps = DEFAULT_EPS;
    let analytic: Vec<f64> = {
        let mut tape = Tape::new();
        let out = f(&mut tape, model)?;
        tape.backward(out)?;
        model
            .grads_from(&tape)
            .into_iter()
            .flat_map(Tensor::into_data)
            .collect()
    };
    let eval = |m: &P| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, m)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        Ok(value.data()[0])
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (j, &a) in analytic.iter().enumerate() {
        nudge(&mut probe, j, eps);
        let up = eval(&probe)?;
        nudge(&mut probe, j, -2.0 * eps);
        let down = eval(&probe)?;
        nudge(&mut probe, j, eps);
        let numeric = (up - down) / (2.0 * eps);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Adds `delta` to the `flat`-th scalar in visit order.
fn nudge<P: Params>(model: &mut P, flat: usize, delta: f64) {
    let mut offset = 0;
    model.visit_mut("", &mut |_, t| {
        if flat >= offset && flat < offset + t.len() {
            t.data_mut()[flat - offset] += delta;
        }
        offset += t.len();
    });
}

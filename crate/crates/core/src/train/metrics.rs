use crate::error::{Error, Result};
use crate::mbti::{Axis, MbtiType};

/// F1 of one class: `2TP / (2TP + FP + FN)`, or 0 when the class never
/// occurs in either list.
fn class_f1(predictions: &[bool], truths: &[bool], class: bool) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Unweighted mean of the two per-class F1 scores of one binary axis.
pub fn macro_f1(predictions: &[bool], truths: &[bool]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InsufficientData("macro F1 of an empty set".into()));
    }
    Ok((class_f1(predictions, truths, true) + class_f1(predictions, truths, false)) / 2.0)
}

/// Macro F1 per axis, in `Axis::ALL` order.
pub fn axis_macro_f1(predictions: &[MbtiType], truths: &[MbtiType]) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for axis in Axis::ALL {
        let p: Vec<bool> = predictions.iter().map(|m| m.is_first_pole(axis)).collect();
        let t: Vec<bool> = truths.iter().map(|m| m.is_first_pole(axis)).collect();
        out[axis.index()] = macro_f1(&p, &t)?;
    }
    Ok(out)
}

/// Fraction of items whose predicted label matches the truth on `axis`.
pub fn axis_accuracy(predictions: &[MbtiType], truths: &[MbtiType], axis: Axis) -> f64 {
    if truths.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p.is_first_pole(axis) == t.is_first_pole(axis))
        .count();
    hits as f64 / truths.len() as f64
}

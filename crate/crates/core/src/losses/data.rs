//! Supervised terms restricted to the annotated pixels.

use super::LossValue;
use crate::error::{domain_err, Result};
use crate::grid::{ScribbleMask, SoftLabeling, TensorGrid};
use crate::scalar::Scalar;

pub const LOG_CLIP: f64 = 1e-12;
pub const DICE_SMOOTH: f64 = 1e-5;

fn check<T: Scalar>(p: &SoftLabeling<T>, scribbles: &ScribbleMask) -> Result<usize> {
    if p.height() != scribbles.height() || p.width() != scribbles.width() {
        return Err(domain_err!(
            "probabilities are {}x{} but scribbles are {}x{}",
            p.height(),
            p.width(),
            scribbles.height(),
            scribbles.width()
        ));
    }
    scribbles.check_classes(p.classes())?;
    match scribbles.labeled_count() {
        0 => Err(domain_err!("no annotated pixels")),
        n => Ok(n),
    }
}

/// Mean negative log-likelihood of the scribble labels over the annotated set.
pub fn partial_cross_entropy<T: Scalar>(
    p: &SoftLabeling<T>,
    scribbles: &ScribbleMask,
) -> Result<LossValue<T>> {
    let n = check(p, scribbles)?;
    let c = p.classes();
    let inv = T::one() / T::from_count(n);
    let clip = T::lit(LOG_CLIP);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); p.probs().len()];
    for (k, label) in scribbles.labeled() {
        let q = p.get(k, label);
        if q > clip {
            value -= q.ln();
            grad[k * c + label] = -inv / q;
        } else {
            value -= clip.ln();
        }
    }
    Ok(LossValue {
        value: value * inv,
        grad: TensorGrid::new(p.height(), p.width(), c, grad)?,
    })
}

/// One minus the class-averaged soft Dice over the annotated set.
pub fn partial_dice<T: Scalar>(p: &SoftLabeling<T>, scribbles: &ScribbleMask) -> Result<LossValue<T>> {
    check(p, scribbles)?;
    let c = p.classes();
    let eps = T::lit(DICE_SMOOTH);
    let two = T::lit(2.0);
    let mut inter = vec![T::zero(); c];
    let mut sum = vec![T::zero(); c];
    for (k, label) in scribbles.labeled() {
        for (cls, &q) in p.pixel(k).iter().enumerate() {
            sum[cls] += q;
            if cls == label {
                inter[cls] += q;
                sum[cls] += T::one();
            }
        }
    }
    let inv_c = T::one() / T::from_count(c);
    let mut mean_dice = T::zero();
    // d(dice_c)/d(p_kc) = (2 y_kc (S + eps) - (2 I + eps)) / (S + eps)^2
    let mut coef_hit = vec![T::zero(); c];
    let mut coef_miss = vec![T::zero(); c];
    for cls in 0..c {
        let num = two * inter[cls] + eps;
        let den = sum[cls] + eps;
        mean_dice += num / den * inv_c;
        coef_miss[cls] = -num / (den * den);
        coef_hit[cls] = two / den + coef_miss[cls];
    }
    let mut grad = vec![T::zero(); p.probs().len()];
    for (k, label) in scribbles.labeled() {
        for cls in 0..c {
            let d = if cls == label { coef_hit[cls] } else { coef_miss[cls] };
            grad[k * c + cls] = -d * inv_c;
        }
    }
    Ok(LossValue {
        value: T::one() - mean_dice,
        grad: TensorGrid::new(p.height(), p.width(), c, grad)?,
    })
}

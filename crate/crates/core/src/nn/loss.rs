//! Composite segmentation loss: binary cross-entropy on logits plus a
//! soft-Dice term, each separately weighted.

use ndarray::Array4;

use super::act::sigmoid;
use super::{c, Scalar};
use crate::error::{Error, Result};

/// Smoothing constant keeping the Dice ratio defined for empty masks.
const DICE_SMOOTH: f64 = 1.0;

/// Loss components, reported in `f64` regardless of the scalar type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `bce_weight * bce + dice_weight * dice`.
    pub total: f64,
    /// Mean per-pixel binary cross-entropy.
    pub bce: f64,
    /// `1 - soft_dice`, in `[0, 1]`.
    pub dice: f64,
}

fn validate<F: Scalar>(logits: &Array4<F>, target: &Array4<F>) -> Result<()> {
    if logits.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs target {:?}",
            logits.dim(),
            target.dim()
        )));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    if !target
        .iter()
        .all(|&t| t == F::zero() || t == F::one())
    {
        return Err(Error::Data("target mask must contain only 0 and 1".into()));
    }
    Ok(())
}

/// Stable per-element BCE with logits: `max(z,0) - z*t + ln(1 + exp(-|z|))`.
#[inline]
fn bce_elem<F: Scalar>(z: F, t: F) -> F {
    z.max(F::zero()) - z * t + (-z.abs()).exp().ln_1p()
}

pub fn composite_loss<F: Scalar>(
    logits: &Array4<F>,
    target: &Array4<F>,
    weights: (f64, f64),
) -> Result<LossTerms> {
    let (terms, _) = loss_impl(logits, target, weights, false)?;
    Ok(terms)
}

/// Loss plus its gradient with respect to the logits.
pub fn composite_loss_with_grad<F: Scalar>(
    logits: &Array4<F>,
    target: &Array4<F>,
    weights: (f64, f64),
) -> Result<(LossTerms, Array4<F>)> {
    let (terms, grad) = loss_impl(logits, target, weights, true)?;
    Ok((terms, grad.expect("gradient requested")))
}

fn loss_impl<F: Scalar>(
    logits: &Array4<F>,
    target: &Array4<F>,
    (w_bce, w_dice): (f64, f64),
    want_grad: bool,
) -> Result<(LossTerms, Option<Array4<F>>)> {
    validate(logits, target)?;
    let n = c::<F>(logits.len() as f64);
    let smooth = c::<F>(DICE_SMOOTH);

    let mut bce_sum = F::zero();
    let mut sum_p = F::zero();
    let mut sum_t = F::zero();
    let mut sum_pt = F::zero();
    for (&z, &t) in logits.iter().zip(target.iter()) {
        bce_sum += bce_elem(z, t);
        let p = sigmoid(z);
        sum_p += p;
        sum_t += t;
        sum_pt += p * t;
    }
    let bce = bce_sum / n;
    let denom = sum_p + sum_t + smooth;
    let dice_coef = (c::<F>(2.0) * sum_pt + smooth) / denom;
    let dice = F::one() - dice_coef;

    let wb = c::<F>(w_bce);
    let wd = c::<F>(w_dice);
    let total = wb * bce + wd * dice;
    let terms = LossTerms {
        total: total.to_f64().unwrap_or(f64::NAN),
        bce: bce.to_f64().unwrap_or(f64::NAN),
        dice: dice.to_f64().unwrap_or(f64::NAN),
    };
    if !want_grad {
        return Ok((terms, None));
    }

    // d(dice_coef)/dp_i = (2 t_i * denom - (2 sum_pt + smooth)) / denom^2
    let numer = c::<F>(2.0) * sum_pt + smooth;
    let inv_denom2 = F::one() / (denom * denom);
    let mut grad = Array4::<F>::zeros(logits.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(logits)
        .and(target)
        .for_each(|g, &z, &t| {
            let p = sigmoid(z);
            let dbce = (p - t) / n;
            let dcoef_dp = (c::<F>(2.0) * t * denom - numer) * inv_denom2;
            let ddice = -dcoef_dp * p * (F::one() - p);
            *g = wb * dbce + wd * ddice;
        });
    Ok((terms, Some(grad)))
}

use crate::error::{Error, Result};
use crate::mask::{same_dims, BinaryMask, SoftMask};

/// Weights of the mask-assignment cost `bce_weight * BCE + dice_weight * Dice`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentCostParams {
    pub bce_weight: f64,
    pub dice_weight: f64,
    /// Sigma values are clamped to `[prob_clamp, 1 - prob_clamp]`.
    pub prob_clamp: f64,
}

impl Default for AssignmentCostParams {
    fn default() -> Self {
        AssignmentCostParams {
            bce_weight: 5.0,
            dice_weight: 5.0,
            prob_clamp: 1e-7,
        }
    }
}

impl AssignmentCostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bce_weight >= 0.0 && self.dice_weight >= 0.0) {
            return Err(Error::parameter("bce_weight/dice_weight", "weights must be nonnegative"));
        }
        if self.bce_weight == 0.0 && self.dice_weight == 0.0 {
            return Err(Error::parameter("bce_weight/dice_weight", "weights must not both be zero"));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(Error::parameter("prob_clamp", "must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy plus Dice loss between a soft localization map
/// and a ground-truth mask of the same size.
pub fn bce_dice_cost(sigma: &SoftMask, gt: &BinaryMask, params: &AssignmentCostParams) -> Result<f64> {
    params.validate()?;
    same_dims(sigma.dims(), gt.dims())?;
    let lo = params.prob_clamp;
    let hi = 1.0 - params.prob_clamp;
    let (mut bce, mut inter, mut sum_s, mut sum_g) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&s, &g) in sigma.values().iter().zip(gt.bits()) {
        let s = (s as f64).clamp(lo, hi);
        if g {
            bce -= s.ln();
            inter += s;
            sum_g += 1.0;
        } else {
            bce -= (1.0 - s).ln();
        }
        sum_s += s;
    }
    let n = sigma.values().len() as f64;
    let dice = if sum_s + sum_g == 0.0 {
        0.0
    } else {
        1.0 - 2.0 * inter / (sum_s + sum_g)
    };
    Ok(params.bce_weight * bce / n + params.dice_weight * dice)
}

//! Tensor versions of the Dice and clDice losses used during training. The
//! plain-grid versions in `octa_core::loss` serve as their reference.

use candle_core::{DType, Tensor};
use octa_core::loss::LossConfig;
use octa_core::TaskName;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Dice,
    ClDice,
}

/// Dice for area-like targets, clDice for tubular ones. Mode does not matter.
pub fn pick_loss(task: TaskName) -> LossKind {
    match task {
        TaskName::Faz | TaskName::Capillary => LossKind::Dice,
        TaskName::Rv | TaskName::Artery | TaskName::Vein => LossKind::ClDice,
    }
}

// Never selected by min/max pooling over values in [0, 1].
const POOL_PAD: f64 = 1e9;

fn pool_along(x: &Tensor, dim: usize, max: bool) -> Result<Tensor> {
    let n = x.dim(dim)?;
    let mut shape = x.dims().to_vec();
    shape[dim] = 1;
    let fill = if max { -POOL_PAD } else { POOL_PAD };
    let pad = Tensor::full(fill, shape, x.device())?.to_dtype(x.dtype())?;
    let padded = Tensor::cat(&[&pad, x, &pad], dim)?;
    let (a, b, c) = (padded.narrow(dim, 0, n)?, padded.narrow(dim, 1, n)?, padded.narrow(dim, 2, n)?);
    Ok(if max {
        a.maximum(&b)?.maximum(&c)?
    } else {
        a.minimum(&b)?.minimum(&c)?
    })
}

/// 3x3 min over the last two dims; out-of-bounds neighbors are ignored.
pub fn soft_erode(x: &Tensor) -> Result<Tensor> {
    let rank = x.rank();
    pool_along(&pool_along(x, rank - 1, false)?, rank - 2, false)
}

/// 3x3 max over the last two dims; out-of-bounds neighbors are ignored.
pub fn soft_dilate(x: &Tensor) -> Result<Tensor> {
    let rank = x.rank();
    pool_along(&pool_along(x, rank - 1, true)?, rank - 2, true)
}

fn soft_open(x: &Tensor) -> Result<Tensor> {
    soft_dilate(&soft_erode(x)?)
}

pub fn soft_skeleton(x: &Tensor, iterations: usize) -> Result<Tensor> {
    let mut img = x.clone();
    let mut skel = (&img - soft_open(&img)?)?.relu()?;
    for _ in 0..iterations {
        img = soft_erode(&img)?;
        let delta = (&img - soft_open(&img)?)?.relu()?;
        skel = (&skel + (&delta - (&skel * &delta)?)?.relu()?)?;
    }
    Ok(skel)
}

/// Sum over every dim but the first: `(B, ...)` to `(B,)`.
fn per_sample_sum(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.sum(1)?)
}

/// Per-sample Dice loss, `(B,)`.
pub fn dice_loss(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<Tensor> {
    let num = ((per_sample_sum(&(pred * target)?)? * 2.0)? + smooth)?;
    let den = ((per_sample_sum(pred)? + per_sample_sum(target)?)? + smooth)?;
    Ok((1.0 - (num / den)?)?)
}

/// Per-sample weighted Dice + clDice loss, `(B,)`. `target_skeleton` is the
/// soft skeleton of `target` (constant, so it can be precomputed).
pub fn cl_dice_loss(pred: &Tensor, target: &Tensor, target_skeleton: &Tensor, config: &LossConfig) -> Result<Tensor> {
    let eps = config.smooth;
    let dice = dice_loss(pred, target, eps)?;
    let skel_pred = soft_skeleton(pred, config.skeleton_iterations)?;
    let tprec = ((per_sample_sum(&(&skel_pred * target)?)? + eps)? / (per_sample_sum(&skel_pred)? + eps)?)?;
    let tsens = ((per_sample_sum(&(target_skeleton * pred)?)? + eps)? / (per_sample_sum(target_skeleton)? + eps)?)?;
    let cl = (1.0 - ((&tprec * &tsens)? * 2.0)?.div(&(&tprec + &tsens)?)?)?;
    Ok(((dice * config.dice_weight)? + (cl * config.cldice_weight)?)?)
}

/// Per-sample task loss on probabilities `(B, S, S)`.
pub fn task_loss(kind: LossKind, pred: &Tensor, target: &Tensor, target_skeleton: Option<&Tensor>, config: &LossConfig) -> Result<Tensor> {
    match (kind, target_skeleton) {
        (LossKind::Dice, _) => dice_loss(pred, target, config.smooth),
        (LossKind::ClDice, Some(skel)) => cl_dice_loss(pred, target, skel, config),
        (LossKind::ClDice, None) => {
            let skel = soft_skeleton(&target.to_dtype(DType::F64)?, config.skeleton_iterations)?.to_dtype(target.dtype())?;
            cl_dice_loss(pred, target, &skel, config)
        }
    }
}

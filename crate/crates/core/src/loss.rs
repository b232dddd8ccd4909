//! Dice and clDice losses on soft masks, with exact gradients.
//!
//! These run on `f64` grids and record the soft-skeleton computation on a
//! small tape so the gradient with respect to the prediction is available
//! without a tensor framework. The training crate carries a tensor version of
//! the same formulas; this one is the reference it is checked against.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::{Error, Result};

/// Soft mask with values in `[0, 1]`.
pub type SoftGrid = Grid<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub cldice_weight: f64,
    pub skeleton_iterations: usize,
    pub smooth: f64,
    pub metric_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dice_weight: 0.2,
            cldice_weight: 0.8,
            skeleton_iterations: 10,
            smooth: 1e-6,
            metric_threshold: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validated(self) -> Result<Self> {
        if (self.dice_weight + self.cldice_weight - 1.0).abs() > 1e-9
            || self.dice_weight < 0.0
            || self.cldice_weight < 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "loss weights {} + {} must be non-negative and sum to 1",
                self.dice_weight, self.cldice_weight
            )));
        }
        if self.skeleton_iterations == 0 {
            return Err(Error::InvalidConfig("skeleton_iterations must be >= 1".into()));
        }
        if self.smooth <= 0.0 {
            return Err(Error::InvalidConfig("smooth must be > 0".into()));
        }
        Ok(self)
    }
}

fn check_soft(grid: &SoftGrid, what: &'static str) -> Result<()> {
    match grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(&value) => Err(Error::NonBinary { what, value }),
        None => Ok(()),
    }
}

fn check_pair(pred: &SoftGrid, target: &SoftGrid) -> Result<()> {
    target.ensure_shape(pred)?;
    check_soft(pred, "prediction")?;
    check_soft(target, "target")
}

/// Reverse-mode tape over same-shaped grids.
mod tape {
    use super::*;

    pub type Id = usize;

    enum Op {
        Leaf,
        /// 3x3 min filter; stores the source index chosen for each pixel.
        Erode(Id, Vec<u32>),
        /// 3x3 max filter; stores the source index chosen for each pixel.
        Dilate(Id, Vec<u32>),
        Add(Id, Id),
        Sub(Id, Id),
        Mul(Id, Id),
        Relu(Id),
    }

    pub struct Tape {
        width: usize,
        height: usize,
        ops: Vec<Op>,
        values: Vec<Vec<f64>>,
    }

    impl Tape {
        pub fn new(width: usize, height: usize) -> Self {
            Self {
                width,
                height,
                ops: Vec::new(),
                values: Vec::new(),
            }
        }

        fn push(&mut self, op: Op, value: Vec<f64>) -> Id {
            self.ops.push(op);
            self.values.push(value);
            self.values.len() - 1
        }

        pub fn value(&self, id: Id) -> &[f64] {
            &self.values[id]
        }

        pub fn leaf(&mut self, value: Vec<f64>) -> Id {
            self.push(Op::Leaf, value)
        }

        fn window_pick(&self, a: Id, better: impl Fn(f64, f64) -> bool) -> (Vec<f64>, Vec<u32>) {
            let (w, h) = (self.width as i64, self.height as i64);
            let src = &self.values[a];
            let mut out = Vec::with_capacity(src.len());
            let mut arg = Vec::with_capacity(src.len());
            for y in 0..h {
                for x in 0..w {
                    let mut best = (y * w + x) as usize;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                                continue;
                            }
                            let i = (ny * w + nx) as usize;
                            if better(src[i], src[best]) {
                                best = i;
                            }
                        }
                    }
                    out.push(src[best]);
                    arg.push(best as u32);
                }
            }
            (out, arg)
        }

        pub fn erode(&mut self, a: Id) -> Id {
            let (v, arg) = self.window_pick(a, |c, b| c < b);
            self.push(Op::Erode(a, arg), v)
        }

        pub fn dilate(&mut self, a: Id) -> Id {
            let (v, arg) = self.window_pick(a, |c, b| c > b);
            self.push(Op::Dilate(a, arg), v)
        }

        fn zip(&self, a: Id, b: Id, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
            self.values[a]
                .iter()
                .zip(&self.values[b])
                .map(|(&x, &y)| f(x, y))
                .collect()
        }

        pub fn add(&mut self, a: Id, b: Id) -> Id {
            let v = self.zip(a, b, |x, y| x + y);
            self.push(Op::Add(a, b), v)
        }

        pub fn sub(&mut self, a: Id, b: Id) -> Id {
            let v = self.zip(a, b, |x, y| x - y);
            self.push(Op::Sub(a, b), v)
        }

        pub fn mul(&mut self, a: Id, b: Id) -> Id {
            let v = self.zip(a, b, |x, y| x * y);
            self.push(Op::Mul(a, b), v)
        }

        pub fn relu(&mut self, a: Id) -> Id {
            let v = self.values[a].iter().map(|&x| x.max(0.0)).collect();
            self.push(Op::Relu(a), v)
        }

        /// Accumulate `seed` at `output` and propagate to leaf `wrt`.
        pub fn gradient(&self, output: Id, seed: &[f64], wrt: Id) -> Vec<f64> {
            let n = self.width * self.height;
            let mut grads: Vec<Option<Vec<f64>>> = (0..self.ops.len()).map(|_| None).collect();
            grads[output] = Some(seed.to_vec());
            for id in (0..=output).rev() {
                let Some(g) = grads[id].take() else { continue };
                if id == wrt {
                    return g;
                }
                let mut acc = |target: Id, contrib: &dyn Fn(usize) -> f64| {
                    let slot = grads[target].get_or_insert_with(|| vec![0.0; n]);
                    for (i, s) in slot.iter_mut().enumerate() {
                        *s += contrib(i);
                    }
                };
                match &self.ops[id] {
                    Op::Leaf => {}
                    Op::Erode(a, arg) | Op::Dilate(a, arg) => {
                        let slot = grads[*a].get_or_insert_with(|| vec![0.0; n]);
                        for (i, &src) in arg.iter().enumerate() {
                            slot[src as usize] += g[i];
                        }
                    }
                    Op::Add(a, b) => {
                        acc(*a, &|i| g[i]);
                        acc(*b, &|i| g[i]);
                    }
                    Op::Sub(a, b) => {
                        acc(*a, &|i| g[i]);
                        acc(*b, &|i| -g[i]);
                    }
                    Op::Mul(a, b) => {
                        let (va, vb) = (&self.values[*a], &self.values[*b]);
                        acc(*a, &|i| g[i] * vb[i]);
                        acc(*b, &|i| g[i] * va[i]);
                    }
                    Op::Relu(a) => {
                        let va = &self.values[*a];
                        acc(*a, &|i| if va[i] > 0.0 { g[i] } else { 0.0 });
                    }
                }
            }
            vec![0.0; n]
        }
    }
}

use tape::Tape;

fn skeleton_on_tape(tape: &mut Tape, input: tape::Id, iterations: usize) -> tape::Id {
    let open = |t: &mut Tape, x| {
        let e = t.erode(x);
        t.dilate(e)
    };
    let residue = |t: &mut Tape, x| {
        let o = open(t, x);
        let d = t.sub(x, o);
        t.relu(d)
    };
    let mut img = input;
    let mut skel = residue(tape, img);
    for _ in 0..iterations {
        img = tape.erode(img);
        let delta = residue(tape, img);
        let overlap = tape.mul(skel, delta);
        let fresh = tape.sub(delta, overlap);
        let fresh = tape.relu(fresh);
        skel = tape.add(skel, fresh);
    }
    skel
}

/// Soft skeleton by iterated 3x3 soft erosion and opening.
pub fn soft_skeleton(mask: &SoftGrid, iterations: usize) -> SoftGrid {
    let mut tape = Tape::new(mask.width(), mask.height());
    let input = tape.leaf(mask.data().to_vec());
    let skel = skeleton_on_tape(&mut tape, input, iterations);
    Grid::from_vec(mask.width(), mask.height(), tape.value(skel).to_vec())
        .expect("tape preserves shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn total(a: &[f64]) -> f64 {
    a.iter().sum()
}

/// `1 - (2 Σ p·t + ε) / (Σ p + Σ t + ε)`.
pub fn dice_loss(pred: &SoftGrid, target: &SoftGrid, config: &LossConfig) -> Result<f64> {
    Ok(dice_loss_with_grad(pred, target, config)?.0)
}

/// Dice loss and its gradient with respect to `pred`.
pub fn dice_loss_with_grad(
    pred: &SoftGrid,
    target: &SoftGrid,
    config: &LossConfig,
) -> Result<(f64, SoftGrid)> {
    check_pair(pred, target)?;
    let eps = config.smooth;
    let (p, t) = (pred.data(), target.data());
    let num = 2.0 * dot(p, t) + eps;
    let den = total(p) + total(t) + eps;
    let loss = 1.0 - num / den;
    let grad = t
        .iter()
        .map(|&tj| -(2.0 * tj * den - num) / (den * den))
        .collect();
    Ok((loss, Grid::from_vec(pred.width(), pred.height(), grad)?))
}

/// Fraction of the predicted skeleton that lies inside the target.
pub fn topo_precision(skel_pred: &SoftGrid, target: &SoftGrid, smooth: f64) -> Result<f64> {
    target.ensure_shape(skel_pred)?;
    Ok((dot(skel_pred.data(), target.data()) + smooth) / (total(skel_pred.data()) + smooth))
}

/// Fraction of the target skeleton covered by the prediction.
pub fn topo_sensitivity(skel_target: &SoftGrid, pred: &SoftGrid, smooth: f64) -> Result<f64> {
    topo_precision(skel_target, pred, smooth)
}

/// Components of the weighted clDice loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClDiceTerms {
    pub dice: f64,
    pub topo_precision: f64,
    pub topo_sensitivity: f64,
    /// `1 - 2·Tprec·Tsens / (Tprec + Tsens)`.
    pub cldice: f64,
    /// `dice_weight · dice + cldice_weight · cldice`.
    pub total: f64,
}

pub fn cl_dice_loss(pred: &SoftGrid, target: &SoftGrid, config: &LossConfig) -> Result<f64> {
    Ok(cl_dice_loss_with_grad(pred, target, config)?.0.total)
}

/// Weighted Dice + soft-clDice loss and its gradient with respect to `pred`.
pub fn cl_dice_loss_with_grad(
    pred: &SoftGrid,
    target: &SoftGrid,
    config: &LossConfig,
) -> Result<(ClDiceTerms, SoftGrid)> {
    let config = config.validated()?;
    let (dice, dice_grad) = dice_loss_with_grad(pred, target, &config)?;
    let eps = config.smooth;
    let (w, h) = (pred.width(), pred.height());
    let (p, t) = (pred.data(), target.data());

    let mut tape = Tape::new(w, h);
    let pred_leaf = tape.leaf(p.to_vec());
    let skel_pred_id = skeleton_on_tape(&mut tape, pred_leaf, config.skeleton_iterations);
    let skel_pred = tape.value(skel_pred_id).to_vec();
    let skel_target = soft_skeleton(target, config.skeleton_iterations);
    let st = skel_target.data();

    let sum_sp = total(&skel_pred) + eps;
    let sum_st = total(st) + eps;
    let tprec = (dot(&skel_pred, t) + eps) / sum_sp;
    let tsens = (dot(st, p) + eps) / sum_st;
    let denom = tprec + tsens;
    let cldice = 1.0 - 2.0 * tprec * tsens / denom;

    let d_tprec = -2.0 * tsens * tsens / (denom * denom);
    let d_tsens = -2.0 * tprec * tprec / (denom * denom);
    let seed: Vec<f64> = t.iter().map(|&tj| d_tprec * (tj - tprec) / sum_sp).collect();
    let through_skeleton = tape.gradient(skel_pred_id, &seed, pred_leaf);

    let grad = (0..p.len())
        .map(|j| {
            config.dice_weight * dice_grad.data()[j]
                + config.cldice_weight * (through_skeleton[j] + d_tsens * st[j] / sum_st)
        })
        .collect();
    let terms = ClDiceTerms {
        dice,
        topo_precision: tprec,
        topo_sensitivity: tsens,
        cldice,
        total: config.dice_weight * dice + config.cldice_weight * cldice,
    };
    Ok((terms, Grid::from_vec(w, h, grad)?))
}

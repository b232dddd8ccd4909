//! Dice and Jaccard on binary masks.
//!
//! Both metrics are 1 when prediction and target are both empty.

use crate::grid::Mask;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapCounts {
    pub intersection: usize,
    pub predicted: usize,
    pub target: usize,
}

impl OverlapCounts {
    pub fn union(&self) -> usize {
        self.predicted + self.target - self.intersection
    }

    pub fn dice(&self) -> f64 {
        let denom = self.predicted + self.target;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }

    pub fn jaccard(&self) -> f64 {
        let union = self.union();
        if union == 0 {
            1.0
        } else {
            self.intersection as f64 / union as f64
        }
    }
}

fn check_binary(mask: &Mask, what: &'static str) -> Result<()> {
    match mask.data().iter().find(|&&v| v > 1) {
        Some(&v) => Err(Error::NonBinary {
            what,
            value: f64::from(v),
        }),
        None => Ok(()),
    }
}

pub fn overlap(pred: &Mask, target: &Mask) -> Result<OverlapCounts> {
    target.ensure_shape(pred)?;
    check_binary(pred, "prediction")?;
    check_binary(target, "target")?;
    let mut counts = OverlapCounts {
        intersection: 0,
        predicted: 0,
        target: 0,
    };
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        counts.predicted += usize::from(p);
        counts.target += usize::from(t);
        counts.intersection += usize::from(p & t);
    }
    Ok(counts)
}

/// `2|P ∩ T| / (|P| + |T|)`.
pub fn dice_metric(pred: &Mask, target: &Mask) -> Result<f64> {
    Ok(overlap(pred, target)?.dice())
}

/// `|P ∩ T| / |P ∪ T|`.
pub fn jaccard_metric(pred: &Mask, target: &Mask) -> Result<f64> {
    Ok(overlap(pred, target)?.jaccard())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use alloc::vec;

    #[test]
    fn identical_masks() {
        let m = Grid::from_fn(6, 6, |x, y| u8::from(x == y));
        assert_eq!(dice_metric(&m, &m).unwrap(), 1.0);
        assert_eq!(jaccard_metric(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn one_pixel_overlap_of_three() {
        let p = Grid::from_vec(3, 1, vec![1u8, 1, 0]).unwrap();
        let t = Grid::from_vec(3, 1, vec![0u8, 1, 1]).unwrap();
        assert_eq!(jaccard_metric(&p, &t).unwrap(), 1.0 / 3.0);
        assert_eq!(dice_metric(&p, &t).unwrap(), 0.5);
    }

    #[test]
    fn both_empty_is_perfect() {
        let m = Grid::new(4, 4, 0u8);
        assert_eq!(dice_metric(&m, &m).unwrap(), 1.0);
        assert_eq!(jaccard_metric(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn rejects_non_binary() {
        let p = Grid::new(2, 2, 2u8);
        let t = Grid::new(2, 2, 1u8);
        assert!(matches!(dice_metric(&p, &t), Err(Error::NonBinary { .. })));
        assert!(jaccard_metric(&t, &Grid::new(3, 2, 0u8)).is_err());
    }
}

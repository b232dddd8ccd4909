//! Background bands at a Chebyshev distance from the foreground.

use crate::grid::{Grid, Mask};
use crate::{Error, Result};

/// Chebyshev (chessboard) distance from every pixel to the nearest foreground
/// pixel; `u32::MAX` everywhere when the mask is empty.
///
/// Two-pass chamfer with unit weights on all eight neighbors, which is exact
/// for the chessboard metric.
pub fn chebyshev_distance(mask: &Mask) -> Grid<u32> {
    const INF: u32 = u32::MAX;
    let (w, h) = (mask.width(), mask.height());
    let mut d = mask.map(|v| if v != 0 { 0 } else { INF });
    let relax = |d: &Grid<u32>, x: i64, y: i64, cur: u32| -> u32 {
        match d.get_signed(x, y) {
            Some(n) if n != INF => cur.min(n + 1),
            _ => cur,
        }
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut cur = d.get(x as usize, y as usize);
            for (dx, dy) in [(-1, 0), (-1, -1), (0, -1), (1, -1)] {
                cur = relax(&d, x + dx, y + dy, cur);
            }
            d.set(x as usize, y as usize, cur);
        }
    }
    for y in (0..h as i64).rev() {
        for x in (0..w as i64).rev() {
            let mut cur = d.get(x as usize, y as usize);
            for (dx, dy) in [(1, 0), (1, 1), (0, 1), (-1, 1)] {
                cur = relax(&d, x + dx, y + dy, cur);
            }
            d.set(x as usize, y as usize, cur);
        }
    }
    d
}

/// Background pixels whose Chebyshev distance to the foreground lies in
/// `[d_min, d_max]`. Empty mask gives an empty band.
pub fn adjacency_band(mask: &Mask, d_min: u32, d_max: u32) -> Result<Mask> {
    if d_min < 1 || d_max < d_min {
        return Err(Error::InvalidConfig(alloc::format!(
            "band ({d_min}, {d_max}) needs 1 <= d_min <= d_max"
        )));
    }
    let d = chebyshev_distance(mask);
    Ok(d.map(|v| u8::from(v >= d_min && v <= d_max)))
}

//! 8-connected component labeling.
//!
//! Two raster passes over the mask with a union-find over provisional labels.
//! Final ids are assigned in raster order of each component's first pixel, so
//! the labeling is a deterministic function of the mask.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{Grid, Mask};

/// Component ids per pixel: 0 is background, `1..=count` are components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub labels: Grid<u32>,
    pub count: usize,
    /// `sizes[i]` is the pixel count of component `i + 1`.
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    /// Binary mask of one component (1-based id).
    pub fn component_mask(&self, id: u32) -> Mask {
        self.labels.map(|l| u8::from(l == id))
    }

    /// Union of the given components.
    pub fn components_mask(&self, ids: &[u32]) -> Mask {
        self.labels.map(|l| u8::from(l != 0 && ids.contains(&l)))
    }

    /// Pixel coordinates of one component in raster order.
    pub fn pixels(&self, id: u32) -> Vec<(usize, usize)> {
        let w = self.labels.width();
        self.labels
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == id)
            .map(|(i, _)| (i % w, i / w))
            .collect()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 stays reserved for background
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Label the 8-connected components of `mask` (any nonzero value is
/// foreground).
pub fn label_components(mask: &Mask) -> ComponentLabeling {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = Grid::new(w, h, 0u32);
    let mut sets = DisjointSet::new();

    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) == 0 {
                continue;
            }
            // already-visited neighbors: W, NW, N, NE
            let mut label = 0u32;
            let neighbors = [
                (x as i64 - 1, y as i64),
                (x as i64 - 1, y as i64 - 1),
                (x as i64, y as i64 - 1),
                (x as i64 + 1, y as i64 - 1),
            ];
            for (nx, ny) in neighbors {
                if let Some(n) = provisional.get_signed(nx, ny) {
                    if n != 0 {
                        label = if label == 0 { n } else { sets.union(label, n) };
                    }
                }
            }
            if label == 0 {
                label = sets.make();
            }
            provisional.set(x, y, label);
        }
    }

    let mut final_id = vec![0u32; sets.parent.len()];
    let mut sizes = Vec::new();
    let mut labels = provisional;
    for l in labels.data_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if final_id[root] == 0 {
            sizes.push(0);
            final_id[root] = sizes.len() as u32;
        }
        let id = final_id[root];
        sizes[id as usize - 1] += 1;
        *l = id;
    }
    ComponentLabeling {
        labels,
        count: sizes.len(),
        sizes,
    }
}

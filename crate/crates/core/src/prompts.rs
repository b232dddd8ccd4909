//! Prompt-point generation from label masks.
//!
//! Two policies:
//!
//! - **Global**: positives are drawn uniformly from the whole foreground,
//!   negatives from a background band around it.
//! - **Local** (artery/vein only): one or more 8-connected components of the
//!   target class are selected, positives are drawn inside them, negatives come
//!   first from the opposing vessel class inside the band around the selection
//!   and then from plain background in that band. The union of the selected
//!   components becomes the supervision mask.
//!
//! Every point set is padded to a fixed length with background negatives so
//! that samples with different vessel counts share one format.
//!
//! All randomness flows from [`PromptGenConfig::seed`]: component choice,
//! point sampling and padding each use their own stream.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::band::adjacency_band;
use crate::components::{label_components, ComponentLabeling};
use crate::grid::Mask;
use crate::sample::Mode;
use crate::seed;
use crate::{Error, Result};

const STREAM_SELECT: u64 = 0;
const STREAM_POINTS: u64 = 1;
const STREAM_PAD: u64 = 2;

/// Where a prompt point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    /// Positive drawn from the given 1-based component of the generating mask.
    Component(u32),
    BackgroundBand,
    OpposingClass,
    Pad,
    /// Placed by a person (service / annotator clients).
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptPoint {
    /// Column in original image pixels.
    pub x: u32,
    /// Row in original image pixels.
    pub y: u32,
    /// 1 = foreground, 0 = background.
    pub label: u8,
    pub source: PromptSource,
}

impl PromptPoint {
    pub fn positive(x: usize, y: usize, source: PromptSource) -> Self {
        Self {
            x: x as u32,
            y: y as u32,
            label: 1,
            source,
        }
    }

    pub fn negative(x: usize, y: usize, source: PromptSource) -> Self {
        Self {
            x: x as u32,
            y: y as u32,
            label: 0,
            source,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Ordered prompt points for one sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub points: Vec<PromptPoint>,
}

impl PromptSet {
    pub fn new(points: Vec<PromptPoint>) -> Self {
        Self { points }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &PromptPoint> {
        self.points.iter().filter(|p| p.is_positive())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PromptPoint> {
        self.points.iter().filter(|p| !p.is_positive())
    }

    /// Check labels and bounds; the error names the first offending index.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.label > 1 {
                return Err(Error::InvalidConfig(format!(
                    "point {i} has label {}, expected 0 or 1",
                    p.label
                )));
            }
            if p.x as usize >= width || p.y as usize >= height {
                return Err(Error::InvalidConfig(format!(
                    "point {i} at ({}, {}) is outside {width}x{height}",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// What local mode supervises against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalTarget {
    /// Union of the selected components.
    #[default]
    SelectedComponents,
    /// The whole target-class mask.
    FullMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptGenConfig {
    pub mode: Mode,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Inner Chebyshev radius of the negative band.
    pub band_min: u32,
    /// Outer Chebyshev radius of the negative band.
    pub band_max: u32,
    pub seed: u64,
    /// Components selected per sample in local mode.
    pub components_per_sample: usize,
    pub local_target: LocalTarget,
}

impl Default for PromptGenConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Global,
            n_pos: 2,
            n_neg: 2,
            band_min: 2,
            band_max: 20,
            seed: 0,
            components_per_sample: 1,
            local_target: LocalTarget::SelectedComponents,
        }
    }
}

impl PromptGenConfig {
    pub fn new(mode: Mode, n_pos: usize, n_neg: usize) -> Result<Self> {
        Self {
            mode,
            n_pos,
            n_neg,
            ..Self::default()
        }
        .validated()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validated(self) -> Result<Self> {
        if self.n_pos + self.n_neg == 0 {
            return Err(Error::InvalidConfig("n_pos + n_neg must be at least 1".into()));
        }
        if self.band_min < 1 || self.band_max <= self.band_min {
            return Err(Error::InvalidConfig(format!(
                "band ({}, {}) needs 1 <= d_min < d_max",
                self.band_min, self.band_max
            )));
        }
        if self.components_per_sample == 0 {
            return Err(Error::InvalidConfig(
                "components_per_sample must be at least 1".into(),
            ));
        }
        Ok(self)
    }

    /// Length every generated set is padded to.
    pub fn target_count(&self) -> usize {
        self.n_pos + self.n_neg
    }

    fn expect_mode(&self, mode: Mode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::InvalidConfig(format!(
                "config mode is {}, expected {}",
                self.mode, mode
            )));
        }
        Ok(())
    }
}

/// Draw `n` entries; without replacement when the pool is large enough,
/// otherwise the whole pool followed by draws with replacement.
fn sample_pixels(pool: &[(usize, usize)], n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if n == 0 || pool.is_empty() {
        return Vec::new();
    }
    if pool.len() >= n {
        return index::sample(rng, pool.len(), n)
            .into_iter()
            .map(|i| pool[i])
            .collect();
    }
    let mut out = pool.to_vec();
    while out.len() < n {
        out.push(pool[rng.random_range(0..pool.len())]);
    }
    out
}

fn band_or_background(mask: &Mask, config: &PromptGenConfig) -> Result<Vec<(usize, usize)>> {
    let band = adjacency_band(mask, config.band_min, config.band_max)?.foreground();
    Ok(if band.is_empty() { mask.background() } else { band })
}

/// Global-mode prompts: positives anywhere in the foreground, negatives in the
/// background band around it.
pub fn generate_global(mask: &Mask, config: &PromptGenConfig) -> Result<PromptSet> {
    let config = config.validated()?;
    config.expect_mode(Mode::Global)?;
    let foreground = mask.foreground();
    if config.n_pos > 0 && foreground.is_empty() {
        return Err(Error::NoForeground);
    }
    let mut rng = seed::rng_stream(config.seed, STREAM_POINTS);
    let mut points = Vec::with_capacity(config.target_count());

    if config.n_pos > 0 {
        let labeling = label_components(mask);
        let n = config.n_pos.min(foreground.len());
        for (x, y) in sample_pixels(&foreground, n, &mut rng) {
            let id = labeling.labels.get(x, y);
            points.push(PromptPoint::positive(x, y, PromptSource::Component(id)));
        }
    }
    if config.n_neg > 0 {
        let pool = band_or_background(mask, &config)?;
        if pool.is_empty() {
            return Err(Error::CannotStandardize);
        }
        for (x, y) in sample_pixels(&pool, config.n_neg, &mut rng) {
            points.push(PromptPoint::negative(x, y, PromptSource::BackgroundBand));
        }
    }
    standardize(PromptSet::new(points), config.target_count(), mask, &config)
}

/// Component selection for local mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSelection {
    pub labeling: ComponentLabeling,
    /// Selected 1-based component ids, ascending.
    pub selected: Vec<u32>,
    /// Union of the selected components.
    pub selected_mask: Mask,
    /// Supervision mask per [`PromptGenConfig::local_target`].
    pub local_target: Mask,
}

/// Choose the components local mode prompts for. Uses only the selection
/// stream of the seed, so it agrees with [`generate_local`] for the same
/// config and can be called without drawing any points.
pub fn select_local_target(target_mask: &Mask, config: &PromptGenConfig) -> Result<LocalSelection> {
    let config = config.validated()?;
    let labeling = label_components(target_mask);
    if labeling.count == 0 {
        return Err(Error::NoForeground);
    }
    let all: Vec<u32> = (1..=labeling.count as u32).collect();
    let min_size = config.n_pos.max(1);
    let big: Vec<u32> = all
        .iter()
        .copied()
        .filter(|&id| labeling.sizes[id as usize - 1] >= min_size)
        .collect();
    let eligible = if big.is_empty() { all } else { big };
    let take = config.components_per_sample.min(eligible.len());
    let mut rng = seed::rng_stream(config.seed, STREAM_SELECT);
    let mut selected: Vec<u32> = index::sample(&mut rng, eligible.len(), take)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    selected.sort_unstable();
    let selected_mask = labeling.components_mask(&selected);
    let local_target = match config.local_target {
        LocalTarget::SelectedComponents => selected_mask.clone(),
        LocalTarget::FullMask => target_mask.binarized(),
    };
    Ok(LocalSelection {
        labeling,
        selected,
        selected_mask,
        local_target,
    })
}

/// Local-mode prompts and the matching supervision mask.
pub fn generate_local(
    target_mask: &Mask,
    opposing_mask: Option<&Mask>,
    config: &PromptGenConfig,
) -> Result<(PromptSet, Mask)> {
    let config = config.validated()?;
    config.expect_mode(Mode::Local)?;
    if let Some(opp) = opposing_mask {
        target_mask.ensure_shape(opp)?;
    }
    let selection = select_local_target(target_mask, &config)?;
    let mut rng = seed::rng_stream(config.seed, STREAM_POINTS);
    let mut points = Vec::with_capacity(config.target_count());

    let inside = selection.selected_mask.foreground();
    for (x, y) in sample_pixels(&inside, config.n_pos, &mut rng) {
        let id = selection.labeling.labels.get(x, y);
        points.push(PromptPoint::positive(x, y, PromptSource::Component(id)));
    }

    if config.n_neg > 0 {
        let band = adjacency_band(&selection.selected_mask, config.band_min, config.band_max)?
            .difference(target_mask)?;
        let (opposing_pool, plain_pool) = match opposing_mask {
            Some(opp) => (
                band.intersection(opp)?.foreground(),
                band.difference(opp)?.foreground(),
            ),
            None => (Vec::new(), band.foreground()),
        };
        let n_opp = config.n_neg.min(opposing_pool.len());
        for (x, y) in sample_pixels(&opposing_pool, n_opp, &mut rng) {
            points.push(PromptPoint::negative(x, y, PromptSource::OpposingClass));
        }
        let rest = config.n_neg - n_opp;
        let plain_pool = if plain_pool.is_empty() && rest > 0 {
            band_or_background(target_mask, &config)?
        } else {
            plain_pool
        };
        for (x, y) in sample_pixels(&plain_pool, rest, &mut rng) {
            points.push(PromptPoint::negative(x, y, PromptSource::BackgroundBand));
        }
    }

    let prompts = standardize(PromptSet::new(points), config.target_count(), target_mask, &config)?;
    Ok((prompts, selection.local_target))
}

/// Pad `points` to exactly `target_count` with negatives (source
/// [`PromptSource::Pad`]) drawn from the background band around `mask`,
/// falling back to any background pixel when the band is empty.
pub fn standardize(
    points: PromptSet,
    target_count: usize,
    mask: &Mask,
    config: &PromptGenConfig,
) -> Result<PromptSet> {
    if target_count < points.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot standardize {} points down to {target_count}",
            points.len()
        )));
    }
    let missing = target_count - points.len();
    if missing == 0 {
        return Ok(points);
    }
    let pool = band_or_background(mask, config)?;
    if pool.is_empty() {
        return Err(Error::CannotStandardize);
    }
    let mut rng = seed::rng_stream(config.seed, STREAM_PAD);
    let mut out = points;
    for (x, y) in sample_pixels(&pool, missing, &mut rng) {
        out.points.push(PromptPoint::negative(x, y, PromptSource::Pad));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use alloc::vec;

    fn disk(side: usize, cx: f64, cy: f64, r: f64) -> Mask {
        Grid::from_fn(side, side, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            u8::from(dx * dx + dy * dy <= r * r)
        })
    }

    fn global(n_pos: usize, n_neg: usize, seed: u64) -> PromptGenConfig {
        PromptGenConfig::new(Mode::Global, n_pos, n_neg).unwrap().with_seed(seed)
    }

    fn local(seed: u64) -> PromptGenConfig {
        PromptGenConfig::new(Mode::Local, 2, 2).unwrap().with_seed(seed)
    }

    /// Three horizontal vessels, rows 5, 15 and 25.
    fn three_vessels() -> Mask {
        Grid::from_fn(40, 32, |x, y| u8::from((y == 5 || y == 15 || y == 25) && (4..36).contains(&x)))
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(PromptGenConfig::new(Mode::Global, 0, 0).is_err());
        assert!(PromptGenConfig {
            band_min: 3,
            band_max: 3,
            ..PromptGenConfig::default()
        }
        .validated()
        .is_err());
    }

    #[test]
    fn global_disk_membership() {
        let mask = disk(48, 24.0, 24.0, 8.0);
        let band = adjacency_band(&mask, 2, 20).unwrap();
        let set = generate_global(&mask, &global(2, 2, 1)).unwrap();
        assert_eq!(set.len(), 4);
        let pos: Vec<_> = set.positives().collect();
        let neg: Vec<_> = set.negatives().collect();
        assert_eq!((pos.len(), neg.len()), (2, 2));
        assert!(pos.iter().all(|p| mask.get(p.x as usize, p.y as usize) == 1));
        assert!(neg.iter().all(|p| band.get(p.x as usize, p.y as usize) == 1));
        assert!(pos.iter().all(|p| p.source == PromptSource::Component(1)));
        assert_ne!(pos[0], pos[1]);
    }

    #[test]
    fn global_is_seed_deterministic() {
        let mask = disk(32, 10.0, 20.0, 5.0);
        let a = generate_global(&mask, &global(3, 3, 9)).unwrap();
        assert_eq!(a, generate_global(&mask, &global(3, 3, 9)).unwrap());
        assert_ne!(a, generate_global(&mask, &global(3, 3, 10)).unwrap());
    }

    #[test]
    fn global_empty_mask_errors() {
        let mask = Grid::new(16, 16, 0u8);
        assert_eq!(generate_global(&mask, &global(1, 1, 0)), Err(Error::NoForeground));
    }

    #[test]
    fn global_small_foreground_is_padded() {
        let mut mask = Grid::new(20, 20, 0u8);
        mask.set(10, 10, 1);
        let set = generate_global(&mask, &global(3, 1, 2)).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.positives().count(), 1);
        assert_eq!(set.points.iter().filter(|p| p.source == PromptSource::Pad).count(), 2);
    }

    #[test]
    fn local_selects_one_component() {
        let mask = three_vessels();
        let (set, target) = generate_local(&mask, None, &local(4)).unwrap();
        let labeling = label_components(&mask);
        assert_eq!(labeling.count, 3);
        let ids: Vec<u32> = set
            .positives()
            .map(|p| labeling.labels.get(p.x as usize, p.y as usize))
            .collect();
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[0], ids[1]);
        assert_eq!(target, labeling.component_mask(ids[0]));
        assert!(set.negatives().all(|p| p.source == PromptSource::BackgroundBand));
        assert!(set.negatives().all(|p| mask.get(p.x as usize, p.y as usize) == 0));
    }

    #[test]
    fn local_prefers_opposing_class_negatives() {
        // artery on row 10, vein running alongside on row 13
        let artery = Grid::from_fn(40, 24, |x, y| u8::from(y == 10 && (2..38).contains(&x)));
        let vein = Grid::from_fn(40, 24, |x, y| u8::from(y == 13 && (2..38).contains(&x)));
        for seed in 0..20 {
            let (set, _) = generate_local(&artery, Some(&vein), &local(seed)).unwrap();
            let opp: Vec<_> = set
                .negatives()
                .filter(|p| p.source == PromptSource::OpposingClass)
                .collect();
            assert_eq!(opp.len(), 2);
            assert!(opp.iter().all(|p| vein.get(p.x as usize, p.y as usize) == 1));
        }
    }

    #[test]
    fn local_selection_matches_generation() {
        let mask = three_vessels();
        for seed in 0..10 {
            let cfg = local(seed);
            let sel = select_local_target(&mask, &cfg).unwrap();
            let (_, target) = generate_local(&mask, None, &cfg).unwrap();
            assert_eq!(sel.local_target, target);
        }
    }

    #[test]
    fn local_full_mask_target() {
        let mask = three_vessels();
        let cfg = PromptGenConfig {
            local_target: LocalTarget::FullMask,
            ..local(1)
        };
        let (_, target) = generate_local(&mask, None, &cfg).unwrap();
        assert_eq!(target, mask);
    }

    #[test]
    fn local_skips_tiny_components() {
        let mut mask = three_vessels();
        mask.set(0, 0, 1);
        for seed in 0..30 {
            let sel = select_local_target(&mask, &local(seed)).unwrap();
            assert_ne!(sel.selected, vec![1]);
        }
    }

    #[test]
    fn standardize_identity_and_padding() {
        let mask = disk(30, 15.0, 15.0, 4.0);
        let cfg = global(2, 2, 3);
        let set = generate_global(&mask, &cfg).unwrap();
        assert_eq!(standardize(set.clone(), 4, &mask, &cfg).unwrap(), set);

        let short = PromptSet::new(set.points[..2].to_vec());
        let padded = standardize(short.clone(), 4, &mask, &cfg).unwrap();
        assert_eq!(&padded.points[..2], &short.points[..]);
        let band = adjacency_band(&mask, 2, 20).unwrap();
        for p in &padded.points[2..] {
            assert_eq!((p.label, p.source), (0, PromptSource::Pad));
            assert_eq!(band.get(p.x as usize, p.y as usize), 1);
        }
    }

    #[test]
    fn standardize_full_foreground_errors() {
        let mask = Grid::new(8, 8, 1u8);
        let cfg = global(1, 1, 0);
        assert_eq!(
            standardize(PromptSet::empty(), 2, &mask, &cfg),
            Err(Error::CannotStandardize)
        );
    }

    #[test]
    fn serialization_shape() {
        let set = PromptSet::new(vec![
            PromptPoint::positive(3, 4, PromptSource::Component(2)),
            PromptPoint::negative(1, 1, PromptSource::Pad),
        ]);
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(
            json,
            r#"{"points":[{"x":3,"y":4,"label":1,"source":{"component":2}},{"x":1,"y":1,"label":0,"source":"pad"}]}"#
        );
        assert_eq!(serde_json::from_str::<PromptSet>(&json).unwrap(), set);
    }
}

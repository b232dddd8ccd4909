//! Procedural OCTA-like samples for desk-scale experiments.
//!
//! Each sample is a small vascular scene: artery and vein trees grow inward
//! from the image border, thin capillary segments are scattered in between, and
//! a vessel-free foveal zone sits near the center. One or two equally sized
//! non-perfusion voids are placed in the same central region, so the foveal
//! zone is not identifiable from appearance alone. A vein trunk often runs
//! alongside an artery trunk for a stretch before diverging.
//!
//! Labels: artery and vein are disjoint; capillary is the remaining thin
//! segments; RV is the union of all three; FAZ is the foveal void.
//!
//! Projections (`FULL`, `ILM_OPL`, `OPL_BM`) share the vessel geometry but
//! weight the classes differently, which gives artery/vein a color cue.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, Mask, Plane};
use crate::sample::{Fov, OctaSample, TaskName, LAYER_FULL, LAYER_INNER, LAYER_OUTER};
use crate::seed;

#[derive(Debug, Clone, Copy)]
struct Void {
    cx: f64,
    cy: f64,
    radius: f64,
    wobble: f64,
    lobes: f64,
    phase: f64,
}

impl Void {
    fn boundary(&self, x: f64, y: f64) -> f64 {
        let theta = libm::atan2(y - self.cy, x - self.cx);
        self.radius * (1.0 + self.wobble * libm::sin(self.lobes * theta + self.phase))
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        libm::hypot(x - self.cx, y - self.cy)
    }

    fn contains(&self, x: f64, y: f64, margin: f64) -> bool {
        self.distance(x, y) < self.boundary(x, y) + margin
    }
}

struct Curve {
    points: Vec<(f64, f64)>,
    width: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random smooth walk with slowly varying curvature, 0.5 px steps.
fn walk(
    rng: &mut ChaCha8Rng,
    start: (f64, f64),
    heading: f64,
    length: f64,
    side: f64,
    unit: f64,
) -> Vec<(f64, f64)> {
    let step = 0.5;
    let mut points = Vec::new();
    let (mut x, mut y, mut h) = (start.0, start.1, heading);
    let mut curvature = 0.0;
    let mut travelled = 0.0;
    while travelled < length {
        points.push((x, y));
        curvature = (curvature + normal(rng) * 0.004 / unit).clamp(-0.03 / unit, 0.03 / unit);
        h += curvature * step;
        x += libm::cos(h) * step;
        y += libm::sin(h) * step;
        travelled += step;
        if x < -2.0 || y < -2.0 || x > side + 1.0 || y > side + 1.0 {
            break;
        }
    }
    points
}

fn heading_at(points: &[(f64, f64)], i: usize) -> f64 {
    let a = points[i.saturating_sub(1)];
    let b = points[(i + 1).min(points.len() - 1)];
    libm::atan2(b.1 - a.1, b.0 - a.0)
}

fn border_start(rng: &mut ChaCha8Rng, side: f64) -> ((f64, f64), f64) {
    let t = uniform(rng, 0.1, 0.9) * side;
    let (start, inward) = match rng.random_range(0..4) {
        0 => ((t, 0.0), PI / 2.0),
        1 => ((side - 1.0, t), PI),
        2 => ((t, side - 1.0), -PI / 2.0),
        _ => ((0.0, t), 0.0),
    };
    let toward_center = libm::atan2(side / 2.0 - start.1, side / 2.0 - start.0);
    let heading = 0.5 * (inward + toward_center) + uniform(rng, -0.5, 0.5);
    (start, heading)
}

/// Trunk plus a few branches and twigs.
fn grow_tree(
    rng: &mut ChaCha8Rng,
    trunk: Vec<(f64, f64)>,
    side: f64,
    unit: f64,
) -> Vec<Curve> {
    let mut curves = Vec::new();
    let n_branches = rng.random_range(1..=2usize);
    for _ in 0..n_branches {
        if trunk.len() < 8 {
            break;
        }
        let at = rng.random_range(trunk.len() / 5..trunk.len() * 7 / 10);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let h = heading_at(&trunk, at) + sign * uniform(rng, 0.5, 1.0);
        let length = uniform(rng, 0.2, 0.4) * side;
        let branch = walk(rng, trunk[at], h, length, side, unit);
        if branch.len() > 8 && rng.random::<f64>() < 0.7 {
            let at2 = rng.random_range(branch.len() / 4..branch.len() * 3 / 4);
            let h2 = heading_at(&branch, at2) - sign * uniform(rng, 0.6, 1.1);
            let twig_len = uniform(rng, 0.08, 0.18) * side;
            let twig = walk(rng, branch[at2], h2, twig_len, side, unit);
            curves.push(Curve {
                points: twig,
                width: 1.0 * unit,
            });
        }
        curves.push(Curve {
            points: branch,
            width: 2.0 * unit,
        });
    }
    curves.push(Curve {
        points: trunk,
        width: 3.0 * unit,
    });
    curves
}

fn rasterize(curves: &[Curve], side: usize, voids: &[Void]) -> Mask {
    let mut mask = Grid::new(side, side, 0u8);
    for curve in curves {
        let r = curve.width / 2.0;
        for &(x, y) in &curve.points {
            if r <= 0.5 {
                let (px, py) = (libm::round(x) as i64, libm::round(y) as i64);
                if mask.contains(px, py) {
                    mask.set(px as usize, py as usize, 1);
                }
                continue;
            }
            let reach = libm::ceil(r) as i64;
            let (cx, cy) = (libm::round(x) as i64, libm::round(y) as i64);
            for py in cy - reach..=cy + reach {
                for px in cx - reach..=cx + reach {
                    let (dx, dy) = (px as f64 - x, py as f64 - y);
                    if dx * dx + dy * dy <= r * r && mask.contains(px, py) {
                        mask.set(px as usize, py as usize, 1);
                    }
                }
            }
        }
    }
    for y in 0..side {
        for x in 0..side {
            if voids.iter().any(|v| v.contains(x as f64, y as f64, 0.5)) {
                mask.set(x, y, 0);
            }
        }
    }
    mask
}

fn place_voids(rng: &mut ChaCha8Rng, side: f64, unit: f64) -> (Void, Vec<Void>) {
    let draw = |rng: &mut ChaCha8Rng| Void {
        cx: side / 2.0 + uniform(rng, -0.27, 0.27) * side,
        cy: side / 2.0 + uniform(rng, -0.27, 0.27) * side,
        radius: uniform(rng, 0.075, 0.105) * side,
        wobble: uniform(rng, 0.05, 0.15),
        lobes: rng.random_range(2..=4) as f64,
        phase: uniform(rng, 0.0, 2.0 * PI),
    };
    let faz = draw(rng);
    let mut decoys: Vec<Void> = Vec::new();
    let wanted = rng.random_range(1..=2usize);
    let mut attempts = 0;
    while decoys.len() < wanted && attempts < 200 {
        attempts += 1;
        let d = draw(rng);
        let clear = |o: &Void| {
            o.distance(d.cx, d.cy) > (o.radius + d.radius) * 1.2 + 6.0 * unit
        };
        if clear(&faz) && decoys.iter().all(clear) {
            decoys.push(d);
        }
    }
    (faz, decoys)
}

/// Bilinearly upsampled lattice noise in `[0, 1)`.
fn value_noise(rng: &mut ChaCha8Rng, side: usize, cell: usize) -> Plane {
    let n = side / cell + 2;
    let lattice = Grid::from_fn(n, n, |_, _| rng.random::<f32>());
    Grid::from_fn(side, side, |x, y| {
        lattice.sample_bilinear(x as f64 / cell as f64, y as f64 / cell as f64, 0.0)
    })
}

/// Halo: 8-neighbors of a mask that are not in it.
fn halo(mask: &Mask) -> Mask {
    Grid::from_fn(mask.width(), mask.height(), |x, y| {
        if mask.get(x, y) != 0 {
            return 0;
        }
        let mut near = false;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                near |= mask.get_signed(x as i64 + dx, y as i64 + dy) == Some(1);
            }
        }
        u8::from(near)
    })
}

struct Weights {
    artery: f32,
    vein: f32,
    capillary: f32,
    texture: f32,
    noise: f32,
}

fn render(
    rng: &mut ChaCha8Rng,
    labels: &BTreeMap<TaskName, Mask>,
    voids: &[Void],
    texture: &Plane,
    w: &Weights,
) -> Plane {
    let side = texture.width();
    let artery = &labels[&TaskName::Artery];
    let vein = &labels[&TaskName::Vein];
    let capillary = &labels[&TaskName::Capillary];
    let rv = &labels[&TaskName::Rv];
    let rim = halo(rv);
    Grid::from_fn(side, side, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let mut bg = (0.12 + 0.22 * texture.get(x, y)) * w.texture;
        if voids.iter().any(|v| v.contains(fx, fy, 0.0)) {
            bg *= 0.25;
        }
        let vessel = if artery.get(x, y) == 1 {
            w.artery
        } else if vein.get(x, y) == 1 {
            w.vein
        } else if capillary.get(x, y) == 1 {
            w.capillary
        } else {
            0.0
        };
        let mut v = bg.max(vessel);
        if rim.get(x, y) == 1 {
            v = v.max(0.35 * w.vein.max(w.artery));
        }
        (v + normal(rng) as f32 * w.noise).clamp(0.0, 1.0)
    })
}

/// One synthetic sample.
pub fn synth_sample(id: &str, side: usize, seed: u64) -> OctaSample {
    let mut rng = seed::rng(seed::combine(seed, seed::hash_str(id)));
    let s = side as f64;
    let unit = s / 128.0;
    let (faz, decoys) = place_voids(&mut rng, s, unit);
    let mut voids = decoys.clone();
    voids.push(faz);

    let mut arteries = Vec::new();
    let mut veins = Vec::new();
    let n_art = rng.random_range(2..=3usize);
    let n_vein = rng.random_range(2..=3usize);
    let mut artery_trunks = Vec::new();
    for _ in 0..n_art {
        let (start, h) = border_start(&mut rng, s);
        let length = uniform(&mut rng, 0.5, 0.9) * s;
        let trunk = walk(&mut rng, start, h, length, s, unit);
        artery_trunks.push(trunk.clone());
        arteries.extend(grow_tree(&mut rng, trunk, s, unit));
    }
    for i in 0..n_vein {
        let companion = i == 0 && rng.random::<f64>() < 0.6;
        let trunk = if companion {
            // run alongside the first artery trunk, then diverge
            let guide = &artery_trunks[0];
            let offset = uniform(&mut rng, 4.0, 6.0) * unit * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let shared = (guide.len() * 2 / 5).max(2);
            let mut pts: Vec<(f64, f64)> = (0..shared)
                .map(|j| {
                    let h = heading_at(guide, j);
                    (
                        guide[j].0 - libm::sin(h) * offset,
                        guide[j].1 + libm::cos(h) * offset,
                    )
                })
                .collect();
            let last = *pts.last().unwrap();
            let h = heading_at(guide, shared - 1) + uniform(&mut rng, -0.6, 0.6);
            let length = uniform(&mut rng, 0.2, 0.45) * s;
            pts.extend(walk(&mut rng, last, h, length, s, unit));
            pts
        } else {
            let (start, h) = border_start(&mut rng, s);
            let length = uniform(&mut rng, 0.5, 0.9) * s;
            walk(&mut rng, start, h, length, s, unit)
        };
        veins.extend(grow_tree(&mut rng, trunk, s, unit));
    }
    let mut capillaries = Vec::new();
    for _ in 0..rng.random_range(8..=14usize) {
        let start = (uniform(&mut rng, 0.0, s), uniform(&mut rng, 0.0, s));
        let h = uniform(&mut rng, -PI, PI);
        let length = uniform(&mut rng, 0.1, 0.25) * s;
        capillaries.push(Curve {
            points: walk(&mut rng, start, h, length, s, unit),
            width: unit,
        });
    }

    let artery = rasterize(&arteries, side, &voids);
    let vein = rasterize(&veins, side, &voids)
        .difference(&artery)
        .expect("same shape");
    let av = artery.union(&vein).expect("same shape");
    let capillary = rasterize(&capillaries, side, &voids)
        .difference(&av)
        .expect("same shape");
    let rv = av.union(&capillary).expect("same shape");
    let faz_mask = Grid::from_fn(side, side, |x, y| u8::from(faz.contains(x as f64, y as f64, 0.0)));

    let mut labels = BTreeMap::new();
    labels.insert(TaskName::Artery, artery);
    labels.insert(TaskName::Vein, vein);
    labels.insert(TaskName::Capillary, capillary);
    labels.insert(TaskName::Rv, rv);
    labels.insert(TaskName::Faz, faz_mask);

    let texture = value_noise(&mut rng, side, (4.0 * unit).max(2.0) as usize);
    let layers = [
        (
            LAYER_FULL,
            Weights { artery: 0.95, vein: 0.85, capillary: 0.6, texture: 1.0, noise: 0.04 },
        ),
        (
            LAYER_INNER,
            Weights { artery: 0.95, vein: 0.6, capillary: 0.55, texture: 0.8, noise: 0.05 },
        ),
        (
            LAYER_OUTER,
            Weights { artery: 0.35, vein: 0.75, capillary: 0.2, texture: 0.6, noise: 0.06 },
        ),
    ];
    let projections = layers
        .iter()
        .map(|(name, w)| (name.to_string(), render(&mut rng, &labels, &voids, &texture, w)))
        .collect();
    OctaSample::new(id.to_string(), Fov::Fov3M, projections, labels).expect("consistent synthetic sample")
}

/// `n` samples with ids `synth_0000`, `synth_0001`, ...
pub fn synth_dataset(n: usize, side: usize, seed: u64) -> Vec<OctaSample> {
    (0..n)
        .map(|i| synth_sample(&format!("synth_{i:04}"), side, seed))
        .collect()
}

//! Procedural two-domain dataset for desk-scale runs.
//!
//! Domain A renders K glyph classes as bright strokes on a dark field with
//! position/scale jitter. Domain B renders fresh instances of the same
//! classes with inverted intensity, a sinusoidal background grating and a
//! mild channel tint, so the domains share content but never pixels.

use super::idx::IdxImages;
use super::{DatasetPair, DomainSet};
use crate::error::{Error, Result};
use crate::nets::{Domain, IMAGE_SIDE};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const MAX_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub k: usize,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.k > MAX_CLASSES {
            return Err(Error::InvalidConfig(format!("synth classes must be in 2..={MAX_CLASSES}, got {}", self.k)));
        }
        if self.n_train_per_class < 1 || self.n_test_per_class < 1 {
            return Err(Error::InvalidConfig("per-class sample counts must be >= 1".into()));
        }
        Ok(())
    }
}

struct Jitter {
    cx: f32,
    cy: f32,
    scale: f32,
}

fn glyph_mask(class: usize, j: &Jitter) -> Vec<f32> {
    let side = IMAGE_SIDE;
    let r = 9.0 * j.scale;
    let mut mask = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            let dx = x as f32 - j.cx;
            let dy = y as f32 - j.cy;
            let dist = (dx * dx + dy * dy).sqrt();
            let inside = match class {
                // filled disk
                0 => dist < r * 0.74,
                // square outline
                1 => {
                    let d = dx.abs().max(dy.abs());
                    d < r * 0.78 && d > r * 0.78 - 2.6
                }
                // plus
                2 => (dx.abs() < 2.2 && dy.abs() < r) || (dy.abs() < 2.2 && dx.abs() < r),
                // one diagonal stroke
                3 => (dx - dy).abs() < 3.0 && dx.abs().max(dy.abs()) < r * 0.95,
                // horizontal bar
                4 => dy.abs() < 2.6 && dx.abs() < r,
                // vertical bar
                5 => dx.abs() < 2.6 && dy.abs() < r,
                // filled triangle, apex up
                6 => {
                    let base = r * 0.8;
                    dy < base && dy > -base && dx.abs() < (dy + base) * 0.55
                }
                // ring
                7 => (dist - r * 0.7).abs() < 2.0,
                // X (both diagonals)
                8 => ((dx - dy).abs() < 2.6 || (dx + dy).abs() < 2.6) && dx.abs().max(dy.abs()) < r * 0.85,
                // 2x2 dot grid
                _ => {
                    let s = r * 0.55;
                    let mut hit = false;
                    for gy in [-s, s] {
                        for gx in [-s, s] {
                            let ddx = dx - gx;
                            let ddy = dy - gy;
                            if (ddx * ddx + ddy * ddy).sqrt() < 2.6 {
                                hit = true;
                            }
                        }
                    }
                    hit
                }
            };
            if inside {
                mask[y * side + x] = 1.0;
            }
        }
    }
    // one box-blur pass softens the edges
    let mut soft = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for oy in -1i32..=1 {
                for ox in -1i32..=1 {
                    let yy = y as i32 + oy;
                    let xx = x as i32 + ox;
                    if yy >= 0 && yy < side as i32 && xx >= 0 && xx < side as i32 {
                        acc += mask[yy as usize * side + xx as usize];
                        cnt += 1.0;
                    }
                }
            }
            soft[y * side + x] = acc / cnt;
        }
    }
    soft
}

fn render(class: usize, domain: Domain, rng: &mut ChaCha20Rng) -> Vec<f32> {
    let side = IMAGE_SIDE;
    let j = Jitter {
        cx: rng.gen_range(13.0..19.0),
        cy: rng.gen_range(13.0..19.0),
        scale: rng.gen_range(0.72..1.05),
    };
    let mask = glyph_mask(class, &j);
    let mut out = Vec::with_capacity(3 * side * side);
    match domain {
        Domain::A => {
            let mut plane = vec![0.0f32; side * side];
            for (p, m) in plane.iter_mut().zip(&mask) {
                let noise: f32 = rng.gen_range(-0.02..0.02);
                *p = (0.08 + 0.84 * m + noise).clamp(0.0, 1.0);
            }
            for _ in 0..3 {
                out.extend_from_slice(&plane);
            }
        }
        Domain::B => {
            let fx: f32 = rng.gen_range(0.07..0.16);
            let fy: f32 = rng.gen_range(0.07..0.16);
            let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
            let mut plane = vec![0.0f32; side * side];
            for y in 0..side {
                for x in 0..side {
                    let grating = 0.10 * (std::f32::consts::TAU * (fx * x as f32 + fy * y as f32) + phase).sin();
                    let m = mask[y * side + x];
                    plane[y * side + x] = (0.90 - 0.74 * m + grating).clamp(0.0, 1.0);
                }
            }
            for tint in [0.94f32, 1.0, 1.06] {
                out.extend(plane.iter().map(|v| (v * tint).clamp(0.0, 1.0)));
            }
        }
    }
    // into the tanh range
    out.iter().map(|v| v * 2.0 - 1.0).collect()
}

fn render_set(spec: &SynthSpec, per_class: usize, domain: Domain, rng: &mut ChaCha20Rng) -> Result<DomainSet> {
    let n = per_class * spec.k;
    let mut images = Vec::with_capacity(n * 3 * IMAGE_SIDE * IMAGE_SIDE);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.k {
        for _ in 0..per_class {
            images.extend(render(class, domain, rng));
            labels.push(class as u8);
        }
    }
    DomainSet::new(images, n, labels, domain)
}

/// Render the full pair; deterministic for a given seed.
pub fn synth_pair(spec: &SynthSpec) -> Result<DatasetPair> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let train_a = render_set(spec, spec.n_train_per_class, Domain::A, &mut rng)?;
    let test_a = render_set(spec, spec.n_test_per_class, Domain::A, &mut rng)?;
    let train_b = render_set(spec, spec.n_train_per_class, Domain::B, &mut rng)?;
    let test_b = render_set(spec, spec.n_test_per_class, Domain::B, &mut rng)?;
    Ok(DatasetPair { train_a, test_a, train_b, test_b, k: spec.k })
}

/// Channel-mean u8 export of a set, for inspection through the IDX tooling.
pub fn to_idx(set: &DomainSet) -> IdxImages {
    let side = IMAGE_SIDE;
    let plane = side * side;
    let mut pixels = Vec::with_capacity(set.n * plane);
    for i in 0..set.n {
        let img = set.image(i);
        for p in 0..plane {
            let mean = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0;
            pixels.push(((mean + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
        }
    }
    IdxImages { n: set.n, rows: side, cols: side, pixels }
}

/// Nearest-centroid classifier on mean intensity, enough to confirm the two
/// domains are visually distinct.
pub fn domain_separability(pair: &DatasetPair) -> f32 {
    let mean_of = |set: &DomainSet, i: usize| -> f32 {
        let img = set.image(i);
        img.iter().sum::<f32>() / img.len() as f32
    };
    let centroid = |set: &DomainSet| -> f32 {
        (0..set.n).map(|i| mean_of(set, i)).sum::<f32>() / set.n as f32
    };
    let ca = centroid(&pair.train_a);
    let cb = centroid(&pair.train_b);
    let mut correct = 0usize;
    let mut total = 0usize;
    for (set, is_a) in [(&pair.test_a, true), (&pair.test_b, false)] {
        for i in 0..set.n {
            let m = mean_of(set, i);
            let pick_a = (m - ca).abs() < (m - cb).abs();
            if pick_a == is_a {
                correct += 1;
            }
            total += 1;
        }
    }
    correct as f32 / total as f32
}

//! Weak and strong augmentation policies.
//!
//! Weak = pad-4 random crop (clamped edge sampling) + horizontal flip at
//! p = 0.5. Strong = weak plus two ops drawn from a fixed list
//! (rotation ≤15°, translation ≤10%, shear ≤10°, brightness/contrast/
//! saturation jitter ≤0.4, posterize) plus random erasing at p = 0.25.
//!
//! Randomness is split from application: `draw` samples the transform
//! parameters from a seeded generator, `apply_draws` is a pure function.
//! `augment` composes the two, so the same seed always yields the same
//! output image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::patch::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Weak,
    Strong,
}

/// The augmentation contract used by the pseudo-label filter: weak is a
/// strict subset of strong in aggressiveness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub kind: AugKind,
}

impl AugPolicy {
    pub fn weak() -> Self {
        Self {
            kind: AugKind::Weak,
        }
    }

    pub fn strong() -> Self {
        Self {
            kind: AugKind::Strong,
        }
    }
}

const CROP_PAD: i64 = 4;
const ERASE_PROB: f64 = 0.25;
const NUM_STRONG_OPS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrongOp {
    /// Degrees, |θ| ≤ 15.
    Rotate(f64),
    /// Fraction of height/width, each |t| ≤ 0.1.
    Translate(f64, f64),
    /// Degrees, |s| ≤ 10.
    Shear(f64),
    /// Additive offset, |b| ≤ 0.4.
    Brightness(f64),
    /// Multiplicative jitter around the image mean, |c| ≤ 0.4.
    Contrast(f64),
    /// Multiplicative jitter around per-pixel gray, |s| ≤ 0.4.
    Saturation(f64),
    /// Bit depth in 4..=7 over the image's value range.
    Posterize(u32),
}

/// Every sampled decision for one augmentation call.
#[derive(Debug, Clone, PartialEq)]
pub struct AugDraws {
    pub shift_x: i64,
    pub shift_y: i64,
    pub flip: bool,
    pub strong_ops: Vec<StrongOp>,
    /// (row, col, height, width) of the erased rectangle.
    pub erase: Option<(usize, usize, usize, usize)>,
}

impl AugDraws {
    /// The draw under which [`apply_draws`] is the identity.
    pub fn identity() -> Self {
        Self {
            shift_x: 0,
            shift_y: 0,
            flip: false,
            strong_ops: Vec::new(),
            erase: None,
        }
    }
}

/// Samples transform parameters for one image.
pub fn draw(policy: AugPolicy, height: usize, width: usize, rng: &mut ChaCha12Rng) -> AugDraws {
    let shift_x = rng.random_range(-CROP_PAD..=CROP_PAD);
    let shift_y = rng.random_range(-CROP_PAD..=CROP_PAD);
    let flip = rng.random::<f64>() < 0.5;
    let mut strong_ops = Vec::new();
    let mut erase = None;
    if policy.kind == AugKind::Strong {
        // two distinct ops from the fixed list
        let first = rng.random_range(0..NUM_STRONG_OPS);
        let mut second = rng.random_range(0..NUM_STRONG_OPS - 1);
        if second >= first {
            second += 1;
        }
        for op in [first, second] {
            strong_ops.push(match op {
                0 => StrongOp::Rotate(rng.random_range(-15.0..=15.0)),
                1 => StrongOp::Translate(
                    rng.random_range(-0.1..=0.1),
                    rng.random_range(-0.1..=0.1),
                ),
                2 => StrongOp::Shear(rng.random_range(-10.0..=10.0)),
                3 => StrongOp::Brightness(rng.random_range(-0.4..=0.4)),
                4 => StrongOp::Contrast(rng.random_range(-0.4..=0.4)),
                5 => StrongOp::Saturation(rng.random_range(-0.4..=0.4)),
                _ => StrongOp::Posterize(rng.random_range(4..=7)),
            });
        }
        if rng.random::<f64>() < ERASE_PROB {
            let area = height * width;
            let target = rng.random_range(0.10..=0.25) * area as f64;
            let aspect: f64 = rng.random_range(0.5..=2.0);
            let eh = ((target * aspect).sqrt().round() as usize).clamp(1, height);
            let ew = ((target / aspect).sqrt().round() as usize).clamp(1, width);
            let r0 = rng.random_range(0..=height - eh);
            let c0 = rng.random_range(0..=width - ew);
            erase = Some((r0, c0, eh, ew));
        }
    }
    AugDraws {
        shift_x,
        shift_y,
        flip,
        strong_ops,
        erase,
    }
}

fn clamp_idx(v: i64, max: usize) -> usize {
    v.clamp(0, max as i64 - 1) as usize
}

/// Resamples through an inverse pixel mapping with clamp-to-edge
/// addressing (so constant images stay constant under geometry).
fn remap(image: &ImageTensor, f: impl Fn(usize, usize) -> (i64, i64)) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut out = ImageTensor::new(ndarray::Array3::zeros((h, w, c)));
    for i in 0..h {
        for j in 0..w {
            let (si, sj) = f(i, j);
            let (si, sj) = (clamp_idx(si, h), clamp_idx(sj, w));
            for ch in 0..c {
                out.data[(i, j, ch)] = image.data[(si, sj, ch)];
            }
        }
    }
    out
}

fn apply_strong_op(image: &ImageTensor, op: &StrongOp) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    match *op {
        StrongOp::Rotate(deg) => {
            let rad = deg.to_radians();
            let (sin, cos) = rad.sin_cos();
            remap(image, |i, j| {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                let si = cy + dy * cos - dx * sin;
                let sj = cx + dy * sin + dx * cos;
                (si.round() as i64, sj.round() as i64)
            })
        }
        StrongOp::Translate(ty, tx) => {
            let dy = (ty * h as f64).round() as i64;
            let dx = (tx * w as f64).round() as i64;
            remap(image, |i, j| (i as i64 + dy, j as i64 + dx))
        }
        StrongOp::Shear(deg) => {
            let t = deg.to_radians().tan();
            remap(image, |i, j| {
                let sj = j as f64 + t * (i as f64 - cy);
                (i as i64, sj.round() as i64)
            })
        }
        StrongOp::Brightness(b) => {
            let mut out = image.clone();
            out.data.mapv_inplace(|v| v + b);
            out
        }
        StrongOp::Contrast(cf) => {
            let mean = image.data.sum() / image.data.len() as f64;
            let factor = 1.0 + cf;
            let mut out = image.clone();
            out.data.mapv_inplace(|v| mean + (v - mean) * factor);
            out
        }
        StrongOp::Saturation(sf) => {
            let factor = 1.0 + sf;
            let mut out = image.clone();
            for i in 0..h {
                for j in 0..w {
                    let gray = (0..c).map(|ch| image.data[(i, j, ch)]).sum::<f64>() / c as f64;
                    for ch in 0..c {
                        out.data[(i, j, ch)] = gray + (image.data[(i, j, ch)] - gray) * factor;
                    }
                }
            }
            out
        }
        StrongOp::Posterize(bits) => {
            let lo = image.data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = image.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let levels = (1u64 << bits) as f64;
            if hi <= lo {
                return image.clone();
            }
            let step = (hi - lo) / levels;
            let mut out = image.clone();
            out.data
                .mapv_inplace(|v| lo + (((v - lo) / step).floor().min(levels - 1.0)) * step);
            out
        }
    }
}

/// Pure application of a set of draws: crop shift, flip, strong ops in
/// order, then erasing.
pub fn apply_draws(image: &ImageTensor, draws: &AugDraws) -> ImageTensor {
    let mut out = if draws.shift_x == 0 && draws.shift_y == 0 {
        image.clone()
    } else {
        remap(image, |i, j| {
            (i as i64 + draws.shift_y, j as i64 + draws.shift_x)
        })
    };
    if draws.flip {
        let w = out.width();
        out = remap(&out, |i, j| (i as i64, (w - 1 - j) as i64));
    }
    for op in &draws.strong_ops {
        out = apply_strong_op(&out, op);
    }
    if let Some((r0, c0, eh, ew)) = draws.erase {
        for i in r0..(r0 + eh).min(out.height()) {
            for j in c0..(c0 + ew).min(out.width()) {
                for ch in 0..out.channels() {
                    out.data[(i, j, ch)] = 0.0;
                }
            }
        }
    }
    out
}

/// Seeded augmentation: same (image, policy, seed) → identical output.
pub fn augment(image: &ImageTensor, policy: AugPolicy, seed: u64) -> ImageTensor {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let draws = draw(policy, image.height(), image.width(), &mut rng);
    apply_draws(image, &draws)
}

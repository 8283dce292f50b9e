//! Image ↔ patch-token conversion and seeded random masking.
//!
//! Everything here is a pure function of its inputs; randomness enters only
//! through an explicit seed, so plans are reproducible and safe to regenerate
//! per sample per epoch.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An H × W × C image with finite entries. Pixel values are whatever
/// representation the caller works in (raw [0,1] or normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Flattened non-overlapping patches in raster order (patch rows top to
/// bottom, left to right within a row). Row i is the row-major flattening
/// of patch i: pixel row, then pixel column, then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: Array2<f64>,
    pub patch_size: usize,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.rows.nrows()
    }

    pub fn row_width(&self) -> usize {
        self.rows.ncols()
    }
}

/// Seeded permutation bookkeeping for one sample's random masking.
///
/// The first `num_visible` entries of `permutation` are the visible patch
/// indices; the rest are masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub permutation: Vec<usize>,
    pub num_visible: usize,
    pub seed: u64,
}

impl MaskPlan {
    pub fn num_patches(&self) -> usize {
        self.permutation.len()
    }

    pub fn visible_idx(&self) -> &[usize] {
        &self.permutation[..self.num_visible]
    }

    pub fn masked_idx(&self) -> &[usize] {
        &self.permutation[self.num_visible..]
    }
}

/// Splits an image into non-overlapping P × P patches, N = HW/P².
pub fn patchify(image: &ImageTensor, patch_size: usize) -> Result<PatchGrid> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} not divisible by patch size {patch_size}"
        )));
    }
    let p = patch_size;
    let (ph, pw) = (h / p, w / p);
    let n = ph * pw;
    let mut rows = Array2::zeros((n, p * p * c));
    for bi in 0..ph {
        for bj in 0..pw {
            let patch = bi * pw + bj;
            let mut k = 0;
            for pi in 0..p {
                for pj in 0..p {
                    for ch in 0..c {
                        rows[(patch, k)] = image.data[(bi * p + pi, bj * p + pj, ch)];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(PatchGrid { rows, patch_size })
}

/// Inverse of [`patchify`]; exact for consistent shapes.
pub fn unpatchify(grid: &PatchGrid, h: usize, w: usize, c: usize) -> Result<ImageTensor> {
    let p = grid.patch_size;
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::Shape(format!(
            "target {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (ph, pw) = (h / p, w / p);
    if grid.num_patches() != ph * pw || grid.row_width() != p * p * c {
        return Err(Error::Shape(format!(
            "grid {}x{} inconsistent with image {h}x{w}x{c}, patch {p}",
            grid.num_patches(),
            grid.row_width()
        )));
    }
    let mut data = Array3::zeros((h, w, c));
    for bi in 0..ph {
        for bj in 0..pw {
            let patch = bi * pw + bj;
            let mut k = 0;
            for pi in 0..p {
                for pj in 0..p {
                    for ch in 0..c {
                        data[(bi * p + pi, bj * p + pj, ch)] = grid.rows[(patch, k)];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(ImageTensor { data })
}

/// Draws a uniform random permutation of the N patch indices and keeps the
/// first floor(N·(1−r)) as visible. Same (N, r, seed) → identical plan.
pub fn make_mask_plan(num_patches: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!(
            "mask ratio {mask_ratio} outside [0, 1)"
        )));
    }
    if num_patches == 0 {
        return Err(Error::Config("mask plan needs at least one patch".into()));
    }
    let num_visible = (num_patches as f64 * (1.0 - mask_ratio)).floor() as usize;
    if num_visible == 0 {
        return Err(Error::Config(format!(
            "ratio {mask_ratio} leaves no visible patch out of {num_patches}"
        )));
    }
    let mut permutation: Vec<usize> = (0..num_patches).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    permutation.shuffle(&mut rng);
    Ok(MaskPlan {
        permutation,
        num_visible,
        seed,
    })
}

/// Selects the visible token rows in plan order.
pub fn gather_visible(tokens: ArrayView2<f64>, plan: &MaskPlan) -> Result<Array2<f64>> {
    if tokens.nrows() != plan.num_patches() {
        return Err(Error::Shape(format!(
            "token count {} != plan size {}",
            tokens.nrows(),
            plan.num_patches()
        )));
    }
    let mut out = Array2::zeros((plan.num_visible, tokens.ncols()));
    for (j, &i) in plan.visible_idx().iter().enumerate() {
        out.row_mut(j).assign(&tokens.row(i));
    }
    Ok(out)
}

/// Restores spatial order: visible tokens go back to their original patch
/// positions, every masked position gets a copy of `mask_fill`.
pub fn unshuffle_tokens(
    visible: ArrayView2<f64>,
    mask_fill: ArrayView1<f64>,
    plan: &MaskPlan,
) -> Result<Array2<f64>> {
    if visible.nrows() != plan.num_visible {
        return Err(Error::Shape(format!(
            "visible count {} != plan visible {}",
            visible.nrows(),
            plan.num_visible
        )));
    }
    if visible.ncols() != mask_fill.len() {
        return Err(Error::Shape(format!(
            "token width {} != fill width {}",
            visible.ncols(),
            mask_fill.len()
        )));
    }
    let n = plan.num_patches();
    let mut out = Array2::zeros((n, visible.ncols()));
    for mut row in out.axis_iter_mut(Axis(0)) {
        row.assign(&mask_fill);
    }
    for (j, &i) in plan.visible_idx().iter().enumerate() {
        out.row_mut(i).assign(&visible.row(j));
    }
    Ok(out)
}

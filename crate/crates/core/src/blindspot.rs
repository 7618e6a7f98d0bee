//! Full-image blind-spot masking.
//!
//! The image is tiled into a ⌈√k⌉×⌈√k⌉ grid. Each of the first `k` cells in
//! row-major order hides its center pixel behind a value copied from another
//! pixel of the same cell. The loss is evaluated only at the hidden pixels,
//! against their original values, so the identity map cannot minimise it.

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskEntry {
    pub masked: (usize, usize),
    pub replacement: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub image_shape: (usize, usize),
    pub grid: (usize, usize),
    pub entries: Vec<MaskEntry>,
}

/// Row (or column) extent of band `i` out of `bands` over `len` pixels; the
/// last band absorbs the remainder.
fn band(len: usize, bands: usize, i: usize) -> (usize, usize) {
    let step = len / bands;
    let start = i * step;
    let end = if i + 1 == bands { len } else { start + step };
    (start, end)
}

pub fn grid_side(mask_count: usize) -> usize {
    let mut g = (mask_count as f64).sqrt() as usize;
    while g * g < mask_count {
        g += 1;
    }
    while g > 1 && (g - 1) * (g - 1) >= mask_count {
        g -= 1;
    }
    g
}

pub fn make_mask_plan(
    height: usize,
    width: usize,
    mask_count: usize,
    seed: u64,
) -> Result<MaskPlan> {
    if mask_count == 0 {
        return Err(invalid!("mask count must be at least 1"));
    }
    let g = grid_side(mask_count);
    if g > height || g > width {
        return Err(invalid!(
            "mask count {mask_count} needs a {g}×{g} grid, larger than the {height}×{width} image"
        ));
    }
    let mut rng = rng_from(seed, &[]);
    let mut entries = Vec::with_capacity(mask_count);
    for cell in 0..mask_count {
        let (r0, r1) = band(height, g, cell / g);
        let (c0, c1) = band(width, g, cell % g);
        let (h, w) = (r1 - r0, c1 - c0);
        if h * w < 2 {
            return Err(invalid!(
                "mask count {mask_count} exceeds capacity: cell {cell} of the {g}×{g} grid has a single pixel"
            ));
        }
        let center = (h / 2) * w + w / 2;
        let mut pick = rng.gen_range(0..h * w - 1);
        if pick >= center {
            pick += 1;
        }
        entries.push(MaskEntry {
            masked: (r0 + h / 2, c0 + w / 2),
            replacement: (r0 + pick / w, c0 + pick % w),
        });
    }
    Ok(MaskPlan {
        image_shape: (height, width),
        grid: (g, g),
        entries,
    })
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flat row-major indices of the masked pixels.
    pub fn masked_indices(&self) -> Vec<usize> {
        let w = self.image_shape.1;
        self.entries
            .iter()
            .map(|e| e.masked.0 * w + e.masked.1)
            .collect()
    }

    /// Grid cell (row, col) containing a pixel.
    pub fn cell_of(&self, (r, c): (usize, usize)) -> (usize, usize) {
        let (h, w) = self.image_shape;
        let (gr, gc) = self.grid;
        let row = (r / (h / gr)).min(gr - 1);
        let col = (c / (w / gc)).min(gc - 1);
        (row, col)
    }

    /// Checks bounds, distinctness, same-cell replacement and one entry per
    /// cell.
    pub fn check_invariants(&self) -> Result<()> {
        let (h, w) = self.image_shape;
        let mut seen = std::collections::HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            for (r, c) in [e.masked, e.replacement] {
                if r >= h || c >= w {
                    return Err(invalid!("entry {i}: ({r}, {c}) outside {h}×{w}"));
                }
            }
            if e.masked == e.replacement {
                return Err(invalid!("entry {i}: replacement equals masked pixel"));
            }
            let cell = self.cell_of(e.masked);
            if cell != self.cell_of(e.replacement) {
                return Err(invalid!("entry {i}: replacement leaves cell {cell:?}"));
            }
            if !seen.insert(cell) {
                return Err(invalid!("entry {i}: second entry in cell {cell:?}"));
            }
        }
        Ok(())
    }

    fn check_image(&self, t: &Tensor) -> Result<()> {
        let dims = t.image_dims()?;
        if dims != self.image_shape {
            return Err(shape_err!(
                "mask plan built for {:?}, image is {:?}",
                self.image_shape,
                dims
            ));
        }
        Ok(())
    }
}

/// Copies each replacement pixel over its masked pixel. The input is left
/// untouched.
pub fn apply_mask(image: &Tensor, plan: &MaskPlan) -> Result<Tensor> {
    plan.check_image(image)?;
    let w = plan.image_shape.1;
    let src = image.data();
    let mut out = image.clone();
    out.grad = None;
    let dst = out.data_mut();
    for e in &plan.entries {
        dst[e.masked.0 * w + e.masked.1] = src[e.replacement.0 * w + e.replacement.1];
    }
    Ok(out)
}

/// Mean squared error between `pred` and the original `target` over the
/// masked pixels only.
pub fn masked_mse(tape: &mut Tape, pred: Var, target: &Tensor, plan: &MaskPlan) -> Result<Var> {
    if plan.is_empty() {
        return Err(invalid!("masked_mse needs a non-empty mask plan"));
    }
    plan.check_image(target)?;
    tape.mse_at(pred, target, &plan.masked_indices())
}

//! Gaussian potential fields and the field → mask pipeline.
//!
//! The patch shape is the super-level set `{Φ ≥ τ}` of a field seeded as a
//! Gaussian bump at the region centroid. The attack raises `Φ` where the loss
//! gradient favours the patch and raises `τ` on every update, so the mask
//! shrinks toward the most useful pixels.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, PotentialField};
use crate::ops::gaussian_blur;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphologyConfig {
    /// Pixels.
    pub blur_sigma: f64,
    pub min_component_area: usize,
    /// Pixels; disc structuring element.
    pub closing_radius: usize,
}

impl Default for MorphologyConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.5,
            min_component_area: 64,
            closing_radius: 2,
        }
    }
}

impl MorphologyConfig {
    /// No-op post-processing.
    pub fn none() -> Self {
        Self {
            blur_sigma: 0.0,
            min_component_area: 0,
            closing_radius: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Config(format!("blur_sigma {} must be >= 0", self.blur_sigma)));
        }
        Ok(())
    }
}

/// Gaussian bump `exp(−r² / 2σ_px²)` with `σ_px = σ · min(H, W)`.
///
/// `center` is `(x, y)` in pixel-index coordinates.
pub fn build_field(center: (f64, f64), sigma: f64, height: usize, width: usize) -> Result<PotentialField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("field sigma {sigma} must be positive")));
    }
    let (x0, y0) = center;
    if !(x0 >= 0.0 && x0 <= width as f64 && y0 >= 0.0 && y0 <= height as f64) {
        return Err(Error::invalid(format!(
            "field center ({x0}, {y0}) outside {width}x{height}"
        )));
    }
    let sigma_px = sigma * height.min(width) as f64;
    let denom = 2.0 * sigma_px * sigma_px;
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let dy = y as f64 - y0;
        for x in 0..width {
            let dx = x as f64 - x0;
            data.push((-(dx * dx + dy * dy) / denom).exp());
        }
    }
    PotentialField::new(height, width, data, 0.0)
}

pub fn threshold_field(field: &PotentialField, tau: f64) -> Mask {
    assert!(tau >= 0.0, "threshold must be non-negative");
    let (h, w) = field.dims();
    Mask::new(h, w, field.data().iter().map(|&v| v >= tau).collect()).expect("field dims")
}

/// Blur + re-threshold, hole filling, closing, and small-component removal.
pub fn postprocess(raw: &Mask, cfg: &MorphologyConfig) -> Mask {
    let (h, w) = raw.dims();
    let mut mask = raw.clone();

    if cfg.blur_sigma > 0.0 {
        let values: Vec<f64> = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let blurred = gaussian_blur(&values, h, w, cfg.blur_sigma);
        mask = Mask::new(h, w, blurred.iter().map(|&v| v >= 0.5).collect()).expect("dims");
    }
    mask = fill_holes(&mask);
    if cfg.closing_radius > 0 {
        mask = close(&mask, cfg.closing_radius);
        // Closing can seal off background pockets.
        mask = fill_holes(&mask);
    }
    if cfg.min_component_area > 0 {
        mask = remove_small_components(&mask, cfg.min_component_area);
    }
    mask
}

pub fn generate_mask(field: &PotentialField, tau: f64, cfg: &MorphologyConfig) -> Mask {
    postprocess(&threshold_field(field, tau), cfg)
}

/// `Φ + lr · max(0, G)`; the threshold is carried over unchanged.
pub fn update_field(field: &PotentialField, gradient: &[f64], lr: f64) -> Result<PotentialField> {
    if gradient.len() != field.data().len() {
        return Err(Error::shape(format!(
            "field update: gradient has {} cells, field {}",
            gradient.len(),
            field.data().len()
        )));
    }
    if !(lr >= 0.0) {
        return Err(Error::invalid(format!("field learning rate {lr} must be >= 0")));
    }
    let data = field
        .data()
        .iter()
        .zip(gradient)
        .map(|(&phi, &g)| phi + lr * g.max(0.0))
        .collect();
    PotentialField::new(field.height(), field.width(), data, field.threshold)
}

const NEIGHBOURS_4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Labels 4-connected components of cells equal to `value`. Returns the label
/// per cell (`usize::MAX` for other cells) and the size of each component.
pub fn label_components(mask: &Mask, value: bool) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = mask.dims();
    let mut labels = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if mask.data()[start] != value || labels[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for (dy, dx) in NEIGHBOURS_4 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data()[j] == value && labels[j] == usize::MAX {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Background components not touching the frame border; the pixels an ideal
/// hole filler would set.
pub fn interior_holes(mask: &Mask) -> Vec<usize> {
    let (h, w) = mask.dims();
    let (labels, sizes) = label_components(mask, false);
    let mut touches = vec![false; sizes.len()];
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                let l = labels[y * w + x];
                if l != usize::MAX {
                    touches[l] = true;
                }
            }
        }
    }
    (0..h * w)
        .filter(|&i| labels[i] != usize::MAX && !touches[labels[i]])
        .collect()
}

fn fill_holes(mask: &Mask) -> Mask {
    let mut out = mask.clone();
    let w = mask.width();
    for i in interior_holes(mask) {
        out.set(i / w, i % w, true);
    }
    out
}

fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offs = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offs.push((dy, dx));
            }
        }
    }
    offs
}

/// Dilation followed by erosion. Cells outside the frame count as foreground
/// during erosion, which keeps the closing extensive along the border.
fn close(mask: &Mask, radius: usize) -> Mask {
    let (h, w) = mask.dims();
    let offs = disc_offsets(radius);
    let inside = |y: isize, x: isize| y >= 0 && x >= 0 && y < h as isize && x < w as isize;

    let dilated = Mask::from_fn(h, w, |y, x| {
        offs.iter().any(|&(dy, dx)| {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            inside(ny, nx) && mask.get(ny as usize, nx as usize)
        })
    });
    Mask::from_fn(h, w, |y, x| {
        offs.iter().all(|&(dy, dx)| {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            !inside(ny, nx) || dilated.get(ny as usize, nx as usize)
        })
    })
}

fn remove_small_components(mask: &Mask, min_area: usize) -> Mask {
    let (labels, sizes) = label_components(mask, true);
    let (h, w) = mask.dims();
    Mask::new(
        h,
        w,
        labels
            .iter()
            .map(|&l| l != usize::MAX && sizes[l] >= min_area)
            .collect(),
    )
    .expect("dims")
}

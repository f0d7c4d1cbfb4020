//! Random crop-resize augmentation.
//!
//! [`sample_patch_crop`] draws a window that always contains the patch centre
//! so the patch is never cropped away; [`sample_naive_crop`] draws an
//! unconstrained window of the same size distribution.

use rand::Rng;

use crate::error::Result;
use crate::image::{Image, ImageGrad};
use crate::ops::{crop_resize, crop_resize_vjp, CropSpec};

pub const DEFAULT_ASPECT_RANGE: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Window size with area `~ U[a·WH, b·WH]` and aspect `w/h ~ U[aspect]`.
/// When one side would exceed the frame it is clamped and the other side is
/// recomputed from the sampled area.
fn sample_size<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    a: f64,
    b: f64,
    aspect: (f64, f64),
) -> (f64, f64) {
    assert!(
        0.0 < a && a <= b && b <= 1.0,
        "crop area fractions must satisfy 0 < a <= b <= 1"
    );
    assert!(0.0 < aspect.0 && aspect.0 <= aspect.1, "invalid aspect range");
    let (wf, hf) = (width as f64, height as f64);
    let area = uniform(rng, a * wf * hf, b * wf * hf);
    let rho = uniform(rng, aspect.0, aspect.1);
    let mut h = (area / rho).sqrt();
    let mut w = rho * h;
    if h > hf {
        h = hf;
        w = area / h;
    }
    if w > wf {
        w = wf;
        h = area / w;
    }
    (w.clamp(1.0_f64.min(wf), wf), h.clamp(1.0_f64.min(hf), hf))
}

pub fn sample_patch_crop<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    center: (f64, f64),
    a: f64,
    b: f64,
    aspect: (f64, f64),
) -> CropSpec {
    let (x0, y0) = center;
    let (wf, hf) = (width as f64, height as f64);
    assert!(
        (0.0..=wf).contains(&x0) && (0.0..=hf).contains(&y0),
        "patch centre ({x0}, {y0}) outside {width}x{height}"
    );
    let (w, h) = sample_size(rng, width, height, a, b, aspect);

    let (x_lo, x_hi) = ((x0 - w).max(0.0), x0.min(wf - w));
    let (y_lo, y_hi) = ((y0 - h).max(0.0), y0.min(hf - h));
    // Non-empty whenever the centre lies in the frame and w <= W, h <= H.
    assert!(x_lo <= x_hi && y_lo <= y_hi, "empty corner interval");
    CropSpec {
        x: uniform(rng, x_lo, x_hi),
        y: uniform(rng, y_lo, y_hi),
        w,
        h,
        out_h: height,
        out_w: width,
    }
}

pub fn sample_naive_crop<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    a: f64,
    b: f64,
    aspect: (f64, f64),
) -> CropSpec {
    let (w, h) = sample_size(rng, width, height, a, b, aspect);
    CropSpec {
        x: uniform(rng, 0.0, width as f64 - w),
        y: uniform(rng, 0.0, height as f64 - h),
        w,
        h,
        out_h: height,
        out_w: width,
    }
}

pub fn apply(img: &Image, spec: &CropSpec) -> Result<Image> {
    crop_resize(img, spec)
}

pub fn apply_vjp(dims: (usize, usize), spec: &CropSpec, cot: &ImageGrad) -> Result<ImageGrad> {
    crop_resize_vjp(dims, spec, cot)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageGrad, CHANNELS};

/// A crop window in continuous pixel coordinates plus its resize target.
///
/// Pixel `k` covers `[k, k + 1)`, so the full frame is `x = 0, w = W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub out_h: usize,
    pub out_w: usize,
}

impl CropSpec {
    pub fn full_frame(height: usize, width: usize) -> Self {
        Self::resize_to(height, width, height, width)
    }

    /// Whole-frame window resized to `(out_h, out_w)`.
    pub fn resize_to(height: usize, width: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            w: width as f64,
            h: height as f64,
            out_h,
            out_w,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        // Sampled windows may overshoot the frame by float rounding only.
        const SLACK: f64 = 1e-9;
        let ok = self.x >= -SLACK
            && self.y >= -SLACK
            && self.w >= 1.0 - SLACK
            && self.h >= 1.0 - SLACK
            && self.x + self.w <= width as f64 + SLACK
            && self.y + self.h <= height as f64 + SLACK
            && self.out_h >= 1
            && self.out_w >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "crop {self:?} invalid for {height}x{width} image"
            )))
        }
    }
}

/// Rotation/scale/shift about a pivot, applied as an inverse-mapped bilinear warp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub dx: f64,
    pub dy: f64,
    /// Degrees.
    pub theta: f64,
    pub scale: f64,
    /// Pivot `(x, y)` in pixel-index coordinates.
    pub center: (f64, f64),
}

impl AffineParams {
    pub fn identity_about(height: usize, width: usize) -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            theta: 0.0,
            scale: 1.0,
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        }
    }
}

/// Sparse bilinear sampling operator: every output pixel reads up to four
/// source pixels, identically for each channel.
#[derive(Debug, Clone)]
pub(crate) struct Resampler {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    taps: Vec<[(usize, f64); 4]>,
}

impl Resampler {
    fn build(
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        zero_fill: bool,
        mut source: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut taps = Vec::with_capacity(out_h * out_w);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let (mut sx, mut sy) = source(oy, ox);
                let mut entry = [(0usize, 0.0f64); 4];
                if !zero_fill {
                    sx = sx.clamp(0.0, (in_w - 1) as f64);
                    sy = sy.clamp(0.0, (in_h - 1) as f64);
                }
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let corners = [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x0 + 1.0, y0, fx * (1.0 - fy)),
                    (x0, y0 + 1.0, (1.0 - fx) * fy),
                    (x0 + 1.0, y0 + 1.0, fx * fy),
                ];
                for (slot, &(cx, cy, wgt)) in entry.iter_mut().zip(&corners) {
                    if wgt == 0.0 {
                        continue;
                    }
                    let inside = cx >= 0.0 && cy >= 0.0 && cx < in_w as f64 && cy < in_h as f64;
                    if inside {
                        *slot = (cy as usize * in_w + cx as usize, wgt);
                    }
                }
                taps.push(entry);
            }
        }
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            taps,
        }
    }

    pub(crate) fn crop(in_h: usize, in_w: usize, spec: &CropSpec) -> Self {
        let sx = spec.w / spec.out_w as f64;
        let sy = spec.h / spec.out_h as f64;
        Self::build(in_h, in_w, spec.out_h, spec.out_w, false, |oy, ox| {
            (
                spec.x + (ox as f64 + 0.5) * sx - 0.5,
                spec.y + (oy as f64 + 0.5) * sy - 0.5,
            )
        })
    }

    pub(crate) fn affine(h: usize, w: usize, p: &AffineParams) -> Self {
        let (sin, cos) = p.theta.to_radians().sin_cos();
        let (cx, cy) = p.center;
        Self::build(h, w, h, w, true, |oy, ox| {
            // Forward map: out = c + s R (src - c) + d; invert it.
            let qx = ox as f64 - cx - p.dx;
            let qy = oy as f64 - cy - p.dy;
            let rx = (cos * qx + sin * qy) / p.scale;
            let ry = (-sin * qx + cos * qy) / p.scale;
            (cx + rx, cy + ry)
        })
    }

    pub(crate) fn apply(&self, src: &[f64]) -> Vec<f64> {
        debug_assert_eq!(src.len(), self.in_h * self.in_w * CHANNELS);
        let mut out = vec![0.0; self.out_h * self.out_w * CHANNELS];
        for (o, taps) in self.taps.iter().enumerate() {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for &(i, wgt) in taps {
                    acc += wgt * src[i * CHANNELS + c];
                }
                out[o * CHANNELS + c] = acc;
            }
        }
        out
    }

    pub(crate) fn adjoint(&self, cot: &[f64]) -> Vec<f64> {
        debug_assert_eq!(cot.len(), self.out_h * self.out_w * CHANNELS);
        let mut grad = vec![0.0; self.in_h * self.in_w * CHANNELS];
        for (o, taps) in self.taps.iter().enumerate() {
            for &(i, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                for c in 0..CHANNELS {
                    grad[i * CHANNELS + c] += wgt * cot[o * CHANNELS + c];
                }
            }
        }
        grad
    }
}

pub fn crop_resize(img: &Image, spec: &CropSpec) -> Result<Image> {
    spec.validate(img.height(), img.width())?;
    let op = Resampler::crop(img.height(), img.width(), spec);
    Image::from_clamped(spec.out_h, spec.out_w, op.apply(img.data()))
}

/// Adjoint of [`crop_resize`] for an input of size `dims = (height, width)`.
pub fn crop_resize_vjp(dims: (usize, usize), spec: &CropSpec, cot: &ImageGrad) -> Result<ImageGrad> {
    spec.validate(dims.0, dims.1)?;
    if cot.dims() != (spec.out_h, spec.out_w) {
        return Err(Error::shape(format!(
            "crop cotangent {:?} vs output {:?}",
            cot.dims(),
            (spec.out_h, spec.out_w)
        )));
    }
    let op = Resampler::crop(dims.0, dims.1, spec);
    ImageGrad::new(dims.0, dims.1, op.adjoint(&cot.data))
}

fn check_scale(p: &AffineParams) -> Result<()> {
    if p.scale > 0.0 && p.scale.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("affine scale {} must be positive", p.scale)))
    }
}

pub fn warp_affine(img: &Image, p: &AffineParams) -> Result<Image> {
    check_scale(p)?;
    let op = Resampler::affine(img.height(), img.width(), p);
    Image::from_clamped(img.height(), img.width(), op.apply(img.data()))
}

pub fn warp_affine_vjp(p: &AffineParams, cot: &ImageGrad) -> Result<ImageGrad> {
    check_scale(p)?;
    let op = Resampler::affine(cot.height, cot.width, p);
    ImageGrad::new(cot.height, cot.width, op.adjoint(&cot.data))
}

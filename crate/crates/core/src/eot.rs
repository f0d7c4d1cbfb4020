//! Expectation-over-transformation: sampled physical nuisance chains.
//!
//! A [`TransformChain`] is fully materialized when sampled (noise field and
//! dropout pattern included), so applying it is a pure, replayable function
//! with an exact reverse pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageGrad, CHANNELS};
use crate::ops::{dct_lowpass, dct_lowpass_vjp, warp_affine, warp_affine_vjp, AffineParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EotToggles {
    pub h_shift: bool,
    pub v_shift: bool,
    pub rotation: bool,
    pub scale: bool,
    pub brightness: bool,
    pub contrast: bool,
    pub noise: bool,
    pub dct: bool,
    pub dropout: bool,
}

impl Default for EotToggles {
    fn default() -> Self {
        Self::all(true)
    }
}

impl EotToggles {
    pub fn all(on: bool) -> Self {
        Self {
            h_shift: on,
            v_shift: on,
            rotation: on,
            scale: on,
            brightness: on,
            contrast: on,
            noise: on,
            dct: on,
            dropout: on,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EotConfig {
    /// Maximum horizontal shift as a fraction of the width.
    pub h_shift_frac: f64,
    /// Maximum vertical shift as a fraction of the height.
    pub v_shift_frac: f64,
    /// Rotation bound in degrees (symmetric).
    pub rotation_deg: f64,
    pub scale_range: (f64, f64),
    /// Per-element uniform noise bound.
    pub noise: f64,
    /// Additive brightness bound.
    pub brightness: f64,
    pub contrast_range: (f64, f64),
    pub dct_keep: f64,
    pub dropout_prob: f64,
    pub enabled: EotToggles,
}

impl Default for EotConfig {
    fn default() -> Self {
        Self {
            h_shift_frac: 0.1,
            v_shift_frac: 0.1,
            rotation_deg: 20.0,
            scale_range: (0.25, 1.25),
            noise: 16.0 / 255.0,
            brightness: 0.1,
            contrast_range: (0.8, 1.2),
            dct_keep: 0.4,
            dropout_prob: 0.1,
            enabled: EotToggles::default(),
        }
    }
}

impl EotConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: EotToggles::all(false),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("eot: invalid {what}")));
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.h_shift_frac) || !nonneg(self.v_shift_frac) {
            return bad("shift fraction");
        }
        if !nonneg(self.rotation_deg) {
            return bad("rotation bound");
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.0 <= self.scale_range.1) {
            return bad("scale range");
        }
        if !nonneg(self.noise) || !nonneg(self.brightness) {
            return bad("noise/brightness bound");
        }
        if !(self.contrast_range.0 >= 0.0 && self.contrast_range.0 <= self.contrast_range.1) {
            return bad("contrast range");
        }
        if !(self.dct_keep > 0.0 && self.dct_keep <= 1.0) {
            return bad("dct keep fraction");
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return bad("dropout probability");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Warp(AffineParams),
    Brightness(f64),
    Contrast(f64),
    /// Per-element additive noise, `H·W·3` values.
    Noise(Vec<f64>),
    DctLowpass(f64),
    /// `true` marks a dropped pixel (all channels zeroed).
    Dropout(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformChain {
    pub height: usize,
    pub width: usize,
    pub transforms: Vec<Transform>,
}

impl TransformChain {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            transforms: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    bound * (2.0 * rng.gen::<f64>() - 1.0)
}

fn in_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Draws one parameter set per enabled transform for `height × width` inputs.
///
/// Application order: warp (shift, rotation, scale about the frame centre),
/// brightness, contrast, noise, DCT low-pass, dropout.
pub fn sample_chain<R: Rng + ?Sized>(rng: &mut R, cfg: &EotConfig, height: usize, width: usize) -> TransformChain {
    let on = cfg.enabled;
    let mut transforms = Vec::new();

    if on.h_shift || on.v_shift || on.rotation || on.scale {
        let mut p = AffineParams::identity_about(height, width);
        if on.h_shift {
            let mag = rng.gen::<f64>() * cfg.h_shift_frac * width as f64;
            p.dx = if rng.gen::<bool>() { mag } else { -mag };
        }
        if on.v_shift {
            let mag = rng.gen::<f64>() * cfg.v_shift_frac * height as f64;
            p.dy = if rng.gen::<bool>() { mag } else { -mag };
        }
        if on.rotation {
            p.theta = symmetric(rng, cfg.rotation_deg);
        }
        if on.scale {
            p.scale = in_range(rng, cfg.scale_range);
        }
        transforms.push(Transform::Warp(p));
    }
    if on.brightness {
        transforms.push(Transform::Brightness(symmetric(rng, cfg.brightness)));
    }
    if on.contrast {
        transforms.push(Transform::Contrast(in_range(rng, cfg.contrast_range)));
    }
    if on.noise {
        let n = height * width * CHANNELS;
        transforms.push(Transform::Noise((0..n).map(|_| symmetric(rng, cfg.noise)).collect()));
    }
    if on.dct {
        transforms.push(Transform::DctLowpass(cfg.dct_keep));
    }
    if on.dropout {
        let drops = (0..height * width)
            .map(|_| rng.gen::<f64>() < cfg.dropout_prob)
            .collect();
        transforms.push(Transform::Dropout(drops));
    }
    TransformChain {
        height,
        width,
        transforms,
    }
}

/// Pre-clamp values inside `[0, 1]` pass gradient; saturated ones do not.
fn clamp_stage(values: Vec<f64>) -> (Vec<f64>, Vec<bool>) {
    let pass = values.iter().map(|v| (0.0..=1.0).contains(v)).collect();
    let out = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    (out, pass)
}

enum Tape {
    Linear,
    Clamp(Vec<bool>),
}

fn forward(img: &Image, chain: &TransformChain) -> Result<(Image, Vec<Tape>)> {
    if img.dims() != (chain.height, chain.width) {
        return Err(Error::shape(format!(
            "chain sampled for {:?}, image is {:?}",
            (chain.height, chain.width),
            img.dims()
        )));
    }
    let (h, w) = img.dims();
    let mut cur = img.clone();
    let mut tape = Vec::with_capacity(chain.transforms.len());
    for t in &chain.transforms {
        let (next, entry) = match t {
            Transform::Warp(p) => (warp_affine(&cur, p)?, Tape::Linear),
            Transform::Brightness(db) => {
                let (v, pass) = clamp_stage(cur.data().iter().map(|x| x + db).collect());
                (Image::new(h, w, v)?, Tape::Clamp(pass))
            }
            Transform::Contrast(c) => {
                let (v, pass) = clamp_stage(cur.data().iter().map(|x| c * x).collect());
                (Image::new(h, w, v)?, Tape::Clamp(pass))
            }
            Transform::Noise(noise) => {
                let (v, pass) = clamp_stage(cur.data().iter().zip(noise).map(|(x, n)| x + n).collect());
                (Image::new(h, w, v)?, Tape::Clamp(pass))
            }
            Transform::DctLowpass(keep) => {
                // The low-pass can ring outside [0, 1]; clamp like the other stages.
                let low = dct_lowpass(&cur.to_grad(), *keep)?;
                let (v, pass) = clamp_stage(low.data);
                (Image::new(h, w, v)?, Tape::Clamp(pass))
            }
            Transform::Dropout(drops) => {
                let mut v = cur.into_data();
                for (px, &d) in drops.iter().enumerate() {
                    if d {
                        v[px * CHANNELS..(px + 1) * CHANNELS].fill(0.0);
                    }
                }
                (Image::new(h, w, v)?, Tape::Linear)
            }
        };
        cur = next;
        tape.push(entry);
    }
    Ok((cur, tape))
}

pub fn apply_chain(img: &Image, chain: &TransformChain) -> Result<Image> {
    forward(img, chain).map(|(out, _)| out)
}

/// Reverse pass of [`apply_chain`] at `img`.
pub fn apply_chain_vjp(img: &Image, chain: &TransformChain, cot: &ImageGrad) -> Result<ImageGrad> {
    if cot.dims() != img.dims() {
        return Err(Error::shape("chain cotangent shape"));
    }
    let (_, tape) = forward(img, chain)?;
    let mut g = cot.clone();
    for (t, entry) in chain.transforms.iter().zip(&tape).rev() {
        if let Tape::Clamp(pass) = entry {
            for (gv, &p) in g.data.iter_mut().zip(pass) {
                if !p {
                    *gv = 0.0;
                }
            }
        }
        g = match t {
            Transform::Warp(p) => warp_affine_vjp(p, &g)?,
            Transform::Brightness(_) | Transform::Noise(_) => g,
            Transform::Contrast(c) => {
                g.data.iter_mut().for_each(|v| *v *= c);
                g
            }
            Transform::DctLowpass(keep) => dct_lowpass_vjp(&g, *keep)?,
            Transform::Dropout(drops) => {
                for (px, &d) in drops.iter().enumerate() {
                    if d {
                        g.data[px * CHANNELS..(px + 1) * CHANNELS].fill(0.0);
                    }
                }
                g
            }
        };
    }
    Ok(g)
}

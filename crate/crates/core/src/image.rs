//! Shared raster types and the composition / budget primitives.
//!
//! All rasters are row-major. Colour rasters interleave three channels per
//! pixel (`(y * width + x) * 3 + c`); masks and fields store one value per
//! pixel.

use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An RGB image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// An unconstrained tensor with the shape of an [`Image`]; carries gradients
/// and cotangents.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrad {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Binary patch occupancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

/// Non-negative scalar field whose super-level set `{phi >= threshold}` is the
/// raw patch mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    height: usize,
    width: usize,
    data: Vec<f64>,
    pub threshold: f64,
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("empty raster {height}x{width}")));
    }
    Ok(())
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image by clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn to_grad(&self) -> ImageGrad {
        ImageGrad {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    /// Loads an 8-bit RGB PNG, mapping `0..=255` linearly onto `[0, 1]`.
    pub fn load_png(path: &Path) -> Result<Self> {
        let io_err = |e: image::ImageError| Error::ImageIo {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let rgb = image::open(path).map_err(io_err)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    /// Quantizes to 8 bits (round to nearest) and writes an RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::ImageIo {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn save_gray_png(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    image::save_buffer(path, &bytes, width as u32, height as u32, image::ExtendedColorType::L8).map_err(|e| {
        Error::ImageIo {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}

impl ImageGrad {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn add_assign(&mut self, other: &ImageGrad) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn dot(&self, other: &ImageGrad) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "expected {} mask cells, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    /// Axis-aligned filled rectangle, clipped to the frame.
    pub fn rect(height: usize, width: usize, x0: i64, y0: i64, w: i64, h: i64) -> Self {
        Self::from_fn(height, width, |y, x| {
            let (x, y) = (x as i64, y as i64);
            x >= x0 && x < x0 + w && y >= y0 && y < y0 + h
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let values: Vec<f64> = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        save_gray_png(path, self.height, self.width, &values)
    }
}

impl PotentialField {
    pub fn new(height: usize, width: usize, data: Vec<f64>, threshold: f64) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "expected {} field cells, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invalid(format!("field value {v} is negative")));
        }
        if !(threshold >= 0.0) {
            return Err(Error::invalid(format!("threshold {threshold} is negative")));
        }
        Ok(Self {
            height,
            width,
            data,
            threshold,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Writes the field as grayscale, scaled so the field maximum maps to white.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let max = self.data.iter().cloned().fold(0.0_f64, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let values: Vec<f64> = self.data.iter().map(|v| v * scale).collect();
        save_gray_png(path, self.height, self.width, &values)
    }
}

/// `I ⊙ (1 − M) + δ ⊙ M`.
pub fn compose_adversarial(scene: &Image, patch: &Image, mask: &Mask) -> Result<Image> {
    if scene.dims() != patch.dims() || scene.dims() != mask.dims() {
        return Err(Error::shape(format!(
            "compose: scene {:?}, patch {:?}, mask {:?}",
            scene.dims(),
            patch.dims(),
            mask.dims()
        )));
    }
    let mut data = scene.data.clone();
    for (px, &on) in mask.data.iter().enumerate() {
        if on {
            let base = px * CHANNELS;
            data[base..base + CHANNELS].copy_from_slice(&patch.data[base..base + CHANNELS]);
        }
    }
    Ok(Image {
        height: scene.height,
        width: scene.width,
        data,
    })
}

/// Projects `patch` onto `[I − ε, I + ε] ∩ [0, 1]` elementwise.
pub fn clip_budget(patch: &Image, scene: &Image, epsilon: f64) -> Result<Image> {
    if patch.dims() != scene.dims() {
        return Err(Error::shape(format!(
            "clip: patch {:?} vs scene {:?}",
            patch.dims(),
            scene.dims()
        )));
    }
    clip_values(&patch.data, scene, epsilon)
}

/// Same projection for raw (possibly out-of-range) candidate values.
pub(crate) fn clip_values(values: &[f64], scene: &Image, epsilon: f64) -> Result<Image> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid(format!("budget {epsilon} outside (0, 1]")));
    }
    let data = values
        .iter()
        .zip(&scene.data)
        .map(|(&d, &i)| {
            let lo = (i - epsilon).max(0.0);
            let hi = (i + epsilon).min(1.0);
            d.clamp(lo, hi)
        })
        .collect();
    Ok(Image {
        height: scene.height,
        width: scene.width,
        data,
    })
}

pub fn mask_area(mask: &Mask) -> usize {
    mask.data.iter().filter(|&&b| b).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(v: [f64; 3]) -> Image {
        Image::new(1, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn compose_identity_and_replacement() {
        let scene = Image::from_fn(4, 5, |y, x, c| (y + x + c) as f64 / 12.0).unwrap();
        let patch = Image::filled(4, 5, 0.9).unwrap();
        assert_eq!(compose_adversarial(&scene, &patch, &Mask::empty(4, 5)).unwrap(), scene);
        assert_eq!(compose_adversarial(&scene, &patch, &Mask::full(4, 5)).unwrap(), patch);
    }

    #[test]
    fn compose_single_pixel() {
        let out = compose_adversarial(&px([0.2; 3]), &px([0.8; 3]), &Mask::full(1, 1)).unwrap();
        assert_eq!(out.data(), &[0.8, 0.8, 0.8]);
    }

    #[test]
    fn compose_rejects_mismatch() {
        let a = Image::filled(2, 2, 0.0).unwrap();
        let b = Image::filled(2, 3, 0.0).unwrap();
        assert!(matches!(
            compose_adversarial(&a, &b, &Mask::empty(2, 2)),
            Err(Error::Shape(_))
        ));
        assert!(compose_adversarial(&a, &a, &Mask::empty(3, 2)).is_err());
    }

    #[test]
    fn clip_examples() {
        let eps = 16.0 / 255.0;
        let scene = px([0.5; 3]);
        assert_eq!(clip_budget(&scene, &scene, eps).unwrap(), scene);

        let out = clip_budget(&px([0.9; 3]), &scene, eps).unwrap();
        assert!((out.get(0, 0, 0) - (0.5 + eps)).abs() < 1e-15);
        assert!((out.get(0, 0, 0) - 0.5627).abs() < 1e-4);

        let out = clip_values(&[-0.2; 3], &px([0.01; 3]), eps).unwrap();
        assert_eq!(out.get(0, 0, 1), 0.0);
    }

    #[test]
    fn clip_rejects_bad_budget() {
        let scene = px([0.5; 3]);
        assert!(clip_budget(&scene, &scene, 0.0).is_err());
        assert!(clip_budget(&scene, &scene, 1.5).is_err());
    }

    #[test]
    fn area_examples() {
        assert_eq!(mask_area(&Mask::empty(10, 10)), 0);
        assert_eq!(mask_area(&Mask::full(120, 120)), 14_400);
        assert_eq!(mask_area(&Mask::from_fn(4, 4, |y, x| (x + y) % 2 == 0)), 8);
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, vec![0.0, 1.1, 0.0]).is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
        assert!(Image::new(1, 1, vec![0.0; 2]).is_err());
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Image::from_fn(3, 4, |y, x, c| (y * 4 + x + c) as f64 / 17.0).unwrap();
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.dims(), (3, 4));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    fn arb_triplet() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
        (
            prop::collection::vec(0.0..=1.0f64, 12),
            prop::collection::vec(0.0..=1.0f64, 12),
            prop::collection::vec(any::<bool>(), 4),
        )
    }

    proptest! {
        #[test]
        fn compose_idempotent((i, d, m) in arb_triplet()) {
            let scene = Image::new(2, 2, i).unwrap();
            let patch = Image::new(2, 2, d).unwrap();
            let mask = Mask::new(2, 2, m).unwrap();
            let once = compose_adversarial(&scene, &patch, &mask).unwrap();
            let twice = compose_adversarial(&once, &patch, &mask).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn clip_is_projection(
            raw in prop::collection::vec(-0.5..1.5f64, 12),
            i in prop::collection::vec(0.0..=1.0f64, 12),
            eps in 0.001..=1.0f64,
        ) {
            let scene = Image::new(2, 2, i).unwrap();
            let once = clip_values(&raw, &scene, eps).unwrap();
            let twice = clip_budget(&once, &scene, eps).unwrap();
            prop_assert_eq!(&once, &twice);
            for (d, s) in once.data().iter().zip(scene.data()) {
                prop_assert!((d - s).abs() <= eps + 1e-15);
                prop_assert!((0.0..=1.0).contains(d));
            }
        }
    }
}

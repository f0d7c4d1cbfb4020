//! Printability terms for physical-mode patches: total variation and
//! non-printability score, both restricted to the mask support.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, ImageGrad, Mask, CHANNELS};

const TV_FLOOR: f64 = 1e-8;

/// Printable colours, RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    colors: Vec<[f64; 3]>,
}

impl Palette {
    pub fn new(colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::invalid("palette is empty"));
        }
        if colors.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("palette values must lie in [0, 1]"));
        }
        Ok(Self { colors })
    }

    /// 27-colour grid over `{0.1, 0.5, 0.9}³`.
    pub fn default_grid() -> Self {
        let levels = [0.1, 0.5, 0.9];
        let mut colors = Vec::with_capacity(27);
        for r in levels {
            for g in levels {
                for b in levels {
                    colors.push([r, g, b]);
                }
            }
        }
        Self { colors }
    }

    /// One `r g b` triple per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut colors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("palette line {}: {e}", n + 1)))?;
            let [r, g, b] = vals[..] else {
                return Err(Error::invalid(format!(
                    "palette line {}: expected 3 values, got {}",
                    n + 1,
                    vals.len()
                )));
            };
            colors.push([r, g, b]);
        }
        Self::new(colors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }
}

fn check(patch: &Image, mask: &Mask) -> Result<()> {
    if patch.dims() != mask.dims() {
        return Err(Error::shape(format!(
            "patch {:?} vs mask {:?}",
            patch.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// Isotropic TV over masked pixels, per channel; differences to neighbours
/// outside the mask count as zero.
pub fn tv_loss(patch: &Image, mask: &Mask) -> Result<f64> {
    tv_loss_grad(patch, mask).map(|(v, _)| v)
}

pub fn tv_loss_grad(patch: &Image, mask: &Mask) -> Result<(f64, ImageGrad)> {
    check(patch, mask)?;
    let (h, w) = patch.dims();
    let mut grad = ImageGrad::zeros(h, w);
    let mut total = 0.0;
    let idx = |y: usize, x: usize, c: usize| (y * w + x) * CHANNELS + c;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let right = x + 1 < w && mask.get(y, x + 1);
            let down = y + 1 < h && mask.get(y + 1, x);
            for c in 0..CHANNELS {
                let here = patch.get(y, x, c);
                let dx = if right { patch.get(y, x + 1, c) - here } else { 0.0 };
                let dy = if down { patch.get(y + 1, x, c) - here } else { 0.0 };
                let t = (dx * dx + dy * dy + TV_FLOOR).sqrt();
                total += t;
                grad.data[idx(y, x, c)] -= (dx + dy) / t;
                if right {
                    grad.data[idx(y, x + 1, c)] += dx / t;
                }
                if down {
                    grad.data[idx(y + 1, x, c)] += dy / t;
                }
            }
        }
    }
    Ok((total, grad))
}

/// Sum over masked pixels of the distance to the nearest palette colour.
pub fn nps_loss(patch: &Image, mask: &Mask, palette: &Palette) -> Result<f64> {
    nps_loss_grad(patch, mask, palette).map(|(v, _)| v)
}

pub fn nps_loss_grad(patch: &Image, mask: &Mask, palette: &Palette) -> Result<(f64, ImageGrad)> {
    check(patch, mask)?;
    let (h, w) = patch.dims();
    let mut grad = ImageGrad::zeros(h, w);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let px = [patch.get(y, x, 0), patch.get(y, x, 1), patch.get(y, x, 2)];
            let (dist, nearest) = palette
                .colors
                .iter()
                .map(|c| {
                    let d2: f64 = (0..3).map(|i| (px[i] - c[i]).powi(2)).sum();
                    (d2.sqrt(), c)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("palette is non-empty");
            total += dist;
            if dist > 0.0 {
                for c in 0..CHANNELS {
                    grad.data[(y * w + x) * CHANNELS + c] = (px[c] - nearest[c]) / dist;
                }
            }
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_constant_patch_is_floor_only() {
        let patch = Image::filled(6, 6, 0.3).unwrap();
        let mask = Mask::full(6, 6);
        let v = tv_loss(&patch, &mask).unwrap();
        assert!(v <= 36.0 * 3.0 * TV_FLOOR.sqrt() + 1e-12);
    }

    #[test]
    fn tv_vertical_edge_counts_rows() {
        // Direct summation: a unit step between columns 3 and 4 in one
        // channel contributes ~1 per row inside the mask.
        let h = 7;
        let patch = Image::from_fn(h, 8, |_, x, c| if c == 0 && x >= 4 { 1.0 } else { 0.0 }).unwrap();
        let mask = Mask::full(h, 8);
        let v = tv_loss(&patch, &mask).unwrap();
        let floor = (h * 8 * 3) as f64 * TV_FLOOR.sqrt();
        assert!((v - h as f64).abs() <= floor + 1e-9, "{v}");
    }

    #[test]
    fn tv_and_nps_empty_mask() {
        let patch = Image::from_fn(4, 4, |y, x, c| ((y + x + c) % 3) as f64 / 2.0).unwrap();
        let mask = Mask::empty(4, 4);
        assert_eq!(tv_loss(&patch, &mask).unwrap(), 0.0);
        assert_eq!(nps_loss(&patch, &mask, &Palette::default_grid()).unwrap(), 0.0);
    }

    #[test]
    fn nps_examples() {
        let palette = Palette::new(vec![[0.1, 0.5, 0.9], [0.0, 0.0, 0.0]]).unwrap();
        let patch = Image::from_fn(2, 2, |y, _, c| if y == 0 { [0.1, 0.5, 0.9][c] } else { 0.0 }).unwrap();
        assert_eq!(nps_loss(&patch, &Mask::full(2, 2), &palette).unwrap(), 0.0);

        let one = Image::new(1, 1, vec![0.4, 0.5, 0.9]).unwrap();
        let v = nps_loss(&one, &Mask::full(1, 1), &palette).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let patch = Image::from_fn(5, 5, |y, x, c| {
            0.2 + 0.5 * (((y * 7 + x * 3 + c * 5) % 11) as f64 / 11.0)
        })
        .unwrap();
        let mask = Mask::from_fn(5, 5, |y, x| (1..4).contains(&y) && x >= 1);
        let palette = Palette::default_grid();
        let (_, gt) = tv_loss_grad(&patch, &mask).unwrap();
        let (_, gn) = nps_loss_grad(&patch, &mask, &palette).unwrap();
        let h = 1e-6;
        for i in 0..patch.data().len() {
            let mut p = patch.data().to_vec();
            let mut m = patch.data().to_vec();
            p[i] += h;
            m[i] -= h;
            let (ip, im) = (Image::new(5, 5, p).unwrap(), Image::new(5, 5, m).unwrap());
            let fd_t = (tv_loss(&ip, &mask).unwrap() - tv_loss(&im, &mask).unwrap()) / (2.0 * h);
            let fd_n = (nps_loss(&ip, &mask, &palette).unwrap() - nps_loss(&im, &mask, &palette).unwrap()) / (2.0 * h);
            assert!((fd_t - gt.data[i]).abs() < 1e-5, "tv {i}: {fd_t} vs {}", gt.data[i]);
            assert!((fd_n - gn.data[i]).abs() < 1e-5, "nps {i}: {fd_n} vs {}", gn.data[i]);
        }
    }

    #[test]
    fn palette_parsing() {
        let p = Palette::parse("# printable\n0 0 0\n\n1 1 1  # white\n").unwrap();
        assert_eq!(p.colors().len(), 2);
        assert!(Palette::parse("0 0\n").is_err());
        assert!(Palette::parse("").is_err());
        assert!(Palette::parse("0 0 2\n").is_err());
    }
}

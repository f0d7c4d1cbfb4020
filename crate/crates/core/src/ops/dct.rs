use crate::error::{Error, Result};
use crate::image::{ImageGrad, CHANNELS};

/// `Cᵀ P C` for the orthonormal DCT-II basis `C` of length `n`, with `P`
/// keeping frequencies `u < keep · n`. Symmetric and idempotent.
fn lowpass_projector(n: usize, keep: f64) -> Vec<f64> {
    let basis = |u: usize, i: usize| {
        let alpha = if u == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64 / (2 * n) as f64).cos()
    };
    let kept = (0..n).filter(|&u| (u as f64) < keep * n as f64).count().max(1);
    let mut proj = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..kept).map(|u| basis(u, i) * basis(u, j)).sum();
            proj[i * n + j] = v;
            proj[j * n + i] = v;
        }
    }
    proj
}

/// Per-channel 2-D DCT low-pass: coefficients with row frequency
/// `u ≥ keep_frac · H` or column frequency `v ≥ keep_frac · W` are zeroed.
///
/// The operator is linear, self-adjoint and idempotent, so it also serves as
/// its own vector-Jacobian product. Output is not clamped.
pub fn dct_lowpass(x: &ImageGrad, keep_frac: f64) -> Result<ImageGrad> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {keep_frac} outside (0, 1]")));
    }
    let (h, w) = x.dims();
    let ph = lowpass_projector(h, keep_frac);
    let pw = lowpass_projector(w, keep_frac);

    // Rows: tmp = X · Pw
    let mut tmp = vec![0.0; x.data.len()];
    for y in 0..h {
        for c in 0..CHANNELS {
            for j in 0..w {
                let mut acc = 0.0;
                for i in 0..w {
                    acc += x.data[(y * w + i) * CHANNELS + c] * pw[i * w + j];
                }
                tmp[(y * w + j) * CHANNELS + c] = acc;
            }
        }
    }
    // Columns: out = Ph · tmp
    let mut out = vec![0.0; x.data.len()];
    for yo in 0..h {
        for yi in 0..h {
            let p = ph[yo * h + yi];
            if p == 0.0 {
                continue;
            }
            let src = &tmp[yi * w * CHANNELS..(yi + 1) * w * CHANNELS];
            let dst = &mut out[yo * w * CHANNELS..(yo + 1) * w * CHANNELS];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += p * s;
            }
        }
    }
    ImageGrad::new(h, w, out)
}

pub fn dct_lowpass_vjp(cot: &ImageGrad, keep_frac: f64) -> Result<ImageGrad> {
    dct_lowpass(cot, keep_frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrad {
        ImageGrad::new(h, w, (0..h * w * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn max_diff(a: &ImageGrad, b: &ImageGrad) -> f64 {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn full_spectrum_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 7, 10);
        assert!(max_diff(&dct_lowpass(&x, 1.0).unwrap(), &x) <= 1e-10);
    }

    #[test]
    fn constant_survives() {
        let x = ImageGrad::new(6, 9, vec![0.42; 162]).unwrap();
        let out = dct_lowpass(&x, 0.01).unwrap();
        assert!(max_diff(&out, &x) <= 1e-12);
    }

    #[test]
    fn idempotent_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&mut rng, 8, 11);
        let u = random(&mut rng, 8, 11);
        let once = dct_lowpass(&x, 0.4).unwrap();
        let twice = dct_lowpass(&once, 0.4).unwrap();
        assert!(max_diff(&once, &twice) <= 1e-10);
        let lhs = once.dot(&u);
        let rhs = x.dot(&dct_lowpass_vjp(&u, 0.4).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10);
        // Something was actually removed.
        assert!(max_diff(&once, &x) > 1e-3);
    }

    #[test]
    fn rejects_bad_fraction() {
        let x = ImageGrad::zeros(2, 2);
        assert!(dct_lowpass(&x, 0.0).is_err());
        assert!(dct_lowpass(&x, 1.5).is_err());
    }
}

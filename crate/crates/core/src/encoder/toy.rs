use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Encoder, EncoderKind, EncoderShape, EncoderSpec, FeatureBundle};
use crate::error::{Error, Result};
use crate::image::{Image, ImageGrad, CHANNELS};
use crate::linalg::Matrix;

/// Deterministic stand-in for a vision transformer: optional 3×3 convolution
/// with 2×2 average pooling, then a per-patch linear token projection and a
/// linear head on the mean token.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    shape: EncoderShape,
    rows: usize,
    cols: usize,
    /// `[out][in][ky][kx]`, present for the convolutional variant.
    conv: Option<Vec<f64>>,
    /// `d × (ph · pw · 3)` token projection.
    proj: Matrix,
    /// `d_g × d` head.
    head: Matrix,
    tanh: bool,
}

fn uniform_unit_variance(rng: &mut ChaCha8Rng, fan_in: usize) -> f64 {
    let bound = 3f64.sqrt() / (fan_in as f64).sqrt();
    rng.gen_range(-bound..bound)
}

impl ToyEncoder {
    pub fn new(spec: &EncoderSpec) -> Result<Self> {
        let conv = match spec.kind {
            EncoderKind::ToyLinear => false,
            EncoderKind::ToyConv => true,
            EncoderKind::Bridged => return Err(Error::Config("bridged encoders are not toy encoders".into())),
        };
        let (h, w, rows, cols) = (spec.height, spec.width, spec.grid_rows, spec.grid_cols);
        if [h, w, rows, cols, spec.dim, spec.global_dim].contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let (fh, fw) = if conv {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Config(format!("toy-conv needs even input dims, got {h}x{w}")));
            }
            (h / 2, w / 2)
        } else {
            (h, w)
        };
        if fh % rows != 0 || fw % cols != 0 {
            return Err(Error::Config(format!(
                "token grid {rows}x{cols} does not tile a {fh}x{fw} feature map"
            )));
        }
        let patch_len = (fh / rows) * (fw / cols) * CHANNELS;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let conv = conv.then(|| {
            (0..CHANNELS * CHANNELS * 9)
                .map(|_| uniform_unit_variance(&mut rng, CHANNELS * 9))
                .collect()
        });
        let proj = Matrix::from_fn(spec.dim, patch_len, |_, _| uniform_unit_variance(&mut rng, patch_len));
        let head = Matrix::from_fn(spec.global_dim, spec.dim, |_, _| {
            uniform_unit_variance(&mut rng, spec.dim)
        });
        Ok(Self {
            shape: EncoderShape {
                height: h,
                width: w,
                tokens: rows * cols,
                dim: spec.dim,
                global_dim: spec.global_dim,
            },
            rows,
            cols,
            conv,
            proj,
            head,
            tanh: spec.tanh,
        })
    }

    fn feature_dims(&self) -> (usize, usize) {
        if self.conv.is_some() {
            (self.shape.height / 2, self.shape.width / 2)
        } else {
            (self.shape.height, self.shape.width)
        }
    }

    fn conv_forward(&self, kernel: &[f64], x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.shape.height, self.shape.width);
        let mut out = vec![0.0; x.len()];
        for y in 0..h {
            for xx in 0..w {
                for o in 0..CHANNELS {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let base = (sy as usize * w + sx as usize) * CHANNELS;
                            for i in 0..CHANNELS {
                                acc += kernel[((o * CHANNELS + i) * 3 + ky) * 3 + kx] * x[base + i];
                            }
                        }
                    }
                    out[(y * w + xx) * CHANNELS + o] = acc;
                }
            }
        }
        out
    }

    fn conv_adjoint(&self, kernel: &[f64], g: &[f64]) -> Vec<f64> {
        let (h, w) = (self.shape.height, self.shape.width);
        let mut out = vec![0.0; g.len()];
        for y in 0..h {
            for xx in 0..w {
                for o in 0..CHANNELS {
                    let go = g[(y * w + xx) * CHANNELS + o];
                    if go == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let base = (sy as usize * w + sx as usize) * CHANNELS;
                            for i in 0..CHANNELS {
                                out[base + i] += kernel[((o * CHANNELS + i) * 3 + ky) * 3 + kx] * go;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn pool(&self, x: &[f64]) -> Vec<f64> {
        let w = self.shape.width;
        let (fh, fw) = self.feature_dims();
        let mut out = vec![0.0; fh * fw * CHANNELS];
        for y in 0..fh {
            for xx in 0..fw {
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += x[((2 * y + dy) * w + 2 * xx + dx) * CHANNELS + c];
                        }
                    }
                    out[(y * fw + xx) * CHANNELS + c] = 0.25 * acc;
                }
            }
        }
        out
    }

    fn pool_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let (h, w) = (self.shape.height, self.shape.width);
        let (fh, fw) = self.feature_dims();
        let mut out = vec![0.0; h * w * CHANNELS];
        for y in 0..fh {
            for xx in 0..fw {
                for c in 0..CHANNELS {
                    let v = 0.25 * g[(y * fw + xx) * CHANNELS + c];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            out[((2 * y + dy) * w + 2 * xx + dx) * CHANNELS + c] = v;
                        }
                    }
                }
            }
        }
        out
    }

    /// Feature-map offsets of the entries of token `t`, in projection order.
    fn patch_indices(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        let (fh, fw) = self.feature_dims();
        let (ph, pw) = (fh / self.rows, fw / self.cols);
        let (gy, gx) = (t / self.cols, t % self.cols);
        (0..ph).flat_map(move |py| {
            (0..pw).flat_map(move |px| {
                let base = ((gy * ph + py) * fw + gx * pw + px) * CHANNELS;
                (0..CHANNELS).map(move |c| base + c)
            })
        })
    }

    fn feature_map(&self, img: &Image) -> Vec<f64> {
        match &self.conv {
            Some(k) => self.pool(&self.conv_forward(k, img.data())),
            None => img.data().to_vec(),
        }
    }

    /// Pre-activation token matrix `m × d`.
    fn pre_tokens(&self, fmap: &[f64]) -> Matrix {
        let (m, d) = (self.shape.tokens, self.shape.dim);
        let mut z = Matrix::zeros(m, d);
        let mut patch = Vec::with_capacity(self.proj.cols);
        for t in 0..m {
            patch.clear();
            patch.extend(self.patch_indices(t).map(|i| fmap[i]));
            for r in 0..d {
                let row = &self.proj.data[r * self.proj.cols..(r + 1) * self.proj.cols];
                z[(t, r)] = row.iter().zip(&patch).map(|(a, b)| a * b).sum();
            }
        }
        z
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.dims() != (self.shape.height, self.shape.width) {
            return Err(Error::shape(format!(
                "encoder expects {}x{}, got {:?}",
                self.shape.height,
                self.shape.width,
                img.dims()
            )));
        }
        Ok(())
    }
}

impl Encoder for ToyEncoder {
    fn shape(&self) -> EncoderShape {
        self.shape
    }

    fn encode(&self, img: &Image) -> Result<FeatureBundle> {
        self.check(img)?;
        let mut tokens = self.pre_tokens(&self.feature_map(img));
        if self.tanh {
            tokens.data.iter_mut().for_each(|v| *v = v.tanh());
        }
        let (m, d) = (self.shape.tokens, self.shape.dim);
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..m).map(|t| tokens[(t, j)]).sum::<f64>() / m as f64)
            .collect();
        let global = (0..self.shape.global_dim)
            .map(|r| (0..d).map(|j| self.head[(r, j)] * mean[j]).sum())
            .collect();
        Ok(FeatureBundle { global, local: tokens })
    }

    fn encode_vjp(&self, img: &Image, cot: &FeatureBundle) -> Result<ImageGrad> {
        self.check(img)?;
        let (m, d) = (self.shape.tokens, self.shape.dim);
        if cot.global.len() != self.shape.global_dim || (cot.local.rows, cot.local.cols) != (m, d) {
            return Err(Error::shape("feature cotangent does not match encoder shape"));
        }
        // Token cotangent: local part plus the head pulled back through the mean.
        let head_back: Vec<f64> = (0..d)
            .map(|j| {
                (0..self.shape.global_dim)
                    .map(|r| self.head[(r, j)] * cot.global[r])
                    .sum::<f64>()
                    / m as f64
            })
            .collect();
        let mut zbar = Matrix::from_fn(m, d, |t, j| cot.local[(t, j)] + head_back[j]);
        if self.tanh {
            let z = self.pre_tokens(&self.feature_map(img));
            for (g, zv) in zbar.data.iter_mut().zip(&z.data) {
                let th = zv.tanh();
                *g *= 1.0 - th * th;
            }
        }
        let (fh, fw) = self.feature_dims();
        let mut fbar = vec![0.0; fh * fw * CHANNELS];
        for t in 0..m {
            for (col, idx) in self.patch_indices(t).enumerate() {
                let mut acc = 0.0;
                for r in 0..d {
                    acc += self.proj[(r, col)] * zbar[(t, r)];
                }
                fbar[idx] += acc;
            }
        }
        let data = match &self.conv {
            Some(k) => self.conv_adjoint(k, &self.pool_adjoint(&fbar)),
            None => fbar,
        };
        ImageGrad::new(self.shape.height, self.shape.width, data)
    }
}

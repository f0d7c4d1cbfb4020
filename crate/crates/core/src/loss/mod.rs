//! Feature-alignment losses.
//!
//! For each surrogate encoder the global term is `1 − cos(g_adv, g_tar)` and
//! the local term compares the rank-`k` representations `f = U·diag(S)` of the
//! token matrices (tokens are rows), flattened row-major. The total is
//! `L = L_global + η · L_local`, summed over the ensemble.

mod svd;

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

pub use svd::{svd_vjp, thin_svd, truncated_svd, SvdFactors, SvdVjp, SPECTRUM_GUARD};

use crate::encoder::FeatureBundle;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// How token features enter the local term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalMode {
    /// Cosine between rank-`k` `U·diag(S)` representations.
    #[default]
    Svd,
    /// Cosine between the raw token matrices.
    Raw,
}

static ZERO_VECTOR_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_zero_vector() {
    if !ZERO_VECTOR_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("cosine similarity of a zero vector; treating it as 0");
    }
}

/// `u·v / (‖u‖‖v‖)`; a zero vector on either side yields 0.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine operands differ in length");
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        warn_zero_vector();
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Cosine and its gradient with respect to `u`.
fn cosine_with_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        warn_zero_vector();
        return (0.0, vec![0.0; u.len()]);
    }
    let c = dot(u, v) / (nu * nv);
    let grad = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - c * a / (nu * nu))
        .collect();
    (c, grad)
}

/// `f = U · diag(S)` of the rank-`k` SVD; `m × k`.
pub fn local_repr(x: &Matrix, k: usize) -> Result<Matrix> {
    let f = truncated_svd(x, k)?;
    Ok(Matrix::from_fn(f.u.rows, k, |i, j| f.u[(i, j)] * f.s[j]))
}

fn check_aligned(adv: &[FeatureBundle], tar: &[FeatureBundle]) -> Result<()> {
    if adv.len() != tar.len() {
        return Err(Error::shape(format!(
            "{} adversarial bundles vs {} target bundles",
            adv.len(),
            tar.len()
        )));
    }
    for (i, (a, t)) in adv.iter().zip(tar).enumerate() {
        if a.global.len() != t.global.len() || (a.local.rows, a.local.cols) != (t.local.rows, t.local.cols) {
            return Err(Error::shape(format!(
                "encoder {i}: adversarial and target bundle shapes differ"
            )));
        }
    }
    Ok(())
}

pub fn global_loss(adv: &[FeatureBundle], tar: &[FeatureBundle]) -> Result<f64> {
    check_aligned(adv, tar)?;
    Ok(adv
        .iter()
        .zip(tar)
        .map(|(a, t)| 1.0 - cosine(&a.global, &t.global))
        .sum())
}

pub fn local_loss(adv: &[FeatureBundle], tar: &[FeatureBundle], k: usize) -> Result<f64> {
    local_loss_with_mode(adv, tar, k, LocalMode::Svd)
}

pub fn local_loss_with_mode(adv: &[FeatureBundle], tar: &[FeatureBundle], k: usize, mode: LocalMode) -> Result<f64> {
    check_aligned(adv, tar)?;
    let mut total = 0.0;
    for (a, t) in adv.iter().zip(tar) {
        total += 1.0
            - match mode {
                LocalMode::Svd => cosine(&local_repr(&a.local, k)?.data, &local_repr(&t.local, k)?.data),
                LocalMode::Raw => cosine(&a.local.data, &t.local.data),
            };
    }
    Ok(total)
}

pub fn combined_loss(adv: &[FeatureBundle], tar: &[FeatureBundle], k: usize, eta: f64) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(Error::invalid(format!("loss weight {eta} must be >= 0")));
    }
    Ok(global_loss(adv, tar)? + eta * local_loss(adv, tar, k)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub global: f64,
    pub local: f64,
}

/// Per-encoder cosines, reported alongside the losses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderCosines {
    pub global: f64,
    pub local: f64,
}

#[derive(Debug, Clone)]
pub struct AlignmentGrad {
    pub terms: LossTerms,
    pub per_encoder: Vec<EncoderCosines>,
    /// Cotangent of the loss with respect to each adversarial bundle.
    pub cotangents: Vec<FeatureBundle>,
    pub guarded_pairs: usize,
}

/// Loss value plus its gradient with respect to the adversarial bundles.
pub fn alignment_loss_grad(
    adv: &[FeatureBundle],
    tar: &[FeatureBundle],
    k: usize,
    eta: f64,
    mode: LocalMode,
) -> Result<AlignmentGrad> {
    check_aligned(adv, tar)?;
    let mut terms = LossTerms::default();
    let mut per_encoder = Vec::with_capacity(adv.len());
    let mut cotangents = Vec::with_capacity(adv.len());
    let mut guarded_pairs = 0;

    for (a, t) in adv.iter().zip(tar) {
        let (cg, dg) = cosine_with_grad(&a.global, &t.global);
        terms.global += 1.0 - cg;
        let global: Vec<f64> = dg.into_iter().map(|v| -v).collect();

        let (cl, local) = match mode {
            LocalMode::Raw => {
                let (c, d) = cosine_with_grad(&a.local.data, &t.local.data);
                let grad = Matrix::from_vec(a.local.rows, a.local.cols, d.into_iter().map(|v| -eta * v).collect());
                (c, grad)
            }
            LocalMode::Svd => {
                let fa = truncated_svd(&a.local, k)?;
                let ft = truncated_svd(&t.local, k)?;
                let rep = |f: &SvdFactors| Matrix::from_fn(f.u.rows, k, |i, j| f.u[(i, j)] * f.s[j]);
                let (c, d) = cosine_with_grad(&rep(&fa).data, &rep(&ft).data);
                // df = −η ∂cos/∂f; then Ū = df·diag(S), S̄_j = Σ_i df_ij U_ij.
                let m = a.local.rows;
                let df = Matrix::from_vec(m, k, d.into_iter().map(|v| -eta * v).collect());
                let du = Matrix::from_fn(m, k, |i, j| df[(i, j)] * fa.s[j]);
                let ds: Vec<f64> = (0..k)
                    .map(|j| (0..m).map(|i| df[(i, j)] * fa.u[(i, j)]).sum())
                    .collect();
                let back = svd_vjp(&a.local, k, &du, &ds)?;
                guarded_pairs += back.guarded_pairs;
                (c, back.grad)
            }
        };
        terms.local += 1.0 - cl;
        per_encoder.push(EncoderCosines { global: cg, local: cl });
        cotangents.push(FeatureBundle { global, local });
    }
    terms.total = terms.global + eta * terms.local;
    Ok(AlignmentGrad {
        terms,
        per_encoder,
        cotangents,
        guarded_pairs,
    })
}

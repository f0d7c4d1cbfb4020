//! Reverse-mode products against central finite differences. Each check
//! returns labelled relative errors so that callers decide on the tolerance.

#![allow(dead_code)]

use patchfield::attack::{
    adversarial_loss_grad, mask_gradient, pipeline_loss_grad, sample_iteration, AttackConfig, IterationSample, Mode,
};
use patchfield::encoder::{make_toy_encoder, Encoder, EncoderKind, EncoderSpec, FeatureBundle};
use patchfield::eot::{apply_chain, apply_chain_vjp, sample_chain, EotConfig};
use patchfield::linalg::Matrix;
use patchfield::loss::{
    alignment_loss_grad, combined_loss, global_loss, local_loss_with_mode, svd_vjp, truncated_svd, LocalMode,
};
use patchfield::ops::{
    crop_resize, crop_resize_vjp, dct_lowpass, dct_lowpass_vjp, warp_affine, warp_affine_vjp, AffineParams, CropSpec,
};
use patchfield::{compose_adversarial, Image, ImageGrad, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn interior_image(r: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _, _| r.gen_range(0.15..0.85)).unwrap()
}

fn random_grad(r: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrad {
    ImageGrad::new(h, w, (0..h * w * 3).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` over every coordinate of `x`.
fn fd_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + STEP;
            let up = f(&p);
            p[i] = x[i] - STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn image_fd(img: &Image, mut f: impl FnMut(&Image) -> f64) -> Vec<f64> {
    let (h, w) = img.dims();
    fd_gradient(img.data(), |v| f(&Image::new(h, w, v.to_vec()).unwrap()))
}

fn toy(kind: EncoderKind, h: usize, w: usize, seed: u64, tanh: bool) -> Box<dyn Encoder> {
    let spec = EncoderSpec {
        grid_rows: 2,
        grid_cols: 2,
        dim: 6,
        global_dim: 5,
        tanh,
        ..EncoderSpec::toy(kind, h, w, seed)
    };
    Box::new(make_toy_encoder(&spec).unwrap())
}

fn random_bundle(r: &mut ChaCha8Rng, dg: usize, m: usize, d: usize) -> FeatureBundle {
    FeatureBundle {
        global: (0..dg).map(|_| r.gen_range(-1.0..1.0)).collect(),
        local: Matrix::from_fn(m, d, |_, _| r.gen_range(-1.0..1.0)),
    }
}

pub fn toy_encoders() -> Vec<(String, f64)> {
    let mut r = rng(1);
    let mut errs = Vec::new();
    for (kind, tanh) in [
        (EncoderKind::ToyLinear, false),
        (EncoderKind::ToyLinear, true),
        (EncoderKind::ToyConv, false),
        (EncoderKind::ToyConv, true),
    ] {
        let enc = toy(kind, 8, 8, 7, tanh);
        let x = interior_image(&mut r, 8, 8);
        let shape = enc.shape();
        let cot = random_bundle(&mut r, shape.global_dim, shape.tokens, shape.dim);
        let an = enc.encode_vjp(&x, &cot).unwrap();
        let fd = image_fd(&x, |img| {
            let f = enc.encode(img).unwrap();
            f.flatten().iter().zip(cot.flatten()).map(|(a, b)| a * b).sum()
        });
        errs.push((format!("{kind:?} tanh={tanh}"), rel_err(&fd, &an.data)));
    }
    errs
}

pub fn linear_operators() -> Vec<(String, f64)> {
    let mut r = rng(2);
    let mut errs = Vec::new();
    let x = interior_image(&mut r, 8, 10);
    let crop = CropSpec {
        x: 1.3,
        y: 0.7,
        w: 6.4,
        h: 5.9,
        out_h: 7,
        out_w: 9,
    };
    let cot = random_grad(&mut r, 7, 9);
    let an = crop_resize_vjp((8, 10), &crop, &cot).unwrap();
    let fd = image_fd(&x, |img| crop_resize(img, &crop).unwrap().to_grad().dot(&cot));
    errs.push(("crop_resize".to_string(), rel_err(&fd, &an.data)));

    let warp = AffineParams {
        dx: 0.8,
        dy: -1.1,
        theta: 13.0,
        scale: 0.85,
        center: (4.5, 3.5),
    };
    let cot = random_grad(&mut r, 8, 10);
    let an = warp_affine_vjp(&warp, &cot).unwrap();
    let fd = image_fd(&x, |img| warp_affine(img, &warp).unwrap().to_grad().dot(&cot));
    errs.push(("warp_affine".to_string(), rel_err(&fd, &an.data)));

    let an = dct_lowpass_vjp(&cot, 0.4).unwrap();
    let fd = image_fd(&x, |img| dct_lowpass(&img.to_grad(), 0.4).unwrap().dot(&cot));
    errs.push(("dct_lowpass".to_string(), rel_err(&fd, &an.data)));
    errs
}

pub fn eot_chains() -> Vec<(String, f64)> {
    let mut r = rng(3);
    let mut errs = Vec::new();
    for draw in 0..6 {
        let x = interior_image(&mut r, 8, 8);
        let chain = sample_chain(&mut r, &EotConfig::default(), 8, 8);
        let cot = random_grad(&mut r, 8, 8);
        let an = apply_chain_vjp(&x, &chain, &cot).unwrap();
        let fd = image_fd(&x, |img| apply_chain(img, &chain).unwrap().to_grad().dot(&cot));
        errs.push((format!("eot chain {draw}"), rel_err(&fd, &an.data)));
    }
    errs
}

pub fn svd_factors() -> Vec<(String, f64)> {
    let mut r = rng(4);
    let mut errs = Vec::new();
    for k in 1..=4 {
        let x = Matrix::from_fn(6, 4, |_, _| r.gen_range(-1.0..1.0));
        let du = Matrix::from_fn(6, k, |_, _| r.gen_range(-1.0..1.0));
        let ds: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let an = svd_vjp(&x, k, &du, &ds).unwrap();
        let fd = fd_gradient(&x.data, |v| {
            let f = truncated_svd(&Matrix::from_vec(6, 4, v.to_vec()), k).unwrap();
            let a: f64 = f.u.data.iter().zip(&du.data).map(|(p, q)| p * q).sum();
            a + f.s.iter().zip(&ds).map(|(p, q)| p * q).sum::<f64>()
        });
        errs.push((format!("svd k={k}"), rel_err(&fd, &an.grad.data)));
    }
    errs
}

pub fn alignment_losses() -> Vec<(String, f64)> {
    let mut r = rng(5);
    let mut errs = Vec::new();
    let (dg, m, d, k, eta) = (5, 6, 4, 3, 0.7);
    let adv: Vec<FeatureBundle> = (0..2).map(|_| random_bundle(&mut r, dg, m, d)).collect();
    let tar: Vec<FeatureBundle> = (0..2).map(|_| random_bundle(&mut r, dg, m, d)).collect();
    let flat: Vec<f64> = adv.iter().flat_map(|b| b.flatten()).collect();
    let unflat = |v: &[f64]| -> Vec<FeatureBundle> {
        let n = dg + m * d;
        (0..2)
            .map(|i| FeatureBundle {
                global: v[i * n..i * n + dg].to_vec(),
                local: Matrix::from_vec(m, d, v[i * n + dg..(i + 1) * n].to_vec()),
            })
            .collect()
    };
    for mode in [LocalMode::Svd, LocalMode::Raw] {
        let ag = alignment_loss_grad(&adv, &tar, k, eta, mode).unwrap();
        let an: Vec<f64> = ag.cotangents.iter().flat_map(|b| b.flatten()).collect();
        let fd = fd_gradient(&flat, |v| {
            let a = unflat(v);
            global_loss(&a, &tar).unwrap() + eta * local_loss_with_mode(&a, &tar, k, mode).unwrap()
        });
        errs.push((format!("combined {mode:?}"), rel_err(&fd, &an)));
    }
    // The combined value agrees with the gradient routine's value.
    let ag = alignment_loss_grad(&adv, &tar, k, eta, LocalMode::Svd).unwrap();
    let value = (ag.terms.total - combined_loss(&adv, &tar, k, eta).unwrap()).abs();
    errs.push(("combined value".to_string(), value));

    // Global-only and local-only gradients.
    let glob = fd_gradient(&flat, |v| global_loss(&unflat(v), &tar).unwrap());
    let zero_eta = alignment_loss_grad(&adv, &tar, k, 0.0, LocalMode::Svd).unwrap();
    let an: Vec<f64> = zero_eta.cotangents.iter().flat_map(|b| b.flatten()).collect();
    errs.push(("global".to_string(), rel_err(&glob, &an)));

    let local = fd_gradient(&flat, |v| {
        local_loss_with_mode(&unflat(v), &tar, k, LocalMode::Svd).unwrap()
    });
    let only_local = alignment_loss_grad(&adv, &tar, k, 1.0, LocalMode::Svd).unwrap();
    let an: Vec<f64> = only_local
        .cotangents
        .iter()
        .zip(&zero_eta.cotangents)
        .flat_map(|(a, g)| a.flatten().into_iter().zip(g.flatten()).map(|(x, y)| x - y))
        .collect();
    errs.push(("local".to_string(), rel_err(&local, &an)));
    errs
}

fn small_config(mode: Mode) -> AttackConfig {
    AttackConfig {
        rank: 2,
        mode,
        lambda_tv: 0.05,
        lambda_nps: 0.1,
        ..AttackConfig::default()
    }
}

pub fn full_pipeline() -> Vec<(String, f64)> {
    let mut r = rng(6);
    let mut errs = Vec::new();
    let scene = interior_image(&mut r, 8, 8);
    let target = interior_image(&mut r, 8, 8);
    let patch = interior_image(&mut r, 8, 8);
    let mask = Mask::from_fn(8, 8, |y, x| (2..7).contains(&y) && (1..6).contains(&x));
    let ensemble = vec![
        toy(EncoderKind::ToyLinear, 8, 8, 11, false),
        toy(EncoderKind::ToyConv, 8, 8, 12, true),
    ];
    for mode in [Mode::Digital, Mode::Physical] {
        let cfg = small_config(mode);
        for draw in 0..3 {
            let sample = sample_iteration(&mut r, &cfg, (8, 8), (3.5, 4.5));
            let pg = pipeline_loss_grad(&scene, &target, &patch, &mask, &sample, &ensemble, &cfg, None).unwrap();
            let fd = image_fd(&patch, |p| {
                pipeline_loss_grad(&scene, &target, p, &mask, &sample, &ensemble, &cfg, None)
                    .unwrap()
                    .total
            });
            assert_eq!(sample.chain.is_some(), mode == Mode::Physical);
            errs.push((
                format!("pipeline {mode:?} draw {draw}"),
                rel_err(&fd, &pg.grad_delta.data),
            ));
        }
    }
    errs
}

pub fn mask_sensitivity() -> Vec<(String, f64)> {
    // With M relaxed to [0, 1], ∂L/∂M_p = Σ_c (δ − I)_c ∂L/∂I_adv,c; the
    // attack-improving field is its negation.
    let mut r = rng(7);
    let scene = interior_image(&mut r, 8, 8);
    let target = interior_image(&mut r, 8, 8);
    let patch = interior_image(&mut r, 8, 8);
    let mask = Mask::from_fn(8, 8, |y, x| (y + x) % 3 == 0);
    let ensemble = vec![toy(EncoderKind::ToyLinear, 8, 8, 21, false)];
    let sample = IterationSample::identity(8, 8);
    let adv = compose_adversarial(&scene, &patch, &mask).unwrap();
    let ag = adversarial_loss_grad(&adv, &target, &sample, &ensemble, 2, 1.0, LocalMode::Svd).unwrap();
    let g = mask_gradient(&ag.grad_iadv, &scene, &patch).unwrap();

    let loss_at = |relaxed: &[f64]| {
        let data: Vec<f64> = (0..64 * 3)
            .map(|i| {
                let m = relaxed[i / 3];
                scene.data()[i] * (1.0 - m) + patch.data()[i] * m
            })
            .collect();
        let img = Image::new(8, 8, data).unwrap();
        adversarial_loss_grad(&img, &target, &sample, &ensemble, 2, 1.0, LocalMode::Svd)
            .unwrap()
            .terms
            .total
    };
    let m0: Vec<f64> = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let fd = fd_gradient(&m0, loss_at);
    let negated: Vec<f64> = g.iter().map(|v| -v).collect();
    vec![("mask sensitivity".to_string(), rel_err(&fd, &negated))]
}

/// Every check, in a fixed order.
pub fn all() -> Vec<(String, f64)> {
    [
        toy_encoders(),
        linear_operators(),
        eot_chains(),
        svd_factors(),
        alignment_losses(),
        full_pipeline(),
        mask_sensitivity(),
    ]
    .concat()
}

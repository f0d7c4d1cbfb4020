use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    physical::{nps_loss_grad, tv_loss_grad},
    Ablation, AttackConfig, AttackError, AttackResult, Mode, Palette, StopReason, TraceRow,
};
use crate::crop::{sample_naive_crop, sample_patch_crop};
use crate::encoder::{Encoder, EncoderShape, FeatureBundle};
use crate::eot::{apply_chain, apply_chain_vjp, sample_chain, TransformChain};
use crate::error::{Error, Result};
use crate::image::{clip_values, compose_adversarial, mask_area, Image, ImageGrad, Mask, CHANNELS};
use crate::loss::{alignment_loss_grad, EncoderCosines, LocalMode, LossTerms};
use crate::ops::{crop_resize, crop_resize_vjp, CropSpec};
use crate::potential::{build_field, generate_mask, update_field};
use crate::region::Region;

/// Random draws consumed by one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSample {
    pub adv_crop: CropSpec,
    pub tar_crop: CropSpec,
    pub chain: Option<TransformChain>,
}

impl IterationSample {
    /// Full-frame crops, no transforms.
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            adv_crop: CropSpec::full_frame(height, width),
            tar_crop: CropSpec::full_frame(height, width),
            chain: None,
        }
    }
}

pub fn sample_iteration<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &AttackConfig,
    (height, width): (usize, usize),
    center: (f64, f64),
) -> IterationSample {
    let (a, b) = cfg.crop_area;
    let adv_crop = if cfg.ablation == Ablation::NoPatchCrop {
        sample_naive_crop(rng, width, height, a, b, cfg.aspect_range)
    } else {
        sample_patch_crop(rng, width, height, center, a, b, cfg.aspect_range)
    };
    let tar_crop = sample_naive_crop(rng, width, height, a, b, cfg.aspect_range);
    let chain = cfg.eot_active().then(|| sample_chain(rng, &cfg.eot, height, width));
    IterationSample {
        adv_crop,
        tar_crop,
        chain,
    }
}

/// Maps `f` over `items`, one scoped thread per item when there are several.
/// Results keep input order, so reductions stay deterministic.
fn par_map<I: Sync, T: Send>(items: &[I], f: impl Fn(&I) -> Result<T> + Sync) -> Result<Vec<T>> {
    if items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|item| s.spawn(move || f(item))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("encoder worker panicked"))
            .collect()
    })
}

/// Resizes `x` to the encoder's input size when they differ.
pub(crate) fn fit_input(x: &Image, shape: &EncoderShape) -> Result<(Image, Option<CropSpec>)> {
    let (h, w) = x.dims();
    if (h, w) == (shape.height, shape.width) {
        return Ok((x.clone(), None));
    }
    let spec = CropSpec::resize_to(h, w, shape.height, shape.width);
    Ok((crop_resize(x, &spec)?, Some(spec)))
}

#[derive(Debug, Clone)]
pub struct AdversarialGrad {
    pub terms: LossTerms,
    pub per_encoder: Vec<EncoderCosines>,
    pub grad_iadv: ImageGrad,
    pub guarded_pairs: usize,
}

/// Alignment loss for one sampled crop/transform and its gradient with
/// respect to the full-size adversarial image.
pub fn adversarial_loss_grad(
    adv: &Image,
    target: &Image,
    sample: &IterationSample,
    ensemble: &[Box<dyn Encoder>],
    k: usize,
    eta: f64,
    mode: LocalMode,
) -> Result<AdversarialGrad> {
    let cropped = crop_resize(adv, &sample.adv_crop)?;
    let x = match &sample.chain {
        Some(chain) => apply_chain(&cropped, chain)?,
        None => cropped.clone(),
    };
    let xt = crop_resize(target, &sample.tar_crop)?;

    let forward = par_map(ensemble, |enc| {
        let shape = enc.shape();
        let (xa, spec) = fit_input(&x, &shape)?;
        let (xta, _) = fit_input(&xt, &shape)?;
        let fa = enc.encode(&xa)?;
        let ft = enc.encode(&xta)?;
        if !fa.is_finite() || !ft.is_finite() {
            return Err(Error::invalid("encoder produced non-finite features"));
        }
        Ok((xa, spec, fa, ft))
    })?;
    let adv_f: Vec<FeatureBundle> = forward.iter().map(|f| f.2.clone()).collect();
    let tar_f: Vec<FeatureBundle> = forward.iter().map(|f| f.3.clone()).collect();
    let ag = alignment_loss_grad(&adv_f, &tar_f, k, eta, mode)?;

    let idx: Vec<usize> = (0..ensemble.len()).collect();
    let grads = par_map(&idx, |&i| {
        let (xa, spec, _, _) = &forward[i];
        let g = ensemble[i].encode_vjp(xa, &ag.cotangents[i])?;
        match spec {
            Some(spec) => crop_resize_vjp(x.dims(), spec, &g),
            None => Ok(g),
        }
    })?;
    let (h, w) = x.dims();
    let mut gx = ImageGrad::zeros(h, w);
    for g in &grads {
        gx.add_assign(g);
    }
    if let Some(chain) = &sample.chain {
        gx = apply_chain_vjp(&cropped, chain, &gx)?;
    }
    let grad_iadv = crop_resize_vjp(adv.dims(), &sample.adv_crop, &gx)?;
    Ok(AdversarialGrad {
        terms: ag.terms,
        per_encoder: ag.per_encoder,
        grad_iadv,
        guarded_pairs: ag.guarded_pairs,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineGrad {
    pub alignment: LossTerms,
    pub tv: f64,
    pub nps: f64,
    /// Alignment total plus weighted physical terms.
    pub total: f64,
    pub per_encoder: Vec<EncoderCosines>,
    pub grad_iadv: ImageGrad,
    pub grad_delta: ImageGrad,
    pub guarded_pairs: usize,
}

/// Full objective at `(patch, mask)` for one sample, with `∇δ`.
#[allow(clippy::too_many_arguments)]
pub fn pipeline_loss_grad(
    scene: &Image,
    target: &Image,
    patch: &Image,
    mask: &Mask,
    sample: &IterationSample,
    ensemble: &[Box<dyn Encoder>],
    cfg: &AttackConfig,
    palette: Option<&Palette>,
) -> Result<PipelineGrad> {
    let adv = compose_adversarial(scene, patch, mask)?;
    let ag = adversarial_loss_grad(&adv, target, sample, ensemble, cfg.rank, cfg.eta, cfg.local_mode())?;

    let mut grad_delta = ag.grad_iadv.clone();
    for (px, &on) in mask.data().iter().enumerate() {
        if !on {
            grad_delta.data[px * CHANNELS..(px + 1) * CHANNELS].fill(0.0);
        }
    }
    let (mut tv, mut nps) = (0.0, 0.0);
    if cfg.mode == Mode::Physical {
        let default_palette;
        let palette = match palette {
            Some(p) => p,
            None => {
                default_palette = Palette::default_grid();
                &default_palette
            }
        };
        let (t, gt) = tv_loss_grad(patch, mask)?;
        let (n, gn) = nps_loss_grad(patch, mask, palette)?;
        tv = t;
        nps = n;
        for ((g, a), b) in grad_delta.data.iter_mut().zip(&gt.data).zip(&gn.data) {
            *g += cfg.lambda_tv * a + cfg.lambda_nps * b;
        }
    }
    Ok(PipelineGrad {
        alignment: ag.terms,
        tv,
        nps,
        total: ag.terms.total + cfg.lambda_tv * tv + cfg.lambda_nps * nps,
        per_encoder: ag.per_encoder,
        grad_iadv: ag.grad_iadv,
        grad_delta,
        guarded_pairs: ag.guarded_pairs,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `clip_budget(δ − α·sign(∇), I, ε)`.
pub fn delta_step(patch: &Image, grad: &ImageGrad, alpha: f64, scene: &Image, epsilon: f64) -> Result<Image> {
    if patch.dims() != grad.dims() || patch.dims() != scene.dims() {
        return Err(Error::shape(format!(
            "delta step: patch {:?}, grad {:?}, scene {:?}",
            patch.dims(),
            grad.dims(),
            scene.dims()
        )));
    }
    let moved: Vec<f64> = patch
        .data()
        .iter()
        .zip(&grad.data)
        .map(|(&d, &g)| d - alpha * sign(g))
        .collect();
    clip_values(&moved, scene, epsilon)
}

/// Per-pixel `−Σ_c (δ − I)_c · ∂L/∂I_adv,c`: positive where growing the mask
/// lowers the loss.
pub fn mask_gradient(grad_iadv: &ImageGrad, scene: &Image, patch: &Image) -> Result<Vec<f64>> {
    if grad_iadv.dims() != scene.dims() || patch.dims() != scene.dims() {
        return Err(Error::shape("mask gradient: dimension mismatch"));
    }
    Ok(grad_iadv
        .data
        .chunks_exact(CHANNELS)
        .zip(
            patch
                .data()
                .chunks_exact(CHANNELS)
                .zip(scene.data().chunks_exact(CHANNELS)),
        )
        .map(|(g, (d, i))| -(0..CHANNELS).map(|c| (d[c] - i[c]) * g[c]).sum::<f64>())
        .collect())
}

/// Deterministic full-frame alignment metric (rank-`k` local term).
pub fn evaluate_alignment(
    img: &Image,
    target: &Image,
    ensemble: &[Box<dyn Encoder>],
    k: usize,
    eta: f64,
) -> Result<(LossTerms, Vec<EncoderCosines>)> {
    if img.dims() != target.dims() {
        return Err(Error::shape("evaluate: image and target differ in size"));
    }
    let (h, w) = img.dims();
    let ag = adversarial_loss_grad(
        img,
        target,
        &IterationSample::identity(h, w),
        ensemble,
        k,
        eta,
        LocalMode::Svd,
    )?;
    Ok((ag.terms, ag.per_encoder))
}

fn square_mask(height: usize, width: usize, center: (f64, f64), area: usize) -> Mask {
    let side = (area as f64).sqrt().round() as i64;
    let x0 = (center.0 - side as f64 / 2.0).round() as i64;
    let y0 = (center.1 - side as f64 / 2.0).round() as i64;
    Mask::rect(height, width, x0, y0, side, side)
}

fn assert_budget(patch: &Image, scene: &Image, epsilon: f64) {
    let worst = patch
        .data()
        .iter()
        .zip(scene.data())
        .map(|(d, i)| (d - i).abs())
        .fold(0.0, f64::max);
    assert!(worst <= epsilon + 1e-12, "budget violated: {worst} > {epsilon}");
}

/// Runs the full optimization for one scene.
///
/// `palette` is used in physical mode; the default grid stands in when absent.
pub fn run_attack(
    scene: &Image,
    target: &Image,
    region: &Region,
    ensemble: &[Box<dyn Encoder>],
    cfg: &AttackConfig,
    palette: Option<&Palette>,
) -> std::result::Result<AttackResult, AttackError> {
    cfg.validate()?;
    if scene.dims() != target.dims() {
        return Err(Error::shape(format!("scene {:?} vs target {:?}", scene.dims(), target.dims())).into());
    }
    if ensemble.is_empty() {
        return Err(Error::invalid("surrogate ensemble is empty").into());
    }
    let (h, w) = scene.dims();
    let center = region.centroid();
    if !(center.0 >= 0.0 && center.0 <= w as f64 && center.1 >= 0.0 && center.1 <= h as f64) {
        return Err(Error::Region(format!("region {} centroid {center:?} outside {w}x{h}", region.id)).into());
    }

    let th = cfg.area_threshold;
    let fixed_mask = cfg.ablation == Ablation::NoMaskUpdate;
    let mut tau = cfg.tau0;
    let mut field = build_field(center, cfg.sigma, h, w)?;
    field.threshold = tau;
    let mut mask = if fixed_mask {
        square_mask(h, w, center, th)
    } else {
        generate_mask(&field, tau, &cfg.morphology)
    };
    let initial_mask_area = mask_area(&mask);
    let mut frozen = fixed_mask || initial_mask_area <= th;
    let mut freeze_iteration = frozen.then_some(0);

    let mut patch = scene.clone();
    let (initial_loss, clean_cosines) = evaluate_alignment(scene, target, ensemble, cfg.rank, cfg.eta)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut mask_updates = 0;
    let mut guarded_pairs = 0;
    let mut failure = None;

    for t in 1..=cfg.iterations {
        let sample = sample_iteration(&mut rng, cfg, (h, w), center);
        let eval = match pipeline_loss_grad(scene, target, &patch, &mask, &sample, ensemble, cfg, palette) {
            Ok(e) => e,
            Err(e) => {
                failure = Some((t, e));
                break;
            }
        };
        guarded_pairs += eval.guarded_pairs;

        // The shape gradient is taken at the pre-step content.
        let shape_grad = if frozen {
            None
        } else {
            Some(mask_gradient(&eval.grad_iadv, scene, &patch)?)
        };
        patch = delta_step(&patch, &eval.grad_delta, cfg.alpha, scene, cfg.epsilon)?;
        assert_budget(&patch, scene, cfg.epsilon);

        if let Some(g) = shape_grad {
            field = update_field(&field, &g, cfg.lr)?;
            mask = generate_mask(&field, tau, &cfg.morphology);
            tau += cfg.beta;
            field.threshold = tau;
            mask_updates += 1;
            if mask_area(&mask) <= th {
                frozen = true;
                freeze_iteration = Some(t);
            }
        }

        trace.push(TraceRow {
            iter: t,
            loss_total: eval.total,
            loss_global: eval.alignment.global,
            loss_local: eval.alignment.local,
            mask_area: mask_area(&mask),
            tau,
        });
    }

    let adversarial = compose_adversarial(scene, &patch, &mask)?;
    let (final_loss, adversarial_cosines, stop_reason) = match &failure {
        None => {
            let (l, c) = evaluate_alignment(&adversarial, target, ensemble, cfg.rank, cfg.eta)?;
            (l, c, StopReason::Completed)
        }
        // The ensemble may be unreachable; keep the partial state only.
        Some(_) => (LossTerms::default(), Vec::new(), StopReason::Aborted),
    };
    let result = AttackResult {
        patch,
        mask,
        field,
        adversarial,
        trace,
        stop_reason,
        seed: cfg.seed,
        config: cfg.clone(),
        center,
        initial_mask_area,
        mask_updates,
        freeze_iteration,
        initial_loss,
        final_loss,
        clean_cosines,
        adversarial_cosines,
        guarded_pairs,
    };
    match failure {
        None => Ok(result),
        Some((iteration, source)) => {
            log::error!("attack aborted at iteration {iteration}: {source}");
            Err(AttackError::Aborted {
                iteration,
                source,
                partial: Box::new(result),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{make_toy_encoder, EncoderKind, EncoderSpec};

    fn ensemble(h: usize, w: usize, seeds: &[u64]) -> Vec<Box<dyn Encoder>> {
        seeds
            .iter()
            .map(|&s| {
                let spec = EncoderSpec::toy(EncoderKind::ToyLinear, h, w, s);
                Box::new(make_toy_encoder(&spec).unwrap()) as Box<dyn Encoder>
            })
            .collect()
    }

    fn scene(h: usize, w: usize, phase: usize) -> Image {
        Image::from_fn(h, w, |y, x, c| {
            0.5 + 0.4 * (((y * 3 + x * 5 + c * 7 + phase) % 13) as f64 / 13.0 - 0.5)
        })
        .unwrap()
    }

    fn region(h: usize, w: usize) -> Region {
        Region {
            id: 1,
            bbox: [w as f64 / 4.0, h as f64 / 4.0, w as f64 / 2.0, h as f64 / 2.0],
            label: "centre".into(),
            score: None,
        }
    }

    #[test]
    fn delta_step_examples() {
        let scene = Image::filled(1, 1, 0.5).unwrap();
        let zero = ImageGrad::zeros(1, 1);
        assert_eq!(
            delta_step(&scene, &zero, 1.0 / 255.0, &scene, 16.0 / 255.0).unwrap(),
            scene
        );

        let pos = ImageGrad::new(1, 1, vec![1.0, 2.0, 0.5]).unwrap();
        let out = delta_step(&scene, &pos, 1.0 / 255.0, &scene, 16.0 / 255.0).unwrap();
        for &v in out.data() {
            assert!((v - (0.5 - 1.0 / 255.0)).abs() < 1e-15);
        }

        let at_edge = Image::filled(1, 1, 0.5 - 16.0 / 255.0).unwrap();
        let out = delta_step(&at_edge, &pos, 1.0 / 255.0, &scene, 16.0 / 255.0).unwrap();
        assert_eq!(out, at_edge);
    }

    #[test]
    fn mask_gradient_examples() {
        let scene = Image::filled(1, 1, 0.3).unwrap();
        let patch = Image::filled(1, 1, 0.5).unwrap();
        let ones = ImageGrad::new(1, 1, vec![1.0; 3]).unwrap();
        let g = mask_gradient(&ones, &scene, &patch).unwrap();
        assert!((g[0].abs() - 0.6).abs() < 1e-12);
        assert_eq!(mask_gradient(&ones, &scene, &scene).unwrap(), vec![0.0]);
        assert_eq!(
            mask_gradient(&ImageGrad::zeros(1, 1), &scene, &patch).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn zero_iterations_returns_initialisation() {
        let (h, w) = (32, 32);
        let cfg = AttackConfig {
            iterations: 0,
            area_threshold: 16,
            ..AttackConfig::default()
        };
        let res = run_attack(
            &scene(h, w, 0),
            &scene(h, w, 5),
            &region(h, w),
            &ensemble(h, w, &[1]),
            &cfg,
            None,
        )
        .unwrap();
        assert!(res.trace.is_empty());
        assert_eq!(res.patch, scene(h, w, 0));
        assert_eq!(res.adversarial, scene(h, w, 0));
        assert_eq!(res.mask_updates, 0);
    }

    #[test]
    fn large_threshold_never_updates_mask() {
        let (h, w) = (32, 32);
        let cfg = AttackConfig {
            iterations: 5,
            area_threshold: h * w,
            ..AttackConfig::default()
        };
        let res = run_attack(
            &scene(h, w, 0),
            &scene(h, w, 5),
            &region(h, w),
            &ensemble(h, w, &[1]),
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(res.mask_updates, 0);
        assert!(res
            .trace
            .iter()
            .all(|r| r.mask_area == res.initial_mask_area && r.tau == cfg.tau0));
        assert_eq!(res.freeze_iteration, Some(0));
    }

    #[test]
    fn runs_are_deterministic_and_respect_budget() {
        let (h, w) = (32, 32);
        let cfg = AttackConfig {
            iterations: 6,
            area_threshold: 100,
            mode: Mode::Physical,
            seed: 9,
            ..AttackConfig::default()
        };
        let ens = ensemble(h, w, &[1, 2]);
        let a = run_attack(&scene(h, w, 0), &scene(h, w, 5), &region(h, w), &ens, &cfg, None).unwrap();
        let b = run_attack(&scene(h, w, 0), &scene(h, w, 5), &region(h, w), &ens, &cfg, None).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.adversarial, b.adversarial);
        assert_eq!(a.mask, b.mask);
        assert_eq!(
            a.adversarial,
            compose_adversarial(&scene(h, w, 0), &a.patch, &a.mask).unwrap()
        );
        for (i, row) in a.trace.iter().enumerate() {
            assert_eq!(row.iter, i + 1);
        }
        let taus: Vec<f64> = a.trace.iter().map(|r| r.tau).collect();
        assert!(taus.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn fixed_square_for_no_mask_update() {
        let (h, w) = (48, 48);
        let cfg = AttackConfig {
            iterations: 3,
            area_threshold: 100,
            ablation: Ablation::NoMaskUpdate,
            ..AttackConfig::default()
        };
        let res = run_attack(
            &scene(h, w, 0),
            &scene(h, w, 5),
            &region(h, w),
            &ensemble(h, w, &[3]),
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(res.initial_mask_area, 100);
        assert!(res.trace.iter().all(|r| r.mask_area == 100));
    }

    #[test]
    fn setup_errors() {
        let (h, w) = (16, 16);
        let cfg = AttackConfig::default();
        let empty: Vec<Box<dyn Encoder>> = Vec::new();
        assert!(matches!(
            run_attack(&scene(h, w, 0), &scene(h, w, 1), &region(h, w), &empty, &cfg, None),
            Err(AttackError::Setup(_))
        ));
        assert!(matches!(
            run_attack(
                &scene(h, w, 0),
                &scene(8, 8, 1),
                &region(h, w),
                &ensemble(h, w, &[1]),
                &cfg,
                None
            ),
            Err(AttackError::Setup(Error::Shape(_)))
        ));
    }
}

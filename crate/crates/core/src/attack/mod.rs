//! The optimization loop: patch content by signed descent under an L∞
//! budget, patch shape by potential-field growth with a rising threshold.

mod engine;
mod physical;
mod transfer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{
    adversarial_loss_grad, delta_step, evaluate_alignment, mask_gradient, pipeline_loss_grad, run_attack,
    sample_iteration, AdversarialGrad, IterationSample, PipelineGrad,
};
pub use physical::{nps_loss, nps_loss_grad, tv_loss, tv_loss_grad, Palette};
pub use transfer::{eval_transfer, TransferMetric};

use crate::crop::DEFAULT_ASPECT_RANGE;
use crate::eot::EotConfig;
use crate::error::{Error, Result};
use crate::image::{Image, Mask, PotentialField};
use crate::loss::{EncoderCosines, LocalMode, LossTerms};
use crate::potential::MorphologyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Digital,
    Physical,
}

/// Component removals used in ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Local loss on raw token matrices.
    NoSvd,
    /// Fixed square patch of area `th` centred on the region centroid.
    NoMaskUpdate,
    /// Unconstrained random crops of the adversarial image.
    NoPatchCrop,
}

impl Ablation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::Full),
            "no-svd" => Ok(Self::NoSvd),
            "no-mask-update" => Ok(Self::NoMaskUpdate),
            "no-patch-crop" => Ok(Self::NoPatchCrop),
            other => Err(Error::Config(format!(
                "unknown ablation variant `{other}` (expected no-svd, no-mask-update or no-patch-crop)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoSvd => "no-svd",
            Self::NoMaskUpdate => "no-mask-update",
            Self::NoPatchCrop => "no-patch-crop",
        }
    }

    pub fn local_mode(self) -> LocalMode {
        if self == Self::NoSvd {
            LocalMode::Raw
        } else {
            LocalMode::Svd
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub tau0: f64,
    pub beta: f64,
    /// Field width as a fraction of `min(H, W)`.
    pub sigma: f64,
    pub lr: f64,
    pub rank: usize,
    pub eta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub iterations: usize,
    /// Crop-area fractions `[a, b]`.
    pub crop_area: (f64, f64),
    pub aspect_range: (f64, f64),
    /// Area threshold in pixels.
    pub area_threshold: usize,
    pub lambda_tv: f64,
    pub lambda_nps: f64,
    pub mode: Mode,
    pub seed: u64,
    pub ablation: Ablation,
    pub morphology: MorphologyConfig,
    pub eot: EotConfig,
    /// Overrides the mode default (EoT on in physical mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_eot: Option<bool>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            tau0: 0.6,
            beta: 0.002,
            sigma: 0.2,
            lr: 0.15,
            rank: 10,
            eta: 1.0,
            alpha: 1.0 / 255.0,
            epsilon: 16.0 / 255.0,
            iterations: 300,
            crop_area: (0.5, 0.9),
            aspect_range: DEFAULT_ASPECT_RANGE,
            area_threshold: 120 * 120,
            lambda_tv: 1e-4,
            lambda_nps: 1e-2,
            mode: Mode::Digital,
            seed: 0,
            ablation: Ablation::Full,
            morphology: MorphologyConfig::default(),
            eot: EotConfig::default(),
            use_eot: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (a, b) = self.crop_area;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return bad(format!("crop_area [{a}, {b}] must satisfy 0 < a <= b <= 1"));
        }
        let (lo, hi) = self.aspect_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("aspect_range [{lo}, {hi}] must satisfy 0 < lo <= hi"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon {} must lie in (0, 1]", self.epsilon));
        }
        if self.rank == 0 {
            return bad("rank must be >= 1".into());
        }
        if self.area_threshold == 0 {
            return bad("area_threshold must be >= 1".into());
        }
        if !(self.tau0 > 0.0 && self.tau0 < 1.0) {
            return bad(format!("tau0 {} must lie in (0, 1)", self.tau0));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lr", self.lr),
            ("eta", self.eta),
            ("lambda_tv", self.lambda_tv),
            ("lambda_nps", self.lambda_nps),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be a finite value >= 0"));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be positive", self.sigma));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        self.morphology.validate()?;
        self.eot.validate().map_err(|e| Error::Config(format!("eot: {e}")))?;
        Ok(())
    }

    pub fn eot_active(&self) -> bool {
        self.use_eot.unwrap_or(self.mode == Mode::Physical)
    }

    pub fn local_mode(&self) -> LocalMode {
        self.ablation.local_mode()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss_total: f64,
    pub loss_global: f64,
    pub loss_local: f64,
    /// Mask area at the end of the iteration.
    pub mask_area: usize,
    /// Threshold at the end of the iteration.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// All `T` iterations ran.
    Completed,
    /// An encoder failed; the result holds the state before the failing iteration.
    Aborted,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub patch: Image,
    pub mask: Mask,
    pub field: PotentialField,
    pub adversarial: Image,
    pub trace: Vec<TraceRow>,
    pub stop_reason: StopReason,
    pub seed: u64,
    pub config: AttackConfig,
    /// Region centroid `(x, y)`.
    pub center: (f64, f64),
    pub initial_mask_area: usize,
    pub mask_updates: usize,
    /// First iteration after which the mask stopped changing (0 if it
    /// started at or below the threshold); `None` if it never got there.
    pub freeze_iteration: Option<usize>,
    /// Deterministic full-frame alignment loss on the clean scene.
    pub initial_loss: LossTerms,
    /// Same metric on the final adversarial image.
    pub final_loss: LossTerms,
    pub clean_cosines: Vec<EncoderCosines>,
    pub adversarial_cosines: Vec<EncoderCosines>,
    /// Near-degenerate singular-value pairs hit by the SVD backward pass.
    pub guarded_pairs: usize,
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Setup(#[from] Error),

    #[error("attack aborted at iteration {iteration}: {source}")]
    Aborted {
        iteration: usize,
        source: Error,
        partial: Box<AttackResult>,
    },
}

impl AttackError {
    pub fn partial(&self) -> Option<&AttackResult> {
        match self {
            Self::Aborted { partial, .. } => Some(partial),
            Self::Setup(_) => None,
        }
    }
}

//! Adversarial patch optimization against vision encoders.
//!
//! A patch is a mask `M` and content `δ` composited into a scene as
//! `I ⊙ (1 − M) + δ ⊙ M`. The mask is the super-level set of a Gaussian
//! potential field around a chosen region; the content is driven by signed
//! descent on a global + low-rank token alignment loss over an encoder
//! ensemble, evaluated on random crops that always contain the patch centre.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN

pub mod attack;
pub mod crop;
pub mod encoder;
pub mod eot;
pub mod error;
pub mod image;
pub mod linalg;
pub mod loss;
pub mod ops;
pub mod potential;
pub mod region;

pub use attack::{run_attack, AttackConfig, AttackError, AttackResult, Mode};
pub use error::{Error, Result};
pub use image::{clip_budget, compose_adversarial, mask_area, Image, ImageGrad, Mask, PotentialField};

//! Linear image operators with exact adjoints: bilinear crop-resize, affine
//! warp, Gaussian blur and DCT low-pass.

mod blur;
mod dct;
mod resample;

pub use blur::gaussian_blur;
pub use dct::{dct_lowpass, dct_lowpass_vjp};
pub use resample::{crop_resize, crop_resize_vjp, warp_affine, warp_affine_vjp, AffineParams, CropSpec};

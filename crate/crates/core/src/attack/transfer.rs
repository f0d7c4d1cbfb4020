use serde::{Deserialize, Serialize};

use super::engine::fit_input;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::cosine;

/// Feature-space transfer proxy for one held-out encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMetric {
    pub encoder: usize,
    pub clean_cos: f64,
    pub adv_cos: f64,
    /// `cos(g(adv), g(tar)) − cos(g(clean), g(tar))`.
    pub delta_cos: f64,
}

pub fn eval_transfer(
    clean: &Image,
    adv: &Image,
    target: &Image,
    heldout: &[Box<dyn Encoder>],
) -> Result<Vec<TransferMetric>> {
    if clean.dims() != adv.dims() {
        return Err(Error::shape("clean and adversarial images differ in size"));
    }
    heldout
        .iter()
        .enumerate()
        .map(|(i, enc)| {
            let shape = enc.shape();
            let global = |img: &Image| -> Result<Vec<f64>> { Ok(enc.encode(&fit_input(img, &shape)?.0)?.global) };
            let gt = global(target)?;
            let clean_cos = cosine(&global(clean)?, &gt);
            let adv_cos = cosine(&global(adv)?, &gt);
            Ok(TransferMetric {
                encoder: i,
                clean_cos,
                adv_cos,
                delta_cos: adv_cos - clean_cos,
            })
        })
        .collect()
}

//! Water-free restoration support: adaptive contrast stretching under the
//! gray-world hypothesis, and image-quality metrics.

use crate::error::{Error, Result};
use crate::math::quantile;
use crate::scene::ImageBuffer;

pub const PSNR_CAP: f64 = 99.0;
/// Source-bound percentiles for the contrast stretch.
pub const ACS_LO_Q: f64 = 0.01;
pub const ACS_HI_Q: f64 = 0.99;

/// 10 log10(1 / MSE) on [0,1] images, capped at 99 dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("psnr shapes differ".into()));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Per-channel affine contrast stretch. Source bounds are the 1%/99%
/// percentiles; the target max is chosen so the stretched channel mean equals
/// the pre-stretch global mean (gray-world), then the map is clamped to [0,1].
/// Degenerate channels pass through unchanged.
pub fn acs_white_balance(image: &ImageBuffer) -> Result<ImageBuffer> {
    if image.channels != 3 {
        return Err(Error::Usage("acs_white_balance expects a 3-channel image".into()));
    }
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("acs_white_balance input".into()));
    }
    let n = image.width * image.height;
    let global_mean = image.data.iter().sum::<f64>() / image.data.len() as f64;
    let mut out = image.clone();
    for c in 0..3 {
        let vals: Vec<f64> = (0..n).map(|p| image.data[p * 3 + c]).collect();
        let lo = quantile(&vals, ACS_LO_Q);
        let hi = quantile(&vals, ACS_HI_Q);
        let mean_c = vals.iter().sum::<f64>() / n as f64;
        if hi - lo < 1e-12 || mean_c - lo < 1e-12 {
            continue;
        }
        let o_max = (global_mean * (hi - lo) / (mean_c - lo)).clamp(0.0, 1.0);
        for p in 0..n {
            let v = (image.data[p * 3 + c] - lo) * o_max / (hi - lo);
            out.data[p * 3 + c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

//! PSNR and SSIM quality metrics for `[0, 1]` images.

use crate::error::{Error, Result};
use crate::image::Image;

/// SSIM sliding-window side (uniform window, stride 1).
const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in decibels with `MAX = 1.0`.
///
/// The MSE is taken jointly over all channels. Identical inputs return
/// `f64::INFINITY`.
pub fn psnr(reference: &Image, estimate: &Image) -> Result<f64> {
    let mse = reference.mse(estimate)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean structural similarity over all 8x8 sliding windows.
///
/// Color inputs are first collapsed to luma by the channel mean; the
/// dynamic range is 1.0. Returns an error if either side is smaller than
/// the window.
pub fn ssim(reference: &Image, estimate: &Image) -> Result<f64> {
    if !reference.same_shape(estimate) {
        return Err(Error::shape(
            "ssim",
            format!("{:?}", reference.shape()),
            format!("{:?}", estimate.shape()),
        ));
    }
    let a = reference.to_luma();
    let b = estimate.to_luma();
    let (h, w, _) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidConfig(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let va = a.get(y, x, 0);
                    let vb = b.get(y, x, 0);
                    sx += va;
                    sy += vb;
                    sxx += va * va;
                    syy += vb * vb;
                    sxy += va * vb;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cov = sxy / n - mx * my;
            let val = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            total += val;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

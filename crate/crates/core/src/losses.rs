//! Loss suite: L1 + D-SSIM reconstruction, pseudo-depth supervision with
//! edge-aware smoothness and anisotropic TV, and the minimal-scale penalty.
//! Every loss ships with a hand-derived adjoint.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rasterizer::CloudGrads;
use crate::scene::{GaussianCloud, ImageBuffer};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// D-SSIM mixing weight in the reconstruction loss.
    pub lambda1: f64,
    /// Pseudo-depth L1 weight.
    pub lambda2: f64,
    /// Edge-aware smoothness weight.
    pub lambda3: f64,
    /// Anisotropic TV weight.
    pub lambda4: f64,
    /// Minimal-scale penalty weight.
    pub lambda5: f64,
    /// Floor for the edge-guide denominator.
    pub gamma_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.2,
            lambda2: 0.1,
            lambda3: 0.01,
            lambda4: 0.1,
            lambda5: 100.0,
            gamma_eps: 1e-3,
        }
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as isize - half;
            let dy = y as isize - half;
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Mean absolute error over all entries.
pub fn l1(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_shapes(a, b, "l1")?;
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Accumulates `gout * dL1/da` into `ga`.
pub fn l1_backward(a: &ImageBuffer, b: &ImageBuffer, gout: f64, ga: &mut ImageBuffer) {
    let n = a.data.len() as f64;
    for i in 0..a.data.len() {
        let d = a.data[i] - b.data[i];
        if d != 0.0 {
            ga.data[i] += gout * d.signum() / n;
        }
    }
}

/// Mean local SSIM over fully-interior 11x11 windows, averaged across
/// channels. Both images must be at least 11x11.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_impl(a, b, None)
}

/// SSIM plus its gradient with respect to `a` (unit upstream).
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    let mut grad = ImageBuffer::new(a.width, a.height, a.channels);
    let v = ssim_impl(a, b, Some(&mut grad))?;
    Ok((v, grad))
}

fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, mut grad: Option<&mut ImageBuffer>) -> Result<f64> {
    check_shapes(a, b, "ssim")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.width, a.height
        )));
    }
    let win = gaussian_window();
    let (w, h, ch) = (a.width, a.height, a.channels);
    let nx = w - SSIM_WINDOW + 1;
    let ny = h - SSIM_WINDOW + 1;
    let count = (nx * ny * ch) as f64;

    let mut total = 0.0;
    for c in 0..ch {
        for cy in 0..ny {
            for cx in 0..nx {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wt = win[ky * SSIM_WINDOW + kx];
                        let i = ((cy + ky) * w + cx + kx) * ch + c;
                        let (av, bv) = (a.data[i], b.data[i]);
                        mu_a += wt * av;
                        mu_b += wt * bv;
                        aa += wt * av * av;
                        bb += wt * bv * bv;
                        ab += wt * av * bv;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let na = 2.0 * mu_a * mu_b + SSIM_C1;
                let nb = 2.0 * cov + SSIM_C2;
                let da = mu_a * mu_a + mu_b * mu_b + SSIM_C1;
                let db = var_a + var_b + SSIM_C2;
                let s = (na * nb) / (da * db);
                total += s;

                if let Some(g) = grad.as_deref_mut() {
                    // dS/dmu_a, dS/dvar_a, dS/dcov for this window.
                    let d_mu = (2.0 * mu_b * nb) / (da * db) - (na * nb * 2.0 * mu_a) / (da * da * db);
                    let d_var = -(na * nb) / (da * db * db);
                    let d_cov = 2.0 * na / (da * db);
                    for ky in 0..SSIM_WINDOW {
                        for kx in 0..SSIM_WINDOW {
                            let wt = win[ky * SSIM_WINDOW + kx];
                            let i = ((cy + ky) * w + cx + kx) * ch + c;
                            let (av, bv) = (a.data[i], b.data[i]);
                            g.data[i] += (d_mu * wt
                                + d_var * 2.0 * wt * (av - mu_a)
                                + d_cov * wt * (bv - mu_b))
                                / count;
                        }
                    }
                }
            }
        }
    }
    Ok(total / count)
}

/// (1 - l1) * L1 + l1 * (1 - SSIM) / 2.
pub fn loss_recon(render: &ImageBuffer, target: &ImageBuffer, w: &LossWeights) -> Result<f64> {
    let l1v = l1(render, target)?;
    let s = ssim(render, target)?;
    Ok((1.0 - w.lambda1) * l1v + w.lambda1 * (1.0 - s) / 2.0)
}

/// Loss plus its gradient with respect to the render.
pub fn loss_recon_with_grad(
    render: &ImageBuffer,
    target: &ImageBuffer,
    w: &LossWeights,
) -> Result<(f64, ImageBuffer)> {
    let l1v = l1(render, target)?;
    let (s, sgrad) = ssim_with_grad(render, target)?;
    let mut grad = ImageBuffer::new(render.width, render.height, render.channels);
    l1_backward(render, target, 1.0 - w.lambda1, &mut grad);
    for i in 0..grad.data.len() {
        grad.data[i] += -w.lambda1 / 2.0 * sgrad.data[i];
    }
    Ok(((1.0 - w.lambda1) * l1v + w.lambda1 * (1.0 - s) / 2.0, grad))
}

/// Forward differences, zero at the last column (x) or row (y).
fn fwd_diff(map: &[f64], w: usize, h: usize, x: usize, y: usize, horiz: bool) -> f64 {
    if horiz {
        if x + 1 < w {
            map[y * w + x + 1] - map[y * w + x]
        } else {
            0.0
        }
    } else if y + 1 < h {
        map[(y + 1) * w + x] - map[y * w + x]
    } else {
        0.0
    }
}

/// Channel-mean absolute forward difference of the guide image.
fn image_grad(image: &ImageBuffer, x: usize, y: usize, horiz: bool) -> f64 {
    let (w, h, ch) = (image.width, image.height, image.channels);
    let mut acc = 0.0;
    for c in 0..ch {
        let cur = image.data[(y * w + x) * ch + c];
        let next = if horiz {
            if x + 1 < w {
                image.data[(y * w + x + 1) * ch + c]
            } else {
                cur
            }
        } else if y + 1 < h {
            image.data[((y + 1) * w + x) * ch + c]
        } else {
            cur
        };
        acc += (next - cur).abs();
    }
    acc / ch as f64
}

/// lambda2 * L1(D, D') + lambda3 * edge-aware smoothness + lambda4 * TV.
/// The guide image is treated as a constant.
pub fn loss_depth(
    d: &ImageBuffer,
    d_pseudo: &ImageBuffer,
    image: &ImageBuffer,
    w: &LossWeights,
) -> Result<f64> {
    Ok(loss_depth_with_grad(d, d_pseudo, image, w)?.0)
}

pub fn loss_depth_with_grad(
    d: &ImageBuffer,
    d_pseudo: &ImageBuffer,
    image: &ImageBuffer,
    weights: &LossWeights,
) -> Result<(f64, ImageBuffer)> {
    check_shapes(d, d_pseudo, "loss_depth")?;
    if d.channels != 1 {
        return Err(Error::Usage("loss_depth expects 1-channel depth maps".into()));
    }
    if image.width != d.width || image.height != d.height {
        return Err(Error::ShapeMismatch("loss_depth guide image size differs".into()));
    }
    let (w, h) = (d.width, d.height);
    let n = (w * h) as f64;
    let mut grad = ImageBuffer::new(w, h, 1);

    let mut term1 = 0.0;
    for i in 0..d.data.len() {
        let diff = d.data[i] - d_pseudo.data[i];
        term1 += diff.abs();
        if diff != 0.0 {
            grad.data[i] += weights.lambda2 * diff.signum() / n;
        }
    }
    term1 = weights.lambda2 * term1 / n;

    let mut smooth = 0.0;
    let mut tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            for horiz in [true, false] {
                let g = fwd_diff(&d.data, w, h, x, y, horiz);
                let denom = image_grad(image, x, y, horiz).max(weights.gamma_eps);
                smooth += g.abs() / denom;
                tv += g.abs();
                if g != 0.0 {
                    let coef =
                        (weights.lambda3 / denom + weights.lambda4) * g.signum() / n;
                    if horiz {
                        grad.data[y * w + x + 1] += coef;
                        grad.data[y * w + x] -= coef;
                    } else {
                        grad.data[(y + 1) * w + x] += coef;
                        grad.data[y * w + x] -= coef;
                    }
                }
            }
        }
    }
    let total = term1 + weights.lambda3 * smooth / n + weights.lambda4 * tv / n;
    Ok((total, grad))
}

/// lambda5 * mean over Gaussians of min(s1, s2, s3).
pub fn loss_scale(cloud: &GaussianCloud, w: &LossWeights) -> f64 {
    if cloud.primitives.is_empty() {
        return 0.0;
    }
    let sum: f64 = cloud
        .primitives
        .iter()
        .map(|p| p.log_scale.iter().map(|v| v.exp()).fold(f64::INFINITY, f64::min))
        .sum();
    w.lambda5 * sum / cloud.primitives.len() as f64
}

/// Gradient flows only to the argmin scale component, ties to lowest index.
pub fn loss_scale_with_grad(cloud: &GaussianCloud, w: &LossWeights, grads: &mut CloudGrads) -> f64 {
    if cloud.primitives.is_empty() {
        return 0.0;
    }
    let n = cloud.primitives.len() as f64;
    let mut sum = 0.0;
    for (i, p) in cloud.primitives.iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = p.log_scale[0].exp();
        for k in 1..3 {
            let v = p.log_scale[k].exp();
            if v < best_v {
                best_v = v;
                best = k;
            }
        }
        sum += best_v;
        let mut g = Vector3::zeros();
        g[best] = w.lambda5 * best_v / n;
        grads.log_scale[i] += g;
    }
    w.lambda5 * sum / n
}

/// L = L_c + L_d + L_s.
pub fn total_loss(l_c: f64, l_d: f64, l_s: f64) -> f64 {
    l_c + l_d + l_s
}

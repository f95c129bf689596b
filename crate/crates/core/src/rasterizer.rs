//! Differentiable forward projection and depth-sorted alpha blending.
//!
//! The rasterizer is a global-sort splatter (no tiles): desk-scale images make
//! tiling unnecessary and the output is identical. Forward and backward share
//! the same culling, bounding boxes, and early-stop so the adjoints line up
//! with finite differences of the actual forward pass.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scene::{covariance_backward, covariance_from_params, Camera, GaussianCloud, ImageBuffer};

#[derive(Debug, Clone)]
pub struct RenderSettings {
    /// Gaussians with camera-space z at or below this are culled.
    pub near_plane: f64,
    /// Gaussians with alpha below this are culled (1/255).
    pub opacity_cull: f64,
    /// Low-pass dilation added to the diagonal of every 2D covariance.
    pub lowpass: f64,
    /// Per-pixel blending stops once transmittance drops below this.
    pub early_stop: f64,
    /// Bounding-box radius in units of the largest 2D standard deviation.
    pub radius_sigmas: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            near_plane: 0.01,
            opacity_cull: 1.0 / 255.0,
            lowpass: 0.3,
            early_stop: 1e-4,
            radius_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    /// Index into the source cloud (stable sort tie-break, gradient scatter).
    pub orig_idx: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub inv_cov2d: Matrix2<f64>,
    pub view_depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel bounding box (x0, x1, y0, y1).
    pub bbox: (usize, usize, usize, usize),
    /// Camera-space position (cached for the backward pass).
    pub p_cam: Vector3<f64>,
    /// J * W, the linearized world-to-pixel map (cached for backward).
    pub m: Matrix2x3<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectedGrad {
    pub color: [f64; 3],
    pub opacity: f64,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub view_depth: f64,
}

impl ProjectedGrad {
    fn zero() -> Self {
        Self {
            color: [0.0; 3],
            opacity: 0.0,
            mean2d: Vector2::zeros(),
            cov2d: Matrix2::zeros(),
            view_depth: 0.0,
        }
    }
}

/// Per-gaussian gradients in cloud order.
#[derive(Debug, Clone)]
pub struct CloudGrads {
    pub position: Vec<Vector3<f64>>,
    pub rotation: Vec<[f64; 4]>,
    pub log_scale: Vec<Vector3<f64>>,
    pub opacity_logit: Vec<f64>,
    /// Gradient w.r.t. the blended color of each gaussian; the appearance
    /// module chains this into its own parameters.
    pub color: Vec<[f64; 3]>,
}

impl CloudGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            log_scale: vec![Vector3::zeros(); n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Contribution {
    idx: u32,
    sigma: f64,
}

/// Ordered per-pixel contribution records retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct BlendCache {
    pixels: Vec<Vec<Contribution>>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ImageBuffer,
    pub depth: ImageBuffer,
    pub alpha_acc: ImageBuffer,
    pub cache: Option<BlendCache>,
    /// Gaussians skipped because their 2D covariance was not positive definite.
    pub skipped_non_psd: usize,
}

/// Perspective-project every gaussian; culls behind the near plane and below
/// the opacity floor. `colors` supplies the blended color per gaussian.
pub fn project(
    cloud: &GaussianCloud,
    colors: &[[f64; 3]],
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<Vec<ProjectedGaussian>> {
    camera.validate()?;
    if cloud.is_empty() {
        return Err(Error::ParamDomain("projecting an empty cloud".into()));
    }
    assert_eq!(colors.len(), cloud.len());
    let w_rot = camera.rotation;
    let mut out = Vec::with_capacity(cloud.len());
    for (i, g) in cloud.primitives.iter().enumerate() {
        let alpha = g.opacity();
        if alpha < settings.opacity_cull {
            continue;
        }
        let p_cam = camera.to_camera(&g.position);
        let z = p_cam.z;
        if z <= settings.near_plane {
            continue;
        }
        let mean2d = Vector2::new(
            camera.fx * p_cam.x / z + camera.cx,
            camera.fy * p_cam.y / z + camera.cy,
        );
        // Frustum cull by projected center with a 30% margin. The projective
        // linearization explodes for points far off-axis at small depth; their
        // splats are spurious and must not reach the blender.
        let (wf, hf) = (camera.width as f64, camera.height as f64);
        if mean2d.x < -0.3 * wf
            || mean2d.x > 1.3 * wf
            || mean2d.y < -0.3 * hf
            || mean2d.y > 1.3 * hf
        {
            continue;
        }
        let sigma3 = covariance_from_params(&g.rotation, &g.log_scale)?;
        let j = Matrix2x3::new(
            camera.fx / z,
            0.0,
            -camera.fx * p_cam.x / (z * z),
            0.0,
            camera.fy / z,
            -camera.fy * p_cam.y / (z * z),
        );
        let m = j * w_rot;
        let cov2d = m * sigma3 * m.transpose() + Matrix2::identity() * settings.lowpass;

        let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
        let radius = {
            let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
            let disc = (0.25 * (cov2d[(0, 0)] - cov2d[(1, 1)]).powi(2)
                + cov2d[(0, 1)] * cov2d[(1, 0)])
                .max(0.0)
                .sqrt();
            settings.radius_sigmas * (mid + disc).max(0.0).sqrt()
        };
        let inv_cov2d = if det > 0.0 {
            Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det
        } else {
            Matrix2::zeros() // flagged non-PSD at blend time
        };

        let x0 = (mean2d.x - radius).floor().max(0.0) as usize;
        let y0 = (mean2d.y - radius).floor().max(0.0) as usize;
        let x1f = (mean2d.x + radius).ceil();
        let y1f = (mean2d.y + radius).ceil();
        if x1f < 0.0 || y1f < 0.0 || x0 >= camera.width || y0 >= camera.height {
            continue;
        }
        let x1 = (x1f as usize).min(camera.width - 1);
        let y1 = (y1f as usize).min(camera.height - 1);

        out.push(ProjectedGaussian {
            orig_idx: i,
            mean2d,
            cov2d,
            inv_cov2d,
            view_depth: z,
            opacity: alpha,
            color: colors[i],
            bbox: (x0, x1, y0, y1),
            p_cam,
            m,
        });
    }
    Ok(out)
}

/// Sort front-to-back by view depth, ties broken by primitive index.
pub fn sort_by_depth(projected: &mut [ProjectedGaussian]) {
    projected.sort_by(|a, b| {
        a.view_depth
            .partial_cmp(&b.view_depth)
            .unwrap()
            .then(a.orig_idx.cmp(&b.orig_idx))
    });
}

/// Front-to-back alpha blending of a depth-sorted list.
pub fn blend(
    projected: &[ProjectedGaussian],
    width: usize,
    height: usize,
    settings: &RenderSettings,
    keep_cache: bool,
) -> RenderOutput {
    let mut color = ImageBuffer::new(width, height, 3);
    let mut depth = ImageBuffer::new(width, height, 1);
    let mut alpha_acc = ImageBuffer::new(width, height, 1);
    let mut cache = BlendCache {
        pixels: if keep_cache {
            vec![Vec::new(); width * height]
        } else {
            Vec::new()
        },
    };
    let mut skipped = 0usize;

    // Flag non-PSD covariances once per gaussian, not per pixel.
    let usable: Vec<bool> = projected
        .iter()
        .map(|p| {
            let det = p.cov2d[(0, 0)] * p.cov2d[(1, 1)] - p.cov2d[(0, 1)] * p.cov2d[(1, 0)];
            let ok = det > 0.0 && p.cov2d[(0, 0)] > 0.0 && p.cov2d[(1, 1)] > 0.0;
            if !ok {
                skipped += 1;
            }
            ok
        })
        .collect();

    for y in 0..height {
        for x in 0..width {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut transmittance = 1.0;
            let mut c = [0.0f64; 3];
            let mut d = 0.0f64;
            let mut a = 0.0f64;
            for (k, p) in projected.iter().enumerate() {
                if !usable[k] {
                    continue;
                }
                let (x0, x1, y0, y1) = p.bbox;
                if x < x0 || x > x1 || y < y0 || y > y1 {
                    continue;
                }
                let delta = px - p.mean2d;
                let r2 = delta.dot(&(p.inv_cov2d * delta));
                let sigma = p.opacity * (-0.5 * r2).exp();
                if sigma < 1e-12 {
                    continue;
                }
                let weight = sigma * transmittance;
                for ch in 0..3 {
                    c[ch] += p.color[ch] * weight;
                }
                d += p.view_depth * weight;
                a += weight;
                if keep_cache {
                    cache.pixels[y * width + x].push(Contribution {
                        idx: k as u32,
                        sigma,
                    });
                }
                transmittance *= 1.0 - sigma;
                if transmittance < settings.early_stop {
                    break;
                }
            }
            for ch in 0..3 {
                color.set(x, y, ch, c[ch]);
            }
            depth.set(x, y, 0, d);
            alpha_acc.set(x, y, 0, a);
        }
    }

    RenderOutput {
        color,
        depth,
        alpha_acc,
        cache: keep_cache.then_some(cache),
        skipped_non_psd: skipped,
    }
}

/// Replay the compositing order for one pixel and return `(orig_idx, weight)`
/// for every contributor, in front-to-back order. Diagnostic helper for
/// conservation checks; matches [`blend`] exactly.
pub fn pixel_weights(
    projected: &[ProjectedGaussian],
    x: usize,
    y: usize,
    settings: &RenderSettings,
) -> Vec<(usize, f64)> {
    let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
    let mut transmittance = 1.0;
    let mut out = Vec::new();
    for p in projected {
        let det = p.cov2d[(0, 0)] * p.cov2d[(1, 1)] - p.cov2d[(0, 1)] * p.cov2d[(1, 0)];
        if !(det > 0.0 && p.cov2d[(0, 0)] > 0.0 && p.cov2d[(1, 1)] > 0.0) {
            continue;
        }
        let (x0, x1, y0, y1) = p.bbox;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            continue;
        }
        let delta = px - p.mean2d;
        let r2 = delta.dot(&(p.inv_cov2d * delta));
        let sigma = p.opacity * (-0.5 * r2).exp();
        if sigma < 1e-12 {
            continue;
        }
        out.push((p.orig_idx, sigma * transmittance));
        transmittance *= 1.0 - sigma;
        if transmittance < settings.early_stop {
            break;
        }
    }
    out
}

/// Adjoint of [`blend`]: gradients of a scalar loss w.r.t. every projected
/// gaussian given per-pixel color/depth gradients.
pub fn blend_backward(
    projected: &[ProjectedGaussian],
    output: &RenderOutput,
    grad_color: &ImageBuffer,
    grad_depth: Option<&ImageBuffer>,
) -> Result<Vec<ProjectedGrad>> {
    let cache = output
        .cache
        .as_ref()
        .ok_or_else(|| Error::Usage("blend_backward requires a forward pass with cache".into()))?;
    let (width, height) = (grad_color.width, grad_color.height);
    let mut grads = vec![ProjectedGrad::zero(); projected.len()];

    for y in 0..height {
        for x in 0..width {
            let contribs = &cache.pixels[y * width + x];
            if contribs.is_empty() {
                continue;
            }
            let gc = [
                grad_color.get(x, y, 0),
                grad_color.get(x, y, 1),
                grad_color.get(x, y, 2),
            ];
            let gd = grad_depth.map_or(0.0, |g| g.get(x, y, 0));
            if gc == [0.0; 3] && gd == 0.0 {
                continue;
            }
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);

            // Prefix transmittance for each contribution.
            let mut trans = Vec::with_capacity(contribs.len());
            let mut t = 1.0;
            for c in contribs {
                trans.push(t);
                t *= 1.0 - c.sigma;
            }

            // Reverse sweep: suffix sums of downstream weighted payloads.
            let mut suffix = [0.0f64; 4]; // rgb + depth
            for (i, contrib) in contribs.iter().enumerate().rev() {
                let p = &projected[contrib.idx as usize];
                let g = &mut grads[contrib.idx as usize];
                let sigma = contrib.sigma;
                let t_i = trans[i];
                let weight = sigma * t_i;

                let mut sigma_bar = 0.0;
                let one_minus = 1.0 - sigma;
                for ch in 0..3 {
                    g.color[ch] += weight * gc[ch];
                    let down = if one_minus > 0.0 { suffix[ch] / one_minus } else { 0.0 };
                    sigma_bar += gc[ch] * (p.color[ch] * t_i - down);
                }
                let down_d = if one_minus > 0.0 { suffix[3] / one_minus } else { 0.0 };
                sigma_bar += gd * (p.view_depth * t_i - down_d);
                g.view_depth += weight * gd;

                // sigma = alpha * exp(-0.5 dᵀ Q d)
                let gauss = sigma / p.opacity;
                g.opacity += sigma_bar * gauss;
                let delta = px - p.mean2d;
                let qd = p.inv_cov2d * delta;
                let g_bar = sigma_bar * p.opacity;
                g.mean2d += g_bar * gauss * qd;
                g.cov2d += 0.5 * g_bar * gauss * (qd * qd.transpose());

                for ch in 0..3 {
                    suffix[ch] += p.color[ch] * weight;
                }
                suffix[3] += p.view_depth * weight;
            }
        }
    }
    Ok(grads)
}

/// Adjoint of [`project`]: chains projected-space gradients back to gaussian
/// position, rotation, log-scale, and opacity logit. Color gradients pass
/// through untouched for the appearance module.
pub fn project_backward(
    projected: &[ProjectedGaussian],
    grads: &[ProjectedGrad],
    cloud: &GaussianCloud,
    camera: &Camera,
) -> CloudGrads {
    let mut out = CloudGrads::zeros(cloud.len());
    let w_rot = camera.rotation;
    for (p, pg) in projected.iter().zip(grads) {
        let i = p.orig_idx;
        let g = &cloud.primitives[i];

        out.color[i][0] += pg.color[0];
        out.color[i][1] += pg.color[1];
        out.color[i][2] += pg.color[2];

        let alpha = p.opacity;
        out.opacity_logit[i] += pg.opacity * alpha * (1.0 - alpha);

        // cov2d = M Σ Mᵀ + lowpass I
        let sigma3 = covariance_from_params(&g.rotation, &g.log_scale).expect("validated at project");
        let c_bar = pg.cov2d;
        let sigma_bar: Matrix3<f64> = p.m.transpose() * c_bar * p.m;
        let (q_bar, ls_bar) = covariance_backward(&g.rotation, &g.log_scale, &sigma_bar);
        for k in 0..4 {
            out.rotation[i][k] += q_bar[k];
        }
        out.log_scale[i] += ls_bar;

        // M = J W; J depends on the camera-space position.
        let m_bar: Matrix2x3<f64> = (c_bar + c_bar.transpose()) * p.m * sigma3;
        let j_bar: Matrix2x3<f64> = m_bar * w_rot.transpose();

        let (xc, yc, z) = (p.p_cam.x, p.p_cam.y, p.p_cam.z);
        let (fx, fy) = (camera.fx, camera.fy);
        let z2 = z * z;
        let z3 = z2 * z;

        // mean2d = (fx x/z + cx, fy y/z + cy): d mean2d / d p_cam = J.
        let j = Matrix2x3::new(fx / z, 0.0, -fx * xc / z2, 0.0, fy / z, -fy * yc / z2);
        let mut p_cam_bar: Vector3<f64> = j.transpose() * pg.mean2d;
        p_cam_bar.z += pg.view_depth;
        p_cam_bar.x += j_bar[(0, 2)] * (-fx / z2);
        p_cam_bar.y += j_bar[(1, 2)] * (-fy / z2);
        p_cam_bar.z += j_bar[(0, 0)] * (-fx / z2)
            + j_bar[(0, 2)] * (2.0 * fx * xc / z3)
            + j_bar[(1, 1)] * (-fy / z2)
            + j_bar[(1, 2)] * (2.0 * fy * yc / z3);

        out.position[i] += w_rot.transpose() * p_cam_bar;
    }
    out
}

//! End-to-end differentiable forward pass for one view: splat the cloud with
//! appearance-model colors, estimate the medium from the rendered depth, and
//! compose the underwater image; plus the matching backward pass and a flat
//! parameter-group view for the optimizer and gradient checking.

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;

use crate::appearance::{AppearanceGrads, AppearanceModel, ColorCache, EmbedCache, EMBED_DIM};
use crate::error::Result;
use crate::losses::{
    loss_depth_with_grad, loss_recon_with_grad, loss_scale_with_grad, LossWeights,
};
use crate::medium::{compose_backward, compose_underwater, MediumForward, MediumGrads, MediumModel, CONTEXT_CH};
use crate::rasterizer::{
    blend, blend_backward, project, project_backward, sort_by_depth, CloudGrads,
    ProjectedGaussian, RenderOutput, RenderSettings,
};
use crate::scene::{Camera, GaussianCloud, ImageBuffer};
use crate::sh::coeff_count;

#[derive(Debug, Clone)]
pub struct Model {
    pub cloud: GaussianCloud,
    pub appearance: AppearanceModel,
    pub medium: MediumModel,
    /// Ablation switch: skip the medium entirely (vanilla splatting).
    pub identity_medium: bool,
}

impl Model {
    pub fn new(
        cloud: GaussianCloud,
        appearance_hidden: usize,
        medium_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            cloud,
            appearance: AppearanceModel::new(appearance_hidden, rng),
            medium: MediumModel::new(medium_hidden, true, rng),
            identity_medium: false,
        }
    }
}

/// Flat views of every optimizable parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Position,
    Rotation,
    LogScale,
    Opacity,
    BaseColor,
    PoseEmbedder,
    ColorNet,
    BackscatterHead,
    AttenuationHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::LogScale,
        ParamGroup::Opacity,
        ParamGroup::BaseColor,
        ParamGroup::PoseEmbedder,
        ParamGroup::ColorNet,
        ParamGroup::BackscatterHead,
        ParamGroup::AttenuationHead,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotation => "rotation",
            ParamGroup::LogScale => "log_scale",
            ParamGroup::Opacity => "opacity",
            ParamGroup::BaseColor => "base_color",
            ParamGroup::PoseEmbedder => "pose_embedder",
            ParamGroup::ColorNet => "color_net",
            ParamGroup::BackscatterHead => "backscatter_head",
            ParamGroup::AttenuationHead => "attenuation_head",
        }
    }

    /// Scalars per Gaussian row; network groups are a single row.
    pub fn stride(&self, sh_degree: usize) -> Option<usize> {
        match self {
            ParamGroup::Position | ParamGroup::LogScale => Some(3),
            ParamGroup::Rotation => Some(4),
            ParamGroup::Opacity => Some(1),
            ParamGroup::BaseColor => Some(3 * coeff_count(sh_degree)),
            _ => None,
        }
    }
}

impl Model {
    pub fn group_params(&self, g: ParamGroup) -> Vec<f64> {
        match g {
            ParamGroup::Position => self
                .cloud
                .primitives
                .iter()
                .flat_map(|p| [p.position.x, p.position.y, p.position.z])
                .collect(),
            ParamGroup::Rotation => self
                .cloud
                .primitives
                .iter()
                .flat_map(|p| p.rotation)
                .collect(),
            ParamGroup::LogScale => self
                .cloud
                .primitives
                .iter()
                .flat_map(|p| [p.log_scale.x, p.log_scale.y, p.log_scale.z])
                .collect(),
            ParamGroup::Opacity => self.cloud.primitives.iter().map(|p| p.opacity_logit).collect(),
            ParamGroup::BaseColor => self
                .cloud
                .primitives
                .iter()
                .flat_map(|p| p.base_color.iter().copied())
                .collect(),
            ParamGroup::PoseEmbedder => self.appearance.pose_embedder.params_flat(),
            ParamGroup::ColorNet => self.appearance.color_net.params_flat(),
            ParamGroup::BackscatterHead => self.medium.backscatter_head.params_flat(),
            ParamGroup::AttenuationHead => self.medium.attenuation_head.params_flat(),
        }
    }

    pub fn set_group_params(&mut self, g: ParamGroup, v: &[f64]) {
        match g {
            ParamGroup::Position => {
                for (i, p) in self.cloud.primitives.iter_mut().enumerate() {
                    p.position = Vector3::new(v[i * 3], v[i * 3 + 1], v[i * 3 + 2]);
                }
            }
            ParamGroup::Rotation => {
                for (i, p) in self.cloud.primitives.iter_mut().enumerate() {
                    p.rotation.copy_from_slice(&v[i * 4..(i + 1) * 4]);
                }
            }
            ParamGroup::LogScale => {
                for (i, p) in self.cloud.primitives.iter_mut().enumerate() {
                    p.log_scale = Vector3::new(v[i * 3], v[i * 3 + 1], v[i * 3 + 2]);
                }
            }
            ParamGroup::Opacity => {
                for (i, p) in self.cloud.primitives.iter_mut().enumerate() {
                    p.opacity_logit = v[i];
                }
            }
            ParamGroup::BaseColor => {
                let k = 3 * coeff_count(self.cloud.sh_degree);
                for (i, p) in self.cloud.primitives.iter_mut().enumerate() {
                    p.base_color.copy_from_slice(&v[i * k..(i + 1) * k]);
                }
            }
            ParamGroup::PoseEmbedder => self.appearance.pose_embedder.set_params_flat(v),
            ParamGroup::ColorNet => self.appearance.color_net.set_params_flat(v),
            ParamGroup::BackscatterHead => self.medium.backscatter_head.set_params_flat(v),
            ParamGroup::AttenuationHead => self.medium.attenuation_head.set_params_flat(v),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub cloud: CloudGrads,
    /// Per-primitive SH coefficient grads, same layout as `base_color`.
    pub base_color: Vec<Vec<f64>>,
    pub appearance: AppearanceGrads,
    pub medium: MediumGrads,
}

impl ModelGrads {
    pub fn zeros(model: &Model) -> Self {
        let n = model.cloud.primitives.len();
        let k = 3 * coeff_count(model.cloud.sh_degree);
        Self {
            cloud: CloudGrads::zeros(n),
            base_color: vec![vec![0.0; k]; n],
            appearance: model.appearance.zero_grads(),
            medium: model.medium.zero_grads(),
        }
    }

    pub fn group_grads(&self, g: ParamGroup) -> Vec<f64> {
        match g {
            ParamGroup::Position => self
                .cloud
                .position
                .iter()
                .flat_map(|v| [v.x, v.y, v.z])
                .collect(),
            ParamGroup::Rotation => self.cloud.rotation.iter().flatten().copied().collect(),
            ParamGroup::LogScale => self
                .cloud
                .log_scale
                .iter()
                .flat_map(|v| [v.x, v.y, v.z])
                .collect(),
            ParamGroup::Opacity => self.cloud.opacity_logit.clone(),
            ParamGroup::BaseColor => self.base_color.iter().flatten().copied().collect(),
            ParamGroup::PoseEmbedder => self.appearance.pose_embedder.clone(),
            ParamGroup::ColorNet => self.appearance.color_net.clone(),
            ParamGroup::BackscatterHead => self.medium.backscatter_head.clone(),
            ParamGroup::AttenuationHead => self.medium.attenuation_head.clone(),
        }
    }
}

/// Quantities that are stop-gradients during training but must be frozen
/// across finite-difference probes.
#[derive(Debug, Clone, Default)]
pub struct FrozenAux {
    /// Median-alignment scale for the pseudo depth; recomputed when absent.
    pub align_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ViewLosses {
    pub total: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub l_s: f64,
}

/// One rendered view with every cache the backward pass needs.
pub struct ViewRender {
    /// Object branch C-hat (water-free colors).
    pub object: ImageBuffer,
    /// Composed underwater image I.
    pub underwater: ImageBuffer,
    /// Alpha-blended camera-space depth.
    pub depth: ImageBuffer,
    /// Inverse form D = 1 / (depth + 1).
    pub depth_inv: ImageBuffer,
    pub alpha: ImageBuffer,
    pub embedding: Vec<f64>,
    /// Alignment scale actually applied to the pseudo depth (1 when unused).
    pub align_scale: f64,
    render: RenderOutput,
    projected: Vec<ProjectedGaussian>,
    color_caches: Vec<ColorCache>,
    embed_cache: EmbedCache,
    medium_fwd: Option<MediumForward>,
}

impl ViewRender {
    pub fn medium(&self) -> Option<&MediumForward> {
        self.medium_fwd.as_ref()
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Render one view through the full model (no losses).
pub fn render_view(
    model: &Model,
    camera: &Camera,
    settings: &RenderSettings,
    keep_cache: bool,
) -> Result<ViewRender> {
    let (embedding, embed_cache) = model.appearance.embed_pose(camera);
    let center = camera.center();
    let n = model.cloud.primitives.len();
    let mut colors = Vec::with_capacity(n);
    let mut color_caches = Vec::with_capacity(n);
    for p in &model.cloud.primitives {
        let view_vec = p.position - center;
        let (c, cache) =
            model
                .appearance
                .appearance_color(p, model.cloud.sh_degree, &view_vec, &embedding);
        colors.push(c);
        color_caches.push(cache);
    }
    let mut projected = project(&model.cloud, &colors, camera, settings)?;
    sort_by_depth(&mut projected);
    let render = blend(&projected, camera.width, camera.height, settings, keep_cache);

    let mut depth_inv = render.depth.clone();
    for v in &mut depth_inv.data {
        *v = 1.0 / (*v + 1.0);
    }

    let (underwater, medium_fwd) = if model.identity_medium {
        (render.color.clone(), None)
    } else {
        let ctx = MediumModel::build_context(&depth_inv, &embedding)?;
        let fwd = model.medium.estimate(&ctx, &render.depth);
        let composed = compose_underwater(&render.color, &fwd)?;
        (composed, Some(fwd))
    };

    Ok(ViewRender {
        object: render.color.clone(),
        underwater,
        depth: render.depth.clone(),
        depth_inv,
        alpha: render.alpha_acc.clone(),
        embedding,
        align_scale: 1.0,
        render,
        projected,
        color_caches,
        embed_cache,
        medium_fwd,
    })
}

/// Forward losses for one view; optionally accumulates all gradients.
///
/// `pseudo_z` is a camera-space depth map; it is converted to inverse form
/// and median-aligned to the rendered inverse depth (the scale is a
/// stop-gradient, overridable through `aux` for finite-difference probes).
pub fn evaluate_view(
    model: &Model,
    camera: &Camera,
    target: &ImageBuffer,
    pseudo_z: Option<&ImageBuffer>,
    settings: &RenderSettings,
    weights: &LossWeights,
    aux: &FrozenAux,
    mut grads: Option<&mut ModelGrads>,
) -> Result<(ViewLosses, ViewRender)> {
    let keep_cache = grads.is_some();
    let mut view = render_view(model, camera, settings, keep_cache)?;

    let (l_c, g_image) = loss_recon_with_grad(&view.underwater, target, weights)?;

    let mut pseudo_aligned = None;
    if let Some(z) = pseudo_z {
        let mut d_pseudo = z.clone();
        for v in &mut d_pseudo.data {
            *v = 1.0 / (*v + 1.0);
        }
        let scale = aux.align_scale.unwrap_or_else(|| {
            let m_p = median(&d_pseudo.data);
            if m_p.abs() < 1e-12 {
                1.0
            } else {
                median(&view.depth_inv.data) / m_p
            }
        });
        for v in &mut d_pseudo.data {
            *v *= scale;
        }
        view.align_scale = scale;
        pseudo_aligned = Some(d_pseudo);
    }

    let (l_d, g_depth_inv_loss) = match &pseudo_aligned {
        Some(dp) => loss_depth_with_grad(&view.depth_inv, dp, target, weights)?,
        None => (0.0, ImageBuffer::new(camera.width, camera.height, 1)),
    };

    let l_s;
    if let Some(g) = grads.as_deref_mut() {
        // Reconstruction gradient through the medium composition.
        let (g_object, mut g_depth, mut g_embedding) = if let Some(fwd) = &view.medium_fwd {
            let (g_obj, g_atten, g_bs) = compose_backward(&view.object, fwd, &g_image);
            let (g_ctx, g_z) = model.medium.backward(fwd, &g_bs, &g_atten, &mut g.medium);
            // Split the context gradient into inverse-depth and embedding parts.
            let n = camera.width * camera.height;
            let mut g_dinv = vec![0.0; n];
            let mut g_emb = vec![0.0; EMBED_DIM];
            for p in 0..n {
                g_dinv[p] = g_ctx[p * CONTEXT_CH];
                for j in 0..EMBED_DIM {
                    g_emb[j] += g_ctx[p * CONTEXT_CH + 1 + j];
                }
            }
            // Chain D = 1/(depth+1) and add the raw-z path from the formulas.
            let mut gd = g_z;
            for p in 0..n {
                let denom = view.depth.data[p] + 1.0;
                gd.data[p] += -g_dinv[p] / (denom * denom);
            }
            (g_obj, gd, g_emb)
        } else {
            (
                g_image.clone(),
                ImageBuffer::new(camera.width, camera.height, 1),
                vec![0.0; EMBED_DIM],
            )
        };

        // Depth-loss gradient arrives on D; chain to raw depth.
        for p in 0..camera.width * camera.height {
            let denom = view.depth.data[p] + 1.0;
            g_depth.data[p] += -g_depth_inv_loss.data[p] / (denom * denom);
        }

        let pgrads = blend_backward(&view.projected, &view.render, &g_object, Some(&g_depth))?;
        let cg = project_backward(&view.projected, &pgrads, &model.cloud, camera);
        for i in 0..model.cloud.primitives.len() {
            g.cloud.position[i] += cg.position[i];
            for k in 0..4 {
                g.cloud.rotation[i][k] += cg.rotation[i][k];
            }
            g.cloud.log_scale[i] += cg.log_scale[i];
            g.cloud.opacity_logit[i] += cg.opacity_logit[i];
            model.appearance.color_backward(
                &model.cloud.primitives[i],
                model.cloud.sh_degree,
                &view.color_caches[i],
                &cg.color[i],
                &mut g.appearance,
                &mut g.base_color[i],
                &mut g.cloud.position[i],
                &mut g_embedding,
            );
        }
        model
            .appearance
            .embed_backward(&view.embed_cache, &g_embedding, &mut g.appearance);

        l_s = loss_scale_with_grad(&model.cloud, weights, &mut g.cloud);
    } else {
        l_s = crate::losses::loss_scale(&model.cloud, weights);
    }

    Ok((
        ViewLosses {
            total: l_c + l_d + l_s,
            l_c,
            l_d,
            l_s,
        },
        view,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPrimitive;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn test_camera(w: usize, h: usize) -> Camera {
        Camera {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            fx: w as f64,
            fy: w as f64,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
        }
    }

    fn random_model(n: usize, sh_degree: usize, r: &mut ChaCha8Rng) -> Model {
        let k = coeff_count(sh_degree);
        let prims: Vec<GaussianPrimitive> = (0..n)
            .map(|_| {
                let mut p = GaussianPrimitive::default();
                p.position = Vector3::new(
                    r.gen_range(-0.5..0.5),
                    r.gen_range(-0.5..0.5),
                    r.gen_range(1.5..3.0),
                );
                p.rotation = [
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                ];
                p.log_scale = Vector3::new(
                    r.gen_range(-2.5..-1.5),
                    r.gen_range(-2.5..-1.5),
                    r.gen_range(-2.5..-1.5),
                );
                p.opacity_logit = r.gen_range(-0.5..1.5);
                p.base_color = (0..3 * k).map(|_| r.gen_range(-0.3..0.8)).collect();
                p.renormalize_rotation();
                p
            })
            .collect();
        let cloud = GaussianCloud::new(prims, sh_degree).unwrap();
        Model::new(cloud, 16, 4, r)
    }

    #[test]
    fn param_group_round_trip() {
        let mut r = rng(3);
        let mut model = random_model(5, 2, &mut r);
        for g in ParamGroup::ALL {
            let before = model.group_params(g);
            assert!(!before.is_empty());
            let mut tweaked = before.clone();
            for v in &mut tweaked {
                *v += 0.001;
            }
            model.set_group_params(g, &tweaked);
            assert_eq!(model.group_params(g), tweaked);
            model.set_group_params(g, &before);
            assert_eq!(model.group_params(g), before);
        }
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn identity_medium_matches_object_branch() {
        let mut r = rng(5);
        let mut model = random_model(8, 0, &mut r);
        model.identity_medium = true;
        let cam = test_camera(16, 16);
        let view = render_view(&model, &cam, &RenderSettings::default(), false).unwrap();
        assert_eq!(view.underwater.data, view.object.data);
    }

    #[test]
    fn render_is_deterministic() {
        let mut r = rng(6);
        let model = random_model(10, 1, &mut r);
        let cam = test_camera(16, 16);
        let a = render_view(&model, &cam, &RenderSettings::default(), false).unwrap();
        let b = render_view(&model, &cam, &RenderSettings::default(), false).unwrap();
        assert_eq!(a.underwater.data, b.underwater.data);
        assert_eq!(a.depth.data, b.depth.data);
    }

    #[test]
    fn full_pipeline_gradients_match_fd() {
        let mut r = rng(41);
        let model = random_model(6, 2, &mut r);
        let cam = test_camera(16, 16);
        let settings = RenderSettings {
            radius_sigmas: 1e3,
            ..Default::default()
        };
        let weights = LossWeights::default();
        let target = ImageBuffer::from_data(
            16,
            16,
            3,
            (0..768).map(|_| r.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let pseudo = ImageBuffer::from_data(
            16,
            16,
            1,
            (0..256).map(|_| r.gen_range(1.0..3.0)).collect(),
        )
        .unwrap();

        // Freeze the alignment scale at its unperturbed value.
        let (_, base_view) = evaluate_view(
            &model,
            &cam,
            &target,
            Some(&pseudo),
            &settings,
            &weights,
            &FrozenAux::default(),
            None,
        )
        .unwrap();
        let aux = FrozenAux {
            align_scale: Some(base_view.align_scale),
        };

        let mut grads = ModelGrads::zeros(&model);
        let (losses, _) = evaluate_view(
            &model,
            &cam,
            &target,
            Some(&pseudo),
            &settings,
            &weights,
            &aux,
            Some(&mut grads),
        )
        .unwrap();
        assert!(losses.total.is_finite());

        let loss_at = |m: &Model| -> f64 {
            evaluate_view(&m, &cam, &target, Some(&pseudo), &settings, &weights, &aux, None)
                .unwrap()
                .0
                .total
        };

        let step = 1e-5;
        for g in ParamGroup::ALL {
            let base = model.group_params(g);
            let analytic = grads.group_grads(g);
            assert_eq!(base.len(), analytic.len());
            let sample = (base.len() / 24).max(1);
            for i in (0..base.len()).step_by(sample) {
                let mut m2 = model.clone();
                let mut p = base.clone();
                p[i] += step;
                m2.set_group_params(g, &p);
                let lp = loss_at(&m2);
                p[i] -= 2.0 * step;
                m2.set_group_params(g, &p);
                let lm = loss_at(&m2);
                let fd = (lp - lm) / (2.0 * step);
                let denom = fd.abs().max(analytic[i].abs());
                let err = (fd - analytic[i]).abs();
                assert!(
                    err < 1e-4 * denom.max(1e-3),
                    "{} [{i}]: fd {fd} vs {}",
                    g.name(),
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let mut r = rng(12);
        let model = random_model(4, 0, &mut r);
        let snapshot = model.group_params(ParamGroup::Position);
        // Evaluating losses (even with grads) must not mutate parameters.
        let cam = test_camera(16, 16);
        let target = ImageBuffer::new(16, 16, 3);
        let mut grads = ModelGrads::zeros(&model);
        evaluate_view(
            &model,
            &cam,
            &target,
            None,
            &RenderSettings::default(),
            &LossWeights::default(),
            &FrozenAux::default(),
            Some(&mut grads),
        )
        .unwrap();
        assert_eq!(model.group_params(ParamGroup::Position), snapshot);
    }
}

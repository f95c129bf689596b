//! Finite-difference verification of the whole backward pass, run over many
//! seeded random scenes. Used by the CLI `gradcheck` subcommand and the
//! acceptance suite.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::LossWeights;
use crate::pipeline::{evaluate_view, FrozenAux, Model, ModelGrads, ParamGroup};
use crate::rasterizer::RenderSettings;
use crate::scene::{Camera, GaussianCloud, GaussianPrimitive, ImageBuffer};
use crate::sh::coeff_count;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub scenes: usize,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < REL_TOL)
    }
}

fn random_scene(
    seed: u64,
    idx: usize,
) -> (Model, Camera, ImageBuffer, ImageBuffer) {
    let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64 * 7919));
    let sh_degree = idx % 4;
    let k = coeff_count(sh_degree);
    let n = r.gen_range(4..=8);
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
            p.renormalize_rotation();
            p.log_scale = Vector3::new(
                r.gen_range(-2.5..-1.5),
                r.gen_range(-2.5..-1.5),
                r.gen_range(-2.5..-1.5),
            );
            p.opacity_logit = r.gen_range(-0.5..1.5);
            p.base_color = (0..3 * k).map(|_| r.gen_range(-0.3..0.8)).collect();
            p
        })
        .collect();
    let cloud = GaussianCloud::new(prims, sh_degree).unwrap();
    let mut model = Model::new(cloud, 8, 4, &mut r);
    // Random head outputs so medium gradients are non-degenerate.
    for g in [ParamGroup::BackscatterHead, ParamGroup::AttenuationHead] {
        let p: Vec<f64> = model
            .group_params(g)
            .iter()
            .map(|v| if *v == 0.0 { r.gen_range(-0.3..0.3) } else { *v })
            .collect();
        model.set_group_params(g, &p);
    }

    let size = 16usize;
    let camera = Camera {
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        fx: size as f64,
        fy: size as f64,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
    };
    let target = ImageBuffer::from_data(
        size,
        size,
        3,
        (0..size * size * 3).map(|_| r.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let pseudo = ImageBuffer::from_data(
        size,
        size,
        1,
        (0..size * size).map(|_| r.gen_range(1.0..3.0)).collect(),
    )
    .unwrap();
    (model, camera, target, pseudo)
}

/// Central differences over `scenes` seeded scenes; per group, the largest
/// relative error (errors below the absolute floor count as zero).
pub fn run_gradcheck(seed: u64, scenes: usize) -> Result<GradcheckReport> {
    // Wide bounding boxes keep FD probes away from raster-edge discontinuities.
    let settings = RenderSettings {
        radius_sigmas: 1e3,
        ..Default::default()
    };
    let weights = LossWeights::default();
    let mut groups: Vec<GroupReport> = ParamGroup::ALL
        .iter()
        .map(|&g| GroupReport {
            group: g,
            max_rel_err: 0.0,
            checked: 0,
        })
        .collect();

    for idx in 0..scenes {
        let (model, camera, target, pseudo) = random_scene(seed, idx);

        let (_, base_view) = evaluate_view(
            &model,
            &camera,
            &target,
            Some(&pseudo),
            &settings,
            &weights,
            &FrozenAux::default(),
            None,
        )?;
        let aux = FrozenAux {
            align_scale: Some(base_view.align_scale),
        };

        let mut grads = ModelGrads::zeros(&model);
        evaluate_view(
            &model,
            &camera,
            &target,
            Some(&pseudo),
            &settings,
            &weights,
            &aux,
            Some(&mut grads),
        )?;

        let loss_at = |m: &Model| -> Result<f64> {
            Ok(evaluate_view(
                m,
                &camera,
                &target,
                Some(&pseudo),
                &settings,
                &weights,
                &aux,
                None,
            )?
            .0
            .total)
        };

        for report in groups.iter_mut() {
            let g = report.group;
            let base = model.group_params(g);
            let analytic = grads.group_grads(g);
            let step_by = (base.len() / 12).max(1);
            for i in (0..base.len()).step_by(step_by) {
                let mut m2 = model.clone();
                let mut p = base.clone();
                p[i] += FD_STEP;
                m2.set_group_params(g, &p);
                let lp = loss_at(&m2)?;
                p[i] -= 2.0 * FD_STEP;
                m2.set_group_params(g, &p);
                let lm = loss_at(&m2)?;
                let fd = (lp - lm) / (2.0 * FD_STEP);
                let err = (fd - analytic[i]).abs();
                if err > ABS_TOL {
                    let rel = err / fd.abs().max(analytic[i].abs()).max(1e-12);
                    if rel > report.max_rel_err {
                        report.max_rel_err = rel;
                    }
                }
                report.checked += 1;
            }
        }
    }

    Ok(GradcheckReport {
        scenes,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_gradcheck(7, 3).unwrap();
        assert_eq!(report.scenes, 3);
        for g in &report.groups {
            assert!(g.checked > 0);
            assert!(
                g.max_rel_err < REL_TOL,
                "{}: max rel err {}",
                g.group.name(),
                g.max_rel_err
            );
        }
        assert!(report.pass());
    }
}

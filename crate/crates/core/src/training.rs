//! Training loop: per-view forward/backward, Adam steps with per-attribute
//! learning rates, periodic clone/split/prune density control, per-iteration
//! metrics, and checkpointing.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::config::Config;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::quat_to_rotation;
use crate::optim::Adam;
use crate::pipeline::{evaluate_view, render_view, FrozenAux, Model, ModelGrads, ParamGroup};
use crate::restoration::psnr;
use crate::scene::{fourier_feature, GaussianCloud};
use crate::sh::coeff_count;

pub const METRICS_HEADER: &str = "iteration,loss_recon,loss_depth,loss_scale,psnr_holdout";

struct GroupOptimizers {
    groups: Vec<(ParamGroup, Adam)>,
}

impl GroupOptimizers {
    fn new(model: &Model) -> Self {
        let groups = ParamGroup::ALL
            .iter()
            .map(|&g| (g, Adam::new(model.group_params(g).len())))
            .collect();
        Self { groups }
    }

    fn step(&mut self, model: &mut Model, grads: &ModelGrads, config: &Config, iteration: u64) {
        let lrs = config.learning_rates();
        let warmup = iteration <= config.medium_warmup && !model.identity_medium;
        for (g, opt) in &mut self.groups {
            if warmup
                && !matches!(g, ParamGroup::BackscatterHead | ParamGroup::AttenuationHead)
            {
                continue;
            }
            let lr = match g {
                ParamGroup::Position => lrs.position_at(iteration, config.iterations),
                ParamGroup::Rotation => lrs.rotation,
                ParamGroup::LogScale => lrs.scale,
                ParamGroup::Opacity => lrs.opacity,
                ParamGroup::BaseColor => lrs.color,
                ParamGroup::BackscatterHead | ParamGroup::AttenuationHead => lrs.medium,
                _ => lrs.networks,
            };
            let mut p = model.group_params(*g);
            let gr = grads.group_grads(*g);
            opt.step(&mut p, &gr, lr);
            model.set_group_params(*g, &p);
        }
        for prim in &mut model.cloud.primitives {
            prim.renormalize_rotation();
        }
    }

    fn resize(&mut self, keep: &[bool], added: usize, sh_degree: usize) {
        for (g, opt) in &mut self.groups {
            if let Some(stride) = g.stride(sh_degree) {
                opt.resize_rows(keep, added, stride);
            }
        }
    }
}

/// Average positional-gradient magnitude accumulated between densify passes.
#[derive(Debug, Clone)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: u64,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: 0,
        }
    }

    pub fn accumulate(&mut self, grads: &ModelGrads) {
        for (s, g) in self.grad_sum.iter_mut().zip(&grads.cloud.position) {
            *s += g.norm();
        }
        self.count += 1;
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
}

/// Clone small high-gradient Gaussians, split large ones (two children at
/// scale / split_factor along the widest axis), prune transparent ones.
/// Returns the keep mask so optimizer state can follow.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    stats: &DensifyStats,
    config: &Config,
) -> (Vec<bool>, DensifyOutcome) {
    let n = cloud.primitives.len();
    let mut keep = vec![true; n];
    let mut added = Vec::new();
    let mut outcome = DensifyOutcome {
        pruned: 0,
        cloned: 0,
        split: 0,
    };
    let bound = cloud.normalization_bound;
    for i in 0..n {
        let p = &cloud.primitives[i];
        if p.opacity() < config.prune_alpha {
            keep[i] = false;
            outcome.pruned += 1;
            continue;
        }
        if stats.average(i) <= config.densify_grad_threshold {
            continue;
        }
        let (axis, max_log) = p
            .log_scale
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let max_scale = max_log.exp();
        if max_scale < config.densify_size_threshold {
            let mut c = p.clone();
            c.appearance_feature = fourier_feature(&c.position, bound);
            added.push(c);
            outcome.cloned += 1;
        } else {
            keep[i] = false;
            outcome.split += 1;
            let rot = quat_to_rotation(&p.rotation);
            let dir = rot.column(axis).into_owned();
            let shrink = config.split_factor.ln();
            for sign in [-0.5, 0.5] {
                let mut c = p.clone();
                c.position = p.position + dir * (sign * max_scale);
                c.log_scale = p.log_scale - Vector3::repeat(shrink);
                c.appearance_feature = fourier_feature(&c.position, bound);
                added.push(c);
            }
        }
    }
    let mut prims = Vec::with_capacity(keep.iter().filter(|&&k| k).count() + added.len());
    for (i, prim) in cloud.primitives.drain(..).enumerate() {
        if keep[i] {
            prims.push(prim);
        }
    }
    prims.extend(added);
    cloud.primitives = prims;
    (keep, outcome)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations: u64,
    pub final_gaussians: usize,
    pub final_psnr_holdout: f64,
    /// One row per iteration, matching `METRICS_HEADER`.
    pub metrics: Vec<String>,
}

fn dump_nan_state(out_dir: &Path, iteration: u64, view: usize) -> Result<()> {
    let dir = out_dir.join("nan_dump");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("info.txt"),
        format!("non-finite loss at iteration {iteration}, view {view}\n"),
    )?;
    Ok(())
}

/// Run the optimization and leave `model.aqsp` plus `metrics.csv` in
/// `out_dir`.
pub fn train(
    dataset: &Dataset,
    init_cloud: GaussianCloud,
    config: &Config,
    seed: u64,
    out_dir: &Path,
) -> Result<(Model, TrainReport)> {
    dataset.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let expected = 3 * coeff_count(config.sh_degree);
    if init_cloud
        .primitives
        .first()
        .map(|p| p.base_color.len() != expected)
        .unwrap_or(false)
    {
        return Err(Error::Usage(format!(
            "initial cloud color width does not match sh_degree {}",
            config.sh_degree
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(
        init_cloud,
        config.appearance_hidden,
        config.medium_hidden,
        &mut rng,
    );
    model.identity_medium = config.identity_medium;

    let holdout = if dataset.len() > 1 {
        Some(config.holdout_view.min(dataset.len() - 1))
    } else {
        None
    };
    let train_views: Vec<usize> = (0..dataset.len()).filter(|v| Some(*v) != holdout).collect();

    let settings = config.render_settings();
    let weights = config.loss_weights();
    let mut opts = GroupOptimizers::new(&model);
    let mut stats = DensifyStats::new(model.cloud.primitives.len());
    let densify_stop = (config.iterations as f64 * config.densify_stop_fraction) as u64;

    let mut metrics = Vec::with_capacity(config.iterations as usize);
    let mut last_psnr = f64::NAN;
    for it in 1..=config.iterations {
        let view = train_views[rng.gen_range(0..train_views.len())];
        let mut grads = ModelGrads::zeros(&model);
        let (losses, _) = evaluate_view(
            &model,
            &dataset.cameras[view],
            &dataset.images[view],
            Some(&dataset.depths[view]),
            &settings,
            &weights,
            &FrozenAux::default(),
            Some(&mut grads),
        )?;
        if !losses.total.is_finite() {
            dump_nan_state(out_dir, it, view)?;
            return Err(Error::NonFinite(format!(
                "loss at iteration {it} (diagnostics in nan_dump/)"
            )));
        }
        // While only the medium heads train, the geometry gradients are never
        // applied; keep them out of the densification statistics too.
        let medium_only = it <= config.medium_warmup && !model.identity_medium;
        if !medium_only {
            stats.accumulate(&grads);
        }
        opts.step(&mut model, &grads, config, it);

        if config.densify_interval > 0
            && !medium_only
            && it % config.densify_interval == 0
            && it >= config.densify_warmup
            && it <= densify_stop
        {
            let (keep, _) = densify_and_prune(&mut model.cloud, &stats, config);
            let added = model.cloud.primitives.len() + keep.iter().filter(|&&k| !k).count()
                - keep.len();
            opts.resize(&keep, added, model.cloud.sh_degree);
            stats = DensifyStats::new(model.cloud.primitives.len());
        }

        let refresh = config.holdout_interval <= 1
            || it == 1
            || it % config.holdout_interval == 0
            || it == config.iterations;
        if refresh {
            last_psnr = match holdout {
                Some(h) => {
                    let view = render_view(&model, &dataset.cameras[h], &settings, false)?;
                    psnr(&view.underwater, &dataset.images[h])?
                }
                None => f64::NAN,
            };
        }
        metrics.push(format!(
            "{it},{:.6e},{:.6e},{:.6e},{:.4}",
            losses.l_c, losses.l_d, losses.l_s, last_psnr
        ));

        if config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0 {
            save_checkpoint(&model, config, &out_dir.join(format!("model_{it:06}.aqsp")))?;
        }
    }

    save_checkpoint(&model, config, &out_dir.join("model.aqsp"))?;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &metrics {
        csv.push_str(row);
        csv.push('\n');
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;

    let report = TrainReport {
        iterations: config.iterations,
        final_gaussians: model.cloud.primitives.len(),
        final_psnr_holdout: last_psnr,
        metrics,
    };
    Ok((model, report))
}

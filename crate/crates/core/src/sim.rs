//! Synthetic underwater dataset generation: build a known Gaussian scene,
//! render clean images and exact depth, then degrade through the
//! image-formation model I = J e^(-beta_d z) + B_inf (1 - e^(-beta_b z)).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, MediumTruth};
use crate::error::Result;
use crate::rasterizer::{blend, project, sort_by_depth, RenderSettings};
use crate::scene::{Camera, GaussianCloud, GaussianPrimitive, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    TexturedPlane,
    SphereField,
    BoxRoom,
}

impl SceneKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "textured-plane" => Some(Self::TexturedPlane),
            "sphere-field" => Some(Self::SphereField),
            "box-room" => Some(Self::BoxRoom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub gaussian_count: usize,
    pub camera_count: usize,
    pub camera_radius: f64,
    pub image_size: usize,
    pub medium: MediumTruth,
    /// Depth assigned where splat coverage is below 0.5 alpha.
    pub far_distance: f64,
    pub seed: u64,
}

/// Reference coefficients for the simulated water column.
pub fn reference_medium() -> MediumTruth {
    MediumTruth {
        beta_d: [1.3, 1.2, 0.9],
        beta_b: [0.95, 0.85, 0.7],
        b_inf: [0.07, 0.2, 0.39],
    }
}

/// The standard benchmark preset: box room, 500 Gaussians, 24 cameras, 64x64.
pub fn benchmark_preset(seed: u64) -> SceneSpec {
    SceneSpec {
        kind: SceneKind::BoxRoom,
        gaussian_count: 500,
        camera_count: 24,
        camera_radius: 1.0,
        image_size: 64,
        medium: reference_medium(),
        far_distance: 10.0,
        seed,
    }
}

pub struct Generated {
    pub dataset: Dataset,
    /// Truth cloud perturbed by seeded noise; the training starting point.
    pub init_cloud: GaussianCloud,
    pub truth_cloud: GaussianCloud,
}

/// Degrade a clean image through the formation model using per-pixel depth.
pub fn apply_medium(clean: &ImageBuffer, z: &ImageBuffer, truth: &MediumTruth) -> ImageBuffer {
    let mut out = clean.clone();
    let n = clean.width * clean.height;
    for p in 0..n {
        let zp = z.data[p];
        for c in 0..3 {
            let direct = clean.data[p * 3 + c] * (-truth.beta_d[c] * zp).exp();
            let back = truth.b_inf[c] * (1.0 - (-truth.beta_b[c] * zp).exp());
            out.data[p * 3 + c] = direct + back;
        }
    }
    out
}

/// Exact analytic inversion of `apply_medium` given the same depth map.
pub fn invert_medium(degraded: &ImageBuffer, z: &ImageBuffer, truth: &MediumTruth) -> ImageBuffer {
    let mut out = degraded.clone();
    let n = degraded.width * degraded.height;
    for p in 0..n {
        let zp = z.data[p];
        for c in 0..3 {
            let back = truth.b_inf[c] * (1.0 - (-truth.beta_b[c] * zp).exp());
            out.data[p * 3 + c] =
                (degraded.data[p * 3 + c] - back) * (truth.beta_d[c] * zp).exp();
        }
    }
    out
}

/// World-to-camera rotation with +z forward and image y pointing down.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Matrix3<f64> {
    let forward = (target - eye).normalize();
    let up = if forward.z.abs() > 0.99 {
        Vector3::new(0.0, 1.0, 0.0)
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
}

fn make_camera(eye: Vector3<f64>, target: Vector3<f64>, size: usize) -> Camera {
    let rotation = look_at(eye, target);
    Camera {
        rotation,
        translation: -(rotation * eye),
        fx: 0.8 * size as f64,
        fy: 0.8 * size as f64,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
    }
}

/// Smooth positive texture in [0.05, 0.95] from a world position.
fn texture_color(p: &Vector3<f64>, phase: f64) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (i, f) in [(0usize, 3.1), (1, 2.3), (2, 4.7)] {
        let v = 0.5
            + 0.3 * (f * p.x + phase).sin() * (f * 0.7 * p.y + 0.5 * phase).cos()
            + 0.15 * (f * 0.9 * p.z).sin();
        c[i] = v.clamp(0.05, 0.95);
    }
    c
}

fn prim(position: Vector3<f64>, log_scale: Vector3<f64>, color: [f64; 3]) -> GaussianPrimitive {
    let mut g = GaussianPrimitive::default();
    g.position = position;
    g.log_scale = log_scale;
    g.opacity_logit = 4.0;
    g.base_color = color.to_vec();
    g
}

fn build_truth_cloud(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<GaussianCloud> {
    let mut prims = Vec::with_capacity(spec.gaussian_count);
    match spec.kind {
        SceneKind::TexturedPlane => {
            let side = (spec.gaussian_count as f64).sqrt().ceil() as usize;
            let spacing = 2.0 / side as f64;
            let s = (spacing * 0.8).ln();
            'outer: for gy in 0..side {
                for gx in 0..side {
                    if prims.len() == spec.gaussian_count {
                        break 'outer;
                    }
                    let p = Vector3::new(
                        -1.0 + (gx as f64 + 0.5) * spacing,
                        -1.0 + (gy as f64 + 0.5) * spacing,
                        0.0,
                    );
                    prims.push(prim(
                        p,
                        Vector3::new(s, s, (spacing * 0.05).ln()),
                        texture_color(&p, 0.0),
                    ));
                }
            }
        }
        SceneKind::SphereField => {
            for _ in 0..spec.gaussian_count {
                let p = loop {
                    let v = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    if v.norm() <= 1.0 {
                        break v;
                    }
                };
                let s = rng.gen_range(0.08..0.16f64).ln();
                prims.push(prim(p, Vector3::new(s, s, s), texture_color(&p, 1.0)));
            }
        }
        SceneKind::BoxRoom => {
            // Gaussians tile the six interior faces of a box of half-size 2.
            let half = 2.0;
            let per_face = spec.gaussian_count / 6;
            let side = (per_face as f64).sqrt().ceil() as usize;
            let spacing = 2.0 * half / side as f64;
            // Cap the in-plane footprint: oversized wall splats leak into
            // cameras that sit beside them and corrupt nearby-view depths.
            let s_in = (spacing * 0.8).min(0.35).ln();
            let s_thin = 0.02f64.ln();
            for face in 0..6 {
                for gy in 0..side {
                    for gx in 0..side {
                        if prims.len() == spec.gaussian_count {
                            break;
                        }
                        let u = -half + (gx as f64 + 0.5) * spacing;
                        let v = -half + (gy as f64 + 0.5) * spacing;
                        let (p, ls) = match face {
                            0 => (Vector3::new(half, u, v), Vector3::new(s_thin, s_in, s_in)),
                            1 => (Vector3::new(-half, u, v), Vector3::new(s_thin, s_in, s_in)),
                            2 => (Vector3::new(u, half, v), Vector3::new(s_in, s_thin, s_in)),
                            3 => (Vector3::new(u, -half, v), Vector3::new(s_in, s_thin, s_in)),
                            4 => (Vector3::new(u, v, half), Vector3::new(s_in, s_in, s_thin)),
                            _ => (Vector3::new(u, v, -half), Vector3::new(s_in, s_in, s_thin)),
                        };
                        prims.push(prim(p, ls, texture_color(&p, face as f64)));
                    }
                }
            }
        }
    }
    GaussianCloud::new(prims, 0)
}

fn build_cameras(spec: &SceneSpec) -> Vec<Camera> {
    let n = spec.camera_count;
    let mut cams = Vec::with_capacity(n);
    for i in 0..n {
        let angle = i as f64 / n as f64 * std::f64::consts::TAU;
        let (eye, target) = match spec.kind {
            SceneKind::TexturedPlane => {
                // Ring above the plane, looking at its center.
                let eye = Vector3::new(
                    spec.camera_radius * angle.cos(),
                    spec.camera_radius * angle.sin(),
                    -2.0,
                );
                (eye, Vector3::zeros())
            }
            SceneKind::SphereField => {
                let eye = Vector3::new(
                    spec.camera_radius * angle.cos(),
                    spec.camera_radius * angle.sin(),
                    0.6,
                );
                (eye, Vector3::zeros())
            }
            SceneKind::BoxRoom => {
                // Offset ring looking obliquely across the room so each view
                // spans both a nearby wall section and the far side; a narrow
                // per-view depth range would make the depth-dependent medium
                // indistinguishable from a per-view color shift.
                let dir = Vector3::new(angle.cos(), angle.sin(), 0.0);
                let look = angle + 1.25;
                let eye = dir * spec.camera_radius
                    + Vector3::new(0.0, 0.0, 0.4 * ((i % 3) as f64 - 1.0));
                let target = Vector3::new(2.0 * look.cos(), 2.0 * look.sin(), 0.0);
                (eye, target)
            }
        };
        cams.push(make_camera(eye, target, spec.image_size));
    }
    cams
}

/// Render the truth cloud for one camera: clean image, fill depth, coverage.
fn render_truth(
    cloud: &GaussianCloud,
    camera: &Camera,
    settings: &RenderSettings,
    far: f64,
) -> Result<(ImageBuffer, ImageBuffer)> {
    let colors: Vec<[f64; 3]> = cloud.primitives.iter().map(|p| p.dc_color()).collect();
    let mut projected = project(cloud, &colors, camera, settings)?;
    sort_by_depth(&mut projected);
    let out = blend(&projected, camera.width, camera.height, settings, false);
    let mut z = out.depth.clone();
    for (p, zv) in z.data.iter_mut().enumerate() {
        if out.alpha_acc.data[p] < 0.5 {
            *zv = far;
        }
    }
    Ok((out.color, z))
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth_cloud = build_truth_cloud(spec, &mut rng)?;
    let cameras = build_cameras(spec);
    let settings = RenderSettings::default();

    let mut images = Vec::with_capacity(cameras.len());
    let mut clean = Vec::with_capacity(cameras.len());
    let mut depths = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let (j, z) = render_truth(&truth_cloud, cam, &settings, spec.far_distance)?;
        images.push(apply_medium(&j, &z, &spec.medium));
        clean.push(j);
        depths.push(z);
    }

    // Perturbed initialization: positions within 2% of the scene extent,
    // colors within 0.05.
    let extent = {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &truth_cloud.primitives {
            lo = lo.inf(&p.position);
            hi = hi.sup(&p.position);
        }
        (hi - lo).norm()
    };
    let jitter = 0.02 * extent;
    let mut init_prims = truth_cloud.primitives.clone();
    for p in &mut init_prims {
        for k in 0..3 {
            p.position[k] += rng.gen_range(-jitter..jitter);
        }
        for c in &mut p.base_color {
            *c = (*c + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
    }
    let init_cloud = GaussianCloud::new(init_prims, truth_cloud.sh_degree)?;

    let dataset = Dataset {
        cameras,
        images,
        clean: Some(clean),
        depths,
        medium_truth: Some(spec.medium.clone()),
    };
    dataset.validate()?;
    Ok(Generated {
        dataset,
        init_cloud,
        truth_cloud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(kind: SceneKind, seed: u64) -> SceneSpec {
        SceneSpec {
            kind,
            gaussian_count: 120,
            camera_count: 6,
            camera_radius: if kind == SceneKind::BoxRoom { 1.0 } else { 2.0 },
            image_size: 32,
            medium: reference_medium(),
            far_distance: 10.0,
            seed,
        }
    }

    #[test]
    fn vacuum_medium_is_identity() {
        let truth = MediumTruth {
            beta_d: [0.0; 3],
            beta_b: [0.0; 3],
            b_inf: [0.5, 0.5, 0.5],
        };
        let j = ImageBuffer::from_data(4, 4, 3, (0..48).map(|i| i as f64 / 48.0).collect()).unwrap();
        let z = ImageBuffer::from_data(4, 4, 1, vec![2.0; 16]).unwrap();
        let i = apply_medium(&j, &z, &truth);
        assert_eq!(i.data, j.data);
    }

    #[test]
    fn zero_depth_is_identity() {
        let truth = reference_medium();
        let j = ImageBuffer::from_data(4, 4, 3, (0..48).map(|i| i as f64 / 48.0).collect()).unwrap();
        let z = ImageBuffer::new(4, 4, 1);
        let i = apply_medium(&j, &z, &truth);
        for (a, b) in i.data.iter().zip(&j.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn white_image_unit_depth_oracle() {
        // Per-channel closed form: e^(-beta_d) + b_inf (1 - e^(-beta_b)).
        let truth = reference_medium();
        let j = ImageBuffer::from_data(1, 1, 3, vec![1.0; 3]).unwrap();
        let z = ImageBuffer::from_data(1, 1, 1, vec![1.0]).unwrap();
        let i = apply_medium(&j, &z, &truth);
        for c in 0..3 {
            let expect =
                (-truth.beta_d[c]).exp() + truth.b_inf[c] * (1.0 - (-truth.beta_b[c]).exp());
            assert!((i.data[c] - expect).abs() < 1e-12);
        }
        assert!((i.data[0] - 0.31546).abs() < 1e-5);
        assert!((i.data[1] - 0.41571).abs() < 1e-5);
        assert!((i.data[2] - 0.60290).abs() < 1e-5);
    }

    #[test]
    fn inverse_recovers_clean_images() {
        for kind in [SceneKind::TexturedPlane, SceneKind::SphereField, SceneKind::BoxRoom] {
            let gen = generate_scene(&small_spec(kind, 42)).unwrap();
            let truth = gen.dataset.medium_truth.as_ref().unwrap();
            let clean = gen.dataset.clean.as_ref().unwrap();
            for v in 0..gen.dataset.len() {
                let rec = invert_medium(&gen.dataset.images[v], &gen.dataset.depths[v], truth);
                let linf = rec
                    .data
                    .iter()
                    .zip(&clean[v].data)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(linf < 1e-6, "{kind:?} view {v}: L_inf {linf}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(&small_spec(SceneKind::BoxRoom, 9)).unwrap();
        let b = generate_scene(&small_spec(SceneKind::BoxRoom, 9)).unwrap();
        for v in 0..a.dataset.len() {
            assert_eq!(a.dataset.images[v].data, b.dataset.images[v].data);
            assert_eq!(a.dataset.depths[v].data, b.dataset.depths[v].data);
        }
        for (x, y) in a.init_cloud.primitives.iter().zip(&b.init_cloud.primitives) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.base_color, y.base_color);
        }
    }

    #[test]
    fn init_cloud_is_bounded_perturbation() {
        let gen = generate_scene(&small_spec(SceneKind::BoxRoom, 3)).unwrap();
        let mut extent_lo = Vector3::repeat(f64::INFINITY);
        let mut extent_hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &gen.truth_cloud.primitives {
            extent_lo = extent_lo.inf(&p.position);
            extent_hi = extent_hi.sup(&p.position);
        }
        let max_jitter = 0.02 * (extent_hi - extent_lo).norm();
        let mut any_moved = false;
        for (a, b) in gen.init_cloud.primitives.iter().zip(&gen.truth_cloud.primitives) {
            let d = (a.position - b.position).norm();
            assert!(d <= max_jitter * 3.0_f64.sqrt() + 1e-12);
            if d > 0.0 {
                any_moved = true;
            }
            for (x, y) in a.base_color.iter().zip(&b.base_color) {
                assert!((x - y).abs() <= 0.05 + 1e-12);
            }
        }
        assert!(any_moved);
    }

    #[test]
    fn box_room_depths_cover_expected_range() {
        let mut spec = small_spec(SceneKind::BoxRoom, 5);
        spec.gaussian_count = 480;
        let gen = generate_scene(&spec).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut covered = 0usize;
        let mut total = 0usize;
        for d in &gen.dataset.depths {
            for &z in &d.data {
                total += 1;
                if z < gen.dataset.medium_truth.as_ref().map(|_| 9.0).unwrap() {
                    covered += 1;
                    lo = lo.min(z);
                    hi = hi.max(z);
                }
            }
        }
        // Walls dominate the frame; the oblique rig spans near wall sections
        // through far corners without grazing the camera itself.
        assert!(covered as f64 > 0.9 * total as f64);
        assert!(lo > 0.6, "min depth {lo}");
        assert!(hi < 4.5, "max depth {hi}");
        assert!(hi - lo > 1.0, "depth span {lo}..{hi} too narrow");
    }

    #[test]
    fn look_at_is_orthonormal() {
        let r = look_at(Vector3::new(0.5, 0.2, -1.0), Vector3::zeros());
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(err < 1e-12);
        // Forward row maps the view direction to +z.
        let f = (Vector3::zeros() - Vector3::new(0.5, 0.2, -1.0)).normalize();
        let mapped = r * f;
        assert!((mapped - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }
}

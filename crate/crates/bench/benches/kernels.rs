use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aquasplat_core::losses::{ssim, LossWeights};
use aquasplat_core::pipeline::{evaluate_view, render_view, FrozenAux, Model, ModelGrads};
use aquasplat_core::sim::{benchmark_preset, generate_scene};
use aquasplat_core::RenderSettings;

struct Fixture {
    model: Model,
    camera: aquasplat_core::Camera,
    target: aquasplat_core::ImageBuffer,
    depth: aquasplat_core::ImageBuffer,
    settings: RenderSettings,
}

fn fixture() -> Fixture {
    let mut spec = benchmark_preset(11);
    spec.gaussian_count = 200;
    spec.camera_count = 4;
    let generated = generate_scene(&spec).expect("scene");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = Model::new(generated.init_cloud, 32, 16, &mut rng);
    Fixture {
        model,
        camera: generated.dataset.cameras[0].clone(),
        target: generated.dataset.images[0].clone(),
        depth: generated.dataset.depths[0].clone(),
        settings: RenderSettings::default(),
    }
}

fn bench_render_forward(c: &mut Criterion) {
    let f = fixture();
    c.bench_function("render_forward_64x64_200g", |b| {
        b.iter(|| render_view(&f.model, &f.camera, &f.settings, false).unwrap())
    });
}

fn bench_train_step_backward(c: &mut Criterion) {
    let f = fixture();
    let weights = LossWeights::default();
    let aux = FrozenAux::default();
    c.bench_function("evaluate_view_backward_64x64_200g", |b| {
        b.iter(|| {
            let mut grads = ModelGrads::zeros(&f.model);
            evaluate_view(
                &f.model,
                &f.camera,
                &f.target,
                Some(&f.depth),
                &f.settings,
                &weights,
                &aux,
                Some(&mut grads),
            )
            .unwrap()
        })
    });
}

fn bench_ssim(c: &mut Criterion) {
    let f = fixture();
    let render = render_view(&f.model, &f.camera, &f.settings, false).unwrap();
    c.bench_function("ssim_64x64", |b| {
        b.iter(|| ssim(&render.underwater, &f.target).unwrap())
    });
}

criterion_group!(
    kernels,
    bench_render_forward,
    bench_train_step_backward,
    bench_ssim
);
criterion_main!(kernels);

//! Development diagnostics: depth-range statistics for generated scenes and
//! a closed-loop training analysis. Not part of the shipped CLI.

use std::time::Instant;

use aquasplat_core::config::Config;
use aquasplat_core::pipeline::render_view;
use aquasplat_core::restoration::{acs_white_balance, psnr};
use aquasplat_core::sim::{benchmark_preset, generate_scene};
use aquasplat_core::training::train;

fn arg(name: &str) -> Option<String> {
    let args: Vec<String> = std::env::args().collect();
    args.iter()
        .position(|a| a == name)
        .and_then(|i| args.get(i + 1).cloned())
}

fn depth_stats() {
    let spec = benchmark_preset(1);
    let generated = generate_scene(&spec).expect("scene");
    for (v, d) in generated.dataset.depths.iter().enumerate() {
        let mut vals: Vec<f64> = d.data.clone();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        println!(
            "view {v:2}: z min {:.2} p10 {:.2} med {:.2} p90 {:.2} max {:.2}",
            vals[0],
            vals[n / 10],
            vals[n / 2],
            vals[9 * n / 10],
            vals[n - 1]
        );
    }
}

fn train_diag() {
    let seed: u64 = arg("--seed").map(|s| s.parse().unwrap()).unwrap_or(1);
    let iters: u64 = arg("--iters").map(|s| s.parse().unwrap()).unwrap_or(2000);
    let spec = benchmark_preset(seed);
    let generated = generate_scene(&spec).expect("scene");
    let mut config = Config::default();
    config.sh_degree = generated.init_cloud.sh_degree;
    config.iterations = iters;
    if let Some(v) = arg("--lr-networks") {
        config.lr_networks = v.parse().unwrap();
    }
    if let Some(v) = arg("--lr-color") {
        config.lr_color = v.parse().unwrap();
    }
    if let Some(v) = arg("--lr-medium") {
        config.lr_medium = v.parse().unwrap();
    }
    if let Some(v) = arg("--medium-warmup") {
        config.medium_warmup = v.parse().unwrap();
    }
    let dir = tempfile::tempdir().expect("tempdir");
    let start = Instant::now();
    let (model, report) = train(&generated.dataset, generated.init_cloud, &config, seed, dir.path())
        .expect("training");
    let elapsed = start.elapsed().as_secs_f64();

    let holdout = config.holdout_view;
    let settings = config.render_settings();
    let view = render_view(&model, &generated.dataset.cameras[holdout], &settings, false)
        .expect("render");
    let clean = &generated.dataset.clean.as_ref().unwrap()[holdout];
    let degraded = &generated.dataset.images[holdout];
    let truth = generated.dataset.medium_truth.clone().unwrap();

    println!("elapsed {elapsed:.0}s, {} gaussians", report.final_gaussians);
    println!("composed-vs-degraded (holdout): {:.2} dB", report.final_psnr_holdout);
    println!("object-vs-clean raw: {:.2} dB", psnr(&view.object, clean).unwrap());
    let restored = acs_white_balance(&view.object).unwrap();
    println!("object-vs-clean acs: {:.2} dB", psnr(&restored, clean).unwrap());
    println!("degraded-vs-clean:   {:.2} dB", psnr(degraded, clean).unwrap());

    // Channel statistics and an affine-corrected upper bound: how good would
    // the restoration be if each channel were optimally rescaled?
    let n_px = clean.width * clean.height;
    for c in 0..3 {
        let jm: f64 = (0..n_px).map(|p| view.object.data[p * 3 + c]).sum::<f64>() / n_px as f64;
        let cm: f64 = (0..n_px).map(|p| clean.data[p * 3 + c]).sum::<f64>() / n_px as f64;
        let jlo = (0..n_px).map(|p| view.object.data[p * 3 + c]).fold(f64::INFINITY, f64::min);
        let jhi = (0..n_px).map(|p| view.object.data[p * 3 + c]).fold(0.0f64, f64::max);
        println!("ch{c}: J mean {jm:.3} range [{jlo:.3},{jhi:.3}] vs clean mean {cm:.3}");
    }
    let mut affine = view.object.clone();
    for c in 0..3 {
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in 0..n_px {
            let x = view.object.data[p * 3 + c];
            let y = clean.data[p * 3 + c];
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let nf = n_px as f64;
        let denom = sxx - sx * sx / nf;
        let a = if denom.abs() > 1e-12 { (sxy - sx * sy / nf) / denom } else { 1.0 };
        let b = (sy - a * sx) / nf;
        for p in 0..n_px {
            affine.data[p * 3 + c] = a * view.object.data[p * 3 + c] + b;
        }
    }
    println!("object-vs-clean per-channel-affine bound: {:.2} dB", psnr(&affine, clean).unwrap());
    let acs_clean = acs_white_balance(clean).unwrap();
    println!("acs(clean)-vs-clean ceiling: {:.2} dB", psnr(&acs_clean, clean).unwrap());
    let mut clamped = view.object.clone();
    for v in clamped.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let acs2 = acs_white_balance(&clamped).unwrap();
    println!("object clamped then acs: {:.2} dB", psnr(&acs2, clean).unwrap());

    let fwd = view.medium().expect("medium");
    let n = view.alpha.data.len();
    let mut used = 0usize;
    let (mut z_lo, mut z_hi) = (f64::INFINITY, 0.0f64);
    let mut worst = [0.0f64; 3];
    let mut mean_fit = [0.0f64; 3];
    let mut mean_ref = [0.0f64; 3];
    let mut bs_err = [0.0f64; 3];
    for p in 0..n {
        if view.alpha.data[p] < 0.9 {
            continue;
        }
        used += 1;
        let z = fwd.z.data[p];
        z_lo = z_lo.min(z);
        z_hi = z_hi.max(z);
        for c in 0..3 {
            let fitted = fwd.attenuation.data[p * 3 + c];
            let reference = (-truth.beta_d[c] * z).exp();
            worst[c] = worst[c].max((fitted - reference).abs());
            mean_fit[c] += fitted;
            mean_ref[c] += reference;
            let bs_ref = truth.b_inf[c] * (1.0 - (-truth.beta_b[c] * z).exp());
            bs_err[c] = bs_err[c].max((fwd.backscatter.data[p * 3 + c] - bs_ref).abs());
        }
    }
    for c in 0..3 {
        mean_fit[c] /= used as f64;
        mean_ref[c] /= used as f64;
    }
    println!("covered pixels {used}/{n}, z in [{z_lo:.2}, {z_hi:.2}]");
    println!("attenuation worst |err| per channel: {worst:.4?}");
    println!("attenuation mean fitted {mean_fit:.4?} vs reference {mean_ref:.4?}");
    println!("backscatter worst |err| per channel: {bs_err:.4?}");
}

fn main() {
    match std::env::args().nth(1).as_deref() {
        Some("depthstats") => depth_stats(),
        Some("train") => train_diag(),
        other => {
            eprintln!("usage: diag depthstats|train [--seed N --iters N --lr-networks X --lr-color X], got {other:?}");
            std::process::exit(1);
        }
    }
}

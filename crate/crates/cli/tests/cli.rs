use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aquasplat"))
}

fn run(args: &[&str]) -> std::process::Output {
    bin().args(args).output().expect("spawn aquasplat")
}

fn assert_exit(out: &std::process::Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    let data_s = data.to_str().unwrap();
    let run_s = run_dir.to_str().unwrap();

    let out = run(&[
        "simulate", "--kind", "box-room", "--gaussians", "60", "--cameras", "4",
        "--size", "32", "--out", data_s, "--seed", "5",
    ]);
    assert_exit(&out, 0, "simulate");
    for f in [
        "cameras.json", "medium.json", "init.ply",
        "images/000.png", "clean/000.png", "depth/000.f32",
    ] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "iterations = 20\nappearance_hidden = 16\n").unwrap();
    let out = run(&[
        "train", "--data", data_s, "--out", run_s, "--seed", "5",
        "--config", cfg.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "train");
    let ckpt = run_dir.join("model.aqsp");
    assert!(ckpt.is_file());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iteration,loss_recon,loss_depth,loss_scale,psnr_holdout\n"));
    assert_eq!(metrics.lines().count(), 21);

    let ckpt_s = ckpt.to_str().unwrap();
    let render_png = tmp.path().join("render.png");
    let out = run(&[
        "render", "--checkpoint", ckpt_s, "--camera", "1",
        "--data", data_s, "--out", render_png.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "render");
    assert!(render_png.is_file());

    // --camera also accepts a path to a single camera record.
    let cameras: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("cameras.json")).unwrap())
            .unwrap();
    let one_cam = tmp.path().join("cam.json");
    std::fs::write(&one_cam, serde_json::to_string(&cameras[0]).unwrap()).unwrap();
    let restore_png = tmp.path().join("restore.png");
    let out = run(&[
        "restore", "--checkpoint", ckpt_s, "--camera", one_cam.to_str().unwrap(),
        "--out", restore_png.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "restore");
    assert!(restore_png.is_file());

    let eval_csv = tmp.path().join("metrics_eval.csv");
    let out = run(&[
        "eval", "--checkpoint", ckpt_s, "--data", data_s,
        "--out", eval_csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "eval");
    let eval = std::fs::read_to_string(&eval_csv).unwrap();
    assert!(eval.starts_with("view_id,psnr_render,ssim_render,psnr_restored,ssim_restored\n"));
    assert_eq!(eval.lines().count(), 5);

    let report_csv = tmp.path().join("medium.csv");
    let out = run(&[
        "medium-report", "--checkpoint", ckpt_s, "--data", data_s,
        "--out", report_csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "medium-report");
    assert!(std::fs::read_to_string(&report_csv)
        .unwrap()
        .starts_with("view_id,channel,b_inf,b,b_res,d"));
}

#[test]
fn gradcheck_subcommand() {
    let out = run(&["gradcheck", "--seed", "7", "--scenes", "2"]);
    assert_exit(&out, 0, "gradcheck");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max_rel_err"));
}

#[test]
fn exit_codes() {
    // Usage errors: missing mandatory --seed, unknown flag, bad camera index.
    assert_exit(
        &run(&["simulate", "--out", "/tmp/nowhere"]),
        1,
        "simulate without --seed",
    );
    assert_exit(&run(&["frobnicate"]), 1, "unknown subcommand");

    // Runtime error: checkpoint that does not exist.
    let out = run(&[
        "render", "--checkpoint", "/definitely/missing.aqsp",
        "--camera", "0", "--data", "/also/missing", "--out", "/tmp/x.png",
    ]);
    assert_exit(&out, 2, "missing checkpoint");

    assert!(Path::new(env!("CARGO_BIN_EXE_aquasplat")).is_file());
}

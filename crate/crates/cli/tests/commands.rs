use std::fs;
use std::path::Path;
use std::process::Command;

use reflfield::renderer::RenderedImage;
use reflfield::scenes::{load_dataset, Decode, Split};
use reflfield_cli::commands::{evaluate, RESULTS_FILE};
use reflfield_cli::metrics::PSNR_CAP;

const TINY: &str = r#"
scene_dir = "data"
out_dir = "run"

[dataset]
n_train = 4
n_test = 2
width = 8
height = 8

[field]
spatial_depth = 1
spatial_width = 8
directional_depth = 1
directional_width = 8
bottleneck = 2

[train]
iterations = 12
warmup = 4
batch_rays = 16
chunk_rays = 8
checkpoint_every = 5

[train.render]
samples = 8
"#;

fn reflfield(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_reflfield"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = reflfield(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), TINY).unwrap();
    let cfg = ["--config", "run.toml"];

    let gen = ok(&[&["oracle-gen"][..], &cfg].concat(), d);
    assert!(gen.contains("4 train and 2 test"));
    assert!(d.join("data/transforms_train.json").exists());

    let train = ok(&[&["train", "--deterministic"][..], &cfg].concat(), d);
    assert!(train.contains("trained 12 steps"));
    for f in ["final.rfld", "final.meta", "step_000005.rfld", "step_000010.rfld", "train.log", "config.toml"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }

    ok(&[&["render"][..], &cfg].concat(), d);
    for f in ["r_1.png", "r_1_normal.png", "r_1_pred_normal.png", "r_1_opacity.png"] {
        assert!(d.join("run/render").join(f).exists(), "{f}");
    }

    let eval = ok(&[&["eval"][..], &cfg].concat(), d);
    let results = fs::read_to_string(d.join("run").join(RESULTS_FILE)).unwrap();
    assert_eq!(eval, results);
    assert!(results.lines().any(|l| l.starts_with("psnr_mean=")));
    assert!(results.lines().any(|l| l.starts_with("mae_mean=")));
    assert!(results.lines().any(|l| l.starts_with("image_1_mae=")));

    ok(&[&["edit", "--diffuse-rgb", "0.9,0.1,0.1", "--tint-scale", "0"][..], &cfg].concat(), d);
    assert!(d.join("run/edit/r_0.png").exists());
    // Geometry maps are shared between plain and edited renders.
    for f in ["r_0_normal.png", "r_0_opacity.png"] {
        assert_eq!(fs::read(d.join("run/render").join(f)).unwrap(), fs::read(d.join("run/edit").join(f)).unwrap());
    }
}

#[test]
fn errors_exit_with_status_two_and_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = reflfield(&["train", "--config", "missing.toml"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: ") && err.contains("missing.toml"), "{err}");

    fs::write(d.join("run.toml"), TINY).unwrap();
    let out = reflfield(&["edit", "--config", "run.toml", "--diffuse-rgb", "1,2"], d);
    assert!(!out.status.success());
    let out = reflfield(&["edit", "--config", "run.toml", "--roughness-scale", "-1"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ground_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), TINY).unwrap();
    ok(&["oracle-gen", "--config", "run.toml"], d);
    let ds = load_dataset(&d.join("data"), Split::Test, Decode::Srgb).unwrap();
    let views: Vec<RenderedImage> = ds
        .frames
        .iter()
        .map(|f| RenderedImage {
            width: ds.width,
            height: ds.height,
            color: f.image.clone(),
            opacity: f.mask.as_ref().unwrap().iter().map(|&m| m as u8 as f64).collect(),
            normals: f.normals.clone().unwrap(),
            pred_normals: f.normals.clone().unwrap(),
            depth: vec![0.0; ds.pixel_count()],
        })
        .collect();
    let report = evaluate(&ds, &views).unwrap();
    assert!(report.psnr.iter().all(|&p| p == PSNR_CAP));
    assert_eq!(report.mae_mean, 0.0);
    assert_eq!(report.mask_source, "ground-truth foreground");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const CONFIG: &str = "\
seed = 3
grid.width = 8
grid.height = 8
steps = 6
lr_schedule = 0:1,4:0.1
plane_batch = 4
rays_per_plane = 8
reg_weight = 0.001
checkpoint_every = 0
view.0.heading_rad = 0
view.0.incidence_rad = 0.6
view.0.n_range_bins = 16
view.0.n_rays = 8
view.1.heading_rad = 1.7
view.1.incidence_rad = 0.9
view.1.n_range_bins = 16
view.1.n_rays = 8
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radar-fields"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("spawn radar-fields")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, CONFIG).unwrap();
    let data = dir.join("data");
    ok(&[
        "simulate", "--scene", "pyramid", "--views", s(&cfg), "--seed", "9", "--out", s(&data), "--size", "8",
    ]);
    (cfg, data)
}

#[test]
fn simulate_writes_views_and_render_reproduces_them() {
    let dir = tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    for name in ["dsm.rdf", "view_0_clean.rdf", "view_0_noisy.rdf", "view_1_clean.rdf", "view_1_noisy.rdf", "config.txt"] {
        assert!(data.join(name).is_file(), "{name} missing");
    }
    assert!(!data.join("theta.rdf").exists());

    let rendered = dir.path().join("rendered");
    ok(&["render", "--dsm", s(&data.join("dsm.rdf")), "--views", s(&cfg), "--out", s(&rendered)]);
    for k in 0..2 {
        let name = format!("view_{k}_clean.rdf");
        assert_eq!(fs::read(data.join(&name)).unwrap(), fs::read(rendered.join(&name)).unwrap());
    }
}

#[test]
fn specular_scene_writes_theta() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("d");
    ok(&["simulate", "--scene", "two_region", "--views", s(&cfg), "--seed", "1", "--out", s(&out), "--size", "8"]);
    assert!(out.join("theta.rdf").is_file());
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, CONFIG).unwrap();

    let out = run(&["simulate", "--scene", "atlantis", "--views", s(&cfg), "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&["reconstruct", "--data", s(&empty), "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no view images"));

    fs::write(dir.path().join("bad.cfg"), "grid.width = 8\n").unwrap();
    let out = run(&["render", "--dsm", "x", "--views", s(&dir.path().join("bad.cfg")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reconstruct_reports_and_resumes_exactly() {
    let dir = tempdir().unwrap();
    let (cfg, data) = setup(dir.path());

    let full = dir.path().join("full");
    let stdout = ok(&["reconstruct", "--data", s(&data), "--config", s(&cfg), "--out", s(&full), "--log-every", "2"]);
    assert!(stdout.contains("step 2 "));
    let report = fs::read_to_string(full.join("report.txt")).unwrap();
    for key in ["steps=6", "altitude_rmse=", "altitude_median=", "view.1.residual="] {
        assert!(report.contains(key), "{key} missing from\n{report}");
    }
    assert_eq!(fs::read_to_string(full.join("loss.txt")).unwrap().lines().count(), 6);

    let split = dir.path().join("split");
    let stdout = ok(&[
        "reconstruct", "--data", s(&data), "--config", s(&cfg), "--out", s(&split), "--stop-after", "3",
    ]);
    assert!(stdout.contains("stopped at step 3"));
    assert!(!split.join("dsm.rdf").exists());
    ok(&[
        "reconstruct",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&split),
        "--resume",
        s(&split.join("checkpoint.ckpt")),
    ]);
    for name in ["dsm.rdf", "theta.rdf", "loss.txt"] {
        assert_eq!(fs::read(full.join(name)).unwrap(), fs::read(split.join(name)).unwrap(), "{name}");
    }

    let stdout = ok(&["eval", "--recovered", s(&full.join("dsm.rdf")), "--truth", s(&full.join("dsm.rdf"))]);
    assert!(stdout.contains("rmse=0\n"), "{stdout}");
    let stdout = ok(&["eval", "--recovered", s(&full.join("dsm.rdf")), "--truth", s(&data.join("dsm.rdf"))]);
    assert!(!stdout.contains("rmse=0\n"));
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("o");
    ok(&["reconstruct", "--data", s(&data), "--config", s(&cfg), "--out", s(&out), "--stop-after", "2"]);
    let other = dir.path().join("other.cfg");
    fs::write(&other, CONFIG.replace("reg_weight = 0.001", "reg_weight = 0.01")).unwrap();
    let res = run(&[
        "reconstruct",
        "--data",
        s(&data),
        "--config",
        s(&other),
        "--out",
        s(&out),
        "--resume",
        s(&out.join("checkpoint.ckpt")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

fn entropy(pixels: &[u8]) -> f64 {
    let mut hist = [0usize; 256];
    for &p in pixels {
        hist[p as usize] += 1;
    }
    let n = pixels.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[test]
fn plot_scales_to_grayscale() {
    let dir = tempdir().unwrap();
    let (_, data) = setup(dir.path());

    let flat = dir.path().join("flat.rdf");
    let bytes = {
        let mut b = fs::read(data.join("dsm.rdf")).unwrap();
        let header = b.len() - 64 * 4;
        for chunk in b[header..].chunks_exact_mut(4) {
            chunk.copy_from_slice(&0.25f32.to_le_bytes());
        }
        b
    };
    fs::write(&flat, bytes).unwrap();
    let png = dir.path().join("flat.png");
    ok(&["plot", "--in", s(&flat), "--out", s(&png)]);
    let img = image::open(&png).unwrap().to_luma8();
    assert_eq!((img.width(), img.height()), (8, 8));
    let first = img.as_raw()[0];
    assert!(img.as_raw().iter().all(|&p| p == first));

    let noisy = data.join("view_0_noisy.rdf");
    let lin = dir.path().join("lin.png");
    let log = dir.path().join("log.png");
    ok(&["plot", "--in", s(&noisy), "--out", s(&lin)]);
    ok(&["plot", "--in", s(&noisy), "--out", s(&log), "--log"]);
    let lin = image::open(&lin).unwrap().to_luma8();
    let log = image::open(&log).unwrap().to_luma8();
    assert_eq!((lin.width(), lin.height()), (16, 8));
    assert!(entropy(log.as_raw()) > entropy(lin.as_raw()));
}

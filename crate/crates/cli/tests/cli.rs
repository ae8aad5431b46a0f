use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edgeflow_core::codec::{read_image, write_image};
use edgeflow_core::synth;
use edgeflow_core::Tensor;

fn edgeflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeflow"))
        .args(args)
        .output()
        .expect("spawn edgeflow")
}

fn ok(args: &[&str]) -> String {
    let out = edgeflow(args);
    assert!(
        out.status.success(),
        "edgeflow {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn scene(&self, name: &str, seed: u64) -> PathBuf {
        let p = self.path(name);
        write_image(&p, &synth::scene(seed, 32)).unwrap();
        p
    }
}

#[test]
fn identity_model_round_trips_exactly_through_latent_file() {
    let f = Fixture::new();
    let hr = f.scene("hr.ppm", 3);
    let (model, lr, side, lat, up) = (
        f.path("m.bdf"),
        f.path("lr.ppm"),
        f.path("lr.bam"),
        f.path("lr.lat"),
        f.path("up.ppm"),
    );
    ok(&["init", "--zero", "--mode", "additive", "--out", s(&model)]);
    let report = ok(&[
        "down",
        "--model",
        s(&model),
        "--in",
        s(&hr),
        "--out",
        s(&lr),
        "--sidecar",
        s(&side),
        "--latent",
        s(&lat),
    ]);
    assert!(report.contains("payload_ratio="), "{report}");
    ok(&["up", "--model", s(&model), "--latent", s(&lat), "--out", s(&up)]);
    let m = ok(&["metrics", "--ref", s(&hr), "--test", s(&up)]);
    assert_eq!(m.trim(), "PSNR: 99.00 SSIM: 1.0000");
}

#[test]
fn identity_model_lr_is_a_box_filtered_half_size_image() {
    let f = Fixture::new();
    let hr = f.scene("hr.ppm", 5);
    let (model, lr, side) = (f.path("m.bdf"), f.path("lr.ppm"), f.path("lr.bam"));
    ok(&["init", "--zero", "--mode", "additive", "--out", s(&model)]);
    ok(&[
        "down",
        "--model",
        s(&model),
        "--in",
        s(&hr),
        "--out",
        s(&lr),
        "--sidecar",
        s(&side),
    ]);
    let x = read_image(&hr).unwrap();
    let y = read_image(&lr).unwrap();
    assert_eq!(y.shape(), &[3, 16, 16]);
    for c in 0..3 {
        for i in 0..16 {
            for j in 0..16 {
                let mean = (x.get3(c, 2 * i, 2 * j)
                    + x.get3(c, 2 * i + 1, 2 * j)
                    + x.get3(c, 2 * i, 2 * j + 1)
                    + x.get3(c, 2 * i + 1, 2 * j + 1))
                    / 4.0;
                assert!((y.get3(c, i, j) - mean).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}

#[test]
fn sampled_upscale_is_reproducible_and_seed_dependent() {
    let f = Fixture::new();
    let hr = f.scene("hr.ppm", 7);
    let (model, lr, side) = (f.path("m.bdf"), f.path("lr.ppm"), f.path("lr.bam"));
    ok(&["init", "--seed", "4", "--out", s(&model)]);
    ok(&[
        "down",
        "--model",
        s(&model),
        "--in",
        s(&hr),
        "--out",
        s(&lr),
        "--sidecar",
        s(&side),
    ]);
    let run = |seed: &str, name: &str| {
        let out = f.path(name);
        ok(&[
            "up",
            "--model",
            s(&model),
            "--in",
            s(&lr),
            "--sidecar",
            s(&side),
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    let a = run("11", "a.ppm");
    let b = run("11", "b.ppm");
    let c = run("12", "c.ppm");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn up_refuses_sidecar_from_another_model() {
    let f = Fixture::new();
    let hr = f.scene("hr.ppm", 1);
    let (m1, m2, lr, side) = (f.path("a.bdf"), f.path("b.bdf"), f.path("lr.ppm"), f.path("lr.bam"));
    ok(&["init", "--seed", "1", "--out", s(&m1)]);
    ok(&["init", "--seed", "2", "--out", s(&m2)]);
    ok(&[
        "down",
        "--model",
        s(&m1),
        "--in",
        s(&hr),
        "--out",
        s(&lr),
        "--sidecar",
        s(&side),
    ]);
    let out = edgeflow(&[
        "up",
        "--model",
        s(&m2),
        "--in",
        s(&lr),
        "--sidecar",
        s(&side),
        "--out",
        s(&f.path("x.ppm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different model"));
}

#[test]
fn bam_of_a_flat_image_is_empty() {
    let f = Fixture::new();
    let flat = f.path("flat.ppm");
    write_image(&flat, &Tensor::full(&[3, 24, 24], 0.4)).unwrap();
    let out = f.path("edges.pgm");
    let msg = ok(&["bam", "--in", s(&flat), "--out", s(&out)]);
    assert!(msg.contains("boundary pixels: 0"), "{msg}");
    let map = read_image(&out).unwrap();
    assert_eq!(map.shape(), &[1, 24, 24]);
    assert!(map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn bam_marks_a_vertical_step() {
    let f = Fixture::new();
    let mut img = Tensor::zeros(&[3, 16, 16]);
    for c in 0..3 {
        for i in 0..16 {
            for j in 8..16 {
                img.set3(c, i, j, 1.0);
            }
        }
    }
    let input = f.path("step.ppm");
    write_image(&input, &img).unwrap();
    let out = f.path("edges.pgm");
    ok(&["bam", "--in", s(&input), "--out", s(&out), "--T", "20"]);
    let map = read_image(&out).unwrap();
    for i in 2..14 {
        assert_eq!(map.get3(0, i, 8), 1.0, "row {i}");
        assert_eq!(map.get3(0, i, 3), 0.0);
    }
}

#[test]
fn train_writes_model_and_loss_log() {
    let f = Fixture::new();
    let cfg = f.path("train.cfg");
    std::fs::write(
        &cfg,
        "epochs = 2\nsteps_per_epoch = 3\nbatch = 2\ncrop = 16\nhidden = 4\n",
    )
    .unwrap();
    let (model, log) = (f.path("m.bdf"), f.path("log.csv"));
    let msg = ok(&[
        "train",
        "--config",
        s(&cfg),
        "--synthetic",
        "2",
        "--out",
        s(&model),
        "--log",
        s(&log),
    ]);
    assert!(msg.starts_with("trained 6 steps"), "{msg}");
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,lr,forw,back,bam,latent,total");
    assert_eq!(lines.len(), 7);
    assert!(model.exists());
}

#[test]
fn stats_prints_a_64_bin_histogram() {
    let f = Fixture::new();
    let hr = f.scene("hr.ppm", 2);
    let out = ok(&["stats", "--in", s(&hr)]);
    let hist = out.lines().find(|l| l.starts_with("histogram: ")).unwrap();
    let counts: Vec<u64> = hist["histogram: ".len()..]
        .split(' ')
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 64);
    assert_eq!(counts.iter().sum::<u64>(), 3 * 32 * 32);
}

#[test]
fn check_passes() {
    let out = ok(&["check", "--trials", "3"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{out}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = edgeflow(&["metrics", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_image_is_a_data_error() {
    let f = Fixture::new();
    let bad = f.path("bad.ppm");
    std::fs::write(&bad, b"P6\n4 4\n255\nshort").unwrap();
    let out = edgeflow(&["metrics", "--ref", s(&bad), "--test", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_file_is_a_data_error() {
    let out = edgeflow(&["stats", "--in", "/nonexistent/nowhere.ppm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let out = edgeflow(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("down"));
}

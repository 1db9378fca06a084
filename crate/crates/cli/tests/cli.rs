use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use metamorph::io::read_sinogram;
use tempfile::TempDir;

fn metamorph(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metamorph")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// Values of the `ssim` column keyed by sigma.
fn ssim_by_sigma(csv: &str) -> Vec<(f64, f64)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (s, q) = (col("sigma"), col("ssim"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[s].parse().unwrap(), f[q].parse().unwrap())
        })
        .collect()
}

#[test]
fn zero_phantom_projects_to_zero() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "run.toml",
        "[grid]\nn = 32\nhalf_width = 15.7\n[phantom]\npreset = \"empty\"\n[io]\nphantom = \"out/phantom.mimg\"\n",
    );
    ok(metamorph(d, &["phantom", "--config", "run.toml", "--out", "out"]));
    ok(metamorph(d, &["project", "--config", "run.toml", "--out", "out"]));
    let sino = read_sinogram(&d.join("out/sinogram.sino")).unwrap();
    assert_eq!(sino.geometry().n_angles(), 60);
    assert!(sino.data().iter().all(|&x| x == 0.0));
}

#[test]
fn exact_data_reconstructs_in_one_iteration() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "run.toml",
        "[grid]\nn = 32\n[time]\nsteps = 4\n[noise]\npsnr_db = inf\n[phantom]\npreset = \"template\"\n\
         [io]\nphantom = \"img/phantom.mimg\"\ntemplate = \"img/phantom.mimg\"\ndata = \"img/sinogram.sino\"\n",
    );
    ok(metamorph(d, &["phantom", "--config", "run.toml", "--out", "img"]));
    ok(metamorph(d, &["project", "--config", "run.toml", "--out", "img"]));
    ok(metamorph(d, &["reconstruct", "--config", "run.toml", "--out", "rec"]));
    let summary: toml::Table = fs::read_to_string(d.join("rec/summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["iterations"].as_integer(), Some(1));
    assert_eq!(summary["final_objective"].as_float(), Some(0.0));
    assert_eq!(summary["stop_reason"].as_str(), Some("zero_gradient"));
    assert_eq!(fs::read(d.join("rec/final.mimg")).unwrap(), fs::read(d.join("img/phantom.mimg")).unwrap());
    assert!(d.join("rec/frames/frame_004.pgm").exists());
}

#[test]
fn kernel_sweep_peaks_at_the_middle_width() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "run.toml", "[sweep]\nsigmas = [0.3, 2, 10]\n");
    ok(metamorph(d, &["sweep", "--config", "run.toml", "--out", "out"]));
    let rows = ssim_by_sigma(&fs::read_to_string(d.join("out/sweep.csv")).unwrap());
    let sigmas: Vec<f64> = rows.iter().map(|r| r.0).collect();
    assert_eq!(sigmas, [0.3, 2.0, 10.0]);
    assert!(rows[1].1 > rows[0].1 && rows[1].1 > rows[2].1, "{rows:?}");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "run.toml",
        "[grid]\nn = 32\n[time]\nsteps = 4\n[solver]\nmax_iters = 4\n[sweep]\nsigmas = [1, 2]\ngammas = [1e-3]\ntaus = [1e-3]\n\
         [gated]\nn_gates = 2\nangles_per_gate = 6\n",
    );
    for out in ["a", "b"] {
        ok(metamorph(d, &["sweep", "--config", "run.toml", "--out", out, "--seed", "9"]));
        ok(metamorph(d, &["gated", "--config", "run.toml", "--out", out, "--seed", "9"]));
    }
    for file in ["sweep.csv", "report.csv", "metrics.csv", "gates/gate_2.sino"] {
        assert_eq!(fs::read(d.join("a").join(file)).unwrap(), fs::read(d.join("b").join(file)).unwrap(), "{file}");
    }
    ok(metamorph(d, &["sweep", "--config", "run.toml", "--out", "c", "--seed", "10"]));
    assert_ne!(fs::read(d.join("a/sweep.csv")).unwrap(), fs::read(d.join("c/sweep.csv")).unwrap());
}

#[test]
fn every_config_problem_is_reported_before_writing() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "bad.toml",
        "[grid]\nn = 1\nspacing = 2\n[kernel]\nsigma = -1\n[solver]\nmode = \"newton\"\nmax_iters = 0\n[extra]\nx = 1\n\
         [io]\ntemplate = \"missing.mimg\"\n",
    );
    let out = metamorph(d, &["reconstruct", "--config", "bad.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]: "));
    for needle in ["grid.spacing", "grid.n", "kernel:", "solver.mode", "max_iters", "extra:", "io.template", "io.data"]
    {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
    assert!(!d.join("out").exists());
}

#[test]
fn bad_thread_count_and_missing_config_fail_cleanly() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = Command::new(env!("CARGO_BIN_EXE_metamorph"))
        .current_dir(d)
        .args(["phantom", "--out", "out"])
        .env("METAMORPH_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("METAMORPH_THREADS"));

    let out = metamorph(d, &["phantom", "--config", "nowhere.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("out").exists());

    let out = Command::new(env!("CARGO_BIN_EXE_metamorph"))
        .current_dir(d)
        .args(["phantom", "--out", "one"])
        .env("METAMORPH_THREADS", "1")
        .output()
        .unwrap();
    ok(out);
}

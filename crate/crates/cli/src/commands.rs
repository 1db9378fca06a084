use std::fs;
use std::path::Path;

use metamorph::experiments::{deformation_pair, register};
use metamorph::harness::{add_noise, make_phantom, psnr, ssim, write_metrics_csv, MetricsRow};
use metamorph::io::{
    read_gate_bundle, read_image, read_sinogram, write_atomic, write_gate_bundle, write_image, write_pgm,
    write_sinogram, write_sinogram_pgm,
};
use metamorph::optimizer::reconstruct;
use metamorph::ray::{fbp, forward_project};
use metamorph::spatiotemporal::reconstruct_gated;
use metamorph::{GatedData, GridSpec, Image, KernelSpec, RegParams, Sinogram, SolveReport};
use serde::Serialize;

use crate::config::{Method, RunConfig};
use crate::{CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    match cmd {
        Command::Phantom => phantom(cfg, out),
        Command::Project => project(cfg, out),
        Command::Reconstruct => reconstruct_cmd(cfg, out),
        Command::Gated => gated(cfg, out),
        Command::Metrics => metrics(cfg, out),
        Command::Sweep => sweep(cfg, out),
    }
}

/// Reads an image and checks it lives on the configured grid. Image files
/// store `L` as `f32`, so it is compared at that precision.
fn load_image(cfg: &RunConfig, key: &str, path: &Path, problems: &mut Vec<String>) -> Option<Image> {
    let g = cfg.grid();
    let same = |s: &GridSpec| s.nx() == g.nx() && s.ny() == g.ny() && s.half_width() as f32 == g.half_width() as f32;
    match read_image(path) {
        Ok(img) if same(img.spec()) => Some(Image::from_vec(g, img.into_vec()).expect("same node count")),
        Ok(img) => {
            let s = img.spec();
            problems.push(format!(
                "io.{key}: {} is {}x{} on half-width {}, config grid is {}x{} on {}",
                path.display(),
                s.nx(),
                s.ny(),
                s.half_width(),
                g.nx(),
                g.ny(),
                g.half_width()
            ));
            None
        }
        Err(e) => {
            problems.push(format!("io.{key}: {e}"));
            None
        }
    }
}

fn load_sinogram(path: &Path, problems: &mut Vec<String>) -> Option<Sinogram> {
    read_sinogram(path).map_err(|e| problems.push(format!("io.data: {e}"))).ok()
}

fn finish_loading(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(problems))
    }
}

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(metamorph::Error::from)?;
    Ok(())
}

fn write_image_pair(dir: &Path, stem: &str, img: &Image) -> Result<()> {
    write_image(&dir.join(format!("{stem}.mimg")), img)?;
    write_pgm(&dir.join(format!("{stem}.pgm")), img)?;
    Ok(())
}

fn write_csv(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf).map_err(metamorph::Error::from)?;
    write_atomic(path, &buf)?;
    Ok(())
}

fn row(experiment: String, cfg: &RunConfig, reference: &Image, img: &Image) -> Result<MetricsRow> {
    Ok(MetricsRow {
        experiment,
        sigma: cfg.desk.kernel.sigma,
        gamma: cfg.desk.params.gamma,
        tau: cfg.desk.params.tau,
        ssim: ssim(reference, img)?,
        psnr: psnr(reference, img)?,
    })
}

#[derive(Serialize)]
struct Summary {
    mode: String,
    iterations: usize,
    stop_reason: String,
    initial_objective: f64,
    final_objective: f64,
}

fn write_report(out: &Path, report: &SolveReport, mode: String) -> Result<()> {
    write_csv(&out.join("report.csv"), |w| report.write_csv(w))?;
    let summary = Summary {
        mode,
        iterations: report.iterations_used,
        stop_reason: report.stop_reason.to_string(),
        initial_objective: report.objective_history[0],
        final_objective: report.final_objective(),
    };
    let text = toml::to_string(&summary).expect("plain struct serialises");
    write_atomic(&out.join("summary.toml"), text.as_bytes())?;
    println!(
        "{}: {} iterations, stop {}, objective {:e} -> {:e}",
        summary.mode, summary.iterations, summary.stop_reason, summary.initial_objective, summary.final_objective
    );
    Ok(())
}

fn phantom(cfg: &RunConfig, out: &Path) -> Result<()> {
    let img = make_phantom(&cfg.phantom, &cfg.grid())?;
    out_dir(out)?;
    write_image_pair(out, "phantom", &img)?;
    println!("phantom: {} shapes on {}x{}", cfg.phantom.shapes.len(), cfg.desk.n, cfg.desk.n);
    Ok(())
}

fn project(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut problems = Vec::new();
    let img = load_image(cfg, "phantom", cfg.io.phantom.as_deref().expect("checked"), &mut problems);
    finish_loading(problems)?;
    let clean = forward_project(&img.expect("loaded"), &cfg.geometry());
    // Constant sinograms (an empty phantom) stay clean.
    let noisy = clean.data().iter().any(|&x| x != clean.data()[0]);
    let sino = if noisy { add_noise(&clean, cfg.desk.psnr_db, cfg.desk.noise_seed)? } else { clean };
    out_dir(out)?;
    write_sinogram(&out.join("sinogram.sino"), &sino)?;
    write_sinogram_pgm(&out.join("sinogram.pgm"), &sino)?;
    println!("project: {} angles x {} bins", cfg.desk.n_angles, cfg.desk.n_det);
    Ok(())
}

fn reconstruct_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let io = &cfg.io;
    let mut problems = Vec::new();
    let data = load_sinogram(io.data.as_deref().expect("checked"), &mut problems);
    let template = io
        .template
        .as_deref()
        .filter(|_| cfg.method != Method::Fbp)
        .map(|p| load_image(cfg, "template", p, &mut problems));
    let target = io.target.as_deref().map(|p| load_image(cfg, "target", p, &mut problems));
    finish_loading(problems)?;
    let data = data.expect("loaded");
    let target = target.flatten();
    let grid = cfg.grid();

    let (name, image, report) = if cfg.method == Method::Fbp {
        ("fbp".to_string(), fbp(&data, &grid, cfg.fbp_cutoff)?, None)
    } else {
        let template = template.flatten().expect("loaded");
        let d = &cfg.desk;
        let report = reconstruct(&template, &data, &d.kernel, &d.params, d.tgrid()?, &d.solve)?;
        (d.solve.mode.to_string(), report.trajectories.final_image().clone(), Some(report))
    };

    out_dir(out)?;
    if let Some(report) = &report {
        let frames = out.join("frames");
        out_dir(&frames)?;
        for (k, img) in report.trajectories.image_traj.iter().enumerate() {
            write_image_pair(&frames, &format!("frame_{k:03}"), img)?;
        }
        write_report(out, report, name.clone())?;
    }
    write_image_pair(out, "final", &image)?;
    if let Some(target) = &target {
        let r = row(name, cfg, target, &image)?;
        println!("ssim {:.4}, psnr {:.2} dB", r.ssim, r.psnr);
        write_csv(&out.join("metrics.csv"), |w| write_metrics_csv(&[r], w))?;
    }
    Ok(())
}

fn gated(cfg: &RunConfig, out: &Path) -> Result<()> {
    let io = &cfg.io;
    let setup = &cfg.gated;
    let d = &cfg.desk;
    let mut problems = Vec::new();
    let template = io.template.as_deref().map(|p| load_image(cfg, "template", p, &mut problems));
    let bundle =
        io.gates.as_deref().map(|dir| read_gate_bundle(dir).map_err(|e| problems.push(format!("io.gates: {e}"))).ok());
    if let Some(Some((_, manifest))) = &bundle {
        if manifest.steps != d.steps {
            problems
                .push(format!("io.gates: bundle was made for {} time steps, config has {}", manifest.steps, d.steps));
        }
    }
    finish_loading(problems)?;

    let (gated, frames): (GatedData, Option<Vec<Image>>) = match bundle.flatten() {
        Some((g, _)) => (g, None),
        None => {
            let (g, f) = setup.data()?;
            (g, Some(f))
        }
    };
    let template = match template.flatten() {
        Some(t) => t,
        None => setup.template()?,
    };
    let grid = cfg.grid();
    let report = reconstruct_gated(&template, &gated, &d.kernel, &d.params, d.tgrid()?, &d.solve)?;
    let fbp_image = fbp(&gated.concatenated()?, &grid, cfg.fbp_cutoff)?;

    out_dir(out)?;
    if frames.is_some() {
        write_gate_bundle(&out.join("gates"), &gated, d.steps, d.noise_seed)?;
    }
    let dir = out.join("gate_frames");
    out_dir(&dir)?;
    let mut rows = Vec::new();
    for (k, gate) in gated.gates().iter().enumerate() {
        let img = &report.trajectories.image_traj[gate.t_index];
        write_image_pair(&dir, &format!("gate_{:02}", k + 1), img)?;
        if let Some(frames) = &frames {
            rows.push(row(format!("gate_{}", k + 1), cfg, &frames[k], img)?);
            rows.push(row(format!("fbp_gate_{}", k + 1), cfg, &frames[k], &fbp_image)?);
        }
    }
    write_image_pair(out, "fbp", &fbp_image)?;
    write_report(out, &report, d.solve.mode.to_string())?;
    if !rows.is_empty() {
        let mean = |prefix: &str| {
            let s: Vec<f64> = rows.iter().filter(|r| r.experiment.starts_with(prefix)).map(|r| r.ssim).collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        println!("mean ssim: gated {:.4}, static fbp {:.4}", mean("gate_"), mean("fbp_gate_"));
        write_csv(&out.join("metrics.csv"), |w| write_metrics_csv(&rows, w))?;
    }
    Ok(())
}

fn metrics(cfg: &RunConfig, out: &Path) -> Result<()> {
    let io = &cfg.io;
    let mut problems = Vec::new();
    let reference = load_image(cfg, "reference", io.reference.as_deref().expect("checked"), &mut problems);
    let images: Vec<_> = io.images.iter().map(|(_, p)| load_image(cfg, "images", p, &mut problems)).collect();
    finish_loading(problems)?;
    let reference = reference.expect("loaded");
    let rows = io
        .images
        .iter()
        .zip(images)
        .map(|((name, _), img)| row(name.clone(), cfg, &reference, &img.expect("loaded")))
        .collect::<Result<Vec<_>>>()?;
    out_dir(out)?;
    write_csv(&out.join("metrics.csv"), |w| write_metrics_csv(&rows, w))?;
    for r in &rows {
        println!("{}: ssim {:.4}, psnr {:.2} dB", r.experiment, r.ssim, r.psnr);
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let io = &cfg.io;
    let mut problems = Vec::new();
    let pair = match (&io.template, &io.target) {
        (Some(t), Some(g)) => {
            let (t, g) = (load_image(cfg, "template", t, &mut problems), load_image(cfg, "target", g, &mut problems));
            t.zip(g)
        }
        _ => None,
    };
    finish_loading(problems)?;
    let (template, target) = match pair {
        Some(p) => p,
        None => deformation_pair(&cfg.grid())?,
    };
    let d = &cfg.desk;
    let data = add_noise(&forward_project(&target, &cfg.geometry()), d.psnr_db, d.noise_seed)?;

    let mut runs = Vec::new();
    for &sigma in &cfg.sweep.sigmas {
        let kernel = KernelSpec::with_truncation(sigma, d.kernel.truncation)?;
        runs.push(("kernel_sweep", kernel, d.params));
    }
    for &gamma in &cfg.sweep.gammas {
        for &tau in &cfg.sweep.taus {
            runs.push(("regularisation_sweep", d.kernel, RegParams::new(gamma, tau)?));
        }
    }
    let mut rows = Vec::new();
    for (experiment, kernel, params) in runs {
        let setup = metamorph::experiments::DeskSetup { kernel, params, ..d.clone() };
        let outcome = register(&setup, &template, &target, &data, d.solve.mode)?;
        let r = MetricsRow {
            experiment: experiment.to_string(),
            sigma: kernel.sigma,
            gamma: params.gamma,
            tau: params.tau,
            ssim: outcome.ssim,
            psnr: outcome.psnr,
        };
        println!("{}: sigma {} gamma {} tau {}: ssim {:.4}", r.experiment, r.sigma, r.gamma, r.tau, r.ssim);
        rows.push(r);
    }
    out_dir(out)?;
    write_csv(&out.join("sweep.csv"), |w| write_metrics_csv(&rows, w))?;
    Ok(())
}

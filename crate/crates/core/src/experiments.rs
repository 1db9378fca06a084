//! Desk-scale experiment presets shared by the command line tool and the
//! acceptance tests: 64×64 phantoms on `[-16, 16]²`, noisy parallel-beam data
//! and a fixed iteration budget.

use rayon::prelude::*;

use crate::error::Result;
use crate::flow::TimeGrid;
use crate::grid::{GridSpec, Image};
use crate::harness::{
    add_noise, make_phantom, make_sequence, psnr, ssim, EvolvingSequence, MetricsRow, PhantomSpec, Shape,
};
use crate::kernel::KernelSpec;
use crate::objective::RegParams;
use crate::optimizer::{reconstruct, SolveConfig, SolveMode, SolveReport};
use crate::ray::{fbp, forward_project, Geometry, Sinogram};
use crate::spatiotemporal::{gate_time_indices, random_gate_angles, reconstruct_gated, Gate, GatedData};

#[derive(Clone, Debug, PartialEq)]
pub struct DeskSetup {
    pub n: usize,
    pub half_width: f64,
    pub steps: usize,
    pub n_angles: usize,
    pub n_det: usize,
    /// `+∞` for noiseless data.
    pub psnr_db: f64,
    pub noise_seed: u64,
    pub kernel: KernelSpec,
    pub params: RegParams,
    pub solve: SolveConfig,
}

impl Default for DeskSetup {
    fn default() -> Self {
        DeskSetup {
            n: 64,
            half_width: 16.0,
            steps: 10,
            n_angles: 60,
            n_det: 91,
            psnr_db: 15.0,
            noise_seed: 1,
            kernel: KernelSpec { sigma: 2.0, truncation: 4.0 },
            params: RegParams { gamma: 1e-5, tau: 1e-5 },
            solve: SolveConfig { max_iters: 20, step_v: 0.05, step_zeta: 1e-3, ..SolveConfig::default() },
        }
    }
}

impl DeskSetup {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::square(self.half_width, self.n)
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::uniform(self.n_angles, self.n_det, Geometry::covering_extent(&self.grid()?))
    }

    pub fn tgrid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.steps)
    }

    /// Noisy data of `target`.
    pub fn data(&self, target: &Image) -> Result<Sinogram> {
        add_noise(&forward_project(target, &self.geometry()?), self.psnr_db, self.noise_seed)
    }
}

/// Three discs of the registration experiments.
pub fn target_discs() -> PhantomSpec {
    PhantomSpec::discs(0.0, &[([-3.5, 2.0], 5.0, 1.0), ([5.0, -4.0], 3.0, 1.0), ([4.0, 6.0], 2.0, 0.6)])
}

/// [`target_discs`] moved and resized, on a constant background.
pub fn template_discs(background: f64) -> PhantomSpec {
    PhantomSpec::discs(background, &[([-1.5, 1.0], 4.0, 1.0), ([3.5, -2.5], 3.5, 1.0), ([3.0, 4.5], 2.5, 0.6)])
}

/// Template and target differing only in geometry.
pub fn deformation_pair(grid: &GridSpec) -> Result<(Image, Image)> {
    Ok((make_phantom(&template_discs(0.0), grid)?, make_phantom(&target_discs(), grid)?))
}

/// As [`deformation_pair`], with the template sitting on a background of 0.2
/// while the target's background is 0.
pub fn background_pair(grid: &GridSpec) -> Result<(Image, Image)> {
    Ok((make_phantom(&template_discs(0.2), grid)?, make_phantom(&target_discs(), grid)?))
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: SolveReport,
    pub ssim: f64,
    pub psnr: f64,
}

/// Reconstructs from `data` and scores the final image against `target`.
pub fn register(
    setup: &DeskSetup,
    template: &Image,
    target: &Image,
    data: &Sinogram,
    mode: SolveMode,
) -> Result<Outcome> {
    let cfg = SolveConfig { mode, ..setup.solve.clone() };
    let report = reconstruct(template, data, &setup.kernel, &setup.params, setup.tgrid()?, &cfg)?;
    let image = report.trajectories.final_image();
    Ok(Outcome { ssim: ssim(target, image)?, psnr: psnr(target, image)?, report })
}

fn row(experiment: &str, setup: &DeskSetup, out: &Outcome) -> MetricsRow {
    MetricsRow {
        experiment: experiment.to_string(),
        sigma: setup.kernel.sigma,
        gamma: setup.params.gamma,
        tau: setup.params.tau,
        ssim: out.ssim,
        psnr: out.psnr,
    }
}

/// One reconstruction per kernel width on the deformation pair.
pub fn kernel_sweep(setup: &DeskSetup, sigmas: &[f64]) -> Result<Vec<MetricsRow>> {
    let grid = setup.grid()?;
    let (template, target) = deformation_pair(&grid)?;
    let data = setup.data(&target)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let s = DeskSetup { kernel: KernelSpec::with_truncation(sigma, setup.kernel.truncation)?, ..setup.clone() };
            let out = register(&s, &template, &target, &data, SolveMode::Metamorphosis)?;
            Ok(row("kernel_sweep", &s, &out))
        })
        .collect()
}

/// One reconstruction per `(γ, τ)` pair on the deformation pair.
pub fn regularisation_sweep(setup: &DeskSetup, gammas: &[f64], taus: &[f64]) -> Result<Vec<MetricsRow>> {
    let grid = setup.grid()?;
    let (template, target) = deformation_pair(&grid)?;
    let data = setup.data(&target)?;
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &tau in taus {
            let s = DeskSetup { params: RegParams::new(gamma, tau)?, ..setup.clone() };
            let out = register(&s, &template, &target, &data, SolveMode::Metamorphosis)?;
            rows.push(row("regularisation_sweep", &s, &out));
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct MismatchOutcome {
    pub metamorphosis: Outcome,
    pub lddmm: Outcome,
}

/// Both modes on identical data of the background-mismatch pair.
pub fn intensity_mismatch(setup: &DeskSetup) -> Result<MismatchOutcome> {
    let grid = setup.grid()?;
    let (template, target) = background_pair(&grid)?;
    let data = setup.data(&target)?;
    Ok(MismatchOutcome {
        metamorphosis: register(setup, &template, &target, &data, SolveMode::Metamorphosis)?,
        lddmm: register(setup, &template, &target, &data, SolveMode::Lddmm)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatedSetup {
    pub desk: DeskSetup,
    pub n_gates: usize,
    pub angles_per_gate: usize,
    pub angle_seed: u64,
    pub sequence: EvolvingSequence,
}

impl Default for GatedSetup {
    fn default() -> Self {
        GatedSetup {
            desk: DeskSetup::default(),
            n_gates: 10,
            angles_per_gate: 10,
            angle_seed: 5,
            sequence: EvolvingSequence {
                base: PhantomSpec::discs(0.0, &[([-3.0, 1.0], 5.0, 1.0), ([5.0, -5.0], 2.5, 0.8)]),
                drift: [2.0, 1.5],
                appearing: Some(Shape::Disc { center: [5.0, 6.0], radius: 2.5, intensity: 0.8 }),
                appear_time: 0.3,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct GatedOutcome {
    pub report: SolveReport,
    pub gated: GatedData,
    /// True frame at every gate time.
    pub frames: Vec<Image>,
    pub gate_ssim: Vec<f64>,
    pub fbp_image: Image,
    pub fbp_ssim: Vec<f64>,
}

impl GatedOutcome {
    pub fn mean_gate_ssim(&self) -> f64 {
        self.gate_ssim.iter().sum::<f64>() / self.gate_ssim.len() as f64
    }

    pub fn mean_fbp_ssim(&self) -> f64 {
        self.fbp_ssim.iter().sum::<f64>() / self.fbp_ssim.len() as f64
    }
}

impl GatedSetup {
    /// Gated data of the evolving phantom; each gate is observed at its own
    /// time with its own random angles and noise seed.
    pub fn data(&self) -> Result<(GatedData, Vec<Image>)> {
        let desk = &self.desk;
        let grid = desk.grid()?;
        let tg = desk.tgrid()?;
        let times = gate_time_indices(self.n_gates, desk.steps)?;
        let angles = random_gate_angles(self.n_gates, self.angles_per_gate, self.angle_seed)?;
        let frame_times: Vec<f64> = times.iter().map(|&k| tg.t(k)).collect();
        let frames = make_sequence(&self.sequence, &grid, &frame_times)?;
        let gates = times
            .iter()
            .zip(angles)
            .zip(&frames)
            .enumerate()
            .map(|(k, ((&t_index, a), frame))| {
                let geo = Geometry::new(a, desk.n_det, Geometry::covering_extent(&grid))?;
                let data = add_noise(&forward_project(frame, &geo), desk.psnr_db, desk.noise_seed + k as u64)?;
                Ok(Gate { t_index, data })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((GatedData::new(gates)?, frames))
    }

    pub fn template(&self) -> Result<Image> {
        make_phantom(&self.sequence.frame(0.0), &self.desk.grid()?)
    }

    pub fn run(&self) -> Result<GatedOutcome> {
        let desk = &self.desk;
        let grid = desk.grid()?;
        let (gated, frames) = self.data()?;
        let template = self.template()?;
        let report = reconstruct_gated(&template, &gated, &desk.kernel, &desk.params, desk.tgrid()?, &desk.solve)?;
        let gate_ssim = gated
            .gates()
            .par_iter()
            .zip(&frames)
            .map(|(g, f)| ssim(f, &report.trajectories.image_traj[g.t_index]))
            .collect::<Result<Vec<_>>>()?;
        let fbp_image = fbp(&gated.concatenated()?, &grid, 1.0)?;
        let fbp_ssim = frames.iter().map(|f| ssim(f, &fbp_image)).collect::<Result<Vec<_>>>()?;
        Ok(GatedOutcome { report, gated, frames, gate_ssim, fbp_image, fbp_ssim })
    }
}

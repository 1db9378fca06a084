//! Gradient descent with backtracking on the metamorphosis objective.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{TimeGrid, TimeVaryingVectorField};
use crate::grid::Image;
use crate::kernel::KernelSpec;
use crate::metamorphosis::{trajectories, TimeVaryingScalarField, Trajectories};
use crate::objective::{
    evaluate_observations, gradient_observations, GradientPair, ObjectiveValue, Observation, RegParams,
};
use crate::ray::Sinogram;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Deformation and intensity change.
    #[default]
    Metamorphosis,
    /// Deformation only, `ζ ≡ 0`.
    Lddmm,
}

impl fmt::Display for SolveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMode::Metamorphosis => "metamorphosis",
            SolveMode::Lddmm => "lddmm",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    pub max_iters: usize,
    pub step_v: f64,
    pub step_zeta: f64,
    pub backtracking: bool,
    pub max_halvings: u32,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub rel_tol: f64,
    pub mode: SolveMode,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iters: 200,
            step_v: 1.0,
            step_zeta: 1.0,
            backtracking: true,
            max_halvings: 20,
            rel_tol: 1e-6,
            mode: SolveMode::Metamorphosis,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.max_iters == 0 {
            problems.push("max_iters must be at least 1".to_string());
        }
        if !(self.step_v > 0.0 && self.step_v.is_finite()) {
            problems.push(format!("step_v must be positive, got {}", self.step_v));
        }
        if !(self.step_zeta > 0.0 && self.step_zeta.is_finite()) {
            problems.push(format!("step_zeta must be positive, got {}", self.step_zeta));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            problems.push(format!("rel_tol must be non-negative, got {}", self.rel_tol));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ZeroGradient,
    Converged,
    MaxIterations,
    /// Backtracking ran out of halvings without finding a decrease.
    StepExhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::ZeroGradient => "zero_gradient",
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max_iterations",
            StopReason::StepExhausted => "step_exhausted",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub value: ObjectiveValue,
    pub step_v: f64,
    pub step_zeta: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
    /// One entry per value in `objective_history`; entry 0 has zero steps.
    pub records: Vec<IterationRecord>,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub velocity: TimeVaryingVectorField,
    pub intensity: TimeVaryingScalarField,
    pub trajectories: Trajectories,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("history holds the initial value")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,objective,data,v_term,zeta_term,step_v,step_zeta")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.iter, r.value.total, r.value.data, r.value.v_term, r.value.zeta_term, r.step_v, r.step_zeta
            )?;
        }
        Ok(())
    }
}

/// Something with an objective and a gradient in `(v, ζ)`.
pub(crate) trait Problem {
    fn evaluate(&self, v: &TimeVaryingVectorField, zeta: &TimeVaryingScalarField) -> Result<ObjectiveValue>;
    fn gradient(&self, v: &TimeVaryingVectorField, zeta: &TimeVaryingScalarField) -> Result<GradientPair>;
}

pub(crate) struct ObservedProblem<'a> {
    pub template: &'a Image,
    pub observations: Vec<Observation<'a>>,
    pub params: RegParams,
    pub kernel: KernelSpec,
}

impl Problem for ObservedProblem<'_> {
    fn evaluate(&self, v: &TimeVaryingVectorField, zeta: &TimeVaryingScalarField) -> Result<ObjectiveValue> {
        evaluate_observations(v, zeta, self.template, &self.observations, &self.params)
    }

    fn gradient(&self, v: &TimeVaryingVectorField, zeta: &TimeVaryingScalarField) -> Result<GradientPair> {
        gradient_observations(v, zeta, self.template, &self.observations, &self.params, &self.kernel)
    }
}

/// Objective growth (relative to the start) treated as divergence.
const DIVERGENCE_FACTOR: f64 = 1e3;

pub(crate) fn descend(
    problem: &dyn Problem,
    template: &Image,
    tgrid: TimeGrid,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let spec = *template.spec();
    let mut v = TimeVaryingVectorField::zeros(tgrid, spec);
    let mut zeta = TimeVaryingScalarField::zeros(tgrid, spec);
    let mut current = problem.evaluate(&v, &zeta)?;
    let initial = current.total;
    let mut history = vec![current.total];
    let mut records = vec![IterationRecord { iter: 0, value: current, step_v: 0.0, step_zeta: 0.0 }];

    let mut scale: f64 = 1.0;
    let mut stop = StopReason::MaxIterations;
    let mut used = cfg.max_iters;
    for iter in 1..=cfg.max_iters {
        let mut grad = problem.gradient(&v, &zeta)?;
        if cfg.mode == SolveMode::Lddmm {
            grad.grad_zeta = TimeVaryingScalarField::zeros(tgrid, spec);
        }
        if grad.is_zero() {
            stop = StopReason::ZeroGradient;
            used = iter;
            break;
        }

        // Start from twice the last accepted step, capped at the configured one.
        scale = (2.0 * scale).min(1.0);
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let (sv, sz) = (cfg.step_v * scale, cfg.step_zeta * scale);
            let mut cv = v.clone();
            cv.axpy(-sv, &grad.grad_v);
            let mut cz = zeta.clone();
            if cfg.mode == SolveMode::Metamorphosis {
                cz.axpy(-sz, &grad.grad_zeta);
            }
            let value = problem.evaluate(&cv, &cz)?;
            if !cfg.backtracking || value.total < current.total {
                accepted = Some((cv, cz, value, sv, sz));
                break;
            }
            scale *= 0.5;
        }
        let Some((cv, cz, value, sv, sz)) = accepted else {
            stop = StopReason::StepExhausted;
            used = iter;
            break;
        };
        if !value.total.is_finite() || value.total > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence {
                iteration: iter,
                objective: value.total,
                limit: DIVERGENCE_FACTOR * initial,
            });
        }
        let decrease = current.total - value.total;
        let previous = current.total;
        v = cv;
        zeta = cz;
        current = value;
        history.push(current.total);
        records.push(IterationRecord { iter, value: current, step_v: sv, step_zeta: sz });
        if decrease.abs() <= cfg.rel_tol * previous.abs() {
            stop = StopReason::Converged;
            used = iter;
            break;
        }
    }

    let trajectories = trajectories(&v, &zeta, template)?;
    Ok(SolveReport {
        objective_history: history,
        records,
        iterations_used: used,
        stop_reason: stop,
        velocity: v,
        intensity: zeta,
        trajectories,
    })
}

/// Registers `template` against data `g` of the final image, starting from
/// `v ≡ 0`, `ζ ≡ 0`.
pub fn reconstruct(
    template: &Image,
    data: &Sinogram,
    kernel: &KernelSpec,
    params: &RegParams,
    tgrid: TimeGrid,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    params.validate()?;
    kernel.validate()?;
    let problem = ObservedProblem {
        template,
        observations: vec![Observation { t_index: tgrid.steps(), data }],
        params: *params,
        kernel: *kernel,
    };
    descend(&problem, template, tgrid, cfg)
}

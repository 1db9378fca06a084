//! Gated data: several sinograms of an evolving object, each observed at its
//! own time point, matched by one metamorphosis trajectory.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{TimeGrid, TimeVaryingVectorField};
use crate::grid::Image;
use crate::kernel::KernelSpec;
use crate::metamorphosis::TimeVaryingScalarField;
use crate::objective::{
    evaluate_observations, gradient_observations, GradientPair, ObjectiveValue, Observation, RegParams,
};
use crate::optimizer::{descend, ObservedProblem, SolveConfig, SolveReport};
use crate::ray::Sinogram;

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub t_index: usize,
    pub data: Sinogram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatedData {
    gates: Vec<Gate>,
}

impl GatedData {
    pub fn new(gates: Vec<Gate>) -> Result<Self> {
        if gates.is_empty() {
            return Err(Error::input("gated data needs at least one gate"));
        }
        if gates[0].t_index == 0 {
            return Err(Error::input("gate time indices start at 1"));
        }
        for w in gates.windows(2) {
            if w[1].t_index <= w[0].t_index {
                return Err(Error::input(format!(
                    "gate time indices must increase strictly, got {} after {}",
                    w[1].t_index, w[0].t_index
                )));
            }
        }
        Ok(GatedData { gates })
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn check_time_grid(&self, tgrid: TimeGrid) -> Result<()> {
        let last = self.gates.last().expect("validated non-empty").t_index;
        if last > tgrid.steps() {
            return Err(Error::input(format!(
                "gate at time index {last} lies beyond the {} time steps",
                tgrid.steps()
            )));
        }
        Ok(())
    }

    fn observations(&self) -> Vec<Observation<'_>> {
        self.gates.iter().map(|g| Observation { t_index: g.t_index, data: &g.data }).collect()
    }

    /// All gates' data as one static sinogram.
    pub fn concatenated(&self) -> Result<Sinogram> {
        let parts: Vec<&Sinogram> = self.gates.iter().map(|g| &g.data).collect();
        Sinogram::concatenate(&parts)
    }
}

/// Objective summed over all gates, each compared with the image trajectory
/// at its own time.
pub fn gated_evaluate(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
    gated: &GatedData,
    params: &RegParams,
) -> Result<ObjectiveValue> {
    gated.check_time_grid(v.tgrid())?;
    evaluate_observations(v, zeta, template, &gated.observations(), params)
}

pub fn gated_gradient(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
    gated: &GatedData,
    params: &RegParams,
    kernel: &KernelSpec,
) -> Result<GradientPair> {
    gated.check_time_grid(v.tgrid())?;
    gradient_observations(v, zeta, template, &gated.observations(), params, kernel)
}

pub fn reconstruct_gated(
    template: &Image,
    gated: &GatedData,
    kernel: &KernelSpec,
    params: &RegParams,
    tgrid: TimeGrid,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    params.validate()?;
    kernel.validate()?;
    gated.check_time_grid(tgrid)?;
    let problem = ObservedProblem { template, observations: gated.observations(), params: *params, kernel: *kernel };
    descend(&problem, template, tgrid, cfg)
}

/// Per-gate projection angles: gate `k` (from 0) draws `per_gate` angles
/// uniformly from `[kπ/G, (k+1)π/G)`, sorted.
pub fn random_gate_angles(n_gates: usize, per_gate: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_gates == 0 || per_gate == 0 {
        return Err(Error::input("need at least one gate and one angle per gate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = PI / n_gates as f64;
    Ok((0..n_gates)
        .map(|k| {
            let lo = k as f64 * width;
            let mut a: Vec<f64> = (0..per_gate).map(|_| lo + width * rng.gen::<f64>()).collect();
            a.sort_by(f64::total_cmp);
            a
        })
        .collect())
}

/// Time indices of `n_gates` gates spread evenly over `1..=steps`.
pub fn gate_time_indices(n_gates: usize, steps: usize) -> Result<Vec<usize>> {
    if n_gates == 0 || n_gates > steps {
        return Err(Error::input(format!("cannot place {n_gates} gates on {steps} time steps")));
    }
    Ok((1..=n_gates).map(|k| (k * steps).div_ceil(n_gates)).collect())
}

//! The metamorphosis objective
//!
//! ```text
//! J(v, ζ) = γ/2 ‖v‖² + τ/2 ‖ζ‖² + Σ_k ‖T_k(I(t_k) ∘ φ_{t_k,0}) - g_k‖²
//! ```
//!
//! and its gradient. The single-target objective is the case of one data set
//! observed at `t_N = 1`; several data sets at intermediate times give the
//! gated objective of [`crate::spatiotemporal`].
//!
//! Time integrals use the left rectangle rule, so the samples at `t_N` never
//! enter the objective and their gradient is zero. Gradients are taken with
//! respect to the time-weighted pairing `(1/N) Σ_{i<N} ⟨a_i, b_i⟩_{L²(Ω)}`;
//! the velocity gradient is additionally mapped through the kernel, i.e. it
//! is the gradient in the RKHS metric. The velocity penalty uses the `L²`
//! norm of the samples as a stand-in for the RKHS norm.

use crate::error::{Error, Result};
use crate::flow::{pushforward_maps, TimeVaryingVectorField};
use crate::grid::{Image, VectorImage};
use crate::kernel::{kernel_apply, vfield_l2_inner, KernelSpec};
use crate::metamorphosis::{evolve, TimeVaryingScalarField};
use crate::ray::{back_project, forward_project, Sinogram};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegParams {
    pub gamma: f64,
    pub tau: f64,
}

impl RegParams {
    pub fn new(gamma: f64, tau: f64) -> Result<Self> {
        let p = RegParams { gamma, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite() && self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!(
                "regularisation weights must be non-negative, got gamma={} tau={}",
                self.gamma, self.tau
            )));
        }
        Ok(())
    }
}

/// Objective value with its three parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub data: f64,
    pub v_term: f64,
    pub zeta_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub grad_v: TimeVaryingVectorField,
    pub grad_zeta: TimeVaryingScalarField,
}

impl GradientPair {
    pub fn is_zero(&self) -> bool {
        self.grad_v.is_zero() && self.grad_zeta.is_zero()
    }
}

/// `D(a, b) = ‖a - b‖²` with angle × detector quadrature weights.
pub fn data_discrepancy(a: &Sinogram, b: &Sinogram) -> Result<f64> {
    a.check_same_geometry(b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s * a.geometry().cell_weight())
}

/// Image-space gradient `2 T*(a - b)` of `f ↦ D(T f, b)` at `T f = a`.
pub fn discrepancy_gradient(a: &Sinogram, b: &Sinogram, spec: &crate::grid::GridSpec) -> Result<Image> {
    a.check_same_geometry(b)?;
    let mut residual = a.clone();
    residual.axpy(-1.0, b);
    let mut g = back_project(&residual, spec);
    g.scale(2.0);
    Ok(g)
}

/// A data set observed at time index `t_index`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Observation<'a> {
    pub t_index: usize,
    pub data: &'a Sinogram,
}

fn check_observations(v: &TimeVaryingVectorField, obs: &[Observation<'_>]) -> Result<()> {
    let n = v.tgrid().steps();
    for o in obs {
        if o.t_index == 0 || o.t_index > n {
            return Err(Error::input(format!("observation time index {} outside 1..={n}", o.t_index)));
        }
    }
    Ok(())
}

fn regularisers(v: &TimeVaryingVectorField, zeta: &TimeVaryingScalarField, params: &RegParams) -> Result<(f64, f64)> {
    let n = v.tgrid().steps();
    let dt = v.tgrid().dt();
    let mut vv = 0.0;
    let mut zz = 0.0;
    for i in 0..n {
        vv += vfield_l2_inner(v.at(i), v.at(i))?;
        zz += zeta.at(i).norm_sq();
    }
    Ok((0.5 * params.gamma * dt * vv, 0.5 * params.tau * dt * zz))
}

pub(crate) fn evaluate_observations(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
    obs: &[Observation<'_>],
    params: &RegParams,
) -> Result<ObjectiveValue> {
    params.validate()?;
    check_observations(v, obs)?;
    let evo = evolve(v, zeta, template)?;
    let mut data = 0.0;
    for o in obs {
        let predicted = forward_project(&evo.images[o.t_index], o.data.geometry());
        data += data_discrepancy(&predicted, o.data)?;
    }
    let (v_term, zeta_term) = regularisers(v, zeta, params)?;
    Ok(ObjectiveValue { total: data + v_term + zeta_term, data, v_term, zeta_term })
}

/// Velocity gradient before the kernel is applied, plus the intensity
/// gradient, both without regularisers.
pub(crate) struct DataGradient {
    pub velocity_l2: Vec<VectorImage>,
    pub intensity: Vec<Image>,
}

/// Reverse sweep through [`evolve`]: the exact derivative of the discrete
/// data term. It has the familiar form, the velocity part being the
/// transported residual times an image gradient and the intensity part the
/// transported residual itself, with every interpolation differentiated as
/// it is evaluated.
pub(crate) fn data_gradient(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
    obs: &[Observation<'_>],
) -> Result<DataGradient> {
    check_observations(v, obs)?;
    let evo = evolve(v, zeta, template)?;
    let spec = *template.spec();
    let n = v.tgrid().steps();
    let dt = v.tgrid().dt();

    let mut bar_back = vec![VectorImage::zeros(spec); n + 1];
    let mut bar_tmpl = vec![Image::zeros(spec); n + 1];
    for o in obs {
        let k = o.t_index;
        let predicted = forward_project(&evo.images[k], o.data.geometry());
        let residual = discrepancy_gradient(&predicted, o.data, &spec)?;
        evo.back_maps[k].pull_adjoint(&evo.templates[k], &residual, &mut bar_tmpl[k], &mut bar_back[k]);
    }

    let mut bar_v = vec![VectorImage::zeros(spec); n];
    let mut bar_zeta = vec![Image::zeros(spec); n];

    // I(t_k) = I₀ + dt Σ_{j<k} ζ(t_j) ∘ φ_{0,t_j}
    let mut tail = Image::zeros(spec);
    for j in (0..n).rev() {
        tail.axpy(1.0, &bar_tmpl[j + 1]);
        if tail.data().iter().all(|&x| x == 0.0) {
            continue;
        }
        let mut bar_z = tail.clone();
        bar_z.scale(dt);
        let maps = pushforward_maps(v, j);
        let mut bar_map = VectorImage::zeros(spec);
        maps[0].pull_adjoint(zeta.at(j), &bar_z, &mut bar_zeta[j], &mut bar_map);
        if !bar_map.is_zero() {
            for i in 0..j {
                let mut next = VectorImage::zeros(spec);
                maps[i + 1].compose_step_adjoint(v.at(i), dt, &bar_map, &mut next, &mut bar_v[i]);
                bar_map = next;
            }
        }
    }

    // φ_{t_i,0} = φ_{t_{i-1},0} ∘ (Id - dt v(t_{i-1}))
    for i in (1..=n).rev() {
        let (head, rest) = bar_back.split_at_mut(i);
        if rest[0].is_zero() {
            continue;
        }
        evo.back_maps[i - 1].compose_step_adjoint(v.at(i - 1), -dt, &rest[0], &mut head[i - 1], &mut bar_v[i - 1]);
    }

    for b in &mut bar_v {
        b.scale(1.0 / dt);
    }
    for b in &mut bar_zeta {
        b.scale(1.0 / dt);
    }
    Ok(DataGradient { velocity_l2: bar_v, intensity: bar_zeta })
}

pub(crate) fn gradient_observations(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
    obs: &[Observation<'_>],
    params: &RegParams,
    kernel: &KernelSpec,
) -> Result<GradientPair> {
    params.validate()?;
    kernel.validate()?;
    let dg = data_gradient(v, zeta, template, obs)?;
    let tg = v.tgrid();
    let spec = *template.spec();
    let n = tg.steps();

    let mut gv = Vec::with_capacity(n + 1);
    let mut gz = Vec::with_capacity(n + 1);
    for i in 0..n {
        let mut a = kernel_apply(&dg.velocity_l2[i], kernel)?;
        a.axpy(params.gamma, v.at(i));
        gv.push(a);
        let mut b = dg.intensity[i].clone();
        b.axpy(params.tau, zeta.at(i));
        gz.push(b);
    }
    gv.push(VectorImage::zeros(spec));
    gz.push(Image::zeros(spec));
    Ok(GradientPair { grad_v: TimeVaryingVectorField::new(tg, gv)?, grad_zeta: TimeVaryingScalarField::new(tg, gz)? })
}

/// `J_{γ,τ}(v, ζ; g)` for data `g` of the final image.
pub fn evaluate(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
    data: &Sinogram,
    params: &RegParams,
) -> Result<ObjectiveValue> {
    let obs = [Observation { t_index: v.tgrid().steps(), data }];
    evaluate_observations(v, zeta, template, &obs, params)
}

/// Gradient of [`evaluate`]: the velocity part in the RKHS metric of
/// `kernel`, the intensity part in `L²`.
pub fn gradient(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
    data: &Sinogram,
    params: &RegParams,
    kernel: &KernelSpec,
) -> Result<GradientPair> {
    let obs = [Observation { t_index: v.tgrid().steps(), data }];
    gradient_observations(v, zeta, template, &obs, params, kernel)
}

//! Intensity evolution along the flow and the geometric group action.
//!
//! The template part solves `d/dt I(t)(x) = ζ(t, φ_{0,t}(x))`, discretised with
//! the left rectangle rule:
//!
//! ```text
//! I(t_i) = I₀ + (1/N) Σ_{j<i} ζ(t_j) ∘ φ_{0,t_j}
//! ```
//!
//! and the image part is `W(φ_{0,t_i}, I(t_i)) = I(t_i) ∘ φ_{t_i,0}`.

use crate::error::{Error, Result};
use crate::flow::{maps_from_zero, pushforward_maps, DeformationMap, TimeGrid, TimeVaryingVectorField};
use crate::grid::{GridSpec, Image};

/// Samples `ζ(t_i, ·)` for `i = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeVaryingScalarField {
    tgrid: TimeGrid,
    samples: Vec<Image>,
}

impl TimeVaryingScalarField {
    pub fn zeros(tgrid: TimeGrid, spec: GridSpec) -> Self {
        TimeVaryingScalarField { tgrid, samples: vec![Image::zeros(spec); tgrid.len()] }
    }

    pub fn new(tgrid: TimeGrid, samples: Vec<Image>) -> Result<Self> {
        if samples.len() != tgrid.len() {
            return Err(Error::shape(format!(
                "intensity field has {} samples, time grid needs {}",
                samples.len(),
                tgrid.len()
            )));
        }
        let spec = *samples[0].spec();
        for s in &samples {
            spec.check_same(s.spec(), "intensity samples")?;
            if s.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::input("non-finite intensity sample"));
            }
        }
        Ok(TimeVaryingScalarField { tgrid, samples })
    }

    pub fn stationary(tgrid: TimeGrid, field: Image) -> Self {
        TimeVaryingScalarField { tgrid, samples: vec![field; tgrid.len()] }
    }

    pub fn tgrid(&self) -> TimeGrid {
        self.tgrid
    }

    pub fn spec(&self) -> &GridSpec {
        self.samples[0].spec()
    }

    pub fn samples(&self) -> &[Image] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Image] {
        &mut self.samples
    }

    pub fn at(&self, i: usize) -> &Image {
        &self.samples[i]
    }

    pub fn axpy(&mut self, alpha: f64, other: &TimeVaryingScalarField) {
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            a.axpy(alpha, b);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|s| s.data().iter().all(|&v| v == 0.0))
    }
}

/// Image, deformation and template parts of a metamorphosis, `N + 1` frames each.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    /// `I(t_i) ∘ φ_{t_i,0}`: geometry and intensity.
    pub image_traj: Vec<Image>,
    /// `I₀ ∘ φ_{t_i,0}`: geometry only.
    pub deformation_traj: Vec<Image>,
    /// `I(t_i)`: intensity only.
    pub template_traj: Vec<Image>,
}

impl Trajectories {
    pub fn final_image(&self) -> &Image {
        self.image_traj.last().expect("trajectories are never empty")
    }
}

/// `W(φ, I) = I ∘ φ⁻¹`, where the caller passes the map realising `φ⁻¹`.
pub fn group_action(phi_inv: &DeformationMap, img: &Image) -> Result<Image> {
    phi_inv.spec().check_same(img.spec(), "group action")?;
    Ok(phi_inv.pull(img))
}

pub(crate) fn check_controls(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
) -> Result<()> {
    if v.tgrid() != zeta.tgrid() {
        return Err(Error::shape(format!(
            "velocity has {} steps, intensity field {}",
            v.tgrid().steps(),
            zeta.tgrid().steps()
        )));
    }
    template.spec().check_same(v.spec(), "velocity vs template")?;
    template.spec().check_same(zeta.spec(), "intensity field vs template")
}

/// Everything the forward model produces for one control pair.
#[derive(Clone, Debug)]
pub(crate) struct Evolution {
    /// `φ_{t_i,0}`.
    pub back_maps: Vec<DeformationMap>,
    /// `I(t_i)`.
    pub templates: Vec<Image>,
    /// `I(t_i) ∘ φ_{t_i,0}`.
    pub images: Vec<Image>,
}

pub(crate) fn evolve(v: &TimeVaryingVectorField, zeta: &TimeVaryingScalarField, template: &Image) -> Result<Evolution> {
    check_controls(v, zeta, template)?;
    let templates = template_values(v, zeta, template);
    let back_maps = maps_from_zero(v);
    let images = templates.iter().zip(&back_maps).map(|(t, m)| m.pull(t)).collect();
    Ok(Evolution { back_maps, templates, images })
}

fn template_values(v: &TimeVaryingVectorField, zeta: &TimeVaryingScalarField, template: &Image) -> Vec<Image> {
    let n = v.tgrid().steps();
    let dt = v.tgrid().dt();
    let mut out = Vec::with_capacity(n + 1);
    out.push(template.clone());
    let mut acc = template.clone();
    for j in 0..n {
        if !zeta.at(j).data().iter().all(|&z| z == 0.0) {
            let to_tj = pushforward_maps(v, j).swap_remove(0);
            acc.axpy(dt, &to_tj.pull(zeta.at(j)));
        }
        out.push(acc.clone());
    }
    out
}

/// Template part `I(t_i)` for `i = 0..=N`.
pub fn evolve_template(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
) -> Result<Vec<Image>> {
    check_controls(v, zeta, template)?;
    Ok(template_values(v, zeta, template))
}

pub fn trajectories(
    v: &TimeVaryingVectorField,
    zeta: &TimeVaryingScalarField,
    template: &Image,
) -> Result<Trajectories> {
    let evo = evolve(v, zeta, template)?;
    let deformation_traj = evo.back_maps.iter().map(|m| m.pull(template)).collect();
    Ok(Trajectories { image_traj: evo.images, deformation_traj, template_traj: evo.templates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VectorImage;

    fn setup(n: usize) -> (GridSpec, TimeGrid, Image) {
        let spec = GridSpec::square(16.0, 32).unwrap();
        let tg = TimeGrid::new(n).unwrap();
        let i0 = Image::from_fn(spec, |x, y| (-(x * x + y * y) / 30.0).exp());
        (spec, tg, i0)
    }

    fn smooth_velocity(tg: TimeGrid, spec: GridSpec, amp: f64) -> TimeVaryingVectorField {
        let samples = (0..tg.len())
            .map(|i| {
                let t = tg.t(i);
                VectorImage::from_fn(spec, move |x, y| {
                    let bump = (-(x * x + y * y) / 60.0).exp();
                    [amp * bump * (1.0 + t), -amp * bump * (0.5 - t) * y / 8.0]
                })
            })
            .collect();
        TimeVaryingVectorField::new(tg, samples).unwrap()
    }

    #[test]
    fn identity_action_leaves_image() {
        let (spec, _, i0) = setup(2);
        let out = group_action(&DeformationMap::identity(spec), &i0).unwrap();
        for (a, b) in out.data().iter().zip(i0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_action_shifts_image() {
        let (spec, _, i0) = setup(2);
        let c = 1.25;
        let phi_inv = DeformationMap::from_fn(spec, |[x, y]| [x - c, y]);
        let out = group_action(&phi_inv, &i0).unwrap();
        // Direct resampling of the analytic shifted image at interior nodes.
        let shifted = Image::from_fn(spec, |x, y| i0.sample([x - c, y]));
        for (k, [x, y]) in spec.nodes().enumerate() {
            if x.abs() < 12.0 && y.abs() < 12.0 {
                assert!((out.data()[k] - shifted.data()[k]).abs() < 1e-12);
            }
        }
        let constant = group_action(&phi_inv, &Image::constant(spec, 0.3)).unwrap();
        for (k, [x, y]) in spec.nodes().enumerate() {
            if x.abs() < 14.0 && y.abs() < 14.0 {
                assert!((constant.data()[k] - 0.3).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_intensity_control_keeps_template() {
        let (spec, tg, i0) = setup(4);
        let v = smooth_velocity(tg, spec, 0.5);
        let z = TimeVaryingScalarField::zeros(tg, spec);
        for t in evolve_template(&v, &z, &i0).unwrap() {
            assert_eq!(t, i0);
        }
    }

    #[test]
    fn constant_control_without_motion_is_linear_in_time() {
        let (spec, tg, i0) = setup(5);
        let v = TimeVaryingVectorField::zeros(tg, spec);
        let z = TimeVaryingScalarField::stationary(tg, Image::constant(spec, 0.7));
        let out = evolve_template(&v, &z, &i0).unwrap();
        for (i, img) in out.iter().enumerate() {
            for (a, b) in img.data().iter().zip(i0.data()) {
                assert!((a - (b + tg.t(i) * 0.7)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn template_evolution_converges_first_order() {
        let spec = GridSpec::square(16.0, 32).unwrap();
        let i0 = Image::zeros(spec);
        let run = |n: usize| {
            let tg = TimeGrid::new(n).unwrap();
            let v = smooth_velocity(tg, spec, 1.0);
            let zs = (0..tg.len())
                .map(|i| {
                    let t = tg.t(i);
                    Image::from_fn(spec, move |x, y| (1.0 + t) * (-(x - 2.0).powi(2) / 20.0 - y * y / 40.0).exp())
                })
                .collect();
            let z = TimeVaryingScalarField::new(tg, zs).unwrap();
            evolve_template(&v, &z, &i0).unwrap().pop().unwrap()
        };
        let reference = run(512);
        let err = |img: Image| img.data().iter().zip(reference.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let (e8, e16) = (err(run(8)), err(run(16)));
        assert!(e8 < 0.2, "{e8}");
        let ratio = e8 / e16;
        assert!((1.5..2.6).contains(&ratio), "ratio {ratio} ({e8}, {e16})");
    }

    #[test]
    fn trajectory_degeneracies() {
        let (spec, tg, i0) = setup(4);
        let v0 = TimeVaryingVectorField::zeros(tg, spec);
        let z0 = TimeVaryingScalarField::zeros(tg, spec);
        let tr = trajectories(&v0, &z0, &i0).unwrap();
        for k in 0..tg.len() {
            assert_eq!(tr.image_traj[k], i0);
            assert_eq!(tr.deformation_traj[k], i0);
            assert_eq!(tr.template_traj[k], i0);
        }

        let v = smooth_velocity(tg, spec, 0.8);
        let tr = trajectories(&v, &z0, &i0).unwrap();
        assert_eq!(tr.image_traj, tr.deformation_traj);
        assert_eq!(tr.image_traj[0], i0);

        let z = TimeVaryingScalarField::stationary(tg, Image::constant(spec, 0.2));
        let tr = trajectories(&v0, &z, &i0).unwrap();
        for k in 0..tg.len() {
            for (a, b) in tr.image_traj[k].data().iter().zip(tr.template_traj[k].data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let (spec, tg, i0) = setup(4);
        let v = TimeVaryingVectorField::zeros(TimeGrid::new(3).unwrap(), spec);
        let z = TimeVaryingScalarField::zeros(tg, spec);
        assert!(trajectories(&v, &z, &i0).is_err());
        let other = GridSpec::square(16.0, 16).unwrap();
        let z = TimeVaryingScalarField::zeros(tg, other);
        let v = TimeVaryingVectorField::zeros(tg, spec);
        assert!(evolve_template(&v, &z, &i0).is_err());
    }
}

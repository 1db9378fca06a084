#![allow(dead_code)]

use metamorph::kernel::{kernel_apply, vfield_l2_inner};
use metamorph::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn noise_image(spec: GridSpec, rng: &mut ChaCha8Rng, amp: f64) -> Image {
    let data = (0..spec.len()).map(|_| rng.gen_range(-amp..amp)).collect();
    Image::from_vec(spec, data).unwrap()
}

pub fn noise_field(spec: GridSpec, rng: &mut ChaCha8Rng, amp: f64) -> VectorImage {
    VectorImage::from_components(noise_image(spec, rng, amp), noise_image(spec, rng, amp)).unwrap()
}

/// Kernel-smoothed random scalar field.
pub fn smooth_image(spec: GridSpec, rng: &mut ChaCha8Rng, amp: f64, k: &KernelSpec) -> Image {
    let u = VectorImage::from_components(noise_image(spec, rng, amp), Image::zeros(spec)).unwrap();
    Image::from_vec(spec, kernel_apply(&u, k).unwrap().x().to_vec()).unwrap()
}

/// Raw noise `u` and its smoothed version `K u`, one sample per time node.
pub fn noise_and_smoothed(
    spec: GridSpec,
    tg: TimeGrid,
    rng: &mut ChaCha8Rng,
    amp: f64,
    k: &KernelSpec,
) -> (TimeVaryingVectorField, TimeVaryingVectorField) {
    let raw: Vec<VectorImage> = (0..tg.len()).map(|_| noise_field(spec, rng, amp)).collect();
    let smooth = raw.iter().map(|u| kernel_apply(u, k).unwrap()).collect();
    (TimeVaryingVectorField::new(tg, raw).unwrap(), TimeVaryingVectorField::new(tg, smooth).unwrap())
}

pub fn smooth_scalar_field(
    spec: GridSpec,
    tg: TimeGrid,
    rng: &mut ChaCha8Rng,
    amp: f64,
    k: &KernelSpec,
) -> TimeVaryingScalarField {
    let s = (0..tg.len()).map(|_| smooth_image(spec, rng, amp, k)).collect();
    TimeVaryingScalarField::new(tg, s).unwrap()
}

/// Time-weighted pairing `dt Σ_{i<N} (⟨a_v, u⟩ + ⟨a_ζ, w⟩)`.
pub fn pairing(grad: &GradientPair, u: &TimeVaryingVectorField, w: &TimeVaryingScalarField) -> f64 {
    let tg = u.tgrid();
    (0..tg.steps())
        .map(|i| tg.dt() * (vfield_l2_inner(grad.grad_v.at(i), u.at(i)).unwrap() + grad.grad_zeta.at(i).inner(w.at(i))))
        .sum()
}

pub fn non_increasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] <= w[0])
}

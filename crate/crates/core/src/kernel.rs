//! Gaussian reproducing kernel `K_σ(x, y) = exp(-|x - y|² / 2σ²)·Id` acting on
//! vector fields, i.e. the Riesz map of the velocity space.

use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VectorImage};

/// Grids with fewer nodes than this are convolved directly.
const FFT_THRESHOLD: usize = 128 * 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub sigma: f64,
    /// Support half-width in multiples of `sigma`.
    pub truncation: f64,
}

impl KernelSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        Self::with_truncation(sigma, 4.0)
    }

    pub fn with_truncation(sigma: f64, truncation: f64) -> Result<Self> {
        let k = KernelSpec { sigma, truncation };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config(format!("kernel sigma must be positive, got {}", self.sigma)));
        }
        if !(self.truncation.is_finite() && self.truncation >= 3.0) {
            return Err(Error::config(format!("kernel truncation must be at least 3 sigma, got {}", self.truncation)));
        }
        Ok(())
    }

    /// Sampled 1D profile `exp(-(k h)² / 2σ²)` for `k = -R..=R`.
    fn taps(&self, h: f64) -> Vec<f64> {
        let r = (self.truncation * self.sigma / h).ceil() as isize;
        (-r..=r)
            .map(|k| {
                let d = k as f64 * h;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect()
    }
}

/// `(K_σ ⋆ v)(y) = Σ_x K_σ(x, y) v(x) h²`, truncated to a square support.
pub fn kernel_apply(v: &VectorImage, k: &KernelSpec) -> Result<VectorImage> {
    k.validate()?;
    if v.spec().len() < FFT_THRESHOLD {
        Ok(kernel_apply_direct(v, k))
    } else {
        Ok(kernel_apply_fft(v, k))
    }
}

/// Separable direct convolution with zero-extension.
pub fn kernel_apply_direct(v: &VectorImage, k: &KernelSpec) -> VectorImage {
    let spec = *v.spec();
    let taps = k.taps(spec.h());
    let mut out = VectorImage::zeros(spec);
    let scale = spec.cell_area();
    convolve_separable(&spec, &taps, v.x(), out.x_mut(), scale);
    convolve_separable(&spec, &taps, v.y(), out.y_mut(), scale);
    out
}

fn convolve_separable(spec: &GridSpec, taps: &[f64], src: &[f64], dst: &mut [f64], scale: f64) {
    let (nx, ny) = (spec.nx(), spec.ny());
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    tmp.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        let line = &src[j * nx..(j + 1) * nx];
        for (i, out) in row.iter_mut().enumerate() {
            let lo = (i as isize - r).max(0) as usize;
            let hi = (i as isize + r).min(nx as isize - 1) as usize;
            let mut acc = 0.0;
            for s in lo..=hi {
                acc += taps[(s as isize - i as isize + r) as usize] * line[s];
            }
            *out = acc;
        }
    });
    dst.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        let lo = (j as isize - r).max(0) as usize;
        let hi = (j as isize + r).min(ny as isize - 1) as usize;
        for (i, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for s in lo..=hi {
                acc += taps[(s as isize - j as isize + r) as usize] * tmp[s * nx + i];
            }
            *out = acc * scale;
        }
    });
}

/// Same operator as [`kernel_apply_direct`], evaluated by zero-padded FFTs.
pub fn kernel_apply_fft(v: &VectorImage, k: &KernelSpec) -> VectorImage {
    let spec = *v.spec();
    let taps = k.taps(spec.h());
    let r = taps.len() / 2;
    let (nx, ny) = (spec.nx(), spec.ny());
    let mx = (nx + 2 * r).next_power_of_two();
    let my = (ny + 2 * r).next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let spectrum = |m: usize, planner: &mut FftPlanner<f64>| {
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for (t, &w) in taps.iter().enumerate() {
            let off = t as isize - r as isize;
            buf[off.rem_euclid(m as isize) as usize] = Complex64::new(w, 0.0);
        }
        planner.plan_fft_forward(m).process(&mut buf);
        buf
    };
    let kx = spectrum(mx, &mut planner);
    let ky = spectrum(my, &mut planner);

    let mut out = VectorImage::zeros(spec);
    let scale = spec.cell_area() / (mx * my) as f64;
    for (src, dst) in [(v.x().to_vec(), 0usize), (v.y().to_vec(), 1usize)] {
        let mut buf = vec![Complex64::new(0.0, 0.0); mx * my];
        for j in 0..ny {
            for i in 0..nx {
                buf[j * mx + i] = Complex64::new(src[j * nx + i], 0.0);
            }
        }
        fft2(&mut buf, mx, my, &mut planner, false);
        for j in 0..my {
            for i in 0..mx {
                buf[j * mx + i] *= kx[i] * ky[j];
            }
        }
        fft2(&mut buf, mx, my, &mut planner, true);
        let target = if dst == 0 { out.x_mut() } else { out.y_mut() };
        for j in 0..ny {
            for i in 0..nx {
                target[j * nx + i] = buf[j * mx + i].re * scale;
            }
        }
    }
    out
}

fn fft2(buf: &mut [Complex64], mx: usize, my: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(mx), planner.plan_fft_inverse(my))
    } else {
        (planner.plan_fft_forward(mx), planner.plan_fft_forward(my))
    };
    for row in buf.chunks_mut(mx) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); my];
    for i in 0..mx {
        for j in 0..my {
            col[j] = buf[j * mx + i];
        }
        col_fft.process(&mut col);
        for j in 0..my {
            buf[j * mx + i] = col[j];
        }
    }
}

/// `Σ (u · v) h²`.
pub fn vfield_l2_inner(u: &VectorImage, v: &VectorImage) -> Result<f64> {
    u.spec().check_same(v.spec(), "vector field inner product")?;
    let sx: f64 = u.x().iter().zip(v.x()).map(|(a, b)| a * b).sum();
    let sy: f64 = u.y().iter().zip(v.y()).map(|(a, b)| a * b).sum();
    Ok((sx + sy) * u.spec().cell_area())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_bad_sigma() {
        assert!(KernelSpec::new(0.0).is_err());
        assert!(KernelSpec::new(-1.0).is_err());
        assert!(KernelSpec::with_truncation(1.0, 2.0).is_err());
        let bad = KernelSpec { sigma: 0.0, truncation: 4.0 };
        let v = VectorImage::zeros(GridSpec::square(16.0, 8).unwrap());
        assert!(matches!(kernel_apply(&v, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn zero_in_zero_out() {
        let v = VectorImage::zeros(GridSpec::square(16.0, 16).unwrap());
        let out = kernel_apply(&v, &KernelSpec::new(2.0).unwrap()).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn impulse_gives_sampled_gaussian() {
        let g = GridSpec::square(16.0, 16).unwrap();
        let k = KernelSpec::new(3.0).unwrap();
        let p = g.index(7, 9);
        let mut v = VectorImage::zeros(g);
        v.x_mut()[p] = 1.0;
        let out = kernel_apply(&v, &k).unwrap();
        // Direct double loop over the truncated square support.
        let r = (k.truncation * k.sigma / g.h()).ceil() as i64;
        let h2 = g.cell_area();
        let [px, py] = g.node(p);
        for (idx, [x, y]) in g.nodes().enumerate() {
            let (di, dj) = (idx as i64 % 16 - 7, idx as i64 / 16 - 9);
            let expected = if di.abs() <= r && dj.abs() <= r {
                let d2 = (x - px).powi(2) + (y - py).powi(2);
                (-d2 / (2.0 * k.sigma * k.sigma)).exp() * h2
            } else {
                0.0
            };
            assert_abs_diff_eq!(out.x()[idx], expected, epsilon = 1e-14);
            assert_eq!(out.y()[idx], 0.0);
        }
        assert_abs_diff_eq!(out.x()[p], h2, epsilon = 1e-14);
    }

    #[test]
    fn constant_unit_field_has_area_norm() {
        let g = GridSpec::square(16.0, 32).unwrap();
        let u = VectorImage::from_fn(g, |_, _| [1.0, 0.0]);
        assert_abs_diff_eq!(vfield_l2_inner(&u, &u).unwrap(), 1024.0, epsilon = 1e-9);
        let z = VectorImage::zeros(g);
        assert_eq!(vfield_l2_inner(&z, &u).unwrap(), 0.0);
        let other = VectorImage::zeros(GridSpec::square(16.0, 16).unwrap());
        assert!(vfield_l2_inner(&u, &other).is_err());
    }
}

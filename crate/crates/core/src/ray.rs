//! 2D parallel-beam ray transform, its exact discrete adjoint and a
//! filtered-backprojection baseline.
//!
//! A ray is indexed by an angle `θ` and a detector offset `s`; it is the line
//! `s·n + t·d` with `n = (cos θ, sin θ)` and `d = (-sin θ, cos θ)`. Line
//! integrals use midpoint samples roughly `h/2` apart and bilinear lookups.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Image, Stencil};

/// Angles per parallel work unit in the adjoint; fixed so that the reduction
/// order does not depend on the thread count.
const ANGLE_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    angles: Vec<f64>,
    n_det: usize,
    det_extent: f64,
}

impl Geometry {
    pub fn new(angles: Vec<f64>, n_det: usize, det_extent: f64) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::config("geometry needs at least one angle"));
        }
        if let Some(a) = angles.iter().find(|a| !a.is_finite()) {
            return Err(Error::config(format!("non-finite projection angle {a}")));
        }
        if n_det == 0 {
            return Err(Error::config("geometry needs at least one detector bin"));
        }
        if !(det_extent.is_finite() && det_extent > 0.0) {
            return Err(Error::config(format!("detector half-width must be positive, got {det_extent}")));
        }
        Ok(Geometry { angles, n_det, det_extent })
    }

    /// `n_angles` angles evenly spaced over `[0, π)`.
    pub fn uniform(n_angles: usize, n_det: usize, det_extent: f64) -> Result<Self> {
        Self::new(Self::uniform_angles(n_angles, 0.0, PI), n_det, det_extent)
    }

    /// Angles `lo + k (hi - lo) / n` for `k = 0..n`.
    pub fn uniform_angles(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
    }

    /// Detector half-width covering the diagonal of a grid.
    pub fn covering_extent(spec: &GridSpec) -> f64 {
        spec.half_width() * SQRT_2
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn det_extent(&self) -> f64 {
        self.det_extent
    }

    pub fn det_spacing(&self) -> f64 {
        2.0 * self.det_extent / self.n_det as f64
    }

    pub fn det_offset(&self, k: usize) -> f64 {
        -self.det_extent + (k as f64 + 0.5) * self.det_spacing()
    }

    /// Quadrature weight of one angle, `π / n_angles`.
    pub fn angle_weight(&self) -> f64 {
        PI / self.angles.len() as f64
    }

    /// Quadrature weight of one sinogram sample.
    pub fn cell_weight(&self) -> f64 {
        self.angle_weight() * self.det_spacing()
    }
}

/// Samples of the ray transform, `n_angles × n_det`, angle-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    geometry: Geometry,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(geometry: Geometry) -> Self {
        let data = vec![0.0; geometry.n_angles() * geometry.n_det()];
        Sinogram { geometry, data }
    }

    pub fn from_vec(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.n_angles() * geometry.n_det() {
            return Err(Error::shape(format!(
                "sinogram has {} values, geometry needs {}×{}",
                data.len(),
                geometry.n_angles(),
                geometry.n_det()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite sinogram value"));
        }
        Ok(Sinogram { geometry, data })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let n = self.geometry.n_det;
        &self.data[a * n..(a + 1) * n]
    }

    pub fn get(&self, a: usize, k: usize) -> f64 {
        self.data[a * self.geometry.n_det + k]
    }

    /// Weighted `L²(M)` inner product.
    pub fn inner(&self, other: &Sinogram) -> f64 {
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum();
        s * self.geometry.cell_weight()
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn axpy(&mut self, alpha: f64, other: &Sinogram) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub(crate) fn check_same_geometry(&self, other: &Sinogram) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::shape("sinograms have different geometries"));
        }
        Ok(())
    }

    /// Concatenates the angle sets of several sinograms with equal detectors.
    pub fn concatenate(parts: &[&Sinogram]) -> Result<Sinogram> {
        let first = parts.first().ok_or_else(|| Error::input("nothing to concatenate"))?;
        let (n_det, ext) = (first.geometry.n_det, first.geometry.det_extent);
        let mut angles = vec![];
        let mut data = vec![];
        for p in parts {
            if p.geometry.n_det != n_det || p.geometry.det_extent != ext {
                return Err(Error::shape("concatenated sinograms need identical detectors"));
            }
            angles.extend_from_slice(&p.geometry.angles);
            data.extend_from_slice(&p.data);
        }
        Sinogram::from_vec(Geometry::new(angles, n_det, ext)?, data)
    }
}

/// Sample layout of one line: half-length and count.
fn line_sampling(spec: &GridSpec) -> (f64, usize, f64) {
    let half = spec.half_width() * SQRT_2;
    let count = (2.0 * half / (0.5 * spec.h())).ceil() as usize;
    let step = 2.0 * half / count as f64;
    (half, count, step)
}

/// Calls `f` with the bilinear stencil of every sample on ray `(theta, s)`.
fn for_each_sample(spec: &GridSpec, theta: f64, s: f64, mut f: impl FnMut(Stencil)) {
    let (half, count, step) = line_sampling(spec);
    let (sin, cos) = theta.sin_cos();
    let base = [s * cos, s * sin];
    for m in 0..count {
        let t = -half + (m as f64 + 0.5) * step;
        let p = [base[0] - t * sin, base[1] + t * cos];
        if spec.contains(p) {
            f(spec.stencil(p));
        }
    }
}

/// `T f(θ, s) = ∫ f(s n + t d) dt`.
pub fn forward_project(img: &Image, geo: &Geometry) -> Sinogram {
    let spec = *img.spec();
    let (_, _, step) = line_sampling(&spec);
    let n_det = geo.n_det();
    let mut data = vec![0.0; geo.n_angles() * n_det];
    data.par_chunks_mut(n_det).zip(geo.angles()).for_each(|(row, &theta)| {
        for (k, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for_each_sample(&spec, theta, geo.det_offset(k), |st| acc += st.apply(img.data()));
            *out = acc * step;
        }
    });
    Sinogram { geometry: geo.clone(), data }
}

/// Transpose of [`forward_project`] with respect to the weighted inner
/// products of sinograms and images, so `⟨T f, g⟩ = ⟨f, T* g⟩`.
pub fn back_project(sino: &Sinogram, spec: &GridSpec) -> Image {
    let geo = sino.geometry();
    let (_, _, step) = line_sampling(spec);
    let scale = step * geo.cell_weight() / spec.cell_area();
    let angle_ids: Vec<usize> = (0..geo.n_angles()).collect();
    let partials: Vec<Vec<f64>> = angle_ids
        .par_chunks(ANGLE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; spec.len()];
            for &a in chunk {
                let theta = geo.angles()[a];
                for (k, &g) in sino.row(a).iter().enumerate() {
                    if g != 0.0 {
                        for_each_sample(spec, theta, geo.det_offset(k), |st| st.scatter(g, &mut acc));
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; spec.len()];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Image::from_vec(*spec, out).expect("backprojection of finite data is finite")
}

/// Ram-Lak filter with a cosine window, applied row by row.
fn ramp_filter(sino: &Sinogram, cutoff: f64) -> Vec<Vec<f64>> {
    let geo = sino.geometry();
    let n = geo.n_det();
    let ds = geo.det_spacing();
    let m = (2 * n).next_power_of_two();

    // Band-limited ramp in the spatial domain, which keeps the DC term right.
    let mut kernel = vec![Complex64::new(0.0, 0.0); m];
    for (idx, kv) in kernel.iter_mut().enumerate() {
        let off = if idx <= m / 2 { idx as isize } else { idx as isize - m as isize };
        let val = if off == 0 {
            1.0 / (4.0 * ds * ds)
        } else if off % 2 != 0 {
            -1.0 / ((off * off) as f64 * PI * PI * ds * ds)
        } else {
            0.0
        };
        *kv = Complex64::new(val * ds, 0.0);
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    fwd.process(&mut kernel);
    let nyquist = 0.5 / ds;
    let fc = cutoff * nyquist;
    for (idx, kv) in kernel.iter_mut().enumerate() {
        let freq = if idx <= m / 2 { idx as f64 } else { idx as f64 - m as f64 } / (m as f64 * ds);
        let window = if freq.abs() <= fc { (PI * freq / (2.0 * fc)).cos() } else { 0.0 };
        *kv *= window;
    }

    (0..geo.n_angles())
        .map(|a| {
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for (b, &v) in buf.iter_mut().zip(sino.row(a)) {
                *b = Complex64::new(v, 0.0);
            }
            fwd.process(&mut buf);
            for (b, k) in buf.iter_mut().zip(&kernel) {
                *b *= k;
            }
            inv.process(&mut buf);
            buf[..n].iter().map(|c| c.re / m as f64).collect()
        })
        .collect()
}

/// Filtered backprojection; `cutoff` is the window cutoff as a fraction of
/// the detector Nyquist frequency.
pub fn fbp(sino: &Sinogram, spec: &GridSpec, cutoff: f64) -> Result<Image> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::config(format!("fbp cutoff must lie in (0, 1], got {cutoff}")));
    }
    let geo = sino.geometry();
    if geo.n_angles() < 2 {
        eprintln!("warning: filtered backprojection from {} angle(s)", geo.n_angles());
    }
    let filtered = ramp_filter(sino, cutoff);
    let ds = geo.det_spacing();
    let weight = geo.angle_weight();
    let trig: Vec<(f64, f64)> = geo.angles().iter().map(|t| t.sin_cos()).collect();
    let data = spec
        .nodes()
        .map(|[x, y]| {
            let mut acc = 0.0;
            for (row, &(sin, cos)) in filtered.iter().zip(&trig) {
                let u = (x * cos + y * sin + geo.det_extent()) / ds - 0.5;
                let k0 = u.floor();
                let frac = u - k0;
                let k0 = k0 as isize;
                let at = |k: isize| if k >= 0 && (k as usize) < row.len() { row[k as usize] } else { 0.0 };
                acc += (1.0 - frac) * at(k0) + frac * at(k0 + 1);
            }
            acc * weight
        })
        .collect();
    Image::from_vec(*spec, data)
}

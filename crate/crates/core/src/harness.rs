//! Phantoms, calibrated noise and image quality metrics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Image, Point};
use crate::ray::Sinogram;

/// Sub-samples per pixel and axis used when rasterising.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Disc {
        center: Point,
        radius: f64,
        intensity: f64,
    },
    /// Rotated ellipse; `angle` in radians.
    Ellipse {
        center: Point,
        axes: [f64; 2],
        angle: f64,
        intensity: f64,
    },
    Triangle {
        vertices: [Point; 3],
        intensity: f64,
    },
}

impl Shape {
    fn contains(&self, p: Point) -> bool {
        match *self {
            Shape::Disc { center, radius, .. } => (p[0] - center[0]).hypot(p[1] - center[1]) <= radius,
            Shape::Ellipse { center, axes, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let u = (c * dx + s * dy) / axes[0];
                let w = (-s * dx + c * dy) / axes[1];
                u * u + w * w <= 1.0
            }
            Shape::Triangle { vertices: [a, b, c], .. } => {
                let cross = |o: Point, q: Point| (q[0] - o[0]) * (p[1] - o[1]) - (q[1] - o[1]) * (p[0] - o[0]);
                let (d1, d2, d3) = (cross(a, b), cross(b, c), cross(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }

    fn intensity(&self) -> f64 {
        match *self {
            Shape::Disc { intensity, .. } | Shape::Ellipse { intensity, .. } | Shape::Triangle { intensity, .. } => {
                intensity
            }
        }
    }

    /// Axis-aligned bounding box `[xmin, xmax, ymin, ymax]`.
    fn bounds(&self) -> [f64; 4] {
        match *self {
            Shape::Disc { center, radius, .. } => {
                [center[0] - radius, center[0] + radius, center[1] - radius, center[1] + radius]
            }
            Shape::Ellipse { center, axes, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let hx = (axes[0] * c).hypot(axes[1] * s);
                let hy = (axes[0] * s).hypot(axes[1] * c);
                [center[0] - hx, center[0] + hx, center[1] - hy, center[1] + hy]
            }
            Shape::Triangle { vertices, .. } => {
                let xs = vertices.map(|v| v[0]);
                let ys = vertices.map(|v| v[1]);
                let min = |a: [f64; 3]| a.iter().copied().fold(f64::INFINITY, f64::min);
                let max = |a: [f64; 3]| a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                [min(xs), max(xs), min(ys), max(ys)]
            }
        }
    }

    fn translated(&self, d: Point) -> Shape {
        let mv = |p: Point| [p[0] + d[0], p[1] + d[1]];
        match self.clone() {
            Shape::Disc { center, radius, intensity } => Shape::Disc { center: mv(center), radius, intensity },
            Shape::Ellipse { center, axes, angle, intensity } => {
                Shape::Ellipse { center: mv(center), axes, angle, intensity }
            }
            Shape::Triangle { vertices, intensity } => Shape::Triangle { vertices: vertices.map(mv), intensity },
        }
    }

    fn with_intensity(&self, value: f64) -> Shape {
        let mut s = self.clone();
        match &mut s {
            Shape::Disc { intensity, .. } | Shape::Ellipse { intensity, .. } | Shape::Triangle { intensity, .. } => {
                *intensity = value
            }
        }
        s
    }
}

/// A piecewise constant image: a background plus additive shapes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(default)]
    pub background: f64,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

impl PhantomSpec {
    pub fn discs(background: f64, discs: &[(Point, f64, f64)]) -> Self {
        PhantomSpec {
            background,
            shapes: discs
                .iter()
                .map(|&(center, radius, intensity)| Shape::Disc { center, radius, intensity })
                .collect(),
        }
    }

    /// Two triangles, one pointing up and one down, scaled to the half-width `l`.
    pub fn triangle_pair(l: f64, intensity: f64) -> Self {
        let s = l / 16.0;
        let sc = |p: Point| [p[0] * s, p[1] * s];
        PhantomSpec {
            background: 0.0,
            shapes: vec![
                Shape::Triangle { vertices: [sc([-9.0, -6.0]), sc([-1.0, -6.0]), sc([-5.0, 4.0])], intensity },
                Shape::Triangle { vertices: [sc([1.0, 6.0]), sc([9.0, 6.0]), sc([5.0, -4.0])], intensity },
            ],
        }
    }

    /// Head-like ellipse phantom (modified Shepp–Logan contrasts) filling
    /// most of `[-l, l]²`.
    pub fn shepp_like(l: f64) -> Self {
        let s = 0.9 * l;
        #[rustfmt::skip]
        let table: [(f64, f64, f64, f64, f64, f64); 10] = [
            (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
            (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
            (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
            (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
            (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
            (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
            (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
            (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
            (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
            (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
        ];
        PhantomSpec {
            background: 0.0,
            shapes: table
                .iter()
                .map(|&(i, a, b, x, y, deg)| Shape::Ellipse {
                    center: [x * s, y * s],
                    axes: [a * s, b * s],
                    angle: deg.to_radians(),
                    intensity: i,
                })
                .collect(),
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let l = grid.half_width();
        for (k, s) in self.shapes.iter().enumerate() {
            let [x0, x1, y0, y1] = s.bounds();
            if x0 < -l || x1 > l || y0 < -l || y1 > l {
                return Err(Error::input(format!("shape {k} extends outside the domain [-{l}, {l}]²")));
            }
            if !s.intensity().is_finite() {
                return Err(Error::input(format!("shape {k} has a non-finite intensity")));
            }
        }
        if !self.background.is_finite() {
            return Err(Error::input("background must be finite"));
        }
        Ok(())
    }

    fn value(&self, p: Point) -> f64 {
        self.background + self.shapes.iter().filter(|s| s.contains(p)).map(Shape::intensity).sum::<f64>()
    }
}

/// Rasterises with 4×4 supersampling per pixel.
pub fn make_phantom(spec: &PhantomSpec, grid: &GridSpec) -> Result<Image> {
    spec.validate(grid)?;
    let h = grid.h();
    let n = SUPERSAMPLE as f64;
    let offsets: Vec<f64> = (0..SUPERSAMPLE).map(|k| ((k as f64 + 0.5) / n - 0.5) * h).collect();
    Ok(Image::from_fn(*grid, |x, y| {
        let mut acc = 0.0;
        for &oy in &offsets {
            for &ox in &offsets {
                acc += spec.value([x + ox, y + oy]);
            }
        }
        acc / (n * n)
    }))
}

/// A phantom whose shapes drift over time, plus a disc that fades in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolvingSequence {
    pub base: PhantomSpec,
    /// Displacement of every base shape over the unit time interval.
    pub drift: Point,
    /// Disc that appears during the sequence.
    pub appearing: Option<Shape>,
    /// Time at which the appearing shape starts to fade in; it reaches full
    /// intensity at `t = 1`.
    pub appear_time: f64,
}

impl EvolvingSequence {
    pub fn frame(&self, t: f64) -> PhantomSpec {
        let d = [self.drift[0] * t, self.drift[1] * t];
        let mut spec = PhantomSpec {
            background: self.base.background,
            shapes: self.base.shapes.iter().map(|s| s.translated(d)).collect(),
        };
        if let Some(shape) = &self.appearing {
            if t > self.appear_time {
                let ramp = ((t - self.appear_time) / (1.0 - self.appear_time).max(f64::EPSILON)).min(1.0);
                spec.shapes.push(shape.with_intensity(shape.intensity() * ramp));
            }
        }
        spec
    }
}

/// Frames of an evolving phantom at the given times.
pub fn make_sequence(seq: &EvolvingSequence, grid: &GridSpec, times: &[f64]) -> Result<Vec<Image>> {
    times.iter().map(|&t| make_phantom(&seq.frame(t), grid)).collect()
}

/// Anything that is a flat array of samples.
pub trait Samples {
    fn samples(&self) -> &[f64];
}

impl Samples for Image {
    fn samples(&self) -> &[f64] {
        self.data()
    }
}

impl Samples for Sinogram {
    fn samples(&self) -> &[f64] {
        self.data()
    }
}

fn centred_energy(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// `10 log₁₀(‖ref - mean‖² / ‖e - mean‖²)` with `e = test - ref`; `+∞` when
/// the two agree exactly.
pub fn psnr<T: Samples + ?Sized>(reference: &T, test: &T) -> Result<f64> {
    let (r, t) = (reference.samples(), test.samples());
    if r.len() != t.len() {
        return Err(Error::shape(format!("psnr: {} vs {} samples", r.len(), t.len())));
    }
    let signal = centred_energy(r);
    if signal == 0.0 {
        return Err(Error::input("psnr of a constant reference is undefined"));
    }
    let e: Vec<f64> = t.iter().zip(r).map(|(a, b)| a - b).collect();
    if e.iter().all(|&x| x == 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / centred_energy(&e)).log10())
}

/// Adds seeded white Gaussian noise scaled so that the PSNR of the result
/// against `sino` equals `target_db`. An infinite target returns the input.
pub fn add_noise(sino: &Sinogram, target_db: f64, seed: u64) -> Result<Sinogram> {
    if target_db == f64::INFINITY {
        return Ok(sino.clone());
    }
    if !target_db.is_finite() {
        return Err(Error::input(format!("noise level must be finite or +inf, got {target_db}")));
    }
    let signal = centred_energy(sino.data());
    if signal == 0.0 {
        return Err(Error::input("cannot calibrate noise against a constant sinogram"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..sino.data().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise = centred_energy(&e);
    let scale = (signal / (noise * 10f64.powf(target_db / 10.0))).sqrt();
    let mut out = sino.clone();
    for (o, n) in out.data_mut().iter_mut().zip(&e) {
        *o += scale * n;
    }
    Ok(out)
}

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 8;

/// Mean SSIM over all 8×8 windows (stride 1), with the dynamic range taken
/// from `reference`. A constant reference uses range 1.
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    let (lo, hi) = reference.min_max();
    let range = if hi > lo { hi - lo } else { 1.0 };
    ssim_with_range(reference, test, range)
}

pub fn ssim_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    a.spec().check_same(b.spec(), "ssim")?;
    let (nx, ny) = (a.spec().nx(), a.spec().ny());
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::input(format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels")));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::input(format!("ssim dynamic range must be positive, got {range}")));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (x, y) = (a.data(), b.data());
    let area = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for j0 in 0..=ny - SSIM_WINDOW {
        for i0 in 0..=nx - SSIM_WINDOW {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in j0..j0 + SSIM_WINDOW {
                for i in i0..i0 + SSIM_WINDOW {
                    let (p, q) = (x[j * nx + i], y[j * nx + i]);
                    sx += p;
                    sy += q;
                    sxx += p * p;
                    syy += q * q;
                    sxy += p * q;
                }
            }
            let (mx, my) = (sx / area, sy / area);
            let vx = sxx / area - mx * mx;
            let vy = syy / area - my * my;
            let cov = sxy / area - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub sigma: f64,
    pub gamma: f64,
    pub tau: f64,
    pub ssim: f64,
    pub psnr: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "experiment,sigma,gamma,tau,ssim,psnr")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.experiment, r.sigma, r.gamma, r.tau, r.ssim, r.psnr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ray::Geometry;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::square(16.0, 64).unwrap()
    }

    #[test]
    fn disc_mass_matches_area() {
        let g = grid();
        for (r, c) in [(5.0, [0.0, 0.0]), (3.3, [4.1, -2.7])] {
            let img = make_phantom(&PhantomSpec::discs(0.0, &[(c, r, 2.0)]), &g).unwrap();
            let mass = img.sum() * g.cell_area();
            let exact = PI * r * r * 2.0;
            assert!((mass - exact).abs() < 0.01 * exact, "{mass} vs {exact}");
        }
    }

    #[test]
    fn empty_spec_is_zero_and_outside_shapes_fail() {
        let g = grid();
        assert_eq!(make_phantom(&PhantomSpec::default(), &g).unwrap(), Image::zeros(g));
        assert!(make_phantom(&PhantomSpec::discs(0.0, &[([14.0, 0.0], 3.0, 1.0)]), &g).is_err());
        assert!(make_phantom(&PhantomSpec::shepp_like(16.0), &g).is_ok());
        assert!(make_phantom(&PhantomSpec::triangle_pair(16.0, 1.0), &g).is_ok());
    }

    #[test]
    fn triangle_area() {
        let g = grid();
        let spec = PhantomSpec {
            background: 0.0,
            shapes: vec![Shape::Triangle { vertices: [[-6.0, -4.0], [6.0, -4.0], [0.0, 8.0]], intensity: 1.0 }],
        };
        let mass = make_phantom(&spec, &g).unwrap().sum() * g.cell_area();
        assert!((mass - 72.0).abs() < 0.72, "{mass}");
    }

    #[test]
    fn still_sequence_is_constant() {
        let seq = EvolvingSequence {
            base: PhantomSpec::discs(0.1, &[([1.0, 2.0], 4.0, 1.0)]),
            drift: [0.0, 0.0],
            appearing: None,
            appear_time: 0.5,
        };
        let frames = make_sequence(&seq, &grid(), &[0.0, 0.3, 1.0]).unwrap();
        assert!(frames.windows(2).all(|w| w[0] == w[1]));
        let grow = EvolvingSequence {
            appearing: Some(Shape::Disc { center: [-6.0, -6.0], radius: 2.0, intensity: 1.0 }),
            ..seq
        };
        let frames = make_sequence(&grow, &grid(), &[0.2, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(frames[0], frames[1]);
        assert!(frames[2].sum() > frames[1].sum() && frames[3].sum() > frames[2].sum());
    }

    #[test]
    fn psnr_cases() {
        let g = GridSpec::square(1.0, 2).unwrap();
        let r = Image::from_vec(g, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
        // Error with one tenth the spread of the reference: ratio 100.
        let t = Image::from_vec(g, vec![0.0, 1.1, 2.2, 3.3]).unwrap();
        assert!((psnr(&r, &t).unwrap() - 20.0).abs() < 1e-12);
        let t = Image::from_vec(g, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert!(psnr(&r, &t).unwrap().abs() < 1e-12);
        assert!(psnr(&Image::constant(g, 1.0), &r).is_err());
    }

    #[test]
    fn noise_is_calibrated_and_seeded() {
        let geo = Geometry::uniform(10, 20, 20.0).unwrap();
        let data = (0..200).map(|k| (k as f64 * 0.1).sin()).collect();
        let s = Sinogram::from_vec(geo.clone(), data).unwrap();
        let n = add_noise(&s, 15.6, 9).unwrap();
        assert!((psnr(&s, &n).unwrap() - 15.6).abs() < 0.05);
        assert_eq!(n, add_noise(&s, 15.6, 9).unwrap());
        assert_ne!(n, add_noise(&s, 15.6, 10).unwrap());
        assert_eq!(add_noise(&s, f64::INFINITY, 1).unwrap(), s);
        assert!(add_noise(&Sinogram::zeros(geo), 10.0, 1).is_err());
    }

    #[test]
    fn ssim_basics() {
        let g = GridSpec::square(16.0, 16).unwrap();
        let a = Image::from_fn(g, |x, y| (0.4 * x).sin() + 0.1 * y);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut inv = a.clone();
        inv.scale(-1.0);
        inv.axpy(1.0, &Image::constant(g, 3.0));
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        assert!(ssim(&a, &Image::zeros(GridSpec::square(16.0, 32).unwrap())).is_err());
        assert!(ssim(
            &Image::zeros(GridSpec::square(1.0, 4).unwrap()),
            &Image::zeros(GridSpec::square(1.0, 4).unwrap())
        )
        .is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![MetricsRow {
            experiment: "x".into(),
            sigma: 2.0,
            gamma: 1e-5,
            tau: 1e-3,
            ssim: 0.5,
            psnr: f64::INFINITY,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "experiment,sigma,gamma,tau,ssim,psnr\nx,2,0.00001,0.001,0.5,inf\n"
        );
    }
}

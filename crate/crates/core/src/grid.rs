//! Regular pixel grids over the square domain `[-L, L]²`, scalar and vector
//! images living on them, bilinear sampling and central-difference operators.
//!
//! Nodes sit at pixel centres: node `(i, j)` is the point
//! `(-L + (i + ½)h, -L + (j + ½)h)` with `h = 2L / nx`. Storage is row-major
//! with `i` (the x index) running fastest.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    half_width: f64,
    nx: usize,
    ny: usize,
}

impl GridSpec {
    /// Square grid over `[-half_width, half_width]²` with `nx × ny` pixels.
    ///
    /// Pixels must be square, which on a square domain forces `nx == ny`.
    pub fn new(half_width: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::config(format!("half width must be positive, got {half_width}")));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::config(format!("grid needs at least 2×2 pixels, got {nx}×{ny}")));
        }
        if nx != ny {
            return Err(Error::config(format!("pixels must be square, got {nx}×{ny} on a square domain")));
        }
        Ok(GridSpec { half_width, nx, ny })
    }

    pub fn square(half_width: f64, n: usize) -> Result<Self> {
        Self::new(half_width, n, n)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Pixel spacing.
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.nx as f64
    }

    /// Area of one pixel, the quadrature weight of every node.
    pub fn cell_area(&self) -> f64 {
        let h = self.h();
        h * h
    }

    pub fn node_x(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    pub fn node_y(&self, j: usize) -> f64 {
        -self.half_width + (j as f64 + 0.5) * self.h()
    }

    pub fn node(&self, idx: usize) -> Point {
        [self.node_x(idx % self.nx), self.node_y(idx / self.nx)]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0].abs() <= self.half_width && p[1].abs() <= self.half_width
    }

    /// Projects a point onto the closed domain.
    pub fn clamp(&self, p: Point) -> Point {
        let l = self.half_width;
        [p[0].clamp(-l, l), p[1].clamp(-l, l)]
    }

    /// Iterator over all node coordinates in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    pub(crate) fn check_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::shape(format!("{what}: grid {self:?} vs {other:?}")));
        }
        Ok(())
    }

    /// Continuous (fractional) node index of a point along each axis.
    fn continuous_index(&self, p: Point) -> (f64, f64) {
        let h = self.h();
        ((p[0] + self.half_width) / h - 0.5, (p[1] + self.half_width) / h - 0.5)
    }

    /// Bilinear stencil of `p` with zero-extension: nodes outside the grid
    /// are dropped, points outside the domain have an empty stencil.
    pub(crate) fn stencil(&self, p: Point) -> Stencil {
        let mut st = Stencil::default();
        if !self.contains(p) {
            return st;
        }
        let (u, w) = self.continuous_index(p);
        let (i0, j0) = (u.floor(), w.floor());
        let (fx, fy) = (u - i0, w - j0);
        let (i0, j0) = (i0 as isize, j0 as isize);
        let weights =
            [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)];
        for (di, dj, wgt) in weights {
            let (i, j) = (i0 + di, j0 + dj);
            if i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny {
                st.push(self.index(i as usize, j as usize), wgt);
            }
        }
        st
    }

    /// Bilinear stencil with edge clamping: the point is moved into the
    /// domain and indices are clamped to the node range, so edge values are
    /// extended outward. Used for displacement fields and determinants.
    pub(crate) fn stencil_clamped(&self, p: Point) -> Stencil {
        let mut st = Stencil::default();
        let (u, w) = self.continuous_index(self.clamp(p));
        let u = u.clamp(0.0, (self.nx - 1) as f64);
        let w = w.clamp(0.0, (self.ny - 1) as f64);
        let i0 = (u.floor() as usize).min(self.nx - 2);
        let j0 = (w.floor() as usize).min(self.ny - 2);
        let (fx, fy) = (u - i0 as f64, w - j0 as f64);
        st.push(self.index(i0, j0), (1.0 - fx) * (1.0 - fy));
        st.push(self.index(i0 + 1, j0), fx * (1.0 - fy));
        st.push(self.index(i0, j0 + 1), (1.0 - fx) * fy);
        st.push(self.index(i0 + 1, j0 + 1), fx * fy);
        st
    }
}

/// A bilinear stencil together with the partial derivatives of its weights
/// with respect to the lookup point.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct StencilGrad {
    pub value: Stencil,
    pub d_x: Stencil,
    pub d_y: Stencil,
}

impl StencilGrad {
    /// Gradient of the interpolant with respect to the lookup point.
    pub(crate) fn grad(&self, data: &[f64]) -> Point {
        [self.d_x.apply(data), self.d_y.apply(data)]
    }
}

impl GridSpec {
    /// [`GridSpec::stencil`] with weight derivatives. Exactly on a node line
    /// the interpolant has a kink; there the derivative is the average of the
    /// two one-sided slopes.
    pub(crate) fn stencil_grad(&self, p: Point) -> StencilGrad {
        let mut sg = StencilGrad::default();
        if !self.contains(p) {
            return sg;
        }
        let h = self.h();
        let (u, w) = self.continuous_index(p);
        let (i0, j0) = (u.floor(), w.floor());
        let (fx, fy) = (u - i0, w - j0);
        let (i0, j0) = (i0 as isize, j0 as isize);
        let weights =
            [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)];
        for (di, dj, wgt) in weights {
            self.push_node(&mut sg.value, i0 + di, j0 + dj, wgt);
        }
        // Slope along one axis as (offset, weight) pairs relative to the cell corner.
        let slope = |f: f64| -> [(isize, f64); 2] {
            if f == 0.0 {
                [(-1, -0.5 / h), (1, 0.5 / h)]
            } else {
                [(0, -1.0 / h), (1, 1.0 / h)]
            }
        };
        for (di, c) in slope(fx) {
            self.push_node(&mut sg.d_x, i0 + di, j0, c * (1.0 - fy));
            self.push_node(&mut sg.d_x, i0 + di, j0 + 1, c * fy);
        }
        for (dj, c) in slope(fy) {
            self.push_node(&mut sg.d_y, i0, j0 + dj, c * (1.0 - fx));
            self.push_node(&mut sg.d_y, i0 + 1, j0 + dj, c * fx);
        }
        sg
    }

    fn push_node(&self, st: &mut Stencil, i: isize, j: isize, wgt: f64) {
        if i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny {
            st.push(self.index(i as usize, j as usize), wgt);
        }
    }

    /// [`GridSpec::stencil_clamped`] with weight derivatives; they vanish
    /// along an axis on which the point is clamped.
    pub(crate) fn stencil_clamped_grad(&self, p: Point) -> StencilGrad {
        let mut sg = StencilGrad::default();
        let h = self.h();
        let (ru, rw) = self.continuous_index(self.clamp(p));
        let live_x = p[0].abs() <= self.half_width && ru >= 0.0 && ru <= (self.nx - 1) as f64;
        let live_y = p[1].abs() <= self.half_width && rw >= 0.0 && rw <= (self.ny - 1) as f64;
        let u = ru.clamp(0.0, (self.nx - 1) as f64);
        let w = rw.clamp(0.0, (self.ny - 1) as f64);
        let i0 = (u.floor() as usize).min(self.nx - 2);
        let j0 = (w.floor() as usize).min(self.ny - 2);
        let (fx, fy) = (u - i0 as f64, w - j0 as f64);
        let sx = if live_x { 1.0 / h } else { 0.0 };
        let sy = if live_y { 1.0 / h } else { 0.0 };
        let corners = [
            (self.index(i0, j0), (1.0 - fx) * (1.0 - fy), -(1.0 - fy) * sx, -(1.0 - fx) * sy),
            (self.index(i0 + 1, j0), fx * (1.0 - fy), (1.0 - fy) * sx, -fx * sy),
            (self.index(i0, j0 + 1), (1.0 - fx) * fy, -fy * sx, (1.0 - fx) * sy),
            (self.index(i0 + 1, j0 + 1), fx * fy, fy * sx, fx * sy),
        ];
        for (idx, w, wx, wy) in corners {
            sg.value.push(idx, w);
            sg.d_x.push(idx, wx);
            sg.d_y.push(idx, wy);
        }
        sg
    }
}

/// Up to four (node index, weight) pairs of a bilinear lookup.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Stencil {
    idx: [usize; 4],
    wgt: [f64; 4],
    len: usize,
}

impl Stencil {
    fn push(&mut self, idx: usize, wgt: f64) {
        self.idx[self.len] = idx;
        self.wgt[self.len] = wgt;
        self.len += 1;
    }

    pub(crate) fn apply(&self, data: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.len {
            acc += self.wgt[k] * data[self.idx[k]];
        }
        acc
    }

    /// Transpose of [`Stencil::apply`]: scatters `value` into `data`.
    pub(crate) fn scatter(&self, value: f64, data: &mut [f64]) {
        for k in 0..self.len {
            data[self.idx[k]] += self.wgt[k] * value;
        }
    }
}

/// Scalar field sampled at the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    spec: GridSpec,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(spec: GridSpec) -> Self {
        Image { spec, data: vec![0.0; spec.len()] }
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        Image { spec, data: vec![value; spec.len()] }
    }

    pub fn from_vec(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::shape(format!("image data has {} values, grid needs {}", data.len(), spec.len())));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite image value at index {k}")));
        }
        Ok(Image { spec, data })
    }

    /// Evaluates `f` at every node.
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = spec.nodes().map(|[x, y]| f(x, y)).collect();
        Image { spec, data }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.spec.index(i, j)]
    }

    /// Bilinear value at `p`, zero outside the domain.
    pub fn sample(&self, p: Point) -> f64 {
        self.spec.stencil(p).apply(&self.data)
    }

    /// Bilinear value at `p` with edge values extended past the boundary.
    pub fn sample_clamped(&self, p: Point) -> f64 {
        self.spec.stencil_clamped(p).apply(&self.data)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Image) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|a| *a *= alpha);
    }

    /// `L²(Ω)` inner product with pixel-area quadrature.
    pub fn inner(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.spec, other.spec);
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum();
        s * self.spec.cell_area()
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Image {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[self.spec.index(i, j)]
    }
}

impl IndexMut<(usize, usize)> for Image {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        let k = self.spec.index(i, j);
        &mut self.data[k]
    }
}

/// Two-component field on the grid (velocities, gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorImage {
    spec: GridSpec,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorImage {
    pub fn zeros(spec: GridSpec) -> Self {
        VectorImage { spec, x: vec![0.0; spec.len()], y: vec![0.0; spec.len()] }
    }

    pub fn from_components(x: Image, y: Image) -> Result<Self> {
        x.spec.check_same(&y.spec, "vector components")?;
        Ok(VectorImage { spec: x.spec, x: x.data, y: y.data })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> Point) -> Self {
        let (x, y) = spec
            .nodes()
            .map(|[px, py]| {
                let v = f(px, py);
                (v[0], v[1])
            })
            .unzip();
        VectorImage { spec, x, y }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_mut(&mut self) -> &mut [f64] {
        &mut self.x
    }

    pub fn y_mut(&mut self) -> &mut [f64] {
        &mut self.y
    }

    pub fn at(&self, idx: usize) -> Point {
        [self.x[idx], self.y[idx]]
    }

    pub fn component(&self, c: usize) -> Image {
        let data = if c == 0 { self.x.clone() } else { self.y.clone() };
        Image { spec: self.spec, data }
    }

    pub fn sample(&self, p: Point) -> Point {
        let st = self.spec.stencil(p);
        [st.apply(&self.x), st.apply(&self.y)]
    }

    pub fn axpy(&mut self, alpha: f64, other: &VectorImage) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            *a += alpha * b;
        }
        for (a, b) in self.y.iter_mut().zip(&other.y) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.x.iter_mut().chain(self.y.iter_mut()).for_each(|a| *a *= alpha);
    }

    pub fn is_zero(&self) -> bool {
        self.x.iter().chain(&self.y).all(|&a| a == 0.0)
    }

    /// Multiplies both components pointwise by a scalar field.
    pub fn scale_by(&mut self, weight: &Image) {
        debug_assert_eq!(self.spec, weight.spec);
        for (k, w) in weight.data.iter().enumerate() {
            self.x[k] *= w;
            self.y[k] *= w;
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.x.iter().zip(&self.y).fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)))
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

fn check_points(pts: &[Point]) -> Result<()> {
    match pts.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        Some(k) => Err(Error::input(format!("non-finite sample point at index {k}: {:?}", pts[k]))),
        None => Ok(()),
    }
}

/// Bilinear interpolation of `img` at each point; zero outside the domain.
pub fn sample_bilinear(img: &Image, pts: &[Point]) -> Result<Vec<f64>> {
    check_points(pts)?;
    Ok(pts.iter().map(|&p| img.sample(p)).collect())
}

/// Componentwise [`sample_bilinear`].
pub fn sample_bilinear_vec(vimg: &VectorImage, pts: &[Point]) -> Result<Vec<Point>> {
    check_points(pts)?;
    Ok(pts.iter().map(|&p| vimg.sample(p)).collect())
}

/// Derivative of `data` along one axis: central differences inside,
/// one-sided at the first and last node.
fn diff_axis(spec: &GridSpec, data: &[f64], axis: usize, out: &mut [f64]) {
    let (nx, ny) = (spec.nx(), spec.ny());
    let h = spec.h();
    let (n, stride) = if axis == 0 { (nx, 1) } else { (ny, nx) };
    for j in 0..ny {
        for i in 0..nx {
            let k = spec.index(i, j);
            let pos = if axis == 0 { i } else { j };
            out[k] = if pos == 0 {
                (data[k + stride] - data[k]) / h
            } else if pos == n - 1 {
                (data[k] - data[k - stride]) / h
            } else {
                (data[k + stride] - data[k - stride]) / (2.0 * h)
            };
        }
    }
}

pub fn gradient_central(img: &Image) -> VectorImage {
    let spec = img.spec;
    let mut g = VectorImage::zeros(spec);
    diff_axis(&spec, &img.data, 0, &mut g.x);
    diff_axis(&spec, &img.data, 1, &mut g.y);
    g
}

pub fn divergence(v: &VectorImage) -> Image {
    let spec = v.spec;
    let mut dx = vec![0.0; spec.len()];
    let mut dy = vec![0.0; spec.len()];
    diff_axis(&spec, &v.x, 0, &mut dx);
    diff_axis(&spec, &v.y, 1, &mut dy);
    for (a, b) in dx.iter_mut().zip(dy) {
        *a += b;
    }
    Image { spec, data: dx }
}

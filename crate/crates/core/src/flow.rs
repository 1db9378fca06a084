//! Euler discretisation of the flow generated by a time-dependent velocity
//! field, stored as node-wise lookup tables.
//!
//! `φ_{s,t}` carries a point sitting at time `s` to its position at time `t`.
//! Single steps are small deformations `Id ± v(t_k, ·)/N`:
//!
//! * going back in time, `φ_{t_i,t_j} = φ_{t_{i-1},t_j} ∘ (Id - v(t_{i-1})/N)` for `i > j`;
//! * going forward, `φ_{t_i,t_j} = φ_{t_{i+1},t_j} ∘ (Id + v(t_i)/N)` for `i < j`.
//!
//! Only the samples `v(t_0) .. v(t_{N-1})` enter the flow.

use crate::error::{Error, Result};
use crate::grid::{divergence, GridSpec, Image, Point, VectorImage};

/// Lower bound applied to Jacobian determinants.
pub const MIN_JACOBIAN: f64 = 1e-8;

/// Uniform partition of `[0, 1]` into `N` intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeGrid {
    steps: usize,
}

impl TimeGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("time grid needs at least one step"));
        }
        Ok(TimeGrid { steps })
    }

    /// Number of intervals `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }

    /// Number of time samples, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Samples `v(t_i, ·)` for `i = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeVaryingVectorField {
    tgrid: TimeGrid,
    samples: Vec<VectorImage>,
}

impl TimeVaryingVectorField {
    pub fn zeros(tgrid: TimeGrid, spec: GridSpec) -> Self {
        TimeVaryingVectorField { tgrid, samples: vec![VectorImage::zeros(spec); tgrid.len()] }
    }

    pub fn new(tgrid: TimeGrid, samples: Vec<VectorImage>) -> Result<Self> {
        if samples.len() != tgrid.len() {
            return Err(Error::shape(format!(
                "velocity has {} samples, time grid needs {}",
                samples.len(),
                tgrid.len()
            )));
        }
        let spec = *samples[0].spec();
        for s in &samples {
            spec.check_same(s.spec(), "velocity samples")?;
            if !s.is_finite() {
                return Err(Error::input("non-finite velocity sample"));
            }
        }
        Ok(TimeVaryingVectorField { tgrid, samples })
    }

    /// The same field at every time sample.
    pub fn stationary(tgrid: TimeGrid, field: VectorImage) -> Self {
        TimeVaryingVectorField { tgrid, samples: vec![field; tgrid.len()] }
    }

    pub fn tgrid(&self) -> TimeGrid {
        self.tgrid
    }

    pub fn spec(&self) -> &GridSpec {
        self.samples[0].spec()
    }

    pub fn samples(&self) -> &[VectorImage] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [VectorImage] {
        &mut self.samples
    }

    pub fn at(&self, i: usize) -> &VectorImage {
        &self.samples[i]
    }

    pub fn axpy(&mut self, alpha: f64, other: &TimeVaryingVectorField) {
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            a.axpy(alpha, b);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|s| s.x().iter().chain(s.y()).all(|&v| v == 0.0))
    }
}

/// Lookup table of a map `Ω → Ω`: the image of every grid node.
///
/// Stored as a displacement from the identity so that compositions can
/// interpolate it with edge extension.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMap {
    spec: GridSpec,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl DeformationMap {
    pub fn identity(spec: GridSpec) -> Self {
        DeformationMap { spec, dx: vec![0.0; spec.len()], dy: vec![0.0; spec.len()] }
    }

    /// Builds a map from explicit node images; points are clamped onto the domain.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Point) -> Point) -> Self {
        let mut map = Self::identity(spec);
        for (k, x) in spec.nodes().enumerate() {
            let q = spec.clamp(f(x));
            map.dx[k] = q[0] - x[0];
            map.dy[k] = q[1] - x[1];
        }
        map
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Image of node `k`.
    pub fn point(&self, k: usize) -> Point {
        let [x, y] = self.spec.node(k);
        [x + self.dx[k], y + self.dy[k]]
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.spec.len()).map(|k| self.point(k)).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|&d| d == 0.0)
    }

    /// Value of the map at an arbitrary point, interpolating the displacement.
    pub fn eval(&self, p: Point) -> Point {
        let p = self.spec.clamp(p);
        let st = self.spec.stencil_clamped(p);
        self.spec.clamp([p[0] + st.apply(&self.dx), p[1] + st.apply(&self.dy)])
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &DeformationMap) -> DeformationMap {
        let spec = self.spec;
        let mut out = Self::identity(spec);
        for k in 0..spec.len() {
            let [x, y] = spec.node(k);
            let q = self.eval(inner.point(k));
            out.dx[k] = q[0] - x;
            out.dy[k] = q[1] - y;
        }
        out
    }

    /// `self ∘ (Id + alpha·v)` with `v` taken at the nodes.
    pub fn compose_step(&self, v: &VectorImage, alpha: f64) -> DeformationMap {
        let spec = self.spec;
        let mut out = Self::identity(spec);
        for k in 0..spec.len() {
            let x = spec.node(k);
            let [vx, vy] = v.at(k);
            let q = self.eval([x[0] + alpha * vx, x[1] + alpha * vy]);
            out.dx[k] = q[0] - x[0];
            out.dy[k] = q[1] - x[1];
        }
        out
    }

    /// `img ∘ self`, zero-extended outside the domain.
    pub fn pull(&self, img: &Image) -> Image {
        let data = (0..self.spec.len()).map(|k| img.sample(self.point(k))).collect();
        Image::from_vec(self.spec, data).expect("interpolation of finite data is finite")
    }

    /// Reverse mode of [`DeformationMap::pull`]: given the sensitivity `bar`
    /// of the pulled image, accumulates the sensitivities of `img` and of the
    /// map's node images.
    pub(crate) fn pull_adjoint(&self, img: &Image, bar: &Image, bar_img: &mut Image, bar_map: &mut VectorImage) {
        for k in 0..self.spec.len() {
            let b = bar.data()[k];
            if b == 0.0 {
                continue;
            }
            let sg = self.spec.stencil_grad(self.point(k));
            sg.value.scatter(b, bar_img.data_mut());
            let [gx, gy] = sg.grad(img.data());
            bar_map.x_mut()[k] += b * gx;
            bar_map.y_mut()[k] += b * gy;
        }
    }

    /// Reverse mode of [`DeformationMap::compose_step`]: given the sensitivity
    /// `bar` of the composed map's node images, accumulates the sensitivities
    /// of `self` and of `v`.
    pub(crate) fn compose_step_adjoint(
        &self,
        v: &VectorImage,
        alpha: f64,
        bar: &VectorImage,
        bar_self: &mut VectorImage,
        bar_v: &mut VectorImage,
    ) {
        let spec = self.spec;
        let l = spec.half_width();
        for k in 0..spec.len() {
            let (bx, by) = (bar.x()[k], bar.y()[k]);
            if bx == 0.0 && by == 0.0 {
                continue;
            }
            let x = spec.node(k);
            let [vx, vy] = v.at(k);
            let p = [x[0] + alpha * vx, x[1] + alpha * vy];
            let pc = spec.clamp(p);
            let sg = spec.stencil_clamped_grad(p);
            let z = [pc[0] + sg.value.apply(&self.dx), pc[1] + sg.value.apply(&self.dy)];
            let bx = if z[0].abs() <= l { bx } else { 0.0 };
            let by = if z[1].abs() <= l { by } else { 0.0 };
            sg.value.scatter(bx, bar_self.x_mut());
            sg.value.scatter(by, bar_self.y_mut());
            let gdx = sg.grad(&self.dx);
            let gdy = sg.grad(&self.dy);
            let ix = if p[0].abs() <= l { 1.0 } else { 0.0 };
            let iy = if p[1].abs() <= l { 1.0 } else { 0.0 };
            let gpx = bx * (ix + gdx[0]) + by * gdy[0];
            let gpy = by * (iy + gdy[1]) + bx * gdx[1];
            bar_v.x_mut()[k] += alpha * gpx;
            bar_v.y_mut()[k] += alpha * gpy;
        }
    }

    /// Maximum distance of any node image from its reference point.
    pub fn max_deviation(&self, other: &DeformationMap) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .zip(other.dx.iter().zip(&other.dy))
            .map(|((a, b), (c, d))| (a - c).hypot(b - d))
            .fold(0.0, f64::max)
    }
}

/// `φ_{t_i, t_j}` for `i = j..=N`, indexed by `i - j`.
pub fn pullback_maps(v: &TimeVaryingVectorField, j: usize) -> Vec<DeformationMap> {
    let n = v.tgrid().steps();
    let dt = v.tgrid().dt();
    let mut maps = Vec::with_capacity(n + 1 - j);
    maps.push(DeformationMap::identity(*v.spec()));
    for i in j + 1..=n {
        let next = maps[i - 1 - j].compose_step(v.at(i - 1), -dt);
        maps.push(next);
    }
    maps
}

/// `φ_{t_i, t_j}` for `i = 0..=j`, indexed by `i`.
pub fn pushforward_maps(v: &TimeVaryingVectorField, j: usize) -> Vec<DeformationMap> {
    let dt = v.tgrid().dt();
    let mut maps = vec![DeformationMap::identity(*v.spec()); j + 1];
    for i in (0..j).rev() {
        maps[i] = maps[i + 1].compose_step(v.at(i), dt);
    }
    maps
}

/// `φ_{t_i, 0}` for `i = 0..=N`.
pub fn maps_from_zero(v: &TimeVaryingVectorField) -> Vec<DeformationMap> {
    pullback_maps(v, 0)
}

/// `φ_{t_i, 1}` for `i = 0..=N`.
pub fn maps_to_one(v: &TimeVaryingVectorField) -> Vec<DeformationMap> {
    pushforward_maps(v, v.tgrid().steps())
}

/// `φ_{t_i, t_j}` for arbitrary `i, j ∈ 0..=N`.
pub fn intermediate_map(v: &TimeVaryingVectorField, i: usize, j: usize) -> Result<DeformationMap> {
    let n = v.tgrid().steps();
    if i > n || j > n {
        return Err(Error::input(format!("time indices ({i}, {j}) outside 0..={n}")));
    }
    let dt = v.tgrid().dt();
    let mut map = DeformationMap::identity(*v.spec());
    if i >= j {
        for k in j + 1..=i {
            map = map.compose_step(v.at(k - 1), -dt);
        }
    } else {
        for k in (i..j).rev() {
            map = map.compose_step(v.at(k), dt);
        }
    }
    Ok(map)
}

/// `|Det dφ_{t_i, t_end}|` for `i = 0..=end`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianChain {
    entries: Vec<Image>,
}

impl JacobianChain {
    pub fn entries(&self) -> &[Image] {
        &self.entries
    }

    pub fn at(&self, i: usize) -> &Image {
        &self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Determinant recursion towards time `t_end`:
/// `J_i = (1 + div v(t_i)/N) · J_{i+1} ∘ (Id + v(t_i)/N)`, `J_end = 1`.
pub fn jacobian_chain_to(v: &TimeVaryingVectorField, end: usize) -> JacobianChain {
    let spec = *v.spec();
    let dt = v.tgrid().dt();
    let mut entries = vec![Image::constant(spec, 1.0); end + 1];
    for i in (0..end).rev() {
        let vi = v.at(i);
        let div = divergence(vi);
        let next = &entries[i + 1];
        let mut cur = Image::zeros(spec);
        for (k, out) in cur.data_mut().iter_mut().enumerate() {
            let [x, y] = spec.node(k);
            let [vx, vy] = vi.at(k);
            let carried = next.sample_clamped([x + dt * vx, y + dt * vy]);
            *out = ((1.0 + dt * div.data()[k]) * carried).max(MIN_JACOBIAN);
        }
        entries[i] = cur;
    }
    JacobianChain { entries }
}

pub fn jacobian_chain(v: &TimeVaryingVectorField) -> JacobianChain {
    jacobian_chain_to(v, v.tgrid().steps())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::square(16.0, 32).unwrap()
    }

    fn interior(spec: &GridSpec, radius: f64) -> impl Iterator<Item = (usize, Point)> + '_ {
        spec.nodes().enumerate().filter(move |(_, p)| p[0].hypot(p[1]) <= radius)
    }

    #[test]
    fn zero_velocity_gives_identities() {
        let v = TimeVaryingVectorField::zeros(TimeGrid::new(4).unwrap(), grid());
        assert!(maps_from_zero(&v).iter().all(DeformationMap::is_identity));
        assert!(maps_to_one(&v).iter().all(DeformationMap::is_identity));
        for i in 0..=4 {
            for j in 0..=4 {
                assert!(intermediate_map(&v, i, j).unwrap().is_identity());
            }
        }
        for e in jacobian_chain(&v).entries() {
            assert!(e.data().iter().all(|&d| d == 1.0));
        }
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let v = TimeVaryingVectorField::zeros(TimeGrid::new(3).unwrap(), grid());
        assert!(intermediate_map(&v, 4, 0).is_err());
        assert!(intermediate_map(&v, 0, 7).is_err());
    }

    #[test]
    fn translations_compose_exactly() {
        let spec = grid();
        let c = 1.7;
        for n in [1, 3, 10] {
            let tg = TimeGrid::new(n).unwrap();
            let v = TimeVaryingVectorField::stationary(tg, VectorImage::from_fn(spec, |_, _| [c, 0.0]));
            let back = maps_from_zero(&v);
            let fwd = maps_to_one(&v);
            // Boundary clamping spreads inward by at most one node per step.
            let radius = 16.0 - c - (n as f64 + 1.0) * spec.h();
            for (k, x) in interior(&spec, radius) {
                let p = back[n].point(k);
                assert!((p[0] - (x[0] - c)).abs() < 1e-10 && (p[1] - x[1]).abs() < 1e-10);
                let q = fwd[0].point(k);
                assert!((q[0] - (x[0] + c)).abs() < 1e-10 && (q[1] - x[1]).abs() < 1e-10);
            }
            for (i, j) in [(0, n), (n, 0), (1, n), (n, 1)] {
                let m = intermediate_map(&v, i, j).unwrap();
                let shift = (tg.t(j) - tg.t(i)) * c;
                for (k, x) in interior(&spec, radius) {
                    assert!((m.point(k)[0] - (x[0] + shift)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn same_index_is_identity() {
        let spec = grid();
        let v = TimeVaryingVectorField::stationary(
            TimeGrid::new(5).unwrap(),
            VectorImage::from_fn(spec, |x, y| [0.1 * y, -0.2 * x]),
        );
        for i in 0..=5 {
            assert!(intermediate_map(&v, i, i).unwrap().is_identity());
        }
    }

    #[test]
    fn intermediate_maps_match_recursions_bitwise() {
        let spec = grid();
        let tg = TimeGrid::new(6).unwrap();
        let samples = (0..tg.len())
            .map(|i| {
                let a = 0.05 * (i as f64 + 1.0);
                VectorImage::from_fn(spec, move |x, y| [a * (y / 8.0).sin(), -a * (x / 5.0).cos()])
            })
            .collect();
        let v = TimeVaryingVectorField::new(tg, samples).unwrap();
        let back = maps_from_zero(&v);
        let fwd = maps_to_one(&v);
        for i in 0..=6 {
            assert_eq!(intermediate_map(&v, i, 0).unwrap(), back[i]);
            assert_eq!(intermediate_map(&v, i, 6).unwrap(), fwd[i]);
        }
        let to_three = pushforward_maps(&v, 3);
        for (j, map) in to_three.iter().enumerate() {
            assert_eq!(intermediate_map(&v, 0, j).unwrap(), pushforward_maps(&v, j)[0]);
            assert_eq!(&intermediate_map(&v, j, 3).unwrap(), map);
        }
    }

    fn rotation(n: usize, omega: f64) -> TimeVaryingVectorField {
        TimeVaryingVectorField::stationary(
            TimeGrid::new(n).unwrap(),
            VectorImage::from_fn(grid(), move |x, y| [-omega * y, omega * x]),
        )
    }

    /// Sup-norm distance of `φ_{1,0}` from the exact rotation by `-ω`
    /// over nodes within radius 8.
    pub(crate) fn rotation_error(n: usize) -> f64 {
        let omega = 0.8;
        let spec = grid();
        let end = maps_from_zero(&rotation(n, omega)).pop().unwrap();
        let (s, c) = omega.sin_cos();
        interior(&spec, 8.0)
            .map(|(k, [x, y])| {
                let exact = [c * x + s * y, -s * x + c * y];
                let p = end.point(k);
                (p[0] - exact[0]).hypot(p[1] - exact[1])
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn rotation_flow_is_first_order() {
        let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| rotation_error(n)).collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}, errors {errs:?}");
        }
    }

    #[test]
    fn forward_and_backward_endpoints_invert() {
        let spec = grid();
        let mut errs = vec![];
        for n in [8, 16, 32] {
            let v = rotation(n, 0.6);
            let back = maps_from_zero(&v).pop().unwrap();
            let fwd = maps_to_one(&v).swap_remove(0);
            let round = fwd.compose(&back);
            let err = interior(&spec, 8.0)
                .map(|(k, x)| {
                    let p = round.point(k);
                    (p[0] - x[0]).hypot(p[1] - x[1])
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] < 0.5, "{errs:?}");
        assert!(errs[0] / errs[1] > 1.6 && errs[1] / errs[2] > 1.6, "{errs:?}");
    }

    #[test]
    fn rotation_preserves_area() {
        for e in jacobian_chain(&rotation(10, 0.8)).entries() {
            assert!(e.data().iter().all(|&d| (d - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn scaling_determinant_converges_to_exponential() {
        let lambda: f64 = 0.1;
        let exact = (2.0 * lambda).exp();
        let mut errs = vec![];
        for n in [8, 16, 32] {
            let v = TimeVaryingVectorField::stationary(
                TimeGrid::new(n).unwrap(),
                VectorImage::from_fn(grid(), move |x, y| [lambda * x, lambda * y]),
            );
            let chain = jacobian_chain(&v);
            let d0 = chain.at(0).get(16, 16);
            errs.push((d0 - exact).abs() / exact);
            assert!(chain.entries().iter().all(|e| e.data().iter().all(|&d| d > 0.0)));
        }
        assert!(errs[0] < 0.01, "{errs:?}");
        assert!((errs[0] / errs[1] - 2.0).abs() < 0.2 && (errs[1] / errs[2] - 2.0).abs() < 0.2);
    }

    #[test]
    fn determinant_is_clamped_positive() {
        // Strong compression: 1 + div/N < 0 without clamping.
        let v = TimeVaryingVectorField::stationary(
            TimeGrid::new(1).unwrap(),
            VectorImage::from_fn(grid(), |x, y| [-2.0 * x, -2.0 * y]),
        );
        let chain = jacobian_chain(&v);
        assert!(chain.at(0).data().iter().all(|&d| d == MIN_JACOBIAN));
    }
}

//! Periodic 2D grids and the values that live on them.
//!
//! Storage is row-major with `x` fastest: the sample at column `ix`, row `iy`
//! sits at index `iy * nx + ix`. Node `(ix, iy)` has physical coordinates
//! `(ix * hx, iy * hy)`, and every lookup wraps with period `(nx * hx, ny * hy)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular periodic grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

impl GridSpec {
    /// Grid with unit spacing.
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        Self::with_spacing(nx, ny, 1.0, 1.0)
    }

    pub fn with_spacing(nx: usize, ny: usize, hx: f64, hy: f64) -> Result<Self> {
        let grid = GridSpec { nx, ny, hx, hy };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(Error::input(format!(
                "grid must be at least 4x4, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.nx.checked_mul(self.ny).is_none_or(|n| n > u32::MAX as usize) {
            return Err(Error::input("grid has too many points"));
        }
        if !(self.hx.is_finite() && self.hx > 0.0 && self.hy.is_finite() && self.hy > 0.0) {
            return Err(Error::input(format!(
                "grid spacing must be positive, got ({}, {})",
                self.hx, self.hy
            )));
        }
        Ok(())
    }

    /// Number of grid points.
    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Area of one grid cell.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Physical coordinates of node `(ix, iy)`.
    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> (f64, f64) {
        (ix as f64 * self.hx, iy as f64 * self.hy)
    }

    /// Iterator over the physical coordinates of every node, in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.ny).flat_map(move |iy| (0..self.nx).map(move |ix| self.node(ix, iy)))
    }

    /// Bilinear stencil for the periodic lookup at `(x, y)`.
    #[inline]
    pub(crate) fn stencil(&self, x: f64, y: f64) -> Stencil {
        let u = x / self.hx;
        let w = y / self.hy;
        let fu = fast_floor(u);
        let fw = fast_floor(w);
        let ix0 = wrap(fu as isize, self.nx);
        let iy0 = wrap(fw as isize, self.ny);
        let ix1 = if ix0 + 1 == self.nx { 0 } else { ix0 + 1 };
        let iy1 = if iy0 + 1 == self.ny { 0 } else { iy0 + 1 };
        let (r0, r1) = (iy0 * self.nx, iy1 * self.nx);
        Stencil {
            i00: (r0 + ix0) as u32,
            i10: (r0 + ix1) as u32,
            i01: (r1 + ix0) as u32,
            i11: (r1 + ix1) as u32,
            fx: u - fu,
            fy: w - fw,
        }
    }
}

/// `floor` without a libm call; exact for `|u| < 2^63`.
#[inline]
fn fast_floor(u: f64) -> f64 {
    let t = u as i64 as f64;
    if t > u {
        t - 1.0
    } else {
        t
    }
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    let n = n as isize;
    if (0..n).contains(&i) {
        i as usize
    } else {
        i.rem_euclid(n) as usize
    }
}

/// Four corner indices and fractional offsets of a bilinear lookup.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub i00: u32,
    pub i10: u32,
    pub i01: u32,
    pub i11: u32,
    pub fx: f64,
    pub fy: f64,
}

impl Stencil {
    #[inline]
    pub fn sample(&self, data: &[f64]) -> f64 {
        let (fx, fy) = (self.fx, self.fy);
        let a = data[self.i00 as usize] + fx * (data[self.i10 as usize] - data[self.i00 as usize]);
        let b = data[self.i01 as usize] + fx * (data[self.i11 as usize] - data[self.i01 as usize]);
        a + fy * (b - a)
    }

    /// Partial derivatives `(d/dx, d/dy)` of the bilinear interpolant.
    #[inline]
    pub fn gradient(&self, data: &[f64], hx: f64, hy: f64) -> (f64, f64) {
        let (fx, fy) = (self.fx, self.fy);
        let (v00, v10, v01, v11) = (data[self.i00 as usize], data[self.i10 as usize], data[self.i01 as usize], data[self.i11 as usize]);
        let dx = ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01)) / hx;
        let dy = ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10)) / hy;
        (dx, dy)
    }

    /// Adds `value` into `data` with the transposed interpolation weights.
    #[inline]
    pub fn splat(&self, data: &mut [f64], value: f64) {
        let (fx, fy) = (self.fx, self.fy);
        data[self.i00 as usize] += (1.0 - fx) * (1.0 - fy) * value;
        data[self.i10 as usize] += fx * (1.0 - fy) * value;
        data[self.i01 as usize] += (1.0 - fx) * fy * value;
        data[self.i11 as usize] += fx * fy * value;
    }
}

fn check_len(grid: &GridSpec, len: usize, what: &str) -> Result<()> {
    if len != grid.len() {
        return Err(Error::input(format!(
            "{what} has {len} samples, grid {}x{} needs {}",
            grid.nx,
            grid.ny,
            grid.len()
        )));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("{what} has a non-finite value at index {pos}")));
    }
    Ok(())
}

pub(crate) fn check_same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::input(format!(
            "grid mismatch: {}x{} (h={},{}) vs {}x{} (h={},{})",
            a.nx, a.ny, a.hx, a.hy, b.nx, b.ny, b.hx, b.hy
        )));
    }
    Ok(())
}

/// Scalar intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    grid: GridSpec,
    data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_len(&grid, data.len(), "image")?;
        check_finite(&data, "image")?;
        Ok(ScalarImage { grid, data })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        ScalarImage {
            data: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        ScalarImage {
            data: vec![value; grid.len()],
            grid,
        }
    }

    /// Image whose value at every node is `f(x, y)` of the node's physical coordinates.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let data = grid.nodes().map(|(x, y)| f(x, y)).collect();
        Self::new(grid, data)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[self.grid.index(ix, iy)]
    }

    /// Bilinear periodic sample at physical coordinates.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        self.grid.stencil(x, y).sample(&self.data)
    }

    /// Rescales intensities linearly onto `[0, 1]`. A constant image maps to zeros.
    pub fn min_max_normalized(&self) -> ScalarImage {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let data = if span > 0.0 {
            self.data.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        ScalarImage {
            grid: self.grid,
            data,
        }
    }

    /// Discrete squared L2 distance, including the cell area.
    pub fn squared_distance(&self, other: &ScalarImage) -> Result<f64> {
        check_same_grid(&self.grid, &other.grid)?;
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(ss * self.grid.cell_area())
    }

    /// Central-difference gradient with periodic wrap.
    pub fn gradient(&self) -> VectorField {
        let g = self.grid;
        let mut vx = vec![0.0; g.len()];
        let mut vy = vec![0.0; g.len()];
        for iy in 0..g.ny {
            let up = (iy + 1) % g.ny;
            let down = (iy + g.ny - 1) % g.ny;
            for ix in 0..g.nx {
                let right = (ix + 1) % g.nx;
                let left = (ix + g.nx - 1) % g.nx;
                let i = g.index(ix, iy);
                vx[i] = (self.get(right, iy) - self.get(left, iy)) / (2.0 * g.hx);
                vy[i] = (self.get(ix, up) - self.get(ix, down)) / (2.0 * g.hy);
            }
        }
        VectorField { grid: g, vx, vy }
    }
}

/// Two-component field (velocity or displacement) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: GridSpec, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_len(&grid, vx.len(), "x component")?;
        check_len(&grid, vy.len(), "y component")?;
        check_finite(&vx, "x component")?;
        check_finite(&vy, "y component")?;
        Ok(VectorField { grid, vx, vy })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        VectorField {
            vx: vec![0.0; grid.len()],
            vy: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn constant(grid: GridSpec, cx: f64, cy: f64) -> Self {
        VectorField {
            vx: vec![cx; grid.len()],
            vy: vec![cy; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let (vx, vy) = grid.nodes().map(|(x, y)| f(x, y)).unzip();
        Self::new(grid, vx, vy)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn vx(&self) -> &[f64] {
        &self.vx
    }

    #[inline]
    pub fn vy(&self) -> &[f64] {
        &self.vy
    }

    pub(crate) fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.vx, &mut self.vy)
    }

    pub fn into_components(self) -> (Vec<f64>, Vec<f64>) {
        (self.vx, self.vy)
    }

    /// Bilinear periodic sample at physical coordinates.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.grid.stencil(x, y);
        (s.sample(&self.vx), s.sample(&self.vy))
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            vx: self.vx.iter().map(|v| v * c).collect(),
            vy: self.vy.iter().map(|v| v * c).collect(),
        }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &VectorField) -> Result<VectorField> {
        check_same_grid(&self.grid, &other.grid)?;
        Ok(VectorField {
            grid: self.grid,
            vx: self.vx.iter().zip(&other.vx).map(|(a, b)| a + c * b).collect(),
            vy: self.vy.iter().zip(&other.vy).map(|(a, b)| a + c * b).collect(),
        })
    }

    /// Plain pointwise dot product summed over the grid (no area factor).
    pub fn dot(&self, other: &VectorField) -> Result<f64> {
        check_same_grid(&self.grid, &other.grid)?;
        let sx: f64 = self.vx.iter().zip(&other.vx).map(|(a, b)| a * b).sum();
        let sy: f64 = self.vy.iter().zip(&other.vy).map(|(a, b)| a * b).sum();
        Ok(sx + sy)
    }

    pub fn max_abs(&self) -> f64 {
        self.vx
            .iter()
            .chain(&self.vy)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Time-indexed velocity: snapshot `k` holds the field at `t_k = k / T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVelocity {
    steps: Vec<VectorField>,
}

impl TimeVelocity {
    pub fn new(steps: Vec<VectorField>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::input("time velocity needs at least one step"))?;
        for s in &steps[1..] {
            check_same_grid(first.grid(), s.grid())?;
        }
        Ok(TimeVelocity { steps })
    }

    pub fn zeros(grid: GridSpec, time_steps: usize) -> Result<Self> {
        Self::new(vec![VectorField::zeros(grid); time_steps])
    }

    /// The same field repeated at every time step.
    pub fn stationary(field: VectorField, time_steps: usize) -> Result<Self> {
        Self::new(vec![field; time_steps])
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        self.steps[0].grid()
    }

    #[inline]
    pub fn time_steps(&self) -> usize {
        self.steps.len()
    }

    #[inline]
    pub fn steps(&self) -> &[VectorField] {
        &self.steps
    }

    pub fn into_steps(self) -> Vec<VectorField> {
        self.steps
    }

    pub fn scaled(&self, c: f64) -> TimeVelocity {
        TimeVelocity {
            steps: self.steps.iter().map(|s| s.scaled(c)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.steps.iter().fold(0.0_f64, |m, s| m.max(s.max_abs()))
    }
}

/// Absolute mapped coordinates per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationMap {
    grid: GridSpec,
    px: Vec<f64>,
    py: Vec<f64>,
}

impl DeformationMap {
    pub fn new(grid: GridSpec, px: Vec<f64>, py: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_len(&grid, px.len(), "map x coordinates")?;
        check_len(&grid, py.len(), "map y coordinates")?;
        check_finite(&px, "map x coordinates")?;
        check_finite(&py, "map y coordinates")?;
        Ok(DeformationMap { grid, px, py })
    }

    pub fn identity(grid: GridSpec) -> Self {
        let (px, py) = grid.nodes().unzip();
        DeformationMap { grid, px, py }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let (px, py) = grid.nodes().map(|(x, y)| f(x, y)).unzip();
        Self::new(grid, px, py)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn px(&self) -> &[f64] {
        &self.px
    }

    #[inline]
    pub fn py(&self) -> &[f64] {
        &self.py
    }

    /// Displacement `map(x) - x` as a vector field.
    pub fn displacement(&self) -> VectorField {
        let (vx, vy) = self
            .grid
            .nodes()
            .enumerate()
            .map(|(i, (x, y))| (self.px[i] - x, self.py[i] - y))
            .unzip();
        VectorField {
            grid: self.grid,
            vx,
            vy,
        }
    }
}

/// Query points for [`interpolate`].
pub trait Interpolate {
    type Output;
    fn grid_spec(&self) -> &GridSpec;
    fn sample_at(&self, x: f64, y: f64) -> Self::Output;
}

impl Interpolate for ScalarImage {
    type Output = f64;
    fn grid_spec(&self) -> &GridSpec {
        &self.grid
    }
    fn sample_at(&self, x: f64, y: f64) -> f64 {
        self.sample(x, y)
    }
}

impl Interpolate for VectorField {
    type Output = (f64, f64);
    fn grid_spec(&self) -> &GridSpec {
        &self.grid
    }
    fn sample_at(&self, x: f64, y: f64) -> (f64, f64) {
        self.sample(x, y)
    }
}

/// Bilinear, periodically wrapped samples of an image or field at physical points.
pub fn interpolate<F: Interpolate>(field: &F, points: &[(f64, f64)]) -> Result<Vec<F::Output>> {
    if let Some(p) = points.iter().find(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::input(format!("non-finite query point ({}, {})", p.0, p.1)));
    }
    Ok(points.iter().map(|&(x, y)| field.sample_at(x, y)).collect())
}

/// One explicit Euler step of the flow: `map(x) + dt * v(map(x))`.
pub fn compose_deform(map: &DeformationMap, v: &VectorField, dt: f64) -> Result<DeformationMap> {
    check_same_grid(&map.grid, v.grid())?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::input(format!("time step must be positive, got {dt}")));
    }
    let mut px = map.px.clone();
    let mut py = map.py.clone();
    euler_step(v, dt, &mut px, &mut py);
    DeformationMap::new(map.grid, px, py)
}

#[inline]
pub(crate) fn euler_step(v: &VectorField, dt: f64, px: &mut [f64], py: &mut [f64]) {
    let grid = v.grid();
    for (x, y) in px.iter_mut().zip(py.iter_mut()) {
        let s = grid.stencil(*x, *y);
        let ux = s.sample(v.vx());
        let uy = s.sample(v.vy());
        *x += dt * ux;
        *y += dt * uy;
    }
}

/// `image ∘ map`: the image sampled at every mapped coordinate.
pub fn warp(image: &ScalarImage, map: &DeformationMap) -> Result<ScalarImage> {
    check_same_grid(image.grid(), &map.grid)?;
    let data = map
        .px
        .iter()
        .zip(&map.py)
        .map(|(&x, &y)| image.sample(x, y))
        .collect();
    Ok(ScalarImage {
        grid: map.grid,
        data,
    })
}

/// Central-difference Jacobian determinant of a map.
///
/// Differences are taken on the displacement `map(x) - x` with periodic
/// neighbours, so periodic maps are handled everywhere. Maps whose
/// displacement is not periodic give meaningless values on the wrap rows.
pub fn jacobian_determinant(map: &DeformationMap) -> ScalarImage {
    let g = map.grid;
    let disp = map.displacement();
    let (ux, uy) = (disp.vx(), disp.vy());
    let mut det = vec![0.0; g.len()];
    for iy in 0..g.ny {
        let up = (iy + 1) % g.ny;
        let down = (iy + g.ny - 1) % g.ny;
        for ix in 0..g.nx {
            let right = (ix + 1) % g.nx;
            let left = (ix + g.nx - 1) % g.nx;
            let (r, l) = (g.index(right, iy), g.index(left, iy));
            let (u, d) = (g.index(ix, up), g.index(ix, down));
            let a = 1.0 + (ux[r] - ux[l]) / (2.0 * g.hx);
            let b = (ux[u] - ux[d]) / (2.0 * g.hy);
            let c = (uy[r] - uy[l]) / (2.0 * g.hx);
            let e = 1.0 + (uy[u] - uy[d]) / (2.0 * g.hy);
            det[g.index(ix, iy)] = a * e - b * c;
        }
    }
    ScalarImage { grid: g, data: det }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx, ny).unwrap()
    }

    fn pseudo_image(g: GridSpec) -> ScalarImage {
        ScalarImage::from_fn(g, |x, y| (0.37 * x).sin() + (0.21 * y * y).cos() + 0.1 * x * y).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_bad_spacing() {
        assert!(GridSpec::new(3, 8).is_err());
        assert!(GridSpec::with_spacing(8, 8, 0.0, 1.0).is_err());
        assert!(GridSpec::with_spacing(8, 8, 1.0, f64::NAN).is_err());
        assert!(GridSpec::new(4, 4).is_ok());
    }

    #[test]
    fn image_rejects_nonfinite() {
        let g = grid(4, 4);
        let mut data = vec![0.0; 16];
        data[5] = f64::INFINITY;
        assert!(ScalarImage::new(g, data).is_err());
        assert!(ScalarImage::new(g, vec![0.0; 15]).is_err());
    }

    #[test]
    fn identity_nodes_reproduce_image() {
        let g = GridSpec::with_spacing(9, 7, 0.5, 1.5).unwrap();
        let img = pseudo_image(g);
        let pts: Vec<_> = g.nodes().collect();
        let vals = interpolate(&img, &pts).unwrap();
        for (a, b) in vals.iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_image_is_constant_everywhere() {
        let img = ScalarImage::constant(grid(8, 6), 0.3);
        let pts = [(0.1, 0.2), (-13.7, 2.5), (100.25, -3.75), (7.999, 5.999)];
        for v in interpolate(&img, &pts).unwrap() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_ramp_is_exact_inside() {
        let g = grid(16, 16);
        let img = ScalarImage::from_fn(g, |x, y| 0.25 * x - 0.5 * y + 2.0).unwrap();
        let pts = [(1.3, 2.7), (7.5, 7.5), (14.01, 0.99), (3.0, 12.25)];
        for (&(x, y), v) in pts.iter().zip(interpolate(&img, &pts).unwrap()) {
            assert!((v - (0.25 * x - 0.5 * y + 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn nonfinite_query_is_rejected() {
        let img = ScalarImage::zeros(grid(4, 4));
        assert!(matches!(
            interpolate(&img, &[(f64::NAN, 0.0)]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn compose_with_zero_velocity_is_identity() {
        let g = grid(8, 8);
        let map = DeformationMap::from_fn(g, |x, y| (x + 0.3 * (y * 0.4).sin(), y - 0.2)).unwrap();
        let out = compose_deform(&map, &VectorField::zeros(g), 0.7).unwrap();
        assert_eq!(out, map);
        let mut id = DeformationMap::identity(g);
        for _ in 0..10 {
            id = compose_deform(&id, &VectorField::zeros(g), 0.1).unwrap();
        }
        assert_eq!(id, DeformationMap::identity(g));
    }

    #[test]
    fn constant_velocity_advects() {
        let g = grid(8, 8);
        let out = compose_deform(&DeformationMap::identity(g), &VectorField::constant(g, 1.5, 0.0), 0.2).unwrap();
        for (i, (x, y)) in g.nodes().enumerate() {
            assert!((out.px()[i] - (x + 0.3)).abs() < 1e-15);
            assert_eq!(out.py()[i], y);
        }
        assert!(compose_deform(&out, &VectorField::zeros(g), 0.0).is_err());
    }

    #[test]
    fn warp_identity_and_constant() {
        let g = grid(10, 6);
        let img = pseudo_image(g);
        assert_eq!(warp(&img, &DeformationMap::identity(g)).unwrap(), img);
        let c = ScalarImage::constant(g, 0.8);
        let half = DeformationMap::from_fn(g, |x, y| (x + 0.5, y + 0.5)).unwrap();
        for v in warp(&c, &half).unwrap().data() {
            assert!((v - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn integer_shift_matches_index_shift() {
        let g = grid(7, 5);
        let img = pseudo_image(g);
        let (sx, sy) = (3_usize, 4_usize);
        let map = DeformationMap::from_fn(g, |x, y| (x + sx as f64, y + sy as f64)).unwrap();
        let out = warp(&img, &map).unwrap();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let expect = img.get((ix + sx) % g.nx, (iy + sy) % g.ny);
                assert_eq!(out.get(ix, iy), expect);
            }
        }
    }

    #[test]
    fn jacobian_identity_translation_scaling() {
        let g = grid(12, 10);
        for v in jacobian_determinant(&DeformationMap::identity(g)).data() {
            assert_eq!(*v, 1.0);
        }
        let shift = DeformationMap::from_fn(g, |x, y| (x - 2.5, y + 0.75)).unwrap();
        for v in jacobian_determinant(&shift).data() {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let s = 1.3;
        let scale = DeformationMap::from_fn(g, |x, y| (s * x, s * y)).unwrap();
        let det = jacobian_determinant(&scale);
        for iy in 1..g.ny - 1 {
            for ix in 1..g.nx - 1 {
                assert!((det.get(ix, iy) - s * s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization_maps_to_unit_interval() {
        let img = pseudo_image(grid(8, 8)).min_max_normalized();
        let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        let flat = ScalarImage::constant(grid(4, 4), 3.0).min_max_normalized();
        assert!(flat.data().iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn lookup_is_periodic(x in -40.0..40.0_f64, y in -40.0..40.0_f64, kx in -3i32..3, ky in -3i32..3) {
            let g = GridSpec::with_spacing(8, 6, 0.5, 2.0).unwrap();
            let img = pseudo_image(g);
            let a = img.sample(x, y);
            let b = img.sample(x + kx as f64 * g.nx as f64 * g.hx, y + ky as f64 * g.ny as f64 * g.hy);
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn bilinear_gradient_matches_difference(x in 0.05..7.9_f64, y in 0.05..5.9_f64) {
            let g = grid(8, 6);
            let img = pseudo_image(g);
            // stay inside one cell so the interpolant is smooth
            let (cx, cy) = (x.floor() + 0.5, y.floor() + 0.5);
            let s = g.stencil(cx, cy);
            let (dx, dy) = s.gradient(img.data(), g.hx, g.hy);
            let h = 1e-6;
            let fdx = (img.sample(cx + h, cy) - img.sample(cx - h, cy)) / (2.0 * h);
            let fdy = (img.sample(cx, cy + h) - img.sample(cx, cy - h)) / (2.0 * h);
            prop_assert!((dx - fdx).abs() < 1e-7);
            prop_assert!((dy - fdy).abs() < 1e-7);
        }
    }
}

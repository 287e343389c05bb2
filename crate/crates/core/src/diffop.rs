//! Spectral form of the regularizing operator `L = (α(−Δ) + βE)²` on a periodic grid.
//!
//! `−Δ` is the 5-point finite-difference Laplacian (negated, so its symbol
//! `σ(ω)` is nonnegative). With periodic boundaries it is diagonalized by the
//! DFT, and `L`, `L⁻¹` and the α/β derivatives of `⟨Lv, v⟩` all reduce to
//! per-frequency multipliers.
//!
//! Both velocity components are transformed together as one complex field
//! `vx + i·vy`: every multiplier here is real and even in frequency, so the
//! filtered real and imaginary parts stay decoupled.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same_grid, GridSpec, TimeVelocity, VectorField};

/// `θ = (α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub alpha: f64,
    pub beta: f64,
}

impl OperatorParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = OperatorParams { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    /// `β` fixed to one.
    pub fn with_alpha(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        // α = 0 is accepted: L degenerates to β²E, which is still positive definite.
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::input(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::input(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Multiplier of `L` at a frequency with Laplacian symbol `sigma`.
    #[inline]
    pub fn symbol(&self, sigma: f64) -> f64 {
        let s = self.alpha * sigma + self.beta;
        s * s
    }
}

/// Symbol of `−Δ` (5-point stencil) at integer frequency `(k1, k2)`.
pub fn laplacian_symbol(grid: &GridSpec, k1: usize, k2: usize) -> f64 {
    let cx = (2.0 * PI * k1 as f64 / grid.nx as f64).cos();
    let cy = (2.0 * PI * k2 as f64 / grid.ny as f64).cos();
    (2.0 - 2.0 * cx) / (grid.hx * grid.hx) + (2.0 - 2.0 * cy) / (grid.hy * grid.hy)
}

/// Row/column FFT plans for one grid.
///
/// Spectra are kept in transposed layout: coefficient `(k1, k2)` lives at
/// `k1 * ny + k2`.
#[derive(Clone)]
pub(crate) struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_x: planner.plan_fft_inverse(nx),
            inv_y: planner.plan_fft_inverse(ny),
        }
    }

    fn scratch_len(&self) -> usize {
        [
            self.fwd_x.get_inplace_scratch_len(),
            self.fwd_y.get_inplace_scratch_len(),
            self.inv_x.get_inplace_scratch_len(),
            self.inv_y.get_inplace_scratch_len(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }

    pub(crate) fn scratch(&self) -> FftScratch {
        FftScratch {
            rows: vec![Complex64::default(); self.nx * self.ny],
            work: vec![Complex64::default(); self.scratch_len()],
        }
    }

    /// Unnormalized forward transform of `vx + i·vy` into `out` (transposed layout).
    fn forward(&self, vx: &[f64], vy: &[f64], out: &mut [Complex64], buf: &mut FftScratch) {
        let (nx, ny) = (self.nx, self.ny);
        for ((r, &a), &b) in buf.rows.iter_mut().zip(vx).zip(vy) {
            *r = Complex64::new(a, b);
        }
        self.fwd_x.process_with_scratch(&mut buf.rows, &mut buf.work);
        for iy in 0..ny {
            for ix in 0..nx {
                out[ix * ny + iy] = buf.rows[iy * nx + ix];
            }
        }
        self.fwd_y.process_with_scratch(out, &mut buf.work);
    }

    /// Normalized inverse transform; consumes `spec` as scratch.
    fn inverse(&self, spec: &mut [Complex64], vx: &mut [f64], vy: &mut [f64], buf: &mut FftScratch) {
        let (nx, ny) = (self.nx, self.ny);
        self.inv_y.process_with_scratch(spec, &mut buf.work);
        for ix in 0..nx {
            for iy in 0..ny {
                buf.rows[iy * nx + ix] = spec[ix * ny + iy];
            }
        }
        self.inv_x.process_with_scratch(&mut buf.rows, &mut buf.work);
        let norm = 1.0 / (nx * ny) as f64;
        for ((c, x), y) in buf.rows.iter().zip(vx.iter_mut()).zip(vy.iter_mut()) {
            *x = c.re * norm;
            *y = c.im * norm;
        }
    }
}

/// Per-caller FFT buffers, so a shared operator can serve many threads.
#[derive(Debug, Clone)]
pub(crate) struct FftScratch {
    rows: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

/// `L` and `L⁻¹` as per-frequency multipliers, plus the FFT plans to apply them.
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    grid: GridSpec,
    params: OperatorParams,
    sigma: Vec<f64>,
    symbol: Vec<f64>,
    inv_symbol: Vec<f64>,
    fft: Fft2,
}

/// Builds the spectral operator for `params` on `grid`.
pub fn build_operator(grid: GridSpec, params: OperatorParams) -> Result<SpectralOperator> {
    grid.validate()?;
    params.validate()?;
    let mut sigma = vec![0.0; grid.len()];
    for k1 in 0..grid.nx {
        for k2 in 0..grid.ny {
            sigma[k1 * grid.ny + k2] = laplacian_symbol(&grid, k1, k2);
        }
    }
    let symbol: Vec<f64> = sigma.iter().map(|&s| params.symbol(s)).collect();
    let inv_symbol = symbol.iter().map(|s| 1.0 / s).collect();
    Ok(SpectralOperator {
        grid,
        params,
        sigma,
        symbol,
        inv_symbol,
        fft: Fft2::new(grid.nx, grid.ny),
    })
}

/// The three frequency moments of a time velocity,
/// `A = ⟨(−Δ)²v, v⟩`, `B = ⟨(−Δ)v, v⟩`, `C = ⟨v, v⟩` (time-averaged, area-weighted).
///
/// Since `⟨Lv, v⟩ = α²A + 2αβB + β²C`, the energy and its derivatives can be
/// re-evaluated at any `(α, β)` for a frozen velocity without touching the field.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadraticMoments {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticMoments {
    pub fn energy(&self, p: &OperatorParams) -> f64 {
        p.alpha * p.alpha * self.a + 2.0 * p.alpha * p.beta * self.b + p.beta * p.beta * self.c
    }

    pub fn dalpha(&self, p: &OperatorParams) -> f64 {
        2.0 * p.alpha * self.a + 2.0 * p.beta * self.b
    }

    pub fn dbeta(&self, p: &OperatorParams) -> f64 {
        2.0 * p.alpha * self.b + 2.0 * p.beta * self.c
    }

    /// Entrywise mean of two moment sets.
    pub fn mean(&self, other: &QuadraticMoments) -> QuadraticMoments {
        QuadraticMoments {
            a: 0.5 * (self.a + other.a),
            b: 0.5 * (self.b + other.b),
            c: 0.5 * (self.c + other.c),
        }
    }
}

impl SpectralOperator {
    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn params(&self) -> &OperatorParams {
        &self.params
    }

    /// Multiplier of `L` at integer frequency `(k1, k2)`.
    pub fn symbol_at(&self, k1: usize, k2: usize) -> f64 {
        self.symbol[k1 * self.grid.ny + k2]
    }

    pub fn inv_symbol_at(&self, k1: usize, k2: usize) -> f64 {
        self.inv_symbol[k1 * self.grid.ny + k2]
    }

    /// Same grid and FFT plans, different parameters.
    pub fn with_params(&self, params: OperatorParams) -> Result<SpectralOperator> {
        params.validate()?;
        let symbol: Vec<f64> = self.sigma.iter().map(|&s| params.symbol(s)).collect();
        let inv_symbol = symbol.iter().map(|s| 1.0 / s).collect();
        Ok(SpectralOperator {
            grid: self.grid,
            params,
            sigma: self.sigma.clone(),
            symbol,
            inv_symbol,
            fft: self.fft.clone(),
        })
    }

    fn filter(&self, v: &VectorField, mult: &[f64]) -> Result<VectorField> {
        check_same_grid(&self.grid, v.grid())?;
        let mut out = VectorField::zeros(self.grid);
        let (ox, oy) = out.components_mut();
        self.filter_into(v.vx(), v.vy(), mult, ox, oy);
        Ok(out)
    }

    fn filter_into(&self, vx: &[f64], vy: &[f64], mult: &[f64], ox: &mut [f64], oy: &mut [f64]) {
        let mut buf = self.fft.scratch();
        let mut spec = vec![Complex64::default(); self.grid.len()];
        self.fft.forward(vx, vy, &mut spec, &mut buf);
        for (c, m) in spec.iter_mut().zip(mult) {
            *c *= m;
        }
        self.fft.inverse(&mut spec, ox, oy, &mut buf);
    }

    pub(crate) fn scratch(&self) -> FftScratch {
        self.fft.scratch()
    }

    pub(crate) fn spectrum(&self, v: &VectorField) -> Vec<Complex64> {
        let mut spec = vec![Complex64::default(); self.grid.len()];
        self.fft.forward(v.vx(), v.vy(), &mut spec, &mut self.fft.scratch());
        spec
    }

    pub(crate) fn forward_into(&self, vx: &[f64], vy: &[f64], out: &mut [Complex64], buf: &mut FftScratch) {
        self.fft.forward(vx, vy, out, buf);
    }

    pub(crate) fn inverse_into(&self, spec: &mut [Complex64], vx: &mut [f64], vy: &mut [f64], buf: &mut FftScratch) {
        self.fft.inverse(spec, vx, vy, buf);
    }

    /// Multiplier of `L⁻¹` in spectrum layout.
    pub(crate) fn inv_symbol(&self) -> &[f64] {
        &self.inv_symbol
    }

    /// `Σ_ω m(ω) Re(conj(a) b)` scaled to the area-weighted spatial inner product.
    fn spectral_inner(&self, a: &[Complex64], b: &[Complex64], mult: &[f64]) -> f64 {
        let s: f64 = a
            .iter()
            .zip(b)
            .zip(mult)
            .map(|((a, b), m)| m * (a.re * b.re + a.im * b.im))
            .sum();
        s * self.grid.cell_area() / self.grid.len() as f64
    }

    /// Area-weighted `⟨L a, b⟩` from precomputed spectra.
    pub(crate) fn l_inner(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        self.spectral_inner(a, b, &self.symbol)
    }

    pub fn apply_l(&self, v: &VectorField) -> Result<VectorField> {
        self.filter(v, &self.symbol)
    }

    pub fn apply_linv(&self, w: &VectorField) -> Result<VectorField> {
        self.filter(w, &self.inv_symbol)
    }

    /// Time-averaged moments `(A, B, C)` of `v`.
    pub fn quadratic_moments(&self, v: &TimeVelocity) -> Result<QuadraticMoments> {
        check_same_grid(&self.grid, v.grid())?;
        let scale = self.grid.cell_area() / (self.grid.len() as f64 * v.time_steps() as f64);
        let mut m = QuadraticMoments::default();
        for step in v.steps() {
            let spec = self.spectrum(step);
            for (c, &s) in spec.iter().zip(&self.sigma) {
                let p = c.norm_sqr();
                m.a += s * s * p;
                m.b += s * p;
                m.c += p;
            }
        }
        m.a *= scale;
        m.b *= scale;
        m.c *= scale;
        Ok(m)
    }

    fn time_averaged(&self, v: &TimeVelocity, mult: impl Fn(usize) -> f64) -> Result<f64> {
        check_same_grid(&self.grid, v.grid())?;
        let mut total = 0.0;
        for step in v.steps() {
            let spec = self.spectrum(step);
            total += spec
                .iter()
                .enumerate()
                .map(|(i, c)| mult(i) * c.norm_sqr())
                .sum::<f64>();
        }
        Ok(total * self.grid.cell_area() / (self.grid.len() as f64 * v.time_steps() as f64))
    }

    /// `(1/T) Σ_k ⟨L v_k, v_k⟩`, area-weighted.
    pub fn metric_energy(&self, v: &TimeVelocity) -> Result<f64> {
        self.time_averaged(v, |i| self.symbol[i])
    }

    /// `∂/∂α` of [`metric_energy`](Self::metric_energy): multiplier `2(ασ + β)σ`.
    pub fn metric_energy_dalpha(&self, v: &TimeVelocity) -> Result<f64> {
        let p = self.params;
        self.time_averaged(v, |i| {
            let s = self.sigma[i];
            2.0 * (p.alpha * s + p.beta) * s
        })
    }

    /// `∂/∂β` of [`metric_energy`](Self::metric_energy): multiplier `2(ασ + β)`.
    pub fn metric_energy_dbeta(&self, v: &TimeVelocity) -> Result<f64> {
        let p = self.params;
        self.time_averaged(v, |i| 2.0 * (p.alpha * self.sigma[i] + p.beta))
    }
}

pub fn apply_l(op: &SpectralOperator, v: &VectorField) -> Result<VectorField> {
    op.apply_l(v)
}

pub fn apply_linv(op: &SpectralOperator, w: &VectorField) -> Result<VectorField> {
    op.apply_linv(w)
}

pub fn metric_energy(op: &SpectralOperator, v: &TimeVelocity) -> Result<f64> {
    op.metric_energy(v)
}

pub fn metric_energy_dalpha(op: &SpectralOperator, v: &TimeVelocity) -> Result<f64> {
    op.metric_energy_dalpha(v)
}

pub fn metric_energy_dbeta(op: &SpectralOperator, v: &TimeVelocity) -> Result<f64> {
    op.metric_energy_dbeta(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, rng: &mut impl Rng) -> VectorField {
        let n = grid.len();
        let vx = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vy = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        VectorField::new(grid, vx, vy).unwrap()
    }

    fn random_velocity(grid: GridSpec, t: usize, rng: &mut impl Rng) -> TimeVelocity {
        TimeVelocity::new((0..t).map(|_| random_field(grid, rng)).collect()).unwrap()
    }

    /// Dense periodic 5-point `−Δ` acting on one component.
    fn dense_neg_laplacian(g: &GridSpec) -> DMatrix<f64> {
        let n = g.len();
        let mut m = DMatrix::zeros(n, n);
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let i = g.index(ix, iy);
                let cx = 1.0 / (g.hx * g.hx);
                let cy = 1.0 / (g.hy * g.hy);
                m[(i, i)] += 2.0 * cx + 2.0 * cy;
                m[(i, g.index((ix + 1) % g.nx, iy))] -= cx;
                m[(i, g.index((ix + g.nx - 1) % g.nx, iy))] -= cx;
                m[(i, g.index(ix, (iy + 1) % g.ny))] -= cy;
                m[(i, g.index(ix, (iy + g.ny - 1) % g.ny))] -= cy;
            }
        }
        m
    }

    fn dense_energy(g: &GridSpec, p: &OperatorParams, v: &TimeVelocity) -> f64 {
        let lap = dense_neg_laplacian(g);
        let a = &lap * p.alpha + DMatrix::identity(g.len(), g.len()) * p.beta;
        let l = &a * &a;
        let mut total = 0.0;
        for s in v.steps() {
            for comp in [s.vx(), s.vy()] {
                let x = nalgebra::DVector::from_column_slice(comp);
                total += x.dot(&(&l * &x));
            }
        }
        total * g.cell_area() / v.time_steps() as f64
    }

    #[test]
    fn symbol_hand_values() {
        let g = GridSpec::new(4, 4).unwrap();
        let op = build_operator(g, OperatorParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(op.symbol_at(0, 0), 1.0);
        assert!((op.symbol_at(2, 0) - 25.0).abs() < 1e-12);
        let op0 = build_operator(g, OperatorParams::new(0.0, 2.0).unwrap()).unwrap();
        for k1 in 0..4 {
            for k2 in 0..4 {
                assert_eq!(op0.symbol_at(k1, k2), 4.0);
                assert!((op0.symbol_at(k1, k2) * op0.inv_symbol_at(k1, k2) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(OperatorParams::new(-1.0, 1.0).is_err());
        assert!(OperatorParams::new(1.0, 0.0).is_err());
        assert!(OperatorParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn apply_on_zero_constant_and_single_mode() {
        let g = GridSpec::new(4, 4).unwrap();
        let op = build_operator(g, OperatorParams::new(1.0, 1.0).unwrap()).unwrap();
        let z = op.apply_l(&VectorField::zeros(g)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert_eq!(op.apply_linv(&VectorField::zeros(g)).unwrap().max_abs(), 0.0);

        let op2 = build_operator(g, OperatorParams::new(0.7, 2.0).unwrap()).unwrap();
        let c = VectorField::constant(g, 0.5, -1.5);
        let lc = op2.apply_l(&c).unwrap();
        let ic = op2.apply_linv(&c).unwrap();
        for i in 0..g.len() {
            assert!((lc.vx()[i] - 2.0).abs() < 1e-12);
            assert!((lc.vy()[i] + 6.0).abs() < 1e-12);
            assert!((ic.vx()[i] - 0.125).abs() < 1e-14);
            assert!((ic.vy()[i] + 0.375).abs() < 1e-14);
        }

        // cos(π x) is the k = (2, 0) mode on a 4-wide grid
        let mode = VectorField::from_fn(g, |x, _| ((PI * x).cos(), 0.0)).unwrap();
        let lm = op.apply_l(&mode).unwrap();
        for i in 0..g.len() {
            assert!((lm.vx()[i] - 25.0 * mode.vx()[i]).abs() < 1e-12);
            assert!(lm.vy()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn grid_mismatch_is_an_input_error() {
        let op = build_operator(GridSpec::new(4, 4).unwrap(), OperatorParams::with_alpha(1.0).unwrap()).unwrap();
        let other = VectorField::zeros(GridSpec::new(8, 4).unwrap());
        assert!(matches!(op.apply_l(&other), Err(Error::Input(_))));
        assert!(matches!(op.apply_linv(&other), Err(Error::Input(_))));
    }

    #[test]
    fn energy_closed_forms() {
        let g = GridSpec::new(4, 4).unwrap();
        let op = build_operator(g, OperatorParams::with_alpha(3.0).unwrap()).unwrap();
        let unit = TimeVelocity::stationary(VectorField::constant(g, 1.0, 0.0), 5).unwrap();
        assert!((op.metric_energy(&unit).unwrap() - 16.0).abs() < 1e-12);
        assert!(op.metric_energy_dalpha(&unit).unwrap().abs() < 1e-12);
        // 2β·|c|²·area, c = (1, 0), area 16
        assert!((op.metric_energy_dbeta(&unit).unwrap() - 32.0).abs() < 1e-12);
        let zero = TimeVelocity::zeros(g, 3).unwrap();
        assert_eq!(op.metric_energy(&zero).unwrap(), 0.0);
        assert_eq!(op.metric_energy_dalpha(&zero).unwrap(), 0.0);
        assert_eq!(op.metric_energy_dbeta(&zero).unwrap(), 0.0);
    }

    #[test]
    fn energy_matches_dense_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GridSpec::with_spacing(8, 8, 0.75, 1.25).unwrap();
        for _ in 0..4 {
            let p = OperatorParams::new(rng.random_range(0.1..10.0), rng.random_range(0.5..2.0)).unwrap();
            let op = build_operator(g, p).unwrap();
            let v = random_velocity(g, 3, &mut rng);
            let spectral = op.metric_energy(&v).unwrap();
            let dense = dense_energy(&g, &p, &v);
            assert!(((spectral - dense) / dense).abs() < 1e-10, "{spectral} vs {dense}");
            let m = op.quadratic_moments(&v).unwrap();
            assert!(((m.energy(&p) - dense) / dense).abs() < 1e-10);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GridSpec::new(8, 8).unwrap();
        let h = 1e-5;
        for _ in 0..10 {
            let alpha = rng.random_range(0.1..10.0);
            let v = random_velocity(g, 2, &mut rng);
            let op = build_operator(g, OperatorParams::with_alpha(alpha).unwrap()).unwrap();
            let e = |a: f64, b: f64| {
                build_operator(g, OperatorParams::new(a, b).unwrap())
                    .unwrap()
                    .metric_energy(&v)
                    .unwrap()
            };
            let fd_a = (e(alpha + h, 1.0) - e(alpha - h, 1.0)) / (2.0 * h);
            let fd_b = (e(alpha, 1.0 + h) - e(alpha, 1.0 - h)) / (2.0 * h);
            let da = op.metric_energy_dalpha(&v).unwrap();
            let db = op.metric_energy_dbeta(&v).unwrap();
            assert!(((da - fd_a) / fd_a).abs() < 1e-6, "{da} vs {fd_a}");
            assert!(((db - fd_b) / fd_b).abs() < 1e-6, "{db} vs {fd_b}");
            let m = op.quadratic_moments(&v).unwrap();
            assert!(((m.dalpha(op.params()) - da) / da).abs() < 1e-12);
            assert!(((m.dbeta(op.params()) - db) / db).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_self_adjoint_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GridSpec::new(16, 8).unwrap();
        let op = build_operator(g, OperatorParams::with_alpha(2.5).unwrap()).unwrap();
        let v = random_field(g, &mut rng);
        let w = random_field(g, &mut rng);
        let back = op.apply_linv(&op.apply_l(&v).unwrap()).unwrap();
        let err = back.add_scaled(-1.0, &v).unwrap().max_abs() / v.max_abs();
        assert!(err < 1e-10);
        let lvw = op.apply_l(&v).unwrap().dot(&w).unwrap();
        let vlw = v.dot(&op.apply_l(&w).unwrap()).unwrap();
        assert!(((lvw - vlw) / lvw.abs()).abs() < 1e-10);
        let tv = TimeVelocity::stationary(v.clone(), 1).unwrap();
        assert!(op.metric_energy(&tv).unwrap() > 0.0);
    }

    #[test]
    fn energy_homogeneous_and_monotone_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = GridSpec::new(8, 8).unwrap();
        let v = random_velocity(g, 2, &mut rng);
        let op = build_operator(g, OperatorParams::with_alpha(1.3).unwrap()).unwrap();
        let e = op.metric_energy(&v).unwrap();
        let e3 = op.metric_energy(&v.scaled(3.0)).unwrap();
        assert!(((e3 - 9.0 * e) / e3).abs() < 1e-13);
        let mut last = 0.0;
        for a in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
            let ea = op.with_params(OperatorParams::with_alpha(a).unwrap()).unwrap().metric_energy(&v).unwrap();
            assert!(ea >= last);
            last = ea;
        }
    }
}

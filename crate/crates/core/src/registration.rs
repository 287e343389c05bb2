//! Pairwise diffeomorphic registration by gradient descent on a time-dependent velocity.
//!
//! The energy is
//!
//! ```text
//! E(v) = (1/T) Σ_k ⟨L v_k, v_k⟩ + (1/σ²) ‖I0 ∘ φ_1 − I1‖²
//! ```
//!
//! where `φ_1` is the forward-Euler flow of `v` from the identity (`T` steps of
//! `1/T`) and both terms carry the cell area. The matching-term gradient is the
//! exact adjoint of that discrete flow (bilinear lookups included); it is then
//! smoothed with `L⁻¹`, which gives the gradient in the metric of `V`:
//!
//! ```text
//! g_k = 2 v_k + (T / h²) L⁻¹ G_k,     G_k = ∂E_match / ∂v_k
//! ```
//!
//! Step sizes come from a Barzilai–Borwein estimate in the `V` metric and are
//! halved until the energy decreases, so the accepted energies never go up.

use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diffop::{QuadraticMoments, SpectralOperator};
use crate::error::{Error, Result};
use crate::grid::{
    check_same_grid, jacobian_determinant, DeformationMap, GridSpec, ScalarImage, Stencil, TimeVelocity, VectorField,
};
use crate::io;
use crate::kernel::MetricMatrix;
use crate::parallel::{map_ordered, Jobs};

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Image-match weight is `1 / sigma2`.
    pub sigma2: f64,
    pub time_steps: usize,
    pub max_iters: usize,
    /// Initial descent step; later steps are estimated from successive gradients.
    pub step_size: f64,
    /// Stop when the relative energy decrease over `energy_window` iterations falls below this.
    pub energy_tol: f64,
    pub energy_window: usize,
    /// Stop when the `V`-norm of the gradient falls below this.
    pub grad_tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            sigma2: 0.01,
            time_steps: 10,
            max_iters: 200,
            step_size: 0.1,
            energy_tol: 1e-5,
            energy_window: 5,
            grad_tol: 1e-10,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma2) {
            return Err(Error::input(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if self.time_steps == 0 || self.max_iters == 0 || self.energy_window == 0 {
            return Err(Error::input("time_steps, max_iters and energy_window must be >= 1"));
        }
        if !positive(self.step_size) || !positive(self.grad_tol) {
            return Err(Error::input("step_size and grad_tol must be > 0"));
        }
        if !(self.energy_tol > 0.0 && self.energy_tol < 1.0) {
            return Err(Error::input(format!("energy_tol must lie in (0, 1), got {}", self.energy_tol)));
        }
        Ok(())
    }
}

/// Outcome of [`register`].
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub velocity: TimeVelocity,
    /// `φ_1`; the registered image is `I0 ∘ φ_1`.
    pub forward_map: DeformationMap,
    /// `K_L = (1/T) Σ ⟨L v_k, v_k⟩`.
    pub metric_value: f64,
    pub moments: QuadraticMoments,
    /// `‖I0 ∘ φ_1 − I1‖²` (area-weighted).
    pub match_residual: f64,
    pub total_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_jacobian: f64,
    /// Energy of the initial (zero) velocity followed by every accepted iterate.
    pub energy_trace: Vec<f64>,
}

/// Reusable buffers for the flow and its adjoint.
struct Workspace {
    /// Current positions along the flow.
    px: Vec<f64>,
    py: Vec<f64>,
    /// Bilinear stencils at the positions before each step, then at `φ_1`:
    /// `(T + 1) * N` entries, reused by the adjoint pass.
    stencils: Vec<Stencil>,
    residual: Vec<f64>,
    lx: Vec<f64>,
    ly: Vec<f64>,
}

impl Workspace {
    fn new(grid: &GridSpec, t: usize) -> Self {
        let n = grid.len();
        Workspace {
            px: vec![0.0; n],
            py: vec![0.0; n],
            stencils: vec![grid.stencil(0.0, 0.0); (t + 1) * n],
            residual: vec![0.0; n],
            lx: vec![0.0; n],
            ly: vec![0.0; n],
        }
    }
}

struct Problem<'a> {
    i0: &'a ScalarImage,
    i1: &'a ScalarImage,
    op: &'a SpectralOperator,
    t: usize,
    dt: f64,
    n: usize,
    area: f64,
    inv_sigma2: f64,
}

impl Problem<'_> {
    /// Integrates the flow for `v`, fills stencils and the residual, returns `‖I0∘φ − I1‖²`.
    fn flow(&self, v: &[VectorField], ws: &mut Workspace) -> f64 {
        let grid = self.i0.grid();
        let n = self.n;
        for (i, (x, y)) in grid.nodes().enumerate() {
            ws.px[i] = x;
            ws.py[i] = y;
        }
        for (k, vk) in v.iter().enumerate() {
            let stencils = &mut ws.stencils[k * n..(k + 1) * n];
            let (vx, vy) = (vk.vx(), vk.vy());
            for i in 0..n {
                let s = grid.stencil(ws.px[i], ws.py[i]);
                stencils[i] = s;
                ws.px[i] += self.dt * s.sample(vx);
                ws.py[i] += self.dt * s.sample(vy);
            }
        }
        let img = self.i0.data();
        let target = self.i1.data();
        let finals = &mut ws.stencils[self.t * n..];
        let mut ss = 0.0;
        for i in 0..n {
            let s = grid.stencil(ws.px[i], ws.py[i]);
            finals[i] = s;
            let r = s.sample(img) - target[i];
            ws.residual[i] = r;
            ss += r * r;
        }
        ss * self.area
    }

    /// Euclidean gradient of the matching term with respect to every node value of
    /// every `v_k`, written into `out`. Requires a preceding [`Problem::flow`] for `v`.
    fn match_gradient(&self, v: &[VectorField], ws: &mut Workspace, out: &mut [VectorField]) {
        let grid = self.i0.grid();
        let (hx, hy) = (grid.hx, grid.hy);
        let n = self.n;
        let scale = 2.0 * self.area * self.inv_sigma2;
        for i in 0..n {
            let (gx, gy) = ws.stencils[self.t * n + i].gradient(self.i0.data(), hx, hy);
            let r = ws.residual[i] * scale;
            ws.lx[i] = r * gx;
            ws.ly[i] = r * gy;
        }
        for k in (0..self.t).rev() {
            let (ox, oy) = out[k].components_mut();
            ox.fill(0.0);
            oy.fill(0.0);
            let (vx, vy) = (v[k].vx(), v[k].vy());
            let stencils = &ws.stencils[k * n..(k + 1) * n];
            for (i, s) in stencils.iter().enumerate() {
                let (lx, ly) = (ws.lx[i], ws.ly[i]);
                s.splat(ox, self.dt * lx);
                s.splat(oy, self.dt * ly);
                let (dvx_dx, dvx_dy) = s.gradient(vx, hx, hy);
                let (dvy_dx, dvy_dy) = s.gradient(vy, hx, hy);
                ws.lx[i] = lx + self.dt * (dvx_dx * lx + dvy_dx * ly);
                ws.ly[i] = ly + self.dt * (dvx_dy * lx + dvy_dy * ly);
            }
        }
    }

    /// `(1/T) Σ ⟨L a_k, b_k⟩` from spectra.
    fn v_inner(&self, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
        a.iter().zip(b).map(|(a, b)| self.op.l_inner(a, b)).sum::<f64>() / self.t as f64
    }
}

/// Registers `i0` onto `i1`: finds the velocity minimizing the regularized matching energy.
pub fn register(
    i0: &ScalarImage,
    i1: &ScalarImage,
    op: &SpectralOperator,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    check_same_grid(i0.grid(), i1.grid())?;
    check_same_grid(i0.grid(), op.grid())?;
    let grid = *i0.grid();
    let t = cfg.time_steps;
    let n = grid.len();
    let problem = Problem {
        i0,
        i1,
        op,
        t,
        dt: 1.0 / t as f64,
        n,
        area: grid.cell_area(),
        inv_sigma2: 1.0 / cfg.sigma2,
    };
    let mut ws = Workspace::new(&grid, t);
    let mut fft = op.scratch();
    let mut spec_buf = vec![Complex64::default(); n];

    let mut v = vec![VectorField::zeros(grid); t];
    let mut v_spec = vec![vec![Complex64::default(); n]; t];
    let mut grad = vec![VectorField::zeros(grid); t];
    let mut trial = vec![VectorField::zeros(grid); t];
    let mut trial_spec = vec![vec![Complex64::default(); n]; t];
    let mut prev_grad_spec: Option<Vec<Vec<Complex64>>> = None;
    let mut spare_spec: Option<Vec<Vec<Complex64>>> = None;

    let mut energy = problem.flow(&v, &mut ws) * problem.inv_sigma2;
    let mut trace = vec![energy];
    let mut step = cfg.step_size;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        // Sobolev gradient: g_k = 2 v_k + (T / h²) L⁻¹ G_k, assembled in frequency space
        problem.match_gradient(&v, &mut ws, &mut grad);
        let precond = t as f64 / problem.area;
        let mut grad_spec = spare_spec.take().unwrap_or_else(|| vec![vec![Complex64::default(); n]; t]);
        for k in 0..t {
            let (gx, gy) = grad[k].components_mut();
            op.forward_into(gx, gy, &mut grad_spec[k], &mut fft);
            for ((g, vs), m) in grad_spec[k].iter_mut().zip(&v_spec[k]).zip(op.inv_symbol()) {
                *g = vs * 2.0 + *g * (precond * m);
            }
            spec_buf.copy_from_slice(&grad_spec[k]);
            op.inverse_into(&mut spec_buf, gx, gy, &mut fft);
        }
        let gnorm2 = problem.v_inner(&grad_spec, &grad_spec);
        if !gnorm2.is_finite() {
            return Err(Error::numerical("non-finite gradient", Some(iterations)));
        }
        if gnorm2.sqrt() < cfg.grad_tol {
            converged = true;
            break;
        }
        if let Some(prev) = &prev_grad_spec {
            // Barzilai–Borwein: ⟨s,s⟩/⟨s,y⟩ with s = −step·g_prev, y = g − g_prev
            let pp = problem.v_inner(prev, prev);
            let pg = problem.v_inner(prev, &grad_spec);
            let bb = step * pp / (pp - pg);
            step = if bb.is_finite() && bb > 0.0 {
                bb.clamp(step * 1e-3, step * 1e3)
            } else {
                2.0 * step
            };
        }

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for k in 0..t {
                let (tx, ty) = trial[k].components_mut();
                let (vx, vy, gx, gy) = (v[k].vx(), v[k].vy(), grad[k].vx(), grad[k].vy());
                for i in 0..n {
                    tx[i] = vx[i] - step * gx[i];
                    ty[i] = vy[i] - step * gy[i];
                }
                for ((c, a), b) in trial_spec[k].iter_mut().zip(&v_spec[k]).zip(&grad_spec[k]) {
                    *c = a - b * step;
                }
            }
            let reg = problem.v_inner(&trial_spec, &trial_spec);
            let res = problem.flow(&trial, &mut ws);
            let e = reg + res * problem.inv_sigma2;
            if e.is_finite() && e < energy {
                accepted = Some((e, res));
                break;
            }
            step *= 0.5;
        }
        let Some((e, res)) = accepted else {
            // No decrease along the descent direction at any step: numerical optimum.
            converged = true;
            break;
        };
        std::mem::swap(&mut v, &mut trial);
        std::mem::swap(&mut v_spec, &mut trial_spec);
        spare_spec = prev_grad_spec.replace(grad_spec);
        energy = e;
        debug_assert!(res >= 0.0);
        trace.push(energy);
        iterations += 1;

        if trace.len() > cfg.energy_window {
            let old = trace[trace.len() - 1 - cfg.energy_window];
            if (old - energy) <= cfg.energy_tol * energy.abs() {
                converged = true;
                break;
            }
        }
    }
    if !energy.is_finite() {
        return Err(Error::numerical("non-finite energy", Some(iterations)));
    }

    let velocity = TimeVelocity::new(v)?;
    // the workspace may hold a rejected trial; rebuild the accepted flow
    let residual = problem.flow(velocity.steps(), &mut ws);
    let forward_map = DeformationMap::new(grid, ws.px.clone(), ws.py.clone())?;
    let moments = op.quadratic_moments(&velocity)?;
    let metric_value = moments.energy(op.params());
    let min_jacobian = jacobian_determinant(&forward_map)
        .data()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if converged && min_jacobian <= 0.0 {
        log::warn!("registration converged with a folding map (min Jacobian {min_jacobian:.3e})");
    }
    Ok(RegistrationResult {
        velocity,
        forward_map,
        metric_value,
        moments,
        match_residual: residual,
        total_energy: metric_value + residual * problem.inv_sigma2,
        iterations,
        converged,
        min_jacobian,
        energy_trace: trace,
    })
}

/// Energy of the zero velocity (no registration): `‖I0 − I1‖² / σ²`.
pub fn identity_energy(i0: &ScalarImage, i1: &ScalarImage, cfg: &RegistrationConfig) -> Result<f64> {
    Ok(i0.squared_distance(i1)? / cfg.sigma2)
}

/// Options for [`register_pairwise`].
#[derive(Debug, Clone, Default)]
pub struct PairwiseOptions {
    pub jobs: Jobs,
    /// Per-pair results are saved here and reloaded on a later call.
    pub checkpoint_dir: Option<PathBuf>,
    /// Also write every velocity field into the checkpoint directory.
    pub persist_velocities: bool,
    /// Keep every velocity field in memory (small problems only).
    pub retain_velocities: bool,
}

/// All ordered-pair registrations of a sample.
#[derive(Debug, Clone)]
pub struct PairwiseRegistrations {
    pub metric: MetricMatrix,
    /// Registrations actually run (checkpoint hits excluded).
    pub registrations: usize,
    /// `velocities[i * n + j]` when retained.
    pub velocities: Option<Vec<Option<TimeVelocity>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairRecord {
    i: usize,
    j: usize,
    alpha: f64,
    beta: f64,
    metric_value: f64,
    moments: QuadraticMoments,
    iterations: usize,
    converged: bool,
}

fn pair_stem(dir: &Path, i: usize, j: usize) -> PathBuf {
    dir.join(format!("pair_{i:05}_{j:05}"))
}

fn load_pair(dir: &Path, i: usize, j: usize, op: &SpectralOperator) -> Option<PairRecord> {
    let path = pair_stem(dir, i, j).with_extension("json");
    let text = std::fs::read_to_string(path).ok()?;
    let rec: PairRecord = serde_json::from_str(&text).ok()?;
    let p = op.params();
    (rec.i == i && rec.j == j && rec.alpha == p.alpha && rec.beta == p.beta).then_some(rec)
}

fn save_pair(dir: &Path, rec: &PairRecord, velocity: Option<&TimeVelocity>) -> Result<()> {
    let stem = pair_stem(dir, rec.i, rec.j);
    if let Some(v) = velocity {
        io::write_velocity(&stem.with_extension("vel"), v)?;
    }
    let path = stem.with_extension("json");
    let tmp = stem.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(rec)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

enum PairOutcome {
    Loaded(PairRecord),
    Computed(PairRecord, Option<TimeVelocity>),
    Failed(Error),
}

/// Registers every ordered pair `(i, j)`, `i ≠ j`, of `sample` (`I0 = sample[i]`,
/// `I1 = sample[j]`) and collects the metric values into a matrix with zero diagonal.
///
/// A failing pair does not abort the others: it is marked in the matrix's failure mask.
pub fn register_pairwise(
    sample: &[ScalarImage],
    op: &SpectralOperator,
    cfg: &RegistrationConfig,
    opts: &PairwiseOptions,
) -> Result<PairwiseRegistrations> {
    if sample.len() < 2 {
        return Err(Error::input("pairwise registration needs at least 2 images"));
    }
    for img in sample {
        check_same_grid(sample[0].grid(), img.grid())?;
    }
    cfg.validate()?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let n = sample.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let outcomes = map_ordered(opts.jobs, &pairs, |&(i, j)| {
        if let Some(dir) = &opts.checkpoint_dir {
            if let Some(rec) = load_pair(dir, i, j, op) {
                return PairOutcome::Loaded(rec);
            }
        }
        let res = match register(&sample[i], &sample[j], op, cfg) {
            Ok(r) => r,
            Err(e) => return PairOutcome::Failed(e),
        };
        let p = op.params();
        let rec = PairRecord {
            i,
            j,
            alpha: p.alpha,
            beta: p.beta,
            metric_value: res.metric_value,
            moments: res.moments,
            iterations: res.iterations,
            converged: res.converged,
        };
        if let Some(dir) = &opts.checkpoint_dir {
            let vel = opts.persist_velocities.then_some(&res.velocity);
            if let Err(e) = save_pair(dir, &rec, vel) {
                log::warn!("could not checkpoint pair ({i},{j}): {e}");
            }
        }
        let keep = opts.retain_velocities.then_some(res.velocity);
        PairOutcome::Computed(rec, keep)
    });

    let mut metric = MetricMatrix::zeros(n);
    let mut velocities = opts.retain_velocities.then(|| vec![None; n * n]);
    let mut registrations = 0;
    for (&(i, j), outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            PairOutcome::Loaded(rec) => metric.set(i, j, rec.metric_value, rec.moments),
            PairOutcome::Computed(rec, vel) => {
                registrations += 1;
                metric.set(i, j, rec.metric_value, rec.moments);
                if let (Some(store), Some(v)) = (velocities.as_mut(), vel) {
                    store[i * n + j] = Some(v);
                }
            }
            PairOutcome::Failed(e) => {
                registrations += 1;
                log::warn!("registration ({i},{j}) failed: {e}");
                metric.mark_failed(i, j);
            }
        }
    }
    Ok(PairwiseRegistrations {
        metric,
        registrations,
        velocities,
    })
}

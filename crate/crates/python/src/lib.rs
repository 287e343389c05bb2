//! Python bindings: registration, the operator, KLDA, ROC AUC, the shape
//! generator and EM training. Images are nested lists indexed `[y][x]`.

use lddmm_metric::eval;
use lddmm_metric::kernel::{KernelMatrix, RowDirection};
use lddmm_metric::klda::{self, LabeledSample, Ridge};
use lddmm_metric::metric_learning::{self, EmConfig, TrainOptions, TrainOutcome};
use lddmm_metric::synth::{self, ShapeGenConfig};
use lddmm_metric::{
    build_operator, Error, GridSpec, Jobs, OperatorParams, RegistrationConfig, ScalarImage, SpectralOperator,
    VectorField,
};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Input(_) | Error::Io { .. } | Error::Format { .. } | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn image(rows: Vec<Vec<f64>>) -> PyResult<ScalarImage> {
    let ny = rows.len();
    let nx = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nx) {
        return Err(PyValueError::new_err("image rows differ in length"));
    }
    let grid = GridSpec::new(nx, ny).map_err(to_py)?;
    ScalarImage::new(grid, rows.into_iter().flatten().collect()).map_err(to_py)
}

fn rows_of(data: &[f64], nx: usize) -> Vec<Vec<f64>> {
    data.chunks(nx).map(|c| c.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn reg_config(sigma2: f64, time_steps: usize, energy_tol: f64) -> PyResult<RegistrationConfig> {
    let cfg = RegistrationConfig {
        sigma2,
        time_steps,
        energy_tol,
        ..Default::default()
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Registers `i0` onto `i1`; returns a dict of energies and diagnostics.
#[pyfunction]
#[pyo3(signature = (i0, i1, alpha=1.0, beta=1.0, sigma2=0.01, time_steps=10, energy_tol=1e-5))]
fn register<'py>(
    py: Python<'py>,
    i0: Vec<Vec<f64>>,
    i1: Vec<Vec<f64>>,
    alpha: f64,
    beta: f64,
    sigma2: f64,
    time_steps: usize,
    energy_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let (a, b) = (image(i0)?, image(i1)?);
    let op = build_operator(*a.grid(), OperatorParams::new(alpha, beta).map_err(to_py)?).map_err(to_py)?;
    let r = lddmm_metric::register(&a, &b, &op, &reg_config(sigma2, time_steps, energy_tol)?).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("metric_value", r.metric_value)?;
    d.set_item("match_residual", r.match_residual)?;
    d.set_item("total_energy", r.total_energy)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("min_jacobian", r.min_jacobian)?;
    d.set_item("energy_trace", r.energy_trace)?;
    Ok(d)
}

/// `L = (α(−Δ) + β)²` on a periodic `nx × ny` grid with unit spacing.
#[pyclass(frozen)]
struct Operator {
    inner: SpectralOperator,
}

impl Operator {
    fn field(&self, vx: Vec<Vec<f64>>, vy: Vec<Vec<f64>>) -> PyResult<VectorField> {
        let g = *self.inner.grid();
        let (x, y) = (image(vx)?, image(vy)?);
        if *x.grid() != g || *y.grid() != g {
            return Err(PyValueError::new_err("field does not match the operator grid"));
        }
        VectorField::new(g, x.into_data(), y.into_data()).map_err(to_py)
    }

    fn unpack(&self, f: VectorField) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nx = self.inner.grid().nx;
        (rows_of(f.vx(), nx), rows_of(f.vy(), nx))
    }
}

#[pymethods]
impl Operator {
    #[new]
    #[pyo3(signature = (nx, ny, alpha=1.0, beta=1.0))]
    fn new(nx: usize, ny: usize, alpha: f64, beta: f64) -> PyResult<Self> {
        let grid = GridSpec::new(nx, ny).map_err(to_py)?;
        let inner = build_operator(grid, OperatorParams::new(alpha, beta).map_err(to_py)?).map_err(to_py)?;
        Ok(Operator { inner })
    }

    /// `(Lv_x, Lv_y)`.
    fn apply_l(&self, vx: Vec<Vec<f64>>, vy: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let f = self.inner.apply_l(&self.field(vx, vy)?).map_err(to_py)?;
        Ok(self.unpack(f))
    }

    /// `(L⁻¹w_x, L⁻¹w_y)`.
    fn apply_linv(&self, wx: Vec<Vec<f64>>, wy: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let f = self.inner.apply_linv(&self.field(wx, wy)?).map_err(to_py)?;
        Ok(self.unpack(f))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.params().alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.params().beta
    }
}

/// Kernel Fisher discriminant fitted on a precomputed kernel matrix.
#[pyclass(frozen)]
struct Klda {
    inner: klda::KldaModel,
}

#[pymethods]
impl Klda {
    /// `ridge` scales the within-class trace, or is used as is when `relative` is false.
    #[new]
    #[pyo3(signature = (kernel, labels, ridge=0.1, relative=true))]
    fn new(kernel: Vec<Vec<f64>>, labels: Vec<i8>, ridge: f64, relative: bool) -> PyResult<Self> {
        let k = KernelMatrix::from_values(matrix(kernel)?, f64::NAN).map_err(to_py)?;
        let sample = LabeledSample::new(labels).map_err(to_py)?;
        let ridge = if relative { Ridge::RelativeTrace(ridge) } else { Ridge::Absolute(ridge) };
        let inner = klda::fit(&k, &sample, ridge).map_err(to_py)?;
        Ok(Klda { inner })
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.inner.w.iter().copied().collect()
    }

    fn solve_residual(&self) -> f64 {
        self.inner.solve_residual()
    }

    /// Score of a point given its kernel values against the training points.
    fn decision(&self, column: Vec<f64>) -> PyResult<f64> {
        klda::decision(&self.inner, &column).map_err(to_py)
    }
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<i8>) -> PyResult<f64> {
    Ok(eval::roc_auc(&scores, &labels).map_err(to_py)?.auc)
}

#[pyfunction]
#[pyo3(signature = (a, b, bins=32))]
fn mutual_information(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, bins: usize) -> PyResult<f64> {
    eval::mutual_information(&image(a)?, &image(b)?, bins).map_err(to_py)
}

/// Rectangles (label 1) and ellipses (label -1) on a `size × size` grid.
#[pyfunction]
#[pyo3(signature = (n_per_class=100, size=64, seed=0))]
fn generate_shapes(n_per_class: usize, size: usize, seed: u64) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<i8>)> {
    let cfg = ShapeGenConfig {
        grid: GridSpec::new(size, size).map_err(to_py)?,
        n_per_class,
        seed,
        ..Default::default()
    };
    let data = synth::generate(&cfg, Jobs::default()).map_err(to_py)?;
    let images = data.images.iter().map(|im| rows_of(im.data(), size)).collect();
    Ok((images, data.labels))
}

/// Result of [`train`]: the selected `α`, `γ`, the EM trace and a scorer.
#[pyclass(frozen)]
struct TrainResult {
    outcome: TrainOutcome,
    training: Vec<ScalarImage>,
    reg: RegistrationConfig,
    beta: f64,
}

#[pymethods]
impl TrainResult {
    #[getter]
    fn alpha(&self) -> f64 {
        self.outcome.alpha
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.outcome.gamma
    }

    /// One dict per EM iteration.
    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.outcome
            .trace
            .records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iteration", r.iteration)?;
                d.set_item("alpha", r.alpha)?;
                d.set_item("gamma", r.gamma)?;
                d.set_item("train_hinge", r.train_hinge)?;
                d.set_item("val_hinge", r.val_hinge)?;
                d.set_item("val_auc", r.val_auc)?;
                d.set_item("registrations", r.registrations)?;
                d.set_item("alpha_next", r.alpha_next)?;
                Ok(d)
            })
            .collect()
    }

    /// Decision values of new images (registers every training image onto each).
    #[pyo3(signature = (images, jobs=1))]
    fn score(&self, images: Vec<Vec<Vec<f64>>>, jobs: usize) -> PyResult<Vec<f64>> {
        let imgs = images.into_iter().map(image).collect::<PyResult<Vec<_>>>()?;
        let params = OperatorParams::new(self.outcome.alpha, self.beta).map_err(to_py)?;
        metric_learning::score_images(
            &self.outcome.model,
            &self.training,
            &imgs,
            params,
            &self.reg,
            RowDirection::TrainingToNew,
            Jobs::new(jobs),
        )
        .map_err(to_py)
    }
}

/// EM training of `α` on labelled images.
#[pyfunction]
#[pyo3(signature = (images, labels, em_iters=10, alpha0=1.0, seed=0, sigma2=0.01, time_steps=10, energy_tol=1e-5, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn train(
    images: Vec<Vec<Vec<f64>>>,
    labels: Vec<i8>,
    em_iters: usize,
    alpha0: f64,
    seed: u64,
    sigma2: f64,
    time_steps: usize,
    energy_tol: f64,
    jobs: usize,
) -> PyResult<TrainResult> {
    let training = images.into_iter().map(image).collect::<PyResult<Vec<_>>>()?;
    let cfg = EmConfig {
        em_max_iters: em_iters,
        alpha0,
        seed,
        ..Default::default()
    };
    let reg = reg_config(sigma2, time_steps, energy_tol)?;
    let opts = TrainOptions {
        jobs: Jobs::new(jobs),
        ..Default::default()
    };
    let outcome = metric_learning::train(&training, &labels, &cfg, &reg, &opts, &mut |_| {})
        .map_err(|f| PyRuntimeError::new_err(f.to_string()))?;
    Ok(TrainResult {
        outcome,
        training,
        reg,
        beta: cfg.beta,
    })
}

#[pymodule]
fn lddmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(generate_shapes, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Operator>()?;
    m.add_class::<Klda>()?;
    m.add_class::<TrainResult>()?;
    Ok(())
}

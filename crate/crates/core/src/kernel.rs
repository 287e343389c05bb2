//! From registration energies to a classification kernel `K = exp{−γ·K_L}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffop::{OperatorParams, QuadraticMoments, SpectralOperator};
use crate::error::{Error, Result};
use crate::grid::ScalarImage;
use crate::parallel::{map_ordered, Jobs};
use crate::registration::{register, RegistrationConfig};

/// `n × n` matrix of registration energies `K_L(x_i, x_j)`, with the frequency
/// moments of every pair's velocity kept so the energy can be re-evaluated at
/// another `α` without re-registering.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    values: DMatrix<f64>,
    moments: Vec<QuadraticMoments>,
    failed: Vec<bool>,
}

impl MetricMatrix {
    pub fn zeros(n: usize) -> Self {
        MetricMatrix {
            values: DMatrix::zeros(n, n),
            moments: vec![QuadraticMoments::default(); n * n],
            failed: vec![false; n * n],
        }
    }

    /// Plain energies without moments (the α-derivative of such a matrix is zero).
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::input("metric matrix must be square"));
        }
        let n = values.nrows();
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::input(format!("metric diagonal ({i},{i}) must be 0")));
            }
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("metric entries must be finite and >= 0"));
        }
        Ok(MetricMatrix {
            values,
            moments: vec![QuadraticMoments::default(); n * n],
            failed: vec![false; n * n],
        })
    }

    /// Energies rebuilt from per-pair moments at `params`.
    pub fn from_moments(n: usize, moments: Vec<QuadraticMoments>, params: &OperatorParams) -> Result<Self> {
        if moments.len() != n * n {
            return Err(Error::input("moment count must be n*n"));
        }
        let mut m = MetricMatrix {
            values: DMatrix::zeros(n, n),
            moments,
            failed: vec![false; n * n],
        };
        m.reevaluate_in_place(params);
        Ok(m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn moments(&self, i: usize, j: usize) -> &QuadraticMoments {
        &self.moments[i * self.n() + j]
    }

    pub fn all_moments(&self) -> &[QuadraticMoments] {
        &self.moments
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, value: f64, moments: QuadraticMoments) {
        let n = self.n();
        self.values[(i, j)] = value;
        self.moments[i * n + j] = moments;
        self.failed[i * n + j] = false;
    }

    pub(crate) fn mark_failed(&mut self, i: usize, j: usize) {
        let n = self.n();
        self.values[(i, j)] = 0.0;
        self.moments[i * n + j] = QuadraticMoments::default();
        self.failed[i * n + j] = true;
    }

    pub fn is_failed(&self, i: usize, j: usize) -> bool {
        self.failed[i * self.n() + j]
    }

    pub fn failed_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n * n).filter(|&k| self.failed[k]).map(|k| (k / n, k % n)).collect()
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| {
            (0..i).all(|j| {
                let (a, b) = (self.values[(i, j)], self.values[(j, i)]);
                (a - b).abs() <= rel_tol * a.abs().max(b.abs())
            })
        })
    }

    /// Energies of the frozen velocities under other operator parameters.
    pub fn at_params(&self, params: &OperatorParams) -> MetricMatrix {
        let mut m = self.clone();
        m.reevaluate_in_place(params);
        m
    }

    fn reevaluate_in_place(&mut self, params: &OperatorParams) {
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                self.values[(i, j)] = if i == j || self.failed[i * n + j] {
                    0.0
                } else {
                    self.moments[i * n + j].energy(params)
                };
            }
        }
    }

    /// `dK_L/dα` of every pair at frozen velocities.
    pub fn dalpha(&self, params: &OperatorParams) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j || self.failed[i * n + j] {
                0.0
            } else {
                self.moments[i * n + j].dalpha(params)
            }
        })
    }

    /// Principal submatrix over `idx` (in that order).
    pub fn select(&self, idx: &[usize]) -> MetricMatrix {
        let n = self.n();
        let m = idx.len();
        let mut out = MetricMatrix::zeros(m);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.values[(a, b)] = self.values[(i, j)];
                out.moments[a * m + b] = self.moments[i * n + j];
                out.failed[a * m + b] = self.failed[i * n + j];
            }
        }
        out
    }
}

/// Averages each ordered pair with its reverse, moments included, so the
/// α-derivative of the result is the average of the derivatives.
pub fn symmetrize(metric: &MetricMatrix) -> MetricMatrix {
    let n = metric.n();
    let mut out = metric.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (metric.values[(i, j)] + metric.values[(j, i)]);
            let m = metric.moments[i * n + j].mean(&metric.moments[j * n + i]);
            let failed = metric.failed[i * n + j] || metric.failed[j * n + i];
            for (a, b) in [(i, j), (j, i)] {
                out.values[(a, b)] = if failed { 0.0 } else { v };
                out.moments[a * n + b] = if failed { QuadraticMoments::default() } else { m };
                out.failed[a * n + b] = failed;
            }
        }
    }
    out
}

/// `K = exp{−γ·K_L}`, entries in `(0, 1]` and unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    gamma: f64,
}

impl KernelMatrix {
    /// Wraps an existing matrix; used for hand-built kernels in tests and by bindings.
    pub fn from_values(values: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::input("kernel matrix must be square"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("kernel entries must be finite"));
        }
        Ok(KernelMatrix { values, gamma })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// `K[rows, cols]`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.values[(rows[a], cols[b])])
    }

    pub fn select(&self, idx: &[usize]) -> KernelMatrix {
        KernelMatrix {
            values: self.block(idx, idx),
            gamma: self.gamma,
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::input(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Elementwise `exp{−γ·K_L}` of a symmetric metric matrix.
pub fn to_kernel(metric: &MetricMatrix, gamma: f64) -> Result<KernelMatrix> {
    check_gamma(gamma)?;
    let failed = metric.failed_pairs();
    if !failed.is_empty() {
        return Err(Error::RegistrationFailures { pairs: failed });
    }
    if !metric.is_symmetric(1e-12) {
        return Err(Error::input("kernel needs a symmetric metric matrix; symmetrize first"));
    }
    let values = metric.values.map(|v| (-gamma * v).exp());
    Ok(KernelMatrix { values, gamma })
}

/// `dK/dα` at frozen velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    values: DMatrix<f64>,
}

impl KernelGradient {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.values[(rows[a], cols[b])])
    }
}

/// `dK/dα = −γ·K·dK_L/dα`, entrywise.
pub fn kernel_dalpha(
    metric: &MetricMatrix,
    kernel: &KernelMatrix,
    metric_dalpha: &DMatrix<f64>,
) -> Result<KernelGradient> {
    let n = metric.n();
    if kernel.n() != n || metric_dalpha.shape() != (n, n) {
        return Err(Error::input(format!(
            "shape mismatch: metric {n}x{n}, kernel {0}x{0}, derivative {1}x{2}",
            kernel.n(),
            metric_dalpha.nrows(),
            metric_dalpha.ncols()
        )));
    }
    let g = kernel.gamma;
    let mut values = kernel.values.zip_map(metric_dalpha, |k, d| -g * k * d);
    values.fill_diagonal(0.0);
    Ok(KernelGradient { values })
}

/// Kernel entries between a new image and every training image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelColumn {
    pub kernel: Vec<f64>,
    pub metric: Vec<f64>,
    pub failed: Vec<bool>,
    pub registrations: usize,
}

impl KernelColumn {
    /// Kernel values, refusing if any registration failed.
    pub fn values(&self) -> Result<&[f64]> {
        let bad: Vec<(usize, usize)> = self
            .failed
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(i, _)| (i, usize::MAX))
            .collect();
        if bad.is_empty() {
            Ok(&self.kernel)
        } else {
            Err(Error::RegistrationFailures { pairs: bad })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowDirection {
    /// Register each training image onto the new image.
    #[default]
    TrainingToNew,
    /// Average of both registration directions (twice the cost).
    Both,
}

/// Registers the training images against `new_image` and maps the energies through `exp{−γ·}`.
pub fn kernel_row(
    new_image: &ScalarImage,
    training: &[ScalarImage],
    op: &SpectralOperator,
    cfg: &RegistrationConfig,
    gamma: f64,
    direction: RowDirection,
    jobs: Jobs,
) -> Result<KernelColumn> {
    check_gamma(gamma)?;
    let jobs_list: Vec<(usize, bool)> = match direction {
        RowDirection::TrainingToNew => (0..training.len()).map(|i| (i, false)).collect(),
        RowDirection::Both => (0..training.len()).flat_map(|i| [(i, false), (i, true)]).collect(),
    };
    let results = map_ordered(jobs, &jobs_list, |&(i, reverse)| {
        let r = if reverse {
            register(new_image, &training[i], op, cfg)
        } else {
            register(&training[i], new_image, op, cfg)
        };
        match r {
            Ok(res) => Some(res.metric_value),
            Err(e) => {
                log::warn!("registration of training image {i} failed: {e}");
                None
            }
        }
    });
    let per = match direction {
        RowDirection::TrainingToNew => 1,
        RowDirection::Both => 2,
    };
    let mut metric = vec![0.0; training.len()];
    let mut failed = vec![false; training.len()];
    for (i, chunk) in results.chunks(per).enumerate() {
        if chunk.iter().any(|r| r.is_none()) {
            failed[i] = true;
        } else {
            metric[i] = chunk.iter().map(|r| r.unwrap_or(0.0)).sum::<f64>() / per as f64;
        }
    }
    let kernel = metric
        .iter()
        .zip(&failed)
        .map(|(m, f)| if *f { 0.0 } else { (-gamma * m).exp() })
        .collect();
    Ok(KernelColumn {
        kernel,
        metric,
        failed,
        registrations: jobs_list.len(),
    })
}

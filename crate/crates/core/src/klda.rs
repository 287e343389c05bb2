//! Two-class kernel Fisher discriminant with a hinge-loss model score.
//!
//! For class `z ∈ {+1, −1}` with `n_z` members,
//!
//! ```text
//! (M_z)_i    = (1/n_z) Σ_{ℓ∈z} k(x_i, x_ℓ)
//! (Σ_z)_ij   = (1/n_z) Σ_{ℓ∈z} k(x_i, x_ℓ) k(x_j, x_ℓ) − (M_z)_i (M_z)_j
//! N          = Σ_{+1} + Σ_{−1} + εI
//! w          = N⁻¹ (M_{+1} − M_{−1})
//! y(x')      = wᵀ (k(x') − (M_{+1} + M_{−1}) / 2)
//! ```
//!
//! The α-derivative of `y` is assembled by differentiating each of these
//! definitions with the product rule, given `dK/dα`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

/// Binary labels in `{+1, −1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    labels: Vec<i8>,
    positive: Vec<usize>,
    negative: Vec<usize>,
}

impl LabeledSample {
    pub fn new(labels: Vec<i8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&z| z != 1 && z != -1) {
            return Err(Error::input(format!("labels must be +1 or -1, got {bad}")));
        }
        let positive: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        let negative: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == -1).collect();
        if positive.is_empty() || negative.is_empty() {
            return Err(Error::input("both classes need at least one sample"));
        }
        Ok(LabeledSample {
            labels,
            positive,
            negative,
        })
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class(&self, z: i8) -> &[usize] {
        if z > 0 {
            &self.positive
        } else {
            &self.negative
        }
    }

    /// All labels negated.
    pub fn flipped(&self) -> LabeledSample {
        LabeledSample {
            labels: self.labels.iter().map(|z| -z).collect(),
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

/// Ridge added to the within-class matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ridge {
    /// Fixed `ε`.
    Absolute(f64),
    /// `ε = c · trace(Σ_{+1} + Σ_{−1}) / n`.
    RelativeTrace(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::RelativeTrace(1e-1)
    }
}

impl Ridge {
    fn validate(&self) -> Result<()> {
        let c = match self {
            Ridge::Absolute(c) | Ridge::RelativeTrace(c) => *c,
        };
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::input(format!("ridge must be >= 0, got {c}")));
        }
        Ok(())
    }

    fn epsilon(&self, scatter: &DMatrix<f64>) -> f64 {
        match *self {
            Ridge::Absolute(e) => e,
            Ridge::RelativeTrace(c) => c * scatter.trace() / scatter.nrows() as f64,
        }
    }

    fn depsilon(&self, dscatter: &DMatrix<f64>) -> f64 {
        match *self {
            Ridge::Absolute(_) => 0.0,
            Ridge::RelativeTrace(c) => c * dscatter.trace() / dscatter.nrows() as f64,
        }
    }
}

fn check_square(kernel: &DMatrix<f64>, sample: &LabeledSample) -> Result<()> {
    if kernel.nrows() != sample.len() || kernel.ncols() != sample.len() {
        return Err(Error::input(format!(
            "kernel is {}x{} but there are {} labels",
            kernel.nrows(),
            kernel.ncols(),
            sample.len()
        )));
    }
    Ok(())
}

fn class_mean(kernel: &DMatrix<f64>, members: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(kernel.nrows());
    for &l in members {
        m += kernel.column(l);
    }
    m / members.len() as f64
}

/// `(M_{+1}, M_{−1})`.
pub fn class_means(kernel: &DMatrix<f64>, sample: &LabeledSample) -> Result<(DVector<f64>, DVector<f64>)> {
    check_square(kernel, sample)?;
    Ok((class_mean(kernel, sample.class(1)), class_mean(kernel, sample.class(-1))))
}

fn class_columns(kernel: &DMatrix<f64>, members: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(kernel.nrows(), members.len(), |i, b| kernel[(i, members[b])])
}

fn class_scatter(kernel: &DMatrix<f64>, members: &[usize], mean: &DVector<f64>) -> DMatrix<f64> {
    let kz = class_columns(kernel, members);
    &kz * kz.transpose() / members.len() as f64 - mean * mean.transpose()
}

/// `Σ_{+1} + Σ_{−1}` without the ridge.
fn scatter(kernel: &DMatrix<f64>, sample: &LabeledSample, m_pos: &DVector<f64>, m_neg: &DVector<f64>) -> DMatrix<f64> {
    class_scatter(kernel, sample.class(1), m_pos) + class_scatter(kernel, sample.class(-1), m_neg)
}

/// `N = Σ_{+1} + Σ_{−1} + εI` and the `ε` used.
pub fn within_class(kernel: &DMatrix<f64>, sample: &LabeledSample, ridge: Ridge) -> Result<(DMatrix<f64>, f64)> {
    ridge.validate()?;
    let (m_pos, m_neg) = class_means(kernel, sample)?;
    let mut n = scatter(kernel, sample, &m_pos, &m_neg);
    let eps = ridge.epsilon(&n);
    for i in 0..n.nrows() {
        n[(i, i)] += eps;
    }
    Ok((n, eps))
}

fn factor(n: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(n.clone()).ok_or_else(|| {
        Error::numerical(
            "within-class matrix is not positive definite; increase the ridge epsilon",
            None,
        )
    })
}

/// Fitted discriminant.
#[derive(Debug, Clone)]
pub struct KldaModel {
    pub w: DVector<f64>,
    pub m_pos: DVector<f64>,
    pub m_neg: DVector<f64>,
    /// `N` including the ridge.
    pub within: DMatrix<f64>,
    pub epsilon: f64,
    pub ridge: Ridge,
    pub gamma: f64,
    /// Training kernel the model was fitted on.
    pub kernel: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

/// Solves `N w = M_{+1} − M_{−1}` by Cholesky.
pub fn fit(kernel: &KernelMatrix, sample: &LabeledSample, ridge: Ridge) -> Result<KldaModel> {
    let k = kernel.values();
    let (m_pos, m_neg) = class_means(k, sample)?;
    let (within, epsilon) = within_class(k, sample, ridge)?;
    let chol = factor(&within)?;
    let w = chol.solve(&(&m_pos - &m_neg));
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("discriminant solve produced non-finite weights", None));
    }
    Ok(KldaModel {
        w,
        m_pos,
        m_neg,
        within,
        epsilon,
        ridge,
        gamma: kernel.gamma(),
        kernel: k.clone(),
        chol,
    })
}

impl KldaModel {
    /// Rebuilds a model from stored pieces (e.g. a saved document).
    pub fn from_parts(
        w: DVector<f64>,
        m_pos: DVector<f64>,
        m_neg: DVector<f64>,
        kernel: DMatrix<f64>,
        epsilon: f64,
        ridge: Ridge,
        gamma: f64,
        within: DMatrix<f64>,
    ) -> Result<Self> {
        let n = w.len();
        if m_pos.len() != n || m_neg.len() != n || kernel.shape() != (n, n) || within.shape() != (n, n) {
            return Err(Error::input("model parts have inconsistent sizes"));
        }
        let chol = factor(&within)?;
        Ok(KldaModel {
            w,
            m_pos,
            m_neg,
            within,
            epsilon,
            ridge,
            gamma,
            kernel,
            chol,
        })
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// `‖N w − (M_{+1} − M_{−1})‖ / ‖M_{+1} − M_{−1}‖`.
    pub fn solve_residual(&self) -> f64 {
        let d = &self.m_pos - &self.m_neg;
        (&self.within * &self.w - &d).norm() / d.norm()
    }

    /// Regularized Fisher ratio `(wᵀ(M_{+1} − M_{−1}))² / (wᵀ N w)` of any direction.
    pub fn rayleigh(&self, w: &DVector<f64>) -> f64 {
        let d = &self.m_pos - &self.m_neg;
        let num = w.dot(&d).powi(2);
        num / w.dot(&(&self.within * w))
    }

    fn midpoint(&self) -> DVector<f64> {
        (&self.m_pos + &self.m_neg) * 0.5
    }
}

fn check_column(model: &KldaModel, len: usize) -> Result<()> {
    if len != model.n() {
        return Err(Error::input(format!(
            "kernel column has {len} entries, model has {}",
            model.n()
        )));
    }
    Ok(())
}

/// `y(x') = wᵀ(k(x') − (M_{+1} + M_{−1})/2)`.
pub fn decision(model: &KldaModel, k_col: &[f64]) -> Result<f64> {
    check_column(model, k_col.len())?;
    if k_col.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("kernel column has non-finite entries"));
    }
    let mid = model.midpoint();
    Ok(k_col
        .iter()
        .zip(mid.iter())
        .zip(model.w.iter())
        .map(|((k, m), w)| w * (k - m))
        .sum())
}

/// Class from a score; a zero score goes to `+1`.
pub fn predict_label(score: f64) -> i8 {
    if score >= 0.0 {
        1
    } else {
        -1
    }
}

/// Scores for every column of an `n × m` block of kernel columns.
pub fn decision_scores(model: &KldaModel, columns: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_column(model, columns.nrows())?;
    (0..columns.ncols())
        .map(|j| decision(model, columns.column(j).as_slice()))
        .collect()
}

/// `max{0, 1 − z·y}`.
pub fn hinge(score: f64, z: i8) -> f64 {
    (1.0 - z as f64 * score).max(0.0)
}

/// Mean hinge loss over a batch.
pub fn mean_hinge(scores: &[f64], labels: &[i8]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::input("scores and labels must be non-empty and equally long"));
    }
    Ok(scores.iter().zip(labels).map(|(&s, &z)| hinge(s, z)).sum::<f64>() / scores.len() as f64)
}

/// Derivatives of the class means and of `N` given `dK/dα` on the training block.
#[derive(Debug, Clone)]
pub struct ModelDerivative {
    pub dm_pos: DVector<f64>,
    pub dm_neg: DVector<f64>,
    pub dwithin: DMatrix<f64>,
    pub dw: DVector<f64>,
}

fn class_scatter_derivative(
    kernel: &DMatrix<f64>,
    dkernel: &DMatrix<f64>,
    members: &[usize],
    mean: &DVector<f64>,
    dmean: &DVector<f64>,
) -> DMatrix<f64> {
    let kz = class_columns(kernel, members);
    let dkz = class_columns(dkernel, members);
    let cross = &dkz * kz.transpose();
    (&cross + cross.transpose()) / members.len() as f64 - dmean * mean.transpose() - mean * dmean.transpose()
}

/// Product-rule derivatives of `M_z`, `N` and `w` for a training-block kernel derivative.
pub fn model_derivative(model: &KldaModel, sample: &LabeledSample, dkernel: &DMatrix<f64>) -> Result<ModelDerivative> {
    check_square(&model.kernel, sample)?;
    if dkernel.shape() != model.kernel.shape() {
        return Err(Error::input("kernel derivative must match the training kernel's shape"));
    }
    let k = &model.kernel;
    let dm_pos = class_mean(dkernel, sample.class(1));
    let dm_neg = class_mean(dkernel, sample.class(-1));
    let mut dwithin = class_scatter_derivative(k, dkernel, sample.class(1), &model.m_pos, &dm_pos)
        + class_scatter_derivative(k, dkernel, sample.class(-1), &model.m_neg, &dm_neg);
    let deps = model.ridge.depsilon(&dwithin);
    for i in 0..dwithin.nrows() {
        dwithin[(i, i)] += deps;
    }
    // dw = N⁻¹ (−dN w + dM_{+1} − dM_{−1})
    let rhs = -(&dwithin * &model.w) + &dm_pos - &dm_neg;
    let dw = model.chol.solve(&rhs);
    Ok(ModelDerivative {
        dm_pos,
        dm_neg,
        dwithin,
        dw,
    })
}

/// Kernel columns of an evaluation batch, their α-derivatives, and true labels.
#[derive(Debug, Clone, Copy)]
pub struct EvalBatch<'a> {
    /// `n × m`: column `j` is `k(x'_j)` against the training points.
    pub columns: &'a DMatrix<f64>,
    /// `n × m`: `dk(x'_j)/dα`.
    pub dcolumns: &'a DMatrix<f64>,
    pub labels: &'a [i8],
}

/// `d/dα` of the batch-mean hinge loss; points with `z·y ≥ 1` contribute zero.
pub fn hinge_grad_alpha(
    model: &KldaModel,
    sample: &LabeledSample,
    dkernel_train: &DMatrix<f64>,
    batch: &EvalBatch<'_>,
) -> Result<f64> {
    let m = batch.labels.len();
    if m == 0 || batch.columns.ncols() != m || batch.dcolumns.shape() != batch.columns.shape() {
        return Err(Error::input("evaluation batch shapes are inconsistent"));
    }
    check_column(model, batch.columns.nrows())?;
    let deriv = model_derivative(model, sample, dkernel_train)?;
    let mid = model.midpoint();
    let dmid = (&deriv.dm_pos + &deriv.dm_neg) * 0.5;
    let mut total = 0.0;
    for j in 0..m {
        let centered = batch.columns.column(j) - &mid;
        let y = model.w.dot(&centered);
        let z = batch.labels[j] as f64;
        if z * y < 1.0 {
            let dy = centered.dot(&deriv.dw) + model.w.dot(&(batch.dcolumns.column(j) - &dmid));
            total += -z * dy;
        }
    }
    Ok(total / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let mut k = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..0.95));
        k = (&k + k.transpose()) * 0.5;
        k.fill_diagonal(1.0);
        k
    }

    fn labels(n: usize) -> LabeledSample {
        LabeledSample::new((0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect()).unwrap()
    }

    #[test]
    fn labels_validated() {
        assert!(LabeledSample::new(vec![1, 0, -1]).is_err());
        assert!(LabeledSample::new(vec![1, 1]).is_err());
        assert!(LabeledSample::new(vec![-1, 1]).is_ok());
    }

    #[test]
    fn means_hand_cases() {
        let id = DMatrix::<f64>::identity(2, 2);
        let s = LabeledSample::new(vec![1, -1]).unwrap();
        let (p, n) = class_means(&id, &s).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
        assert_eq!(n.as_slice(), &[0.0, 1.0]);
        let ones = DMatrix::from_element(3, 3, 1.0);
        let s3 = LabeledSample::new(vec![1, -1, 1]).unwrap();
        let (p, n) = class_means(&ones, &s3).unwrap();
        assert!(p.iter().chain(n.iter()).all(|v| *v == 1.0));
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.4, 0.2, 0.4, 1.0]);
        let (p, _) = class_means(&k, &LabeledSample::new(vec![1, 1, -1]).unwrap()).unwrap();
        let expect = [0.75, 0.75, 0.3];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(class_means(&k, &s).is_err());
    }

    #[test]
    fn within_class_degenerate_cases() {
        let id = DMatrix::<f64>::identity(2, 2);
        let s = LabeledSample::new(vec![1, -1]).unwrap();
        let (n, eps) = within_class(&id, &s, Ridge::Absolute(0.1)).unwrap();
        assert_eq!(eps, 0.1);
        assert!((n - DMatrix::identity(2, 2) * 0.1).norm() < 1e-15);
        // a duplicated point within class +1 adds no scatter from that class
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.3, 1.0, 1.0, 0.3, 0.3, 0.3, 1.0]);
        let s3 = LabeledSample::new(vec![1, 1, -1]).unwrap();
        let (m_pos, _) = class_means(&k, &s3).unwrap();
        assert!(class_scatter(&k, s3.class(1), &m_pos).norm() < 1e-15);
        // ε = 0 on a singular scatter is refused
        let kern = KernelMatrix::from_values(id, 1.0).unwrap();
        assert!(matches!(fit(&kern, &s, Ridge::Absolute(0.0)), Err(Error::Numerical { .. })));
    }

    #[test]
    fn matrix_forms_match_double_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [6, 8, 10] {
            let k = random_kernel(n, &mut rng);
            let s = labels(n);
            let (p, q) = class_means(&k, &s).unwrap();
            let (nm, eps) = within_class(&k, &s, Ridge::Absolute(0.0)).unwrap();
            assert_eq!(eps, 0.0);
            let mut brute = DMatrix::zeros(n, n);
            for z in [1i8, -1] {
                let members = s.class(z);
                let nz = members.len() as f64;
                let mean: Vec<f64> = (0..n).map(|i| members.iter().map(|&l| k[(i, l)]).sum::<f64>() / nz).collect();
                let target = if z == 1 { &p } else { &q };
                for i in 0..n {
                    assert!((mean[i] - target[i]).abs() < 1e-12);
                }
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for &l in members {
                            acc += k[(i, l)] * k[(j, l)];
                        }
                        brute[(i, j)] += acc / nz - mean[i] * mean[j];
                    }
                }
            }
            assert!((nm - brute).abs().max() < 1e-12);
        }
    }

    #[test]
    fn singleton_identity_closed_form() {
        let eps = 0.01;
        let kern = KernelMatrix::from_values(DMatrix::identity(2, 2), 1.0).unwrap();
        let s = LabeledSample::new(vec![1, -1]).unwrap();
        let model = fit(&kern, &s, Ridge::Absolute(eps)).unwrap();
        assert!((model.w[0] - 1.0 / eps).abs() < 1e-9);
        assert!((model.w[1] + 1.0 / eps).abs() < 1e-9);
        let score = decision(&model, &[1.0, 0.0]).unwrap();
        assert!((score - 1.0 / eps).abs() < 1e-9);
        assert_eq!(predict_label(score), 1);
        assert_eq!(predict_label(0.0), 1);
    }

    #[test]
    fn solve_residual_and_rayleigh_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = random_kernel(9, &mut rng);
        let s = labels(9);
        let model = fit(&KernelMatrix::from_values(k, 1.0).unwrap(), &s, Ridge::default()).unwrap();
        assert!(model.solve_residual() < 1e-8);
        let best = model.rayleigh(&model.w);
        for _ in 0..100 {
            let w = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
            assert!(model.rayleigh(&w) <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn flipping_labels_negates_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_kernel(7, &mut rng);
        let s = labels(7);
        let kern = KernelMatrix::from_values(k, 1.0).unwrap();
        let a = fit(&kern, &s, Ridge::default()).unwrap();
        let b = fit(&kern, &s.flipped(), Ridge::default()).unwrap();
        assert_eq!(a.w, -b.w.clone());
        let col: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..1.0)).collect();
        assert_eq!(decision(&a, &col).unwrap(), -decision(&b, &col).unwrap());
    }

    #[test]
    fn decision_midpoint_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = random_kernel(6, &mut rng);
        let s = labels(6);
        let mut model = fit(&KernelMatrix::from_values(k, 1.0).unwrap(), &s, Ridge::default()).unwrap();
        let mid: Vec<f64> = model.midpoint().iter().cloned().collect();
        assert!(decision(&model, &mid).unwrap().abs() < 1e-12);
        let col: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = decision(&model, &col).unwrap();
        model.w = -model.w.clone();
        assert_eq!(decision(&model, &col).unwrap(), -y);
        assert!(decision(&model, &col[..5]).is_err());
    }

    #[test]
    fn hinge_values() {
        assert_eq!(hinge(2.0, 1), 0.0);
        assert_eq!(hinge(0.5, 1), 0.5);
        assert_eq!(hinge(1.0, -1), 2.0);
        assert_eq!(mean_hinge(&[2.0, 0.5, 1.0], &[1, 1, -1]).unwrap(), 2.5 / 3.0);
        assert!(mean_hinge(&[], &[]).is_err());
    }

    /// `K(α) = exp(−γ·(α²A + 2αB + C))` with random symmetric moment matrices.
    struct Toy {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        gamma: f64,
    }

    impl Toy {
        fn new(n: usize, rng: &mut impl Rng) -> Self {
            let mut sym = |scale: f64| {
                let mut m = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..scale));
                m = (&m + m.transpose()) * 0.5;
                m.fill_diagonal(0.0);
                m
            };
            Toy {
                a: sym(0.5),
                b: sym(1.0),
                c: sym(2.0),
                gamma: 0.4,
            }
        }

        fn metric(&self, alpha: f64) -> DMatrix<f64> {
            &self.a * (alpha * alpha) + &self.b * (2.0 * alpha) + &self.c
        }

        fn kernel(&self, alpha: f64) -> DMatrix<f64> {
            self.metric(alpha).map(|v| (-self.gamma * v).exp())
        }

        fn dkernel(&self, alpha: f64) -> DMatrix<f64> {
            let dk_l = &self.a * (2.0 * alpha) + &self.b * 2.0;
            self.kernel(alpha).zip_map(&dk_l, |k, d| -self.gamma * k * d)
        }
    }

    #[test]
    fn within_class_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 8;
        let toy = Toy::new(n, &mut rng);
        let s = labels(n);
        let alpha = 0.9;
        let ridge = Ridge::RelativeTrace(1e-2);
        let model = fit(&KernelMatrix::from_values(toy.kernel(alpha), toy.gamma).unwrap(), &s, ridge).unwrap();
        let d = model_derivative(&model, &s, &toy.dkernel(alpha)).unwrap();
        let h = 1e-5;
        let np = within_class(&toy.kernel(alpha + h), &s, ridge).unwrap().0;
        let nm = within_class(&toy.kernel(alpha - h), &s, ridge).unwrap().0;
        let fd = (np - nm) / (2.0 * h);
        for i in 0..n {
            for j in 0..n {
                let (an, f) = (d.dwithin[(i, j)], fd[(i, j)]);
                assert!((an - f).abs() <= 1e-6 * f.abs().max(1e-3), "({i},{j}) {an} vs {f}");
            }
        }
    }

    #[test]
    fn hinge_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10;
        let toy = Toy::new(n, &mut rng);
        let train: Vec<usize> = (0..6).collect();
        let eval: Vec<usize> = (6..10).collect();
        let all_labels: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let s = LabeledSample::new(train.iter().map(|&i| all_labels[i]).collect()).unwrap();
        let eval_labels: Vec<i8> = eval.iter().map(|&i| all_labels[i]).collect();
        let ridge = Ridge::RelativeTrace(1e-3);
        let block = |m: &DMatrix<f64>, r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |a, b| m[(r[a], c[b])]);
        let loss = |alpha: f64| {
            let k = toy.kernel(alpha);
            let model = fit(&KernelMatrix::from_values(block(&k, &train, &train), toy.gamma).unwrap(), &s, ridge).unwrap();
            let scores = decision_scores(&model, &block(&k, &train, &eval)).unwrap();
            mean_hinge(&scores, &eval_labels).unwrap()
        };
        for alpha in [0.3, 0.8, 1.6] {
            let k = toy.kernel(alpha);
            let dk = toy.dkernel(alpha);
            let model = fit(&KernelMatrix::from_values(block(&k, &train, &train), toy.gamma).unwrap(), &s, ridge).unwrap();
            let cols = block(&k, &train, &eval);
            let dcols = block(&dk, &train, &eval);
            let g = hinge_grad_alpha(
                &model,
                &s,
                &block(&dk, &train, &train),
                &EvalBatch {
                    columns: &cols,
                    dcolumns: &dcols,
                    labels: &eval_labels,
                },
            )
            .unwrap();
            let h = 1e-4;
            let fd = (loss(alpha + h) - loss(alpha - h)) / (2.0 * h);
            assert!((g - fd).abs() <= 1e-4 * fd.abs().max(1e-8), "alpha={alpha}: {g} vs {fd}");
        }
    }

    #[test]
    fn hinge_gradient_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = random_kernel(6, &mut rng);
        let s = labels(6);
        let model = fit(&KernelMatrix::from_values(k.clone(), 1.0).unwrap(), &s, Ridge::default()).unwrap();
        let dk = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        // training points evaluated on themselves sit far beyond the margin
        let scores = decision_scores(&model, &k).unwrap();
        let z: Vec<i8> = scores.iter().map(|&y| predict_label(y)).collect();
        let huge = k.map(|v| v);
        let margin_ok = scores.iter().zip(&z).all(|(y, z)| *z as f64 * y >= 1.0);
        if margin_ok {
            let g = hinge_grad_alpha(&model, &s, &dk, &EvalBatch { columns: &huge, dcolumns: &dk, labels: &z }).unwrap();
            assert_eq!(g, 0.0);
        }
        let zero = DMatrix::zeros(6, 6);
        let g0 = hinge_grad_alpha(
            &model,
            &s,
            &zero,
            &EvalBatch {
                columns: &k,
                dcolumns: &zero,
                labels: s.labels(),
            },
        )
        .unwrap();
        assert_eq!(g0, 0.0);
    }
}

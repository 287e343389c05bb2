//! EM training of `α`: pairwise registration at the current `α` (E-step),
//! then hinge-loss descent on `α` with the velocities frozen (M-step).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffop::{build_operator, OperatorParams, QuadraticMoments};
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::grid::ScalarImage;
use crate::io::{self, SCHEMA_VERSION};
use crate::kernel::{kernel_dalpha, kernel_row, symmetrize, to_kernel, MetricMatrix, RowDirection};
use crate::klda::{self, decision_scores, hinge_grad_alpha, mean_hinge, EvalBatch, KldaModel, LabeledSample, Ridge};
use crate::parallel::Jobs;
use crate::registration::{register_pairwise, PairwiseOptions, RegistrationConfig};

/// How the `gamma_grid` values are turned into kernel bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaScale {
    /// Grid values are used as they are.
    Absolute,
    /// Grid values are multiplied by `1 / median` of the train-fold off-diagonal energies.
    #[default]
    InverseMedian,
}

/// Which fold's ROC AUC picks the returned EM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    #[serde(rename = "val")]
    Validation,
    #[serde(rename = "train")]
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub alpha0: f64,
    /// Fixed `β`.
    pub beta: f64,
    pub alpha_bounds: [f64; 2],
    pub gamma_grid: Vec<f64>,
    pub gamma_scale: GammaScale,
    pub em_max_iters: usize,
    /// EM stops once `|Δα| / α` falls below this.
    pub alpha_tol: f64,
    pub mstep_max_iters: usize,
    /// First trial of each M-step line search moves `α` by this fraction of itself.
    pub mstep_step0: f64,
    /// M-step stops when an accepted step improves the loss by less than this, relatively.
    pub loss_tol: f64,
    /// One M-step keeps `α` within `[α/r, α·r]` of its starting value; the frozen-velocity
    /// loss describes the registrations only near the `α` they were computed at.
    pub mstep_max_ratio: f64,
    pub ridge: Ridge,
    pub selection: Selection,
    /// Seeds the train/validation split.
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            alpha0: 1.0,
            beta: 1.0,
            alpha_bounds: [1e-3, 1e2],
            gamma_grid: (0..7).map(|k| 10f64.powf(-1.0 + 0.5 * k as f64)).collect(),
            gamma_scale: GammaScale::InverseMedian,
            em_max_iters: 10,
            alpha_tol: 1e-3,
            mstep_max_iters: 25,
            mstep_step0: 0.5,
            loss_tol: 1e-4,
            mstep_max_ratio: 2.0,
            ridge: Ridge::default(),
            selection: Selection::Validation,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let [lo, hi] = self.alpha_bounds;
        if !(positive(lo) && positive(hi) && lo < hi) {
            return Err(Error::input(format!("alpha_bounds must satisfy 0 < min < max, got [{lo}, {hi}]")));
        }
        if !(positive(self.alpha0) && (lo..=hi).contains(&self.alpha0)) {
            return Err(Error::input(format!("alpha0 {} lies outside alpha_bounds", self.alpha0)));
        }
        if !positive(self.beta) {
            return Err(Error::input("beta must be > 0"));
        }
        if self.gamma_grid.is_empty() || !self.gamma_grid.iter().all(|&g| positive(g)) {
            return Err(Error::input("gamma_grid must be non-empty with positive entries"));
        }
        if self.em_max_iters == 0 {
            return Err(Error::input("em_max_iters must be >= 1"));
        }
        if !(positive(self.mstep_step0) && self.alpha_tol >= 0.0 && self.loss_tol >= 0.0) {
            return Err(Error::input("mstep_step0 must be > 0, alpha_tol and loss_tol >= 0"));
        }
        if !(self.mstep_max_ratio.is_finite() && self.mstep_max_ratio > 1.0) {
            return Err(Error::input("mstep_max_ratio must be > 1"));
        }
        Ok(())
    }

    fn params(&self, alpha: f64) -> Result<OperatorParams> {
        OperatorParams::new(alpha, self.beta)
    }
}

/// Stratified train/validation split of the training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Shuffles each class with the seed and sends the first half (rounded up) to `train`.
pub fn split_folds(labels: &[i8], seed: u64) -> Result<Folds> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for z in [1i8, -1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == z).collect();
        if idx.len() < 2 {
            return Err(Error::input(format!("class {z} needs at least 2 images to split into folds")));
        }
        idx.shuffle(&mut rng);
        let cut = idx.len().div_ceil(2);
        train.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    if let Some(bad) = labels.iter().find(|&&z| z != 1 && z != -1) {
        return Err(Error::input(format!("labels must be +1 or -1, got {bad}")));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Folds { train, val })
}

fn pick(labels: &[i8], idx: &[usize]) -> Vec<i8> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Median of the strictly upper triangle over `idx`.
fn median_offdiag(values: &DMatrix<f64>, idx: &[usize]) -> f64 {
    median_offdiag_with_grad(values, values, idx).0
}

/// Median of the strictly upper triangle over `idx` and its derivative, given the
/// derivative of every entry.
fn median_offdiag_with_grad(values: &DMatrix<f64>, deriv: &DMatrix<f64>, idx: &[usize]) -> (f64, f64) {
    let mut v: Vec<(f64, f64)> = idx
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| idx[a + 1..].iter().map(move |&j| (values[(i, j)], deriv[(i, j)])))
        .collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        let (lo, hi) = (v[m / 2 - 1], v[m / 2]);
        (0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1))
    }
}

/// KLDA fitted on the train fold and scored on both folds.
#[derive(Debug, Clone)]
pub struct FoldFit {
    pub model: KldaModel,
    pub train_hinge: f64,
    pub val_hinge: f64,
    pub train_auc: f64,
    pub val_auc: f64,
}

fn fit_folds(metric: &MetricMatrix, labels: &[i8], folds: &Folds, gamma: f64, ridge: Ridge) -> Result<FoldFit> {
    let kernel = to_kernel(metric, gamma)?;
    let sample = LabeledSample::new(pick(labels, &folds.train))?;
    let model = klda::fit(&kernel.select(&folds.train), &sample, ridge)?;
    let train_scores = decision_scores(&model, &kernel.block(&folds.train, &folds.train))?;
    let val_scores = decision_scores(&model, &kernel.block(&folds.train, &folds.val))?;
    let val_labels = pick(labels, &folds.val);
    Ok(FoldFit {
        train_hinge: mean_hinge(&train_scores, sample.labels())?,
        val_hinge: mean_hinge(&val_scores, &val_labels)?,
        train_auc: roc_auc(&train_scores, sample.labels())?.auc,
        val_auc: roc_auc(&val_scores, &val_labels)?.auc,
        model,
    })
}

/// Outcome of the `γ` grid search at one metric matrix.
#[derive(Debug, Clone)]
pub struct GammaChoice {
    /// Grid value that won.
    pub gamma_rel: f64,
    /// Bandwidth actually used in `exp{−γ·K_L}`.
    pub gamma: f64,
    pub fit: FoldFit,
    /// `(grid value, validation hinge)`; `None` where KLDA could not be fitted.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Bandwidth scale for the grid: 1 or the inverse median train-fold energy.
pub fn gamma_scale_factor(metric: &MetricMatrix, folds: &Folds, scale: GammaScale) -> Result<f64> {
    match scale {
        GammaScale::Absolute => Ok(1.0),
        GammaScale::InverseMedian => {
            let med = median_offdiag(metric.values(), &folds.train);
            if !(med.is_finite() && med > 0.0) {
                return Err(Error::numerical(
                    "degenerate metric matrix: the median pairwise energy is zero (are the images identical?)",
                    None,
                ));
            }
            Ok(1.0 / med)
        }
    }
}

/// Picks the grid `γ` with the lowest validation hinge loss (first one on ties).
pub fn select_gamma(metric: &MetricMatrix, labels: &[i8], folds: &Folds, cfg: &EmConfig) -> Result<GammaChoice> {
    let failed = metric.failed_pairs();
    if !failed.is_empty() {
        return Err(Error::RegistrationFailures { pairs: failed });
    }
    let factor = gamma_scale_factor(metric, folds, cfg.gamma_scale)?;
    let mut best: Option<(f64, f64, FoldFit)> = None;
    let mut scores = Vec::with_capacity(cfg.gamma_grid.len());
    let mut last_err = None;
    for &g in &cfg.gamma_grid {
        match fit_folds(metric, labels, folds, g * factor, cfg.ridge) {
            Ok(fit) => {
                scores.push((g, Some(fit.val_hinge)));
                if best.as_ref().is_none_or(|b| fit.val_hinge < b.2.val_hinge) {
                    best = Some((g, g * factor, fit));
                }
            }
            Err(e) => {
                log::warn!("gamma {g:.3e} skipped: {e}");
                scores.push((g, None));
                last_err = Some(e);
            }
        }
    }
    let (gamma_rel, gamma, fit) = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::numerical("no gamma could be evaluated", None))
    })?;
    Ok(GammaChoice {
        gamma_rel,
        gamma,
        fit,
        scores,
    })
}

/// Everything the M-step needs from one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    /// Symmetrized energies of the whole training sample, with moments.
    pub metric: MetricMatrix,
    pub choice: GammaChoice,
    pub registrations: usize,
}

/// Registers every ordered pair of `images` at `α` and runs the `γ` search.
pub fn e_step(
    images: &[ScalarImage],
    labels: &[i8],
    folds: &Folds,
    alpha: f64,
    cfg: &EmConfig,
    reg: &RegistrationConfig,
    pairwise: &PairwiseOptions,
) -> Result<EStep> {
    if images.len() != labels.len() {
        return Err(Error::input("images and labels differ in length"));
    }
    let params = cfg.params(alpha)?;
    let op = build_operator(*images[0].grid(), params)?;
    let pairs = register_pairwise(images, &op, reg, pairwise)?;
    let n = images.len();
    let failed = pairs.metric.failed_pairs();
    if !failed.is_empty() {
        return Err(Error::RegistrationFailures { pairs: failed });
    }
    // energies are re-derived from the averaged moments so a checkpoint reproduces them exactly
    let metric = symmetrize(&pairs.metric).at_params(&params);
    let choice = select_gamma(&metric, labels, folds, cfg)?;
    Ok(EStep {
        metric,
        choice,
        registrations: n * (n - 1),
    })
}

/// Validation hinge loss of a train-fold KLDA as a function of `α` at frozen velocities.
///
/// The bandwidth is `gamma_rel` times the [`GammaScale`] factor of the metric at the
/// trial `α`, the same rule the E-step search uses.
pub struct FrozenObjective<'a> {
    pub metric: &'a MetricMatrix,
    pub labels: &'a [i8],
    pub folds: &'a Folds,
    pub gamma_rel: f64,
    pub gamma_scale: GammaScale,
    pub beta: f64,
    pub ridge: Ridge,
}

impl FrozenObjective<'_> {
    fn metric_at(&self, alpha: f64) -> Result<(MetricMatrix, OperatorParams, f64)> {
        let params = OperatorParams::new(alpha, self.beta)?;
        let m = self.metric.at_params(&params);
        let gamma = self.gamma_rel * gamma_scale_factor(&m, self.folds, self.gamma_scale)?;
        Ok((m, params, gamma))
    }

    pub fn loss(&self, alpha: f64) -> Result<f64> {
        let (m, _, gamma) = self.metric_at(alpha)?;
        Ok(fit_folds(&m, self.labels, self.folds, gamma, self.ridge)?.val_hinge)
    }

    /// `(loss, dloss/dα)`.
    pub fn loss_and_grad(&self, alpha: f64) -> Result<(f64, f64)> {
        let (m, params, gamma) = self.metric_at(alpha)?;
        let fit = fit_folds(&m, self.labels, self.folds, gamma, self.ridge)?;
        let kernel = to_kernel(&m, gamma)?;
        let mut dm = m.dalpha(&params);
        if self.gamma_scale == GammaScale::InverseMedian {
            // γ·K_L = γ_rel·K_L/med, so d(K_L/med) = (dK_L − K_L·dmed/med)/med
            let (med, dmed) = median_offdiag_with_grad(m.values(), &dm, &self.folds.train);
            let r = dmed / med;
            dm.zip_apply(m.values(), |d, v| *d -= r * v);
        }
        let dk = kernel_dalpha(&m, &kernel, &dm)?;
        let (tr, va) = (&self.folds.train, &self.folds.val);
        let sample = LabeledSample::new(pick(self.labels, tr))?;
        let val_labels = pick(self.labels, va);
        let columns = kernel.block(tr, va);
        let dcolumns = dk.block(tr, va);
        let batch = EvalBatch {
            columns: &columns,
            dcolumns: &dcolumns,
            labels: &val_labels,
        };
        let g = hinge_grad_alpha(&fit.model, &sample, &dk.block(tr, tr), &batch)?;
        Ok((fit.val_hinge, g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutcome {
    pub alpha: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Loss at the starting `α` followed by the loss after every accepted step.
    pub losses: Vec<f64>,
}

fn project(alpha: f64, bounds: [f64; 2]) -> f64 {
    alpha.clamp(bounds[0], bounds[1])
}

/// Projected gradient descent on `α` with halving backtracking; every accepted
/// step strictly lowers the frozen-velocity loss.
pub fn m_step(objective: &FrozenObjective<'_>, alpha: f64, cfg: &EmConfig) -> Result<MStepOutcome> {
    let [lo, hi] = cfg.alpha_bounds;
    let mut alpha = project(alpha, cfg.alpha_bounds);
    let r = cfg.mstep_max_ratio;
    let bounds = [lo.max(alpha / r), hi.min(alpha * r)];
    let (mut loss, mut grad) = objective.loss_and_grad(alpha)?;
    let mut losses = vec![loss];
    let mut iterations = 0;
    while iterations < cfg.mstep_max_iters {
        if !grad.is_finite() {
            return Err(Error::numerical("non-finite hinge gradient", Some(iterations)));
        }
        if grad == 0.0 {
            break;
        }
        let mut t = cfg.mstep_step0 * alpha / grad.abs();
        let mut accepted = None;
        for _ in 0..40 {
            let trial = project(alpha - t * grad, bounds);
            if trial == alpha {
                break;
            }
            // a trial where the discriminant cannot be fitted is treated as a failed step
            if let Ok(l) = objective.loss(trial) {
                if l < loss - 1e-4 * grad * (alpha - trial) {
                    accepted = Some((trial, l));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            break;
        };
        let improvement = (loss - next_loss) / loss.max(f64::MIN_POSITIVE);
        alpha = next;
        loss = next_loss;
        losses.push(loss);
        iterations += 1;
        if improvement < cfg.loss_tol {
            break;
        }
        grad = objective.loss_and_grad(alpha)?.1;
    }
    Ok(MStepOutcome {
        alpha,
        iterations,
        losses,
    })
}

/// One EM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmRecord {
    /// 1-based.
    pub iteration: usize,
    /// `α` of the E-step registrations.
    pub alpha: f64,
    pub gamma_rel: f64,
    pub gamma: f64,
    pub train_hinge: f64,
    pub val_hinge: f64,
    pub train_auc: f64,
    pub val_auc: f64,
    /// Ordered pairs covered by the E-step (pairs restored from a pair checkpoint included).
    pub registrations: usize,
    pub mstep_iters: usize,
    /// `α` handed to the next E-step.
    pub alpha_next: f64,
    /// Frozen-velocity validation hinge at `alpha_next`.
    pub mstep_val_hinge: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmTrace {
    pub records: Vec<EmRecord>,
}

const TRACE_HEADER: &str = "iteration,alpha,gamma_rel,gamma,train_hinge,val_hinge,train_auc,val_auc,registrations,mstep_iters,alpha_next,mstep_val_hinge";

impl EmTrace {
    pub fn to_csv(&self) -> String {
        let f = io::format_f64;
        let mut out = format!("{TRACE_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                f(r.alpha),
                f(r.gamma_rel),
                f(r.gamma),
                f(r.train_hinge),
                f(r.val_hinge),
                f(r.train_auc),
                f(r.val_auc),
                r.registrations,
                r.mstep_iters,
                f(r.alpha_next),
                f(r.mstep_val_hinge),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<EmTrace> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(Error::format(path, "unexpected trace header"));
        }
        let bad = |line: usize, what: &str| Error::format(path, format!("line {line}: {what}"));
        let mut records = Vec::new();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 12 {
                return Err(bad(k + 2, "expected 12 columns"));
            }
            let u = |s: &str| s.parse::<usize>().map_err(|_| bad(k + 2, "bad integer"));
            let x = |s: &str| s.parse::<f64>().map_err(|_| bad(k + 2, "bad number"));
            records.push(EmRecord {
                iteration: u(c[0])?,
                alpha: x(c[1])?,
                gamma_rel: x(c[2])?,
                gamma: x(c[3])?,
                train_hinge: x(c[4])?,
                val_hinge: x(c[5])?,
                train_auc: x(c[6])?,
                val_auc: x(c[7])?,
                registrations: u(c[8])?,
                mstep_iters: u(c[9])?,
                alpha_next: x(c[10])?,
                mstep_val_hinge: x(c[11])?,
            });
        }
        Ok(EmTrace { records })
    }

    /// Index of the record chosen by `selection`: highest AUC, earliest on ties.
    pub fn best(&self, selection: Selection) -> Option<usize> {
        let key = |r: &EmRecord| match selection {
            Selection::Validation => r.val_auc,
            Selection::Training => r.train_auc,
        };
        (0..self.records.len()).fold(None, |best, k| match best {
            Some(b) if key(&self.records[b]) >= key(&self.records[k]) => Some(b),
            _ => Some(k),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub jobs: Jobs,
    /// Per-iteration checkpoints (and per-pair registration records) go here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `checkpoint_dir` if there is one.
    pub resume: bool,
}

/// Result of [`train`] or [`fit_fixed_alpha`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_rel: f64,
    /// 0-based index into `trace.records`.
    pub best_iteration: usize,
    pub trace: EmTrace,
    pub folds: Folds,
    /// Energies of the whole training sample at `alpha`.
    pub metric: MetricMatrix,
    /// KLDA refitted on the whole training sample at `(alpha, gamma)`.
    pub model: KldaModel,
}

/// A training error together with the iterations that completed before it.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub trace: EmTrace,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed EM iterations)", self.error, self.trace.records.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricDoc {
    schema_version: u32,
    alpha: f64,
    beta: f64,
    n: usize,
    moments: Vec<QuadraticMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointDoc {
    schema_version: u32,
    config: EmConfig,
    registration: RegistrationConfig,
    labels: Vec<i8>,
    folds: Folds,
    trace: EmTrace,
    /// File names, relative to the checkpoint directory.
    metric_files: Vec<String>,
    next_alpha: f64,
    stopped: bool,
}

const CHECKPOINT_FILE: &str = "em_checkpoint.json";

fn metric_name(iteration: usize) -> String {
    format!("metric_iter_{iteration:03}")
}

fn save_metric(dir: &Path, iteration: usize, alpha: f64, cfg: &EmConfig, metric: &MetricMatrix) -> Result<String> {
    let stem = dir.join(metric_name(iteration));
    io::write_matrix_csv(&stem.with_extension("csv"), metric.values())?;
    io::write_json(
        &stem.with_extension("json"),
        &MetricDoc {
            schema_version: SCHEMA_VERSION,
            alpha,
            beta: cfg.beta,
            n: metric.n(),
            moments: metric.all_moments().to_vec(),
        },
    )?;
    Ok(format!("{}.json", metric_name(iteration)))
}

fn load_metric(path: &Path) -> Result<MetricMatrix> {
    let doc: MetricDoc = io::read_json(path)?;
    MetricMatrix::from_moments(doc.n, doc.moments, &OperatorParams::new(doc.alpha, doc.beta)?)
}

/// Checkpoints written by one configuration may only resume the same configuration;
/// `em_max_iters` alone may differ.
fn resumable(doc: &CheckpointDoc, cfg: &EmConfig, reg: &RegistrationConfig, labels: &[i8]) -> Result<()> {
    let mut a = doc.config.clone();
    a.em_max_iters = cfg.em_max_iters;
    if a != *cfg || doc.registration != *reg || doc.labels != labels {
        return Err(Error::input(
            "checkpoint was written with a different configuration or sample; use a fresh checkpoint directory",
        ));
    }
    Ok(())
}

fn refit(metric: &MetricMatrix, labels: &[i8], gamma: f64, ridge: Ridge) -> Result<KldaModel> {
    klda::fit(&to_kernel(metric, gamma)?, &LabeledSample::new(labels.to_vec())?, ridge)
}

struct EmState {
    trace: EmTrace,
    metrics: Vec<MetricMatrix>,
    metric_files: Vec<String>,
    alpha: f64,
    stopped: bool,
}

/// Alternates E- and M-steps, then refits the best iteration on the whole sample.
pub fn train(
    images: &[ScalarImage],
    labels: &[i8],
    cfg: &EmConfig,
    reg: &RegistrationConfig,
    opts: &TrainOptions,
    on_iter: &mut dyn FnMut(&EmRecord),
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let mut state = EmState {
        trace: EmTrace::default(),
        metrics: Vec::new(),
        metric_files: Vec::new(),
        alpha: cfg.alpha0,
        stopped: false,
    };
    match run_em(images, labels, cfg, reg, opts, on_iter, &mut state) {
        Ok(out) => Ok(out),
        Err(error) => Err(TrainFailure {
            error,
            trace: state.trace,
        }),
    }
}

fn run_em(
    images: &[ScalarImage],
    labels: &[i8],
    cfg: &EmConfig,
    reg: &RegistrationConfig,
    opts: &TrainOptions,
    on_iter: &mut dyn FnMut(&EmRecord),
    state: &mut EmState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    reg.validate()?;
    if images.len() != labels.len() {
        return Err(Error::input(format!("{} images but {} labels", images.len(), labels.len())));
    }
    let folds = split_folds(labels, cfg.seed)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CHECKPOINT_FILE);
        if opts.resume && path.exists() {
            let doc: CheckpointDoc = io::read_json(&path)?;
            resumable(&doc, cfg, reg, labels)?;
            for name in &doc.metric_files {
                state.metrics.push(load_metric(&dir.join(name))?);
            }
            state.trace = doc.trace;
            state.metric_files = doc.metric_files;
            state.alpha = doc.next_alpha;
            state.stopped = doc.stopped;
            log::info!("resuming after {} EM iterations at alpha {:.6e}", state.trace.records.len(), state.alpha);
        }
    }

    while !state.stopped && state.trace.records.len() < cfg.em_max_iters {
        let iteration = state.trace.records.len() + 1;
        let pairwise = PairwiseOptions {
            jobs: opts.jobs,
            checkpoint_dir: opts.checkpoint_dir.as_ref().map(|d| d.join(format!("pairs_iter_{iteration:03}"))),
            ..Default::default()
        };
        let alpha = state.alpha;
        let es = e_step(images, labels, &folds, alpha, cfg, reg, &pairwise)?;
        let objective = FrozenObjective {
            metric: &es.metric,
            labels,
            folds: &folds,
            gamma_rel: es.choice.gamma_rel,
            gamma_scale: cfg.gamma_scale,
            beta: cfg.beta,
            ridge: cfg.ridge,
        };
        let ms = m_step(&objective, alpha, cfg)?;
        let record = EmRecord {
            iteration,
            alpha,
            gamma_rel: es.choice.gamma_rel,
            gamma: es.choice.gamma,
            train_hinge: es.choice.fit.train_hinge,
            val_hinge: es.choice.fit.val_hinge,
            train_auc: es.choice.fit.train_auc,
            val_auc: es.choice.fit.val_auc,
            registrations: es.registrations,
            mstep_iters: ms.iterations,
            alpha_next: ms.alpha,
            mstep_val_hinge: *ms.losses.last().unwrap_or(&es.choice.fit.val_hinge),
        };
        log::info!(
            "EM {iteration}: alpha {:.4e} -> {:.4e}, gamma {:.3e}, val hinge {:.4}, val AUC {:.4}",
            record.alpha,
            record.alpha_next,
            record.gamma,
            record.val_hinge,
            record.val_auc
        );
        state.stopped = (ms.alpha - alpha).abs() / alpha < cfg.alpha_tol;
        state.alpha = ms.alpha;
        if let Some(dir) = &opts.checkpoint_dir {
            state.metric_files.push(save_metric(dir, iteration, alpha, cfg, &es.metric)?);
        }
        state.metrics.push(es.metric);
        state.trace.records.push(record);
        if let Some(dir) = &opts.checkpoint_dir {
            state.trace.write_csv(&dir.join("em_trace.csv"))?;
            io::write_json(
                &dir.join(CHECKPOINT_FILE),
                &CheckpointDoc {
                    schema_version: SCHEMA_VERSION,
                    config: cfg.clone(),
                    registration: reg.clone(),
                    labels: labels.to_vec(),
                    folds: folds.clone(),
                    trace: state.trace.clone(),
                    metric_files: state.metric_files.clone(),
                    next_alpha: state.alpha,
                    stopped: state.stopped,
                },
            )?;
        }
        on_iter(state.trace.records.last().expect("record just pushed"));
    }

    let best = state
        .trace
        .best(cfg.selection)
        .ok_or_else(|| Error::input("no EM iterations were run"))?;
    let rec = &state.trace.records[best];
    let metric = state.metrics[best].clone();
    let model = refit(&metric, labels, rec.gamma, cfg.ridge)?;
    Ok(TrainOutcome {
        alpha: rec.alpha,
        gamma: rec.gamma,
        gamma_rel: rec.gamma_rel,
        best_iteration: best,
        trace: state.trace.clone(),
        folds,
        metric,
        model,
    })
}

/// A single E-step at a given `α` (no descent), refitted on the whole sample.
pub fn fit_fixed_alpha(
    images: &[ScalarImage],
    labels: &[i8],
    alpha: f64,
    cfg: &EmConfig,
    reg: &RegistrationConfig,
    jobs: Jobs,
) -> Result<TrainOutcome> {
    let cfg = EmConfig {
        alpha0: alpha,
        ..cfg.clone()
    };
    cfg.validate()?;
    reg.validate()?;
    let folds = split_folds(labels, cfg.seed)?;
    let pairwise = PairwiseOptions {
        jobs,
        ..Default::default()
    };
    let es = e_step(images, labels, &folds, alpha, &cfg, reg, &pairwise)?;
    let c = &es.choice;
    let record = EmRecord {
        iteration: 1,
        alpha,
        gamma_rel: c.gamma_rel,
        gamma: c.gamma,
        train_hinge: c.fit.train_hinge,
        val_hinge: c.fit.val_hinge,
        train_auc: c.fit.train_auc,
        val_auc: c.fit.val_auc,
        registrations: es.registrations,
        mstep_iters: 0,
        alpha_next: alpha,
        mstep_val_hinge: c.fit.val_hinge,
    };
    let model = refit(&es.metric, labels, c.gamma, cfg.ridge)?;
    Ok(TrainOutcome {
        alpha,
        gamma: c.gamma,
        gamma_rel: c.gamma_rel,
        best_iteration: 0,
        trace: EmTrace { records: vec![record] },
        folds,
        metric: es.metric,
        model,
    })
}

/// Decision values of new images against a model fitted on `training`.
pub fn score_images(
    model: &KldaModel,
    training: &[ScalarImage],
    images: &[ScalarImage],
    params: OperatorParams,
    reg: &RegistrationConfig,
    direction: RowDirection,
    jobs: Jobs,
) -> Result<Vec<f64>> {
    if training.len() != model.n() {
        return Err(Error::input(format!(
            "model was fitted on {} images, {} training images supplied",
            model.n(),
            training.len()
        )));
    }
    let first = training.first().ok_or_else(|| Error::input("no training images"))?;
    let op = build_operator(*first.grid(), params)?;
    images
        .iter()
        .enumerate()
        .map(|(k, img)| {
            let col = kernel_row(img, training, &op, reg, model.gamma, direction, jobs)?;
            log::debug!("scored image {}/{} ({} registrations)", k + 1, images.len(), col.registrations);
            klda::decision(model, col.values()?)
        })
        .collect()
}

/// Everything needed to rebuild a fitted classifier exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema_version: u32,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ridge: Ridge,
    pub labels: Vec<i8>,
    /// Training energies, one row per training image.
    pub metric: Vec<Vec<f64>>,
}

impl SavedModel {
    pub fn from_outcome(out: &TrainOutcome, beta: f64, labels: &[i8]) -> Self {
        let v = out.metric.values();
        SavedModel {
            schema_version: SCHEMA_VERSION,
            alpha: out.alpha,
            beta,
            gamma: out.gamma,
            ridge: out.model.ridge,
            labels: labels.to_vec(),
            metric: (0..v.nrows()).map(|i| v.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn params(&self) -> Result<OperatorParams> {
        OperatorParams::new(self.alpha, self.beta)
    }

    /// Refits the discriminant; identical to the model it was saved from.
    pub fn klda(&self) -> Result<KldaModel> {
        let n = self.metric.len();
        if self.labels.len() != n || self.metric.iter().any(|r| r.len() != n) {
            return Err(Error::input("saved model metric is not square or does not match the labels"));
        }
        let values = DMatrix::from_fn(n, n, |i, j| self.metric[i][j]);
        refit(&MetricMatrix::from_values(values)?, &self.labels, self.gamma, self.ridge)
    }
}

//! Evaluation and baselines: ROC AUC, histogram mutual information and the
//! α it selects, a logistic regression on binarized masks, and class-mean
//! momentum differences.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffop::{build_operator, OperatorParams, SpectralOperator};
use crate::error::{Error, Result};
use crate::grid::{check_same_grid, warp, GridSpec, ScalarImage, VectorField};
use crate::io::{self, SCHEMA_VERSION};
use crate::parallel::{map_ordered, Jobs};
use crate::registration::{register, RegistrationConfig, RegistrationResult};

/// ROC curve and its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub curve: Vec<(f64, f64)>,
}

fn check_binary(labels: &[i8]) -> Result<(usize, usize)> {
    let mut p = 0;
    let mut n = 0;
    for &z in labels {
        match z {
            1 => p += 1,
            -1 => n += 1,
            other => return Err(Error::input(format!("labels must be +1 or -1, got {other}"))),
        }
    }
    if p == 0 || n == 0 {
        return Err(Error::input("ROC needs both classes"));
    }
    Ok((p, n))
}

/// Threshold sweep from the highest score down; tied scores move the curve
/// diagonally, which counts a tied positive–negative pair as one half.
pub fn roc_auc(scores: &[f64], labels: &[i8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::input("scores must be finite"));
    }
    let (pos, neg) = check_binary(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // 2·(concordant pairs) + (tied pairs), kept in integers so the area is exact
    let mut twice_area: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = vec![(0.0, 0.0)];
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        let (mut gp, mut gn) = (0usize, 0usize);
        while end < order.len() && scores[order[end]] == s {
            if labels[order[end]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            end += 1;
        }
        twice_area += (gn as u128) * (2 * tp as u128 + gp as u128);
        tp += gp;
        fp += gn;
        curve.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        start = end;
    }
    let auc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocResult { auc, curve })
}

/// Trapezoidal area under a curve of `(x, y)` points.
pub fn trapezoid_area(curve: &[(f64, f64)]) -> f64 {
    curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5).sum()
}

pub fn write_roc_csv(path: &Path, roc: &RocResult) -> Result<()> {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in &roc.curve {
        out.push_str(&format!("{},{}\n", io::format_f64(*f), io::format_f64(*t)));
    }
    io::write_atomic(path, out.as_bytes())
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

fn entropy_bits(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy (bits) of the intensity histogram, `bins` equal bins over [0, 1].
pub fn entropy(image: &ScalarImage, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::input("bins must be >= 1"));
    }
    let mut counts = vec![0u64; bins];
    for &v in image.data() {
        counts[bin_of(v, bins)] += 1;
    }
    Ok(entropy_bits(&counts, image.data().len() as f64))
}

/// `H(A) + H(B) − H(A, B)` in bits from the joint histogram of co-located pixels.
pub fn mutual_information(a: &ScalarImage, b: &ScalarImage, bins: usize) -> Result<f64> {
    check_same_grid(a.grid(), b.grid())?;
    if bins == 0 {
        return Err(Error::input("bins must be >= 1"));
    }
    let mut joint = vec![0u64; bins * bins];
    let mut ma = vec![0u64; bins];
    let mut mb = vec![0u64; bins];
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (i, j) = (bin_of(x, bins), bin_of(y, bins));
        joint[i * bins + j] += 1;
        ma[i] += 1;
        mb[j] += 1;
    }
    let total = a.data().len() as f64;
    let mi = entropy_bits(&ma, total) + entropy_bits(&mb, total) - entropy_bits(&joint, total);
    Ok(mi.max(0.0))
}

/// Pair-mean MI after registration, per candidate α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiSelection {
    pub alpha: f64,
    /// `(α, mean MI)`; `None` where a registration failed and the α was skipped.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Picks the α whose registrations maximize the mean `MI(I0 ∘ φ, I1)` over `pairs`.
pub fn mi_select_alpha(
    images: &[ScalarImage],
    pairs: &[(usize, usize)],
    alpha_grid: &[f64],
    cfg: &RegistrationConfig,
    bins: usize,
    jobs: Jobs,
) -> Result<MiSelection> {
    if pairs.is_empty() || alpha_grid.is_empty() {
        return Err(Error::input("MI selection needs at least one pair and one alpha"));
    }
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= images.len() || *j >= images.len()) {
        return Err(Error::input(format!("pair ({i}, {j}) is out of range")));
    }
    let grid = *images[0].grid();
    let mut scores = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let op = build_operator(grid, OperatorParams::with_alpha(alpha)?)?;
        let mi = map_ordered(jobs, pairs, |&(i, j)| -> Result<f64> {
            let r = register(&images[i], &images[j], &op, cfg)?;
            let moved = warp(&images[i], &r.forward_map)?;
            mutual_information(&moved, &images[j], bins)
        });
        match mi.into_iter().collect::<Result<Vec<f64>>>() {
            Ok(v) => {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                log::info!("alpha {alpha:.4e}: mean MI {mean:.6} bits");
                scores.push((alpha, Some(mean)));
            }
            Err(e) => {
                log::warn!("alpha {alpha:.4e} skipped: {e}");
                scores.push((alpha, None));
            }
        }
    }
    // first maximum wins on ties
    let best = scores
        .iter()
        .filter_map(|&(a, m)| m.map(|m| (a, m)))
        .fold(None, |best: Option<(f64, f64)>, (a, m)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((a, m)),
        })
        .ok_or_else(|| Error::numerical("every alpha in the MI grid failed to register", None))?;
    Ok(MiSelection { alpha: best.0, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Penalty `l2/(2m)·‖w‖²` on top of the mean log-loss.
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    /// Masks are `intensity > threshold`.
    pub threshold: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1.0,
            max_iters: 500,
            grad_tol: 1e-6,
            threshold: 0.5,
            folds: 5,
            seed: 0,
        }
    }
}

/// Linear model on flattened binary masks.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

pub fn binarize(image: &ScalarImage, threshold: f64) -> Vec<f64> {
    image.data().iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect()
}

fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Gradient descent with step `1/Lip` on the regularized mean log-loss.
pub fn fit_logistic(x: &[Vec<f64>], labels: &[i8], cfg: &LogisticConfig) -> Result<LogisticModel> {
    check_binary(labels)?;
    if x.len() != labels.len() {
        return Err(Error::input("feature rows and labels differ in length"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::input("feature rows differ in length"));
    }
    let m = x.len() as f64;
    let lam = cfg.l2 / m;
    // Lipschitz bound of the gradient: ‖[X 1]‖_F² / (4m) + λ
    let frob: f64 = x.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0).sum();
    let step = 1.0 / (frob / (4.0 * m) + lam);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        gw.iter_mut().zip(&w).for_each(|(g, w)| *g = lam * w);
        let mut gb = 0.0;
        for (row, &z) in x.iter().zip(labels) {
            let z = z as f64;
            let margin = z * (b + row.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>());
            // d/dt log(1 + e^{−zt}) = −z σ(−zt)
            let c = -z * sigmoid(-margin) / m;
            gb += c;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += c * v;
            }
        }
        let gnorm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if gnorm < cfg.grad_tol {
            converged = true;
            break;
        }
        for (w, g) in w.iter_mut().zip(&gw) {
            *w -= step * g;
        }
        b -= step * gb;
        iterations += 1;
    }
    if !converged {
        log::debug!("logistic regression stopped after {} iterations without meeting grad_tol", cfg.max_iters);
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        converged,
        iterations,
    })
}

/// Regularized mean log-loss, for diagnostics and tests.
pub fn logistic_objective(model: &LogisticModel, x: &[Vec<f64>], labels: &[i8], l2: f64) -> f64 {
    let m = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(labels)
        .map(|(r, &z)| log1p_exp(-(z as f64) * model.score(r)))
        .sum::<f64>()
        / m;
    loss + 0.5 * l2 / m * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Cross-validated AUC of the mask baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticReport {
    pub mean_auc: f64,
    pub std_auc: f64,
    pub fold_aucs: Vec<f64>,
    /// Every fold met the gradient tolerance.
    pub converged: bool,
}

/// Stratified, seeded fold assignment: entry `i` is the fold of sample `i`.
pub fn stratified_folds(labels: &[i8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::input("need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; labels.len()];
    for z in [1i8, -1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == z).collect();
        if idx.len() < folds {
            return Err(Error::input(format!(
                "class {z} has {} samples, fewer than {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assign[i] = k % folds;
        }
    }
    Ok(assign)
}

/// `count` distinct ordered pairs `(i, j)`, `i ≠ j`, drawn without replacement from
/// `0..n` (all of them if `count ≥ n(n−1)`), in draw order.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::input("need at least 2 images to form pairs"));
    }
    let mut all: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (picked, _) = all.partial_shuffle(&mut rng, count);
    Ok(picked.to_vec())
}

/// Seeded per-class split: `train_per_class` of each class go to the first list,
/// the rest to the second. Both lists are sorted.
pub fn stratified_split(labels: &[i8], train_per_class: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_binary(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for z in [1i8, -1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == z).collect();
        if idx.len() < train_per_class {
            return Err(Error::input(format!(
                "class {z} has {} images, fewer than the {train_per_class} requested for training",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..train_per_class]);
        test.extend_from_slice(&idx[train_per_class..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// K-fold cross-validated AUC of logistic regression on thresholded masks.
pub fn logistic_baseline(images: &[ScalarImage], labels: &[i8], cfg: &LogisticConfig) -> Result<LogisticReport> {
    if images.len() != labels.len() {
        return Err(Error::input("images and labels differ in length"));
    }
    let x: Vec<Vec<f64>> = images.iter().map(|im| binarize(im, cfg.threshold)).collect();
    let folds = stratified_folds(labels, cfg.folds, cfg.seed)?;
    let mut aucs = Vec::with_capacity(cfg.folds);
    let mut converged = true;
    for f in 0..cfg.folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| folds[i] != f);
        let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let zt: Vec<i8> = train.iter().map(|&i| labels[i]).collect();
        let model = fit_logistic(&xt, &zt, cfg)?;
        converged &= model.converged;
        let scores: Vec<f64> = test.iter().map(|&i| model.score(&x[i])).collect();
        let zs: Vec<i8> = test.iter().map(|&i| labels[i]).collect();
        aucs.push(roc_auc(&scores, &zs)?.auc);
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / aucs.len() as f64;
    Ok(LogisticReport {
        mean_auc: mean,
        std_auc: var.sqrt(),
        fold_aucs: aucs,
        converged,
    })
}

/// Pixelwise mean of a set of images.
pub fn mean_image(images: &[ScalarImage]) -> Result<ScalarImage> {
    let first = images.first().ok_or_else(|| Error::input("mean of no images"))?;
    let mut acc = vec![0.0; first.grid().len()];
    for img in images {
        check_same_grid(first.grid(), img.grid())?;
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    ScalarImage::new(*first.grid(), acc.into_iter().map(|a| a / n).collect())
}

/// `m = L v_0` projected on the unit intensity-gradient direction of `reference`
/// (zero where the gradient vanishes).
pub fn scalar_momentum(
    result: &RegistrationResult,
    reference: &ScalarImage,
    op: &SpectralOperator,
) -> Result<ScalarImage> {
    let v0 = result
        .velocity
        .steps()
        .first()
        .ok_or_else(|| Error::input("registration has no velocity steps"))?;
    let m: VectorField = op.apply_l(v0)?;
    let g = reference.gradient();
    let data = m
        .vx()
        .iter()
        .zip(m.vy())
        .zip(g.vx().iter().zip(g.vy()))
        .map(|((mx, my), (gx, gy))| {
            let norm = (gx * gx + gy * gy).sqrt();
            if norm > 1e-12 {
                (mx * gx + my * gy) / norm
            } else {
                0.0
            }
        })
        .collect();
    ScalarImage::new(*reference.grid(), data)
}

/// Registers `reference` onto every subject and returns the scalar momenta.
pub fn subject_momenta(
    reference: &ScalarImage,
    subjects: &[ScalarImage],
    op: &SpectralOperator,
    cfg: &RegistrationConfig,
    jobs: Jobs,
) -> Result<Vec<ScalarImage>> {
    map_ordered(jobs, subjects, |s| {
        let r = register(reference, s, op, cfg)?;
        scalar_momentum(&r, reference, op)
    })
    .into_iter()
    .collect()
}

/// Per-point `mean(class +1) − mean(class −1)` of scalar momenta.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumMap {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

pub fn momentum_map(momenta: &[ScalarImage], labels: &[i8]) -> Result<MomentumMap> {
    if momenta.len() != labels.len() {
        return Err(Error::input("momenta and labels differ in length"));
    }
    check_binary(labels)?;
    let pick = |z: i8| -> Vec<ScalarImage> {
        momenta
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == z)
            .map(|(m, _)| m.clone())
            .collect()
    };
    let pos = mean_image(&pick(1))?;
    let neg = mean_image(&pick(-1))?;
    check_same_grid(pos.grid(), neg.grid())?;
    let values = pos.data().iter().zip(neg.data()).map(|(a, b)| a - b).collect();
    Ok(MomentumMap {
        grid: *pos.grid(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeatSidecar {
    schema_version: u32,
    min: f64,
    max: f64,
}

/// Writes `<stem>.csv` (one grid row per line), `<stem>.pgm` (linear rescale to
/// the full grey range) and `<stem>.json` holding the rescale bounds.
pub fn write_momentum_map(stem: &Path, map: &MomentumMap) -> Result<()> {
    let g = map.grid;
    let mut csv = String::new();
    for iy in 0..g.ny {
        let row: Vec<String> = (0..g.nx).map(|ix| io::format_f64(map.values[iy * g.nx + ix])).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    io::write_atomic(&stem.with_extension("csv"), csv.as_bytes())?;
    let (lo, hi) = map
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let heat = ScalarImage::new(
        g,
        map.values
            .iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect(),
    )?;
    io::write_pgm(&stem.with_extension("pgm"), &heat, io::PgmDepth::Sixteen)?;
    io::write_json(
        &stem.with_extension("json"),
        &HeatSidecar {
            schema_version: SCHEMA_VERSION,
            min: lo,
            max: hi,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auc_twice(scores: &[f64], labels: &[i8]) -> (u128, u128) {
        let mut num = 0u128;
        let mut den = 0u128;
        for (i, &zi) in labels.iter().enumerate() {
            for (j, &zj) in labels.iter().enumerate() {
                if zi == 1 && zj == -1 {
                    den += 2;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        (num, den)
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[1, -1]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[1, -1]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[0.5; 6], &[1, -1, 1, -1, 1, 1]).unwrap().auc, 0.5);
        assert!(roc_auc(&[1.0, 2.0], &[1, 1]).is_err());
        assert!(roc_auc(&[1.0], &[1, -1]).is_err());
        assert!(roc_auc(&[f64::NAN, 1.0], &[1, -1]).is_err());
    }

    #[test]
    fn auc_matches_pair_count_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let labels: Vec<i8> = loop {
                let l: Vec<i8> = (0..20).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
                if l.contains(&1) && l.contains(&-1) {
                    break l;
                }
            };
            // coarse scores so ties occur
            let scores: Vec<f64> = (0..20).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
            let (num, den) = brute_auc_twice(&scores, &labels);
            assert_eq!(roc_auc(&scores, &labels).unwrap().auc, num as f64 / den as f64);
        }
    }

    proptest! {
        #[test]
        fn curve_is_monotone_and_area_matches(
            raw in prop::collection::vec((0u8..10, any::<bool>()), 2..40)
        ) {
            let mut labels: Vec<i8> = raw.iter().map(|(_, b)| if *b { 1 } else { -1 }).collect();
            labels[0] = 1;
            labels[1] = -1;
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
            let roc = roc_auc(&scores, &labels).unwrap();
            prop_assert!(roc.curve.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            prop_assert_eq!(*roc.curve.last().unwrap(), (1.0, 1.0));
            prop_assert!((trapezoid_area(&roc.curve) - roc.auc).abs() < 1e-12);
        }

        #[test]
        fn negated_scores_complement_without_ties(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<i8> = (0..15).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
            let scores: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = roc_auc(&scores, &labels).unwrap().auc;
            let b = roc_auc(&neg, &labels).unwrap().auc;
            prop_assert!((a + b - 1.0).abs() < 1e-15);
        }
    }

    fn noise_image(grid: GridSpec, rng: &mut impl Rng) -> ScalarImage {
        ScalarImage::new(grid, (0..grid.len()).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn mi_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GridSpec::new(32, 32).unwrap();
        let a = noise_image(g, &mut rng);
        let b = noise_image(g, &mut rng);
        let h = entropy(&a, 8).unwrap();
        assert!((mutual_information(&a, &a, 8).unwrap() - h).abs() < 1e-12);
        let ab = mutual_information(&a, &b, 8).unwrap();
        assert!((ab - mutual_information(&b, &a, 8).unwrap()).abs() < 1e-12);
        assert!(ab >= 0.0);
        // independent noise: the plug-in bias is about (B−1)²/(2N ln 2) bits
        let big = GridSpec::new(128, 128).unwrap();
        let x = noise_image(big, &mut rng);
        let y = noise_image(big, &mut rng);
        assert!(mutual_information(&x, &y, 4).unwrap() < 0.05);
        let c = ScalarImage::constant(g, 0.3);
        assert_eq!(entropy(&c, 32).unwrap(), 0.0);
        assert!(mutual_information(&c, &a, 32).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mi_selection_single_alpha_and_identical_pair() {
        let g = GridSpec::new(16, 16).unwrap();
        let img = ScalarImage::from_fn(g, |x, y| (-((x - 8.0).powi(2) + (y - 8.0).powi(2)) / 10.0).exp()).unwrap();
        let sel = mi_select_alpha(
            &[img.clone(), img.clone()],
            &[(0, 1)],
            &[2.0],
            &RegistrationConfig::default(),
            32,
            Jobs::serial(),
        )
        .unwrap();
        assert_eq!(sel.alpha, 2.0);
        let h = entropy(&img, 32).unwrap();
        assert!((sel.scores[0].1.unwrap() - h).abs() < 1e-12);
        assert!(mi_select_alpha(&[img], &[], &[1.0], &RegistrationConfig::default(), 32, Jobs::serial()).is_err());
    }

    #[test]
    fn logistic_separates_one_pixel_difference() {
        let g = GridSpec::new(4, 4).unwrap();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..6 {
            let mut d = vec![0.0; 16];
            d[3] = 1.0;
            if k % 2 == 0 {
                d[10] = 1.0;
            }
            images.push(ScalarImage::new(g, d).unwrap());
            labels.push(if k % 2 == 0 { 1 } else { -1 });
        }
        let x: Vec<Vec<f64>> = images.iter().map(|im| binarize(im, 0.5)).collect();
        let model = fit_logistic(&x, &labels, &LogisticConfig::default()).unwrap();
        let scores: Vec<f64> = x.iter().map(|r| model.score(r)).collect();
        assert_eq!(roc_auc(&scores, &labels).unwrap().auc, 1.0);
        // more iterations never increase the objective
        let short = fit_logistic(&x, &labels, &LogisticConfig { max_iters: 5, ..Default::default() }).unwrap();
        assert!(logistic_objective(&model, &x, &labels, 1.0) <= logistic_objective(&short, &x, &labels, 1.0));
    }

    #[test]
    fn logistic_on_shuffled_labels_is_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = GridSpec::new(8, 8).unwrap();
        let images: Vec<ScalarImage> = (0..60).map(|_| noise_image(g, &mut rng)).collect();
        let mut labels: Vec<i8> = (0..60).map(|i| if i < 30 { 1 } else { -1 }).collect();
        labels.shuffle(&mut rng);
        let rep = logistic_baseline(&images, &labels, &LogisticConfig::default()).unwrap();
        assert_eq!(rep.fold_aucs.len(), 5);
        assert!((rep.mean_auc - 0.5).abs() <= 0.15, "{}", rep.mean_auc);
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let labels: Vec<i8> = (0..23).map(|i| if i < 10 { 1 } else { -1 }).collect();
        let a = stratified_folds(&labels, 5, 4).unwrap();
        assert_eq!(a, stratified_folds(&labels, 5, 4).unwrap());
        for f in 0..5 {
            let pos = (0..23).filter(|&i| a[i] == f && labels[i] == 1).count();
            assert_eq!(pos, 2);
        }
        assert!(stratified_folds(&labels[..3], 5, 0).is_err());
    }

    #[test]
    fn pair_sampling() {
        let p = sample_pairs(5, 7, 1).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|(i, j)| i != j && *i < 5 && *j < 5));
        let mut q = p.clone();
        q.sort_unstable();
        q.dedup();
        assert_eq!(q.len(), 7);
        assert_eq!(p, sample_pairs(5, 7, 1).unwrap());
        assert_eq!(sample_pairs(3, 100, 0).unwrap().len(), 6);
        assert!(sample_pairs(1, 1, 0).is_err());
    }

    #[test]
    fn split_counts_and_determinism() {
        let labels: Vec<i8> = (0..200).map(|i| if i < 100 { 1 } else { -1 }).collect();
        let (tr, te) = stratified_split(&labels, 50, 9).unwrap();
        assert_eq!(tr.len(), 100);
        assert_eq!(te.len(), 100);
        assert_eq!(tr.iter().filter(|&&i| labels[i] == 1).count(), 50);
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!((tr.clone(), te), stratified_split(&labels, 50, 9).unwrap());
        assert_ne!(tr, stratified_split(&labels, 50, 10).unwrap().0);
        assert!(stratified_split(&labels, 101, 0).is_err());
    }

    #[test]
    fn momentum_map_symmetries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GridSpec::new(8, 8).unwrap();
        let m: Vec<ScalarImage> = (0..6).map(|_| noise_image(g, &mut rng)).collect();
        let labels = [1, -1, 1, -1, 1, -1];
        let map = momentum_map(&m, &labels).unwrap();
        let swapped: Vec<i8> = labels.iter().map(|z| -z).collect();
        let neg = momentum_map(&m, &swapped).unwrap();
        assert!(map.values.iter().zip(&neg.values).all(|(a, b)| *a == -*b));
        let same: Vec<ScalarImage> = (0..4).map(|_| m[0].clone()).collect();
        let zero = momentum_map(&same, &[1, -1, 1, -1]).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        assert!(momentum_map(&m, &[1, 1, 1, 1, 1, 1]).is_err());
    }

    #[test]
    fn momentum_concentrates_at_a_local_protrusion() {
        // disc versus disc with a bump on its right side
        let g = GridSpec::new(32, 32).unwrap();
        let disc = |x: f64, y: f64, bump: f64| {
            let r = ((x - 16.0).powi(2) + (y - 16.0).powi(2)).sqrt();
            let b = bump * (-((x - 24.0).powi(2) + (y - 16.0).powi(2)) / 6.0).exp();
            1.0 / (1.0 + ((r - 6.0 - 3.0 * b) * 2.0).exp())
        };
        let subjects: Vec<ScalarImage> = (0..4)
            .map(|k| ScalarImage::from_fn(g, |x, y| disc(x, y, if k % 2 == 0 { 1.0 } else { 0.0 })).unwrap())
            .collect();
        let labels = [1, -1, 1, -1];
        let reference = mean_image(&subjects).unwrap();
        let op = build_operator(g, OperatorParams::with_alpha(1.0).unwrap()).unwrap();
        let momenta = subject_momenta(&reference, &subjects, &op, &RegistrationConfig::default(), Jobs::serial()).unwrap();
        let map = momentum_map(&momenta, &labels).unwrap();
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| map.values[b].abs().total_cmp(&map.values[a].abs()));
        let top = &order[..g.len() / 10];
        let within = |cx: f64| {
            top.iter()
                .filter(|&&i| {
                    let (x, y) = ((i % 32) as f64, (i / 32) as f64);
                    (x - cx).powi(2) + (y - 16.0).powi(2) <= 8.0f64.powi(2)
                })
                .count()
        };
        // the bump side dominates its mirror image
        let (near, far) = (within(24.0), within(8.0));
        assert!(near >= 3 * far.max(1), "{near} near vs {far} far");
    }

    #[test]
    fn momentum_outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(4, 4).unwrap();
        let map = MomentumMap {
            grid: g,
            values: (0..16).map(|i| i as f64 - 5.0).collect(),
        };
        let stem = dir.path().join("mom");
        write_momentum_map(&stem, &map).unwrap();
        let heat = io::read_pgm(&stem.with_extension("pgm")).unwrap();
        assert_eq!(heat.get(0, 0), 0.0);
        assert_eq!(heat.get(3, 3), 1.0);
        let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side["min"], -5.0);
        assert_eq!(io::read_matrix_csv(&stem.with_extension("csv")).unwrap()[(3, 3)], 10.0);
    }
}

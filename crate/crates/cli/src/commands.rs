use std::collections::HashMap;
use std::path::{Path, PathBuf};

use lddmm_metric::eval::{
    self, fit_logistic, logistic_baseline, mean_image, mi_select_alpha, momentum_map, roc_auc, sample_pairs,
    stratified_split, subject_momenta, write_momentum_map, write_roc_csv, LogisticReport,
};
use lddmm_metric::io::{self, format_f64, SCHEMA_VERSION};
use lddmm_metric::kernel::RowDirection;
use lddmm_metric::klda::predict_label;
use lddmm_metric::metric_learning::{
    fit_fixed_alpha, score_images, train, SavedModel, Selection, TrainOptions, TrainOutcome,
};
use lddmm_metric::registration::identity_energy;
use lddmm_metric::synth::{self, generate};
use lddmm_metric::{
    build_operator, register, Error, Jobs, KldaModel, OperatorParams, RegistrationConfig, ScalarImage,
};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::CliError;

type CliResult<T> = Result<T, CliError>;

/// A labelled image on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub path: PathBuf,
    pub label: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub schema_version: u32,
    pub seed: u64,
    pub train: Vec<Entry>,
    pub test: Vec<Entry>,
}

/// `model.json`: enough to score new images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub model: SavedModel,
    pub training_images: Vec<PathBuf>,
}

/// `report.json` of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_rel: f64,
    /// 1-based EM iteration the model was taken from.
    pub best_iteration: usize,
    pub em_iterations: usize,
    pub val_auc: f64,
    pub train_images: usize,
    pub test_images: usize,
    pub test_auc: Option<f64>,
}

pub(crate) struct Loaded {
    pub train: Vec<Entry>,
    pub test: Vec<Entry>,
    pub train_images: Vec<ScalarImage>,
    pub test_images: Vec<ScalarImage>,
}

impl Loaded {
    fn train_labels(&self) -> Vec<i8> {
        self.train.iter().map(|e| e.label).collect()
    }

    fn test_labels(&self) -> Vec<i8> {
        self.test.iter().map(|e| e.label).collect()
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn read_images(entries: &[Entry]) -> CliResult<Vec<ScalarImage>> {
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !e.path.exists())
        .map(|e| e.path.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::input(format!("missing images: {}", missing.join(", "))).into());
    }
    Ok(entries.iter().map(|e| io::read_pgm(&e.path)).collect::<Result<Vec<_>, _>>()?)
}

/// Materializes the dataset (generated data is written to `out/data` and read
/// back, so every later command sees the same bytes) and splits it.
pub(crate) fn load_experiment(cfg: &ExperimentConfig, seed: u64, out: &Path, jobs: Jobs) -> CliResult<Loaded> {
    let labels_csv = match &cfg.dataset {
        DatasetSpec::Generate { shapes } => {
            let dir = out.join("data");
            let data = generate(shapes, jobs)?;
            synth::write_dataset(&dir, &data, shapes)?;
            dir.join("labels.csv")
        }
        DatasetSpec::Load { labels_csv } => labels_csv.clone(),
    };
    let (paths, data) = synth::read_dataset(&labels_csv)?;
    let (tr, te) = stratified_split(&data.labels, cfg.evaluation.train_per_class, seed)?;
    let entry = |i: usize| Entry {
        path: absolute(&paths[i]),
        label: data.labels[i],
    };
    Ok(Loaded {
        train: tr.iter().map(|&i| entry(i)).collect(),
        test: te.iter().map(|&i| entry(i)).collect(),
        train_images: tr.iter().map(|&i| data.images[i].clone()).collect(),
        test_images: te.iter().map(|&i| data.images[i].clone()).collect(),
    })
}

pub(crate) fn load_split(path: &Path) -> CliResult<(SplitFile, Loaded)> {
    let split: SplitFile = io::read_json(path)?;
    let loaded = Loaded {
        train_images: read_images(&split.train)?,
        test_images: read_images(&split.test)?,
        train: split.train.clone(),
        test: split.test.clone(),
    };
    Ok((split, loaded))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn write_scores(path: &Path, rows: &[(PathBuf, f64)]) -> CliResult<()> {
    let mut out = String::from("path,score,label\n");
    for (p, s) in rows {
        out.push_str(&format!("{},{},{}\n", p.display(), format_f64(*s), predict_label(*s)));
    }
    io::write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn read_scores(path: &Path) -> CliResult<Vec<(PathBuf, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.rsplitn(3, ',');
        let (_, score, p) = (cols.next(), cols.next(), cols.next());
        let (Some(score), Some(p)) = (score, p) else {
            return Err(Error::format(path, format!("line {}: expected path,score,label", k + 1)).into());
        };
        let s: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad score", k + 1)))?;
        rows.push((PathBuf::from(p.trim()), s));
    }
    Ok(rows)
}

fn score_split(
    model: &KldaModel,
    params: OperatorParams,
    loaded: &Loaded,
    cfg: &ExperimentConfig,
    jobs: Jobs,
) -> CliResult<Vec<f64>> {
    log::info!(
        "scoring {} test images against {} training images",
        loaded.test_images.len(),
        loaded.train_images.len()
    );
    Ok(score_images(
        model,
        &loaded.train_images,
        &loaded.test_images,
        params,
        &cfg.registration,
        cfg.evaluation.row_direction,
        jobs,
    )?)
}

/// Scores the test split, writes scores and ROC, returns the AUC.
fn evaluate_test(
    out: &Path,
    stem: &str,
    model: &KldaModel,
    params: OperatorParams,
    loaded: &Loaded,
    cfg: &ExperimentConfig,
    jobs: Jobs,
) -> CliResult<f64> {
    let scores = score_split(model, params, loaded, cfg, jobs)?;
    let rows: Vec<(PathBuf, f64)> = loaded.test.iter().map(|e| e.path.clone()).zip(scores.iter().copied()).collect();
    write_scores(&out.join(format!("{stem}_scores.csv")), &rows)?;
    let roc = roc_auc(&scores, &loaded.test_labels())?;
    write_roc_csv(&out.join(format!("{stem}_roc.csv")), &roc)?;
    Ok(roc.auc)
}

pub struct GenerateArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_per_class: Option<usize>,
    pub jobs: Jobs,
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    if let (Some(n), DatasetSpec::Generate { shapes }) = (a.n_per_class, &mut cfg.dataset) {
        shapes.n_per_class = n;
    }
    cfg.finalize(a.seed)?;
    let DatasetSpec::Generate { shapes } = &cfg.dataset else {
        return Err(CliError::Config("generate needs a dataset of source \"generate\"".into()));
    };
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|d| d.join("data")))
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
    let data = generate(shapes, a.jobs)?;
    synth::write_dataset(&out, &data, shapes)?;
    println!("wrote {} images to {}", data.images.len(), out.display());
    Ok(())
}

pub struct RegisterArgs {
    pub i0: PathBuf,
    pub i1: PathBuf,
    pub config: Option<PathBuf>,
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: Option<f64>,
    pub time_steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub dump_velocity: Option<PathBuf>,
    pub no_opt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterReport {
    pub schema_version: u32,
    pub i0: PathBuf,
    pub i1: PathBuf,
    pub params: OperatorParams,
    pub registration: RegistrationConfig,
    pub optimized: bool,
    pub metric_value: f64,
    pub match_residual: f64,
    pub total_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_jacobian: f64,
    pub energy_trace: Vec<f64>,
}

pub fn cmd_register(a: &RegisterArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(a.config.as_deref())?;
    let mut reg = cfg.registration;
    if let Some(s) = a.sigma2 {
        reg.sigma2 = s;
    }
    if let Some(t) = a.time_steps {
        reg.time_steps = t;
    }
    reg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let params = OperatorParams::new(a.alpha, a.beta).map_err(|e| CliError::Config(e.to_string()))?;
    let i0 = io::read_pgm(&a.i0)?;
    let i1 = io::read_pgm(&a.i1)?;
    let report = if a.no_opt {
        let e = identity_energy(&i0, &i1, &reg)?;
        RegisterReport {
            schema_version: SCHEMA_VERSION,
            i0: a.i0.clone(),
            i1: a.i1.clone(),
            params,
            registration: reg,
            optimized: false,
            metric_value: 0.0,
            match_residual: e,
            total_energy: e,
            iterations: 0,
            converged: true,
            min_jacobian: 1.0,
            energy_trace: vec![e],
        }
    } else {
        let op = build_operator(*i0.grid(), params)?;
        let r = register(&i0, &i1, &op, &reg)?;
        if let Some(p) = &a.dump_velocity {
            io::write_velocity(p, &r.velocity)?;
        }
        RegisterReport {
            schema_version: SCHEMA_VERSION,
            i0: a.i0.clone(),
            i1: a.i1.clone(),
            params,
            registration: reg,
            optimized: true,
            metric_value: r.metric_value,
            match_residual: r.match_residual,
            total_energy: r.total_energy,
            iterations: r.iterations,
            converged: r.converged,
            min_jacobian: r.min_jacobian,
            energy_trace: r.energy_trace,
        }
    };
    println!("iteration,energy");
    for (k, e) in report.energy_trace.iter().enumerate() {
        println!("{k},{}", format_f64(*e));
    }
    println!(
        "metric {} residual {} total {}",
        format_f64(report.metric_value),
        format_f64(report.match_residual),
        format_f64(report.total_energy)
    );
    if let Some(p) = &a.out {
        io::write_json(p, &report)?;
    }
    Ok(())
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub em_iters: Option<usize>,
    pub select: Option<Selection>,
    pub jobs: Jobs,
    pub resume: bool,
    pub no_test: bool,
}

fn output_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    if let Some(n) = a.em_iters {
        cfg.em.em_max_iters = n;
    }
    if let Some(s) = a.select {
        cfg.em.selection = s;
    }
    let seed = cfg.finalize(a.seed)?;
    let out = output_dir(&a.out, &cfg)?;
    create_dir(&out)?;
    let loaded = load_experiment(&cfg, seed, &out, a.jobs)?;
    io::write_json(
        &out.join("split.json"),
        &SplitFile {
            schema_version: SCHEMA_VERSION,
            seed,
            train: loaded.train.clone(),
            test: loaded.test.clone(),
        },
    )?;
    let labels = loaded.train_labels();
    let opts = TrainOptions {
        jobs: a.jobs,
        checkpoint_dir: Some(out.join("checkpoints")),
        resume: a.resume,
    };
    let trace_path = out.join("em_trace.csv");
    let result = train(&loaded.train_images, &labels, &cfg.em, &cfg.registration, &opts, &mut |r| {
        println!(
            "iter {}: alpha {} -> {} gamma {} train_hinge {:.6} val_hinge {:.6} val_auc {:.4}",
            r.iteration,
            format_f64(r.alpha),
            format_f64(r.alpha_next),
            format_f64(r.gamma),
            r.train_hinge,
            r.val_hinge,
            r.val_auc
        );
    });
    let outcome: TrainOutcome = match result {
        Ok(o) => o,
        Err(f) => {
            if let Err(e) = f.trace.write_csv(&trace_path) {
                log::warn!("could not write the partial trace: {e}");
            }
            return Err(f.into());
        }
    };
    outcome.trace.write_csv(&trace_path)?;
    let saved = SavedModel::from_outcome(&outcome, cfg.em.beta, &labels);
    io::write_json(
        &out.join("model.json"),
        &ModelFile {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            model: saved,
            training_images: loaded.train.iter().map(|e| e.path.clone()).collect(),
        },
    )?;
    let params = OperatorParams::new(outcome.alpha, cfg.em.beta)?;
    let test_auc = if a.no_test || loaded.test.is_empty() {
        None
    } else {
        let auc = evaluate_test(&out, "test", &outcome.model, params, &loaded, &cfg, a.jobs)?;
        println!("test AUC {auc:.4}");
        Some(auc)
    };
    if cfg.evaluation.momentum_map {
        let reference = mean_image(&loaded.train_images)?;
        let op = build_operator(*reference.grid(), params)?;
        let momenta = subject_momenta(&reference, &loaded.train_images, &op, &cfg.registration, a.jobs)?;
        write_momentum_map(&out.join("momentum"), &momentum_map(&momenta, &labels)?)?;
    }
    let best = &outcome.trace.records[outcome.best_iteration];
    io::write_json(
        &out.join("report.json"),
        &TrainReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            alpha: outcome.alpha,
            gamma: outcome.gamma,
            gamma_rel: outcome.gamma_rel,
            best_iteration: best.iteration,
            em_iterations: outcome.trace.records.len(),
            val_auc: best.val_auc,
            train_images: loaded.train.len(),
            test_images: loaded.test.len(),
            test_auc,
        },
    )?;
    println!(
        "selected alpha {} (iteration {}), gamma {}",
        format_f64(outcome.alpha),
        best.iteration,
        format_f64(outcome.gamma)
    );
    Ok(())
}

pub struct PredictArgs {
    pub model: PathBuf,
    pub images: Vec<PathBuf>,
    pub list: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Jobs,
}

pub fn cmd_predict(a: &PredictArgs) -> CliResult<()> {
    let mf: ModelFile = io::read_json(&a.model)?;
    let klda = mf.model.klda()?;
    let training: Vec<Entry> = mf
        .training_images
        .iter()
        .zip(&mf.model.labels)
        .map(|(p, &label)| Entry { path: p.clone(), label })
        .collect();
    let train_images = read_images(&training)?;
    let mut paths = a.images.clone();
    if let Some(list) = &a.list {
        paths.extend(synth::read_labels(list)?.into_iter().map(|(p, _)| p));
    }
    let images = paths.iter().map(|p| io::read_pgm(p)).collect::<Result<Vec<_>, _>>()?;
    let reg = &mf.config.registration;
    let scores = if images.is_empty() {
        Vec::new()
    } else {
        score_images(
            &klda,
            &train_images,
            &images,
            mf.model.params()?,
            reg,
            mf.config.evaluation.row_direction,
            a.jobs,
        )?
    };
    let per = match mf.config.evaluation.row_direction {
        RowDirection::TrainingToNew => 1,
        RowDirection::Both => 2,
    };
    log::info!("{} registrations", per * train_images.len() * images.len());
    let rows: Vec<(PathBuf, f64)> = paths.into_iter().zip(scores).collect();
    match &a.out {
        Some(p) => write_scores(p, &rows)?,
        None => {
            println!("path,score,label");
            for (p, s) in &rows {
                println!("{},{},{}", p.display(), format_f64(*s), predict_label(*s));
            }
        }
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub scores: PathBuf,
    pub labels: PathBuf,
    pub out: Option<PathBuf>,
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub schema_version: u32,
    pub scores: PathBuf,
    pub labels: PathBuf,
    pub n: usize,
    pub positives: usize,
    pub negatives: usize,
    pub auc: f64,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let rows = read_scores(&a.scores)?;
    let truth: HashMap<PathBuf, i8> = synth::read_labels(&a.labels)?
        .into_iter()
        .map(|(p, z)| (absolute(&p), z))
        .collect();
    let mut scores = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut unmatched = Vec::new();
    for (p, s) in &rows {
        match truth.get(&absolute(p)) {
            Some(&z) => {
                scores.push(*s);
                labels.push(z);
            }
            None => unmatched.push(p.display().to_string()),
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::input(format!("no label for scored images: {}", unmatched.join(", "))).into());
    }
    let roc = roc_auc(&scores, &labels)?;
    if let Some(p) = &a.roc {
        write_roc_csv(p, &roc)?;
    }
    let report = EvaluateReport {
        schema_version: SCHEMA_VERSION,
        scores: a.scores.clone(),
        labels: a.labels.clone(),
        n: labels.len(),
        positives: labels.iter().filter(|&&z| z == 1).count(),
        negatives: labels.iter().filter(|&&z| z == -1).count(),
        auc: roc.auc,
    };
    println!("AUC {}", format_f64(roc.auc));
    if let Some(p) = &a.out {
        io::write_json(p, &report)?;
    }
    Ok(())
}

pub struct BaselineArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub train_dir: Option<PathBuf>,
    pub jobs: Jobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticSummary {
    pub cv: LogisticReport,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiSummary {
    pub alpha: f64,
    pub gamma: f64,
    pub mi_scores: Vec<(f64, Option<f64>)>,
    pub val_auc: f64,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedSummary {
    pub alpha: f64,
    pub gamma: f64,
    pub best_iteration: usize,
    pub val_auc: f64,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub train_images: usize,
    pub test_images: usize,
    pub logistic: LogisticSummary,
    pub mi_alpha: MiSummary,
    pub optimized: OptimizedSummary,
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

pub fn cmd_baseline(a: &BaselineArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    let seed = cfg.finalize(a.seed)?;
    let out = output_dir(&a.out, &cfg)?;
    create_dir(&out)?;

    let (loaded, optimized_report) = match &a.train_dir {
        Some(td) => {
            let (split, loaded) = load_split(&td.join("split.json"))?;
            let rep: TrainReport = io::read_json(&td.join("report.json"))?;
            if split.seed != seed
                || rep.config.dataset != cfg.dataset
                || rep.config.registration != cfg.registration
                || rep.config.evaluation.train_per_class != cfg.evaluation.train_per_class
            {
                return Err(CliError::Config(format!(
                    "training run in {} used a different seed, dataset or registration config",
                    td.display()
                )));
            }
            (loaded, Some(rep))
        }
        None => (load_experiment(&cfg, seed, &out, a.jobs)?, None),
    };
    let labels = loaded.train_labels();
    let test_labels = loaded.test_labels();
    let has_test = !loaded.test.is_empty();

    log::info!("logistic baseline");
    let cv = logistic_baseline(&loaded.train_images, &labels, &cfg.evaluation.logistic)?;
    let logistic_test = if has_test {
        let th = cfg.evaluation.logistic.threshold;
        let x: Vec<Vec<f64>> = loaded.train_images.iter().map(|im| eval::binarize(im, th)).collect();
        let model = fit_logistic(&x, &labels, &cfg.evaluation.logistic)?;
        let scores: Vec<f64> = loaded
            .test_images
            .iter()
            .map(|im| model.score(&eval::binarize(im, th)))
            .collect();
        Some(roc_auc(&scores, &test_labels)?.auc)
    } else {
        None
    };

    log::info!("MI alpha selection");
    let pairs = sample_pairs(loaded.train_images.len(), cfg.evaluation.mi_pairs, seed)?;
    let sel = mi_select_alpha(
        &loaded.train_images,
        &pairs,
        &cfg.evaluation.mi_alpha_grid,
        &cfg.registration,
        cfg.evaluation.mi_bins,
        a.jobs,
    )?;
    println!("MI-selected alpha {}", format_f64(sel.alpha));
    let fixed = fit_fixed_alpha(&loaded.train_images, &labels, sel.alpha, &cfg.em, &cfg.registration, a.jobs)?;
    let mi_test = if has_test {
        let p = OperatorParams::new(sel.alpha, cfg.em.beta)?;
        Some(evaluate_test(&out, "mi_alpha", &fixed.model, p, &loaded, &cfg, a.jobs)?)
    } else {
        None
    };

    let optimized = match optimized_report {
        Some(rep) => OptimizedSummary {
            alpha: rep.alpha,
            gamma: rep.gamma,
            best_iteration: rep.best_iteration,
            val_auc: rep.val_auc,
            test_auc: rep.test_auc,
        },
        None => {
            log::info!("EM training");
            let opts = TrainOptions {
                jobs: a.jobs,
                checkpoint_dir: Some(out.join("checkpoints")),
                resume: true,
            };
            let o = train(&loaded.train_images, &labels, &cfg.em, &cfg.registration, &opts, &mut |_| {})?;
            o.trace.write_csv(&out.join("em_trace.csv"))?;
            let test_auc = if has_test {
                let p = OperatorParams::new(o.alpha, cfg.em.beta)?;
                Some(evaluate_test(&out, "optimized", &o.model, p, &loaded, &cfg, a.jobs)?)
            } else {
                None
            };
            OptimizedSummary {
                alpha: o.alpha,
                gamma: o.gamma,
                best_iteration: o.best_iteration + 1,
                val_auc: o.trace.records[o.best_iteration].val_auc,
                test_auc,
            }
        }
    };

    let fixed_rec = &fixed.trace.records[0];
    let cmp = Comparison {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        train_images: loaded.train.len(),
        test_images: loaded.test.len(),
        logistic: LogisticSummary { cv, test_auc: logistic_test },
        mi_alpha: MiSummary {
            alpha: sel.alpha,
            gamma: fixed.gamma,
            mi_scores: sel.scores,
            val_auc: fixed_rec.val_auc,
            test_auc: mi_test,
        },
        optimized,
    };
    io::write_json(&out.join("comparison.json"), &cmp)?;
    let csv = format!(
        "model,alpha,test_auc,cv_auc_mean,cv_auc_std\nlogistic,,{},{},{}\nmi_alpha,{},{},,\noptimized,{},{},,\n",
        opt_f64(cmp.logistic.test_auc),
        format_f64(cmp.logistic.cv.mean_auc),
        format_f64(cmp.logistic.cv.std_auc),
        format_f64(cmp.mi_alpha.alpha),
        opt_f64(cmp.mi_alpha.test_auc),
        format_f64(cmp.optimized.alpha),
        opt_f64(cmp.optimized.test_auc),
    );
    io::write_atomic(&out.join("comparison.csv"), csv.as_bytes())?;
    println!("{csv}");
    Ok(())
}

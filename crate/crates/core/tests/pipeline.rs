//! End-to-end runs of the public API on small generated datasets.

use lddmm_metric::eval::{roc_auc, stratified_split};
use lddmm_metric::io::{read_pgm, read_velocity, write_pgm, write_velocity, PgmDepth};
use lddmm_metric::kernel::RowDirection;
use lddmm_metric::metric_learning::{score_images, SavedModel, TrainOptions};
use lddmm_metric::synth::{generate, read_dataset, write_dataset, ShapeGenConfig};
use lddmm_metric::*;

fn small_config(n_per_class: usize, seed: u64) -> ShapeGenConfig {
    ShapeGenConfig {
        grid: GridSpec::new(24, 24).unwrap(),
        n_per_class,
        seed,
        ..Default::default()
    }
}

fn quick_reg() -> RegistrationConfig {
    RegistrationConfig {
        time_steps: 4,
        max_iters: 20,
        ..Default::default()
    }
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

#[test]
fn train_score_and_reload() {
    let data = generate(&small_config(6, 1), Jobs::serial()).unwrap();
    let (train_idx, test_idx) = stratified_split(&data.labels, 4, 9).unwrap();
    let (ti, tl) = (pick(&data.images, &train_idx), pick(&data.labels, &train_idx));
    let (ei, el) = (pick(&data.images, &test_idx), pick(&data.labels, &test_idx));
    let cfg = EmConfig {
        em_max_iters: 3,
        mstep_max_iters: 5,
        ..Default::default()
    };
    let reg = quick_reg();
    let mut seen = Vec::new();
    let out = train(&ti, &tl, &cfg, &reg, &TrainOptions::default(), &mut |r| seen.push(r.clone())).unwrap();

    assert_eq!(seen, out.trace.records);
    let n = ti.len();
    for (k, r) in out.trace.records.iter().enumerate() {
        assert_eq!(r.iteration, k + 1);
        assert_eq!(r.registrations, n * (n - 1));
        assert!(r.mstep_val_hinge <= r.val_hinge);
        assert!(r.alpha_next >= cfg.alpha_bounds[0] && r.alpha_next <= cfg.alpha_bounds[1]);
        if k > 0 {
            assert_eq!(r.alpha, out.trace.records[k - 1].alpha_next);
        }
    }
    let best = &out.trace.records[out.best_iteration];
    assert_eq!(out.alpha, best.alpha);
    assert_eq!(out.gamma, best.gamma);

    let params = OperatorParams::new(out.alpha, cfg.beta).unwrap();
    let scores = score_images(&out.model, &ti, &ei, params, &reg, RowDirection::TrainingToNew, Jobs::serial()).unwrap();
    assert_eq!(scores.len(), ei.len());
    assert!(scores.iter().all(|s| s.is_finite()));
    let auc = roc_auc(&scores, &el).unwrap().auc;
    assert!((0.0..=1.0).contains(&auc));

    // a saved model refits to the same discriminant and the same scores
    let saved = SavedModel::from_outcome(&out, cfg.beta, &tl);
    let text = serde_json::to_string(&saved).unwrap();
    let back: SavedModel = serde_json::from_str(&text).unwrap();
    let model = back.klda().unwrap();
    assert_eq!(model.w, out.model.w);
    let again = score_images(&model, &ti, &ei, back.params().unwrap(), &reg, RowDirection::TrainingToNew, Jobs::new(2)).unwrap();
    assert_eq!(again, scores);
}

#[test]
fn checkpointed_resume_equals_uninterrupted_run() {
    let data = generate(&small_config(4, 2), Jobs::serial()).unwrap();
    let reg = quick_reg();
    let full_cfg = EmConfig {
        em_max_iters: 3,
        mstep_max_iters: 4,
        alpha_tol: 1e-12,
        ..Default::default()
    };
    let straight = train(&data.images, &data.labels, &full_cfg, &reg, &TrainOptions::default(), &mut |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        jobs: Jobs::serial(),
        checkpoint_dir: Some(dir.path().to_path_buf()),
        resume: true,
    };
    let first_cfg = EmConfig {
        em_max_iters: 1,
        ..full_cfg.clone()
    };
    let part = train(&data.images, &data.labels, &first_cfg, &reg, &opts, &mut |_| {}).unwrap();
    assert_eq!(part.trace.records.len(), 1);
    let resumed = train(&data.images, &data.labels, &full_cfg, &reg, &opts, &mut |_| {}).unwrap();
    assert_eq!(resumed.trace, straight.trace);
    assert_eq!(resumed.alpha, straight.alpha);
    assert_eq!(resumed.model.w, straight.model.w);
}

#[test]
fn dataset_and_velocity_files_round_trip() {
    let cfg = small_config(3, 4);
    let data = generate(&cfg, Jobs::serial()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data, &cfg).unwrap();
    let (paths, back) = read_dataset(&dir.path().join("labels.csv")).unwrap();
    assert_eq!(paths.len(), 6);
    assert_eq!(back.labels, data.labels);
    for (a, b) in back.images.iter().zip(&data.images) {
        // 16-bit quantization
        let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 65535.0 + 1e-12);
    }
    let p = dir.path().join("x.pgm");
    write_pgm(&p, &back.images[0], PgmDepth::Sixteen).unwrap();
    assert_eq!(read_pgm(&p).unwrap(), back.images[0]);

    let op = build_operator(*data.images[0].grid(), OperatorParams::new(1.0, 1.0).unwrap()).unwrap();
    let r = register(&data.images[0], &data.images[3], &op, &quick_reg()).unwrap();
    let vp = dir.path().join("v.vel");
    write_velocity(&vp, &r.velocity).unwrap();
    let v = read_velocity(&vp).unwrap();
    assert_eq!(v, r.velocity);
    let e = op.metric_energy(&v).unwrap();
    assert!((e - r.metric_value).abs() <= 1e-12 * e);
}

#[test]
fn generation_is_deterministic_across_job_counts() {
    let cfg = small_config(5, 11);
    let a = generate(&cfg, Jobs::serial()).unwrap();
    let b = generate(&cfg, Jobs::new(3)).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.images, b.images);
    assert_eq!(a.labels.iter().filter(|&&z| z == 1).count(), 5);
}

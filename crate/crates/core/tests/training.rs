use candle_core::{DType, Tensor};
use graphcover_core::config::Config;
use graphcover_core::data::synthetic::write_synthetic_corpus;
use graphcover_core::data::TrainingSet;
use graphcover_core::losses::{weighted_total, DISC_TERM_NAMES, TERM_NAMES};
use graphcover_core::train::{csv_header, discriminator_update, forward, generator_objective, Trainer};
use graphcover_core::Error;

fn setup(iterations: u64) -> (tempfile::TempDir, Config, TrainingSet) {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_corpus(&dir.path().join("corpus"), 12, 6, 5).unwrap();
    let mut cfg = Config::overfit10();
    cfg.data.scene_annotations = dir.path().join("corpus/annotations.json");
    cfg.data.scene_images = dir.path().join("corpus/images");
    cfg.data.covers = dir.path().join("corpus/covers");
    cfg.checkpoint.dir = dir.path().join("ckpt");
    cfg.optim.iterations = iterations;
    let data = TrainingSet::load(&cfg).unwrap();
    (dir, cfg, data)
}

#[test]
fn phases_touch_only_their_own_parameters() {
    let (_dir, cfg, data) = setup(1);
    let mut t = Trainer::new(cfg, data).unwrap();
    let batch = t.data.batch(0, t.config.optim.batch_size, DType::F32).unwrap();
    let sums = |t: &Trainer| {
        (
            t.state.model.gen_params.checksum().unwrap(),
            t.state.model.disc_params.checksum().unwrap(),
        )
    };
    let (g0, d0) = sums(&t);
    let fwd = forward(&t.state, &batch).unwrap();
    discriminator_update(&mut t.state, &batch, &fwd).unwrap();
    let (g1, d1) = sums(&t);
    assert_eq!(g0, g1);
    assert_ne!(d0, d1);
    let (total, _) = generator_objective(&t.state, &batch, &fwd).unwrap();
    t.state.gen_opt.step(&total.backward().unwrap()).unwrap();
    let (g2, d2) = sums(&t);
    assert_ne!(g1, g2);
    assert_eq!(d1, d2);
}

#[test]
fn every_generator_parameter_receives_gradient() {
    let (_dir, cfg, data) = setup(1);
    let mut t = Trainer::new(cfg, data).unwrap();
    let batch = t.data.batch(0, t.config.optim.batch_size, DType::F32).unwrap();
    let fwd = forward(&t.state, &batch).unwrap();
    discriminator_update(&mut t.state, &batch, &fwd).unwrap();
    let (total, _) = generator_objective(&t.state, &batch, &fwd).unwrap();
    let grads = total.backward().unwrap();
    let mut missing = Vec::new();
    for (name, var) in t.state.model.gen_params.iter() {
        let norm = grads
            .get(var.as_tensor())
            .map(|g| g.abs().unwrap().sum_all().unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap());
        if !matches!(norm, Some(n) if n > 0.0) {
            missing.push(name.to_string());
        }
    }
    assert!(missing.is_empty(), "no gradient for {missing:?}");
}

#[test]
fn resume_reproduces_next_step_loss() {
    let (dir, cfg, data) = setup(2);
    let mut t = Trainer::new(cfg.clone(), data).unwrap();
    t.run(None, |_, _| {}).unwrap();
    let expected = t.step().unwrap();

    let data = TrainingSet::load(&cfg).unwrap();
    let mut resumed = Trainer::resume(cfg, data, &dir.path().join("ckpt")).unwrap();
    assert_eq!(resumed.state.step, 2);
    let got = resumed.step().unwrap();
    for (a, b) in expected.terms.iter().zip(&got.terms) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
    assert!((expected.total - got.total).abs() <= 1e-6);
}

#[test]
fn loss_log_rows_satisfy_weighted_identity() {
    let (dir, cfg, data) = setup(2);
    let weights = cfg.loss.weights.clone();
    let mut t = Trainer::new(cfg, data).unwrap();
    let mut log = Vec::new();
    t.run(Some(&mut log), |_, _| {}).unwrap();
    assert!(dir.path().join("ckpt/manifest.json").exists());

    let text = String::from_utf8(log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), csv_header());
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 1 + TERM_NAMES.len() + 1 + DISC_TERM_NAMES.len());
        assert_eq!(row[0], i as f64);
        let terms: [f64; 9] = row[1..10].try_into().unwrap();
        assert_eq!(row[10], weighted_total(&weights, &terms));
    }
}

#[test]
fn non_finite_term_aborts_with_its_name() {
    let (_dir, cfg, data) = setup(1);
    let mut t = Trainer::new(cfg, data).unwrap();
    let mut batch = t.data.batch(0, t.config.optim.batch_size, DType::F32).unwrap();
    let nan = Tensor::full(f32::NAN, batch.covers.shape(), batch.covers.device()).unwrap();
    batch.covers = nan;
    let before = t.state.model.disc_params.checksum().unwrap();
    let err = graphcover_core::train::train_step(&mut t.state, &batch).unwrap_err();
    match &err {
        Error::NonFinite { term, step } => {
            assert_eq!(term, "d_book");
            assert_eq!(*step, 0);
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.exit_code(), 4);
    assert_eq!(t.state.model.disc_params.checksum().unwrap(), before);
    assert_eq!(t.state.step, 0);
}

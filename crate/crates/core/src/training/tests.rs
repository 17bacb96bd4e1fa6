use super::*;
use crate::network::{generate_dataset, DatasetSpec};
use rand::Rng;

fn small_config(model: ModelKind) -> TrainConfig {
    TrainConfig {
        model,
        dims: GnnDims::new(8, 8, 8),
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn dataset(count: usize, pores: usize, seed: u64) -> Vec<PoreNetwork> {
    generate_dataset(&DatasetSpec::new(seed, count, pores, 4.0)).unwrap()
}

#[test]
fn loss_examples() {
    assert_eq!(loss(1.0, 1.0), 0.0);
    assert_eq!(loss(3.0, 1.0), 2.0);
    assert_eq!(loss(1.0, 3.0), 2.0);
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    c.batch_size = 0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.num_epochs = 0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.learning_rate = f64::NAN;
    assert!(c.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn split_is_seeded_and_disjoint() {
    let (tr, va) = split_indices(200, 0.1, 3);
    assert_eq!((tr.len(), va.len()), (180, 20));
    assert_eq!(split_indices(200, 0.1, 3), (tr.clone(), va.clone()));
    assert_ne!(split_indices(200, 0.1, 4).1, va);
    let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..200).collect::<Vec<_>>());
    assert_eq!(split_indices(1, 0.1, 0), (vec![0], vec![]));
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let data = dataset(6, 15, 1);
    let t = Trainer::new(small_config(ModelKind::Embedded), &data).unwrap();
    let batch: Vec<&PoreNetwork> = t.networks().iter().take(3).collect();
    let mut state = t.state.clone();
    let j = train_step(&mut state, &batch, &[0, 1, 2], 0.0, Optimizer::Gd).unwrap();
    assert_eq!(state.params, t.state.params);
    assert!(j > 0.0);
    assert_eq!(
        j,
        mean_loss(&t.state.params, &batch, t.state.progress.loss_scale).unwrap()
    );
}

#[test]
fn sample_at_target_has_zero_gradient() {
    let data = dataset(4, 15, 2);
    let t = Trainer::new(small_config(ModelKind::Embedded), &data).unwrap();
    let mut net = t.networks()[0].clone();
    net.target_permeability = Some(predict(&t.state.params, &net).unwrap());
    let s = sample_gradient(&t.state.params, &net, t.state.progress.loss_scale).unwrap();
    assert_eq!(s.loss, 0.0);
    assert!(s.grad.iter().all(|&v| v == 0.0));
    let mut state = t.state.clone();
    train_step(&mut state, &[&net], &[0], 0.1, Optimizer::Gd).unwrap();
    assert_eq!(state.params, t.state.params);
}

fn full_loss(params: &ModelParameters, net: &PoreNetwork, scale: f64) -> f64 {
    let k = predict(params, net).unwrap();
    scale * scale * loss(k, net.target_permeability.unwrap())
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let tol = 1e-4;
    let h = 1e-6;
    let data = dataset(3, 15, 5);
    let t = Trainer::new(small_config(ModelKind::Embedded), &data).unwrap();
    let net = &t.networks()[0];
    let scale = t.state.progress.loss_scale;
    let p = &t.state.params;
    let g = sample_gradient(p, net, scale).unwrap();
    let j0 = g.loss;
    let floor = crate::adjoint::FD_NOISE_FACTOR * f64::EPSILON * j0.max(1e-300) / h / tol;
    let w0 = p.to_flat();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.gen_range(0..w0.len());
        let mut w = w0.clone();
        w[k] += h;
        q.set_flat(&w).unwrap();
        let jp = full_loss(&q, net, scale);
        w[k] -= 2.0 * h;
        q.set_flat(&w).unwrap();
        let jm = full_loss(&q, net, scale);
        let fd = (jp - jm) / (2.0 * h);
        let err = (g.grad[k] - fd).abs() / g.grad[k].abs().max(fd.abs()).max(floor);
        worst = worst.max(err);
    }
    assert!(worst < tol, "worst relative error {worst}");
}

#[test]
fn batch_gradient_is_mean_of_samples() {
    let data = dataset(5, 15, 6);
    for model in [ModelKind::Embedded, ModelKind::Baseline] {
        let t = Trainer::new(small_config(model), &data).unwrap();
        let s = t.state.progress.loss_scale;
        let nets: Vec<&PoreNetwork> = t.networks().iter().collect();
        let (_, g, _) = batch_gradient(&t.state.params, &nets, &[0, 1, 2, 3, 4], s).unwrap();
        let singles: Vec<Vec<f64>> = nets
            .iter()
            .map(|n| sample_gradient(&t.state.params, n, s).unwrap().grad)
            .collect();
        for k in 0..g.len() {
            let mean = singles.iter().map(|v| v[k]).sum::<f64>() / singles.len() as f64;
            assert!((g[k] - mean).abs() <= 1e-12 * mean.abs().max(1e-12));
        }
    }
}

#[test]
fn small_step_never_increases_loss() {
    let data = dataset(8, 15, 8);
    for model in [ModelKind::Embedded, ModelKind::Baseline] {
        let t = Trainer::new(small_config(model), &data).unwrap();
        let s = t.state.progress.loss_scale;
        for net in t.networks() {
            let mut state = t.state.clone();
            let before = train_step(&mut state, &[net], &[0], 1e-6, Optimizer::Gd).unwrap();
            let after = full_loss(&state.params, net, s);
            assert!(after <= before + 1e-12, "{before} -> {after}");
        }
    }
}

#[test]
fn output_scale_calibrated_to_mean_target() {
    let data = dataset(10, 15, 9);
    for model in [ModelKind::Embedded, ModelKind::Baseline] {
        let t = Trainer::new(small_config(model), &data).unwrap();
        let ids = &t.train_ids;
        let mean_t = ids
            .iter()
            .map(|&i| data[i].target_permeability.unwrap())
            .sum::<f64>()
            / ids.len() as f64;
        let mean_p = ids
            .iter()
            .map(|&i| predict(&t.state.params, &t.networks()[i]).unwrap())
            .sum::<f64>()
            / ids.len() as f64;
        assert!((mean_p / mean_t - 1.0).abs() < 1e-10);
        assert!((t.state.progress.loss_scale * mean_t - 1.0).abs() < 1e-12);
    }
}

#[test]
fn baseline_never_calls_the_solver() {
    let data = dataset(10, 15, 10);
    let mut cfg = small_config(ModelKind::Baseline);
    cfg.num_epochs = 3;
    let mut t = Trainer::new(cfg.clone(), &data).unwrap();
    t.run(|_| {}).unwrap();
    assert_eq!(t.state.solver_solves, 0);
    cfg.model = ModelKind::Embedded;
    let mut t = Trainer::new(cfg, &data).unwrap();
    t.run(|_| {}).unwrap();
    // one forward and one adjoint solve per sample per epoch
    assert_eq!(t.state.solver_solves, 2 * 3 * t.train_ids.len());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let data = dataset(12, 15, 11);
    let dir = tempfile::tempdir().unwrap();
    for optimizer in [Optimizer::Gd, Optimizer::adam()] {
        let mut cfg = small_config(ModelKind::Embedded);
        cfg.num_epochs = 6;
        cfg.learning_rate = if optimizer == Optimizer::Gd {
            0.05
        } else {
            1e-3
        };
        cfg.optimizer = optimizer;
        cfg.checkpoint_every = 3;
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        let full = train(cfg.clone(), &data, |_| {}).unwrap();

        let ck = Checkpoint::load(dir.path().join("checkpoint_00003.json")).unwrap();
        assert_eq!(ck.progress.epoch, 3);
        let mut resumed = Trainer::resume(cfg, &data, &ck).unwrap();
        resumed.run(|_| {}).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(
            bits(&resumed.state.params.to_flat()),
            bits(&full.params.to_flat())
        );
        assert_eq!(
            bits(&resumed.state.progress.train_loss),
            bits(&full.progress.train_loss)
        );
        assert_eq!(
            resumed.state.checkpoint().to_json(),
            full.checkpoint().to_json()
        );
    }
}

#[test]
fn training_is_deterministic() {
    let data = dataset(10, 15, 12);
    let mut cfg = small_config(ModelKind::Embedded);
    cfg.num_epochs = 3;
    let a = train(cfg.clone(), &data, |_| {}).unwrap();
    let b = train(cfg, &data, |_| {}).unwrap();
    assert_eq!(a.checkpoint().to_json(), b.checkpoint().to_json());
}

#[test]
fn sample_failure_names_the_sample() {
    let mut data = dataset(6, 15, 13);
    let t = Trainer::new(small_config(ModelKind::Embedded), &data).unwrap();
    let mut bad = t.networks()[2].clone();
    bad.target_permeability = None;
    let nets = [&t.networks()[0], &bad];
    match batch_gradient(&t.state.params, &nets, &[0, 2], 1.0) {
        Err(Error::Sample { sample, .. }) => assert_eq!(sample, 2),
        other => panic!("expected sample error, got {other:?}"),
    }
    data[4].target_permeability = None;
    assert!(matches!(
        Trainer::new(small_config(ModelKind::Embedded), &data),
        Err(Error::Sample { sample: 4, .. })
    ));
}

#[test]
fn log_lines_have_expected_fields() {
    let data = dataset(10, 15, 14);
    let mut cfg = small_config(ModelKind::Embedded);
    cfg.num_epochs = 2;
    let mut lines = Vec::new();
    train(cfg, &data, |l| lines.push(serde_json::to_value(l).unwrap())).unwrap();
    assert_eq!(lines.len(), 2);
    for (i, v) in lines.iter().enumerate() {
        assert_eq!(v["epoch"], i + 1);
        assert!(v["train_loss"].is_f64() && v["val_loss"].is_f64() && v["wall_ms"].is_u64());
    }
}

#[test]
fn twenty_networks_reach_one_percent_of_initial_loss() {
    let data = dataset(20, 50, 7);
    let cfg = TrainConfig {
        num_epochs: 500,
        batch_size: 6,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let state = train(cfg, &data, |_| {}).unwrap();
    let h = &state.progress.train_loss;
    assert!(
        h[499] < 0.01 * h[0],
        "epoch 1 {} epoch 500 {}",
        h[0],
        h[499]
    );
}

#[test]
fn validation_loss_falls_over_first_ten_epochs() {
    let data = dataset(200, 50, 7);
    let cfg = TrainConfig {
        num_epochs: 10,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let state = train(cfg, &data, |_| {}).unwrap();
    let v: Vec<f64> = state.progress.val_loss.iter().map(|v| v.unwrap()).collect();
    for w in v.windows(2) {
        assert!(w[1] < w[0], "validation loss rose: {v:?}");
    }
}

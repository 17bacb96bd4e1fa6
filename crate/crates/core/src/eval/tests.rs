use super::*;
use crate::gnn::{GnnDims, ModelKind};
use crate::network::fixtures::bare;
use crate::network::{generate_dataset, DatasetSpec};
use crate::training::{TrainConfig, Trainer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn perfect_prediction() {
    let y = [1.0, 2.0, 5.0];
    let m = metrics(&y, &y).unwrap();
    assert_eq!(
        (m.mae, m.rmse, m.mape_percent, m.r_squared),
        (0.0, 0.0, Some(0.0), Some(1.0))
    );
    assert_eq!(m.n, 3);
}

#[test]
fn hand_computed_metrics() {
    let m = metrics(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
    assert_eq!(m.mae, 1.0);
    assert_eq!(m.rmse, 1.0);
    assert!((m.mape_percent.unwrap() - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(m.r_squared, Some(0.0));
}

#[test]
fn degenerate_inputs() {
    let m = metrics(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
    assert_eq!(m.r_squared, None);
    assert_eq!(m.mape_percent, Some(50.0));
    let m = metrics(&[0.0, 2.0], &[1.0, 2.0]).unwrap();
    assert_eq!(m.mape_percent, None);
    assert!(m.r_squared.is_some());
    assert!(matches!(
        metrics(&[1.0], &[1.0, 2.0]),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(metrics(&[], &[]).is_err());
    assert!(metrics(&[1.0], &[f64::NAN]).is_err());
}

fn vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (2usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.1f64..10.0, n),
            proptest::collection::vec(-10.0f64..10.0, n),
            prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        )
    })
}

proptest! {
    #[test]
    fn metric_identities((y, y_hat, alpha) in vectors()) {
        let m = metrics(&y, &y_hat).unwrap();
        let ss: f64 = y.iter().zip(&y_hat).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((m.rmse.powi(2) * y.len() as f64 - ss).abs() <= 1e-10 * ss.max(1e-300));
        prop_assert!(m.mae <= m.rmse * (1.0 + 1e-12));
        if let Some(r2) = m.r_squared {
            prop_assert!(r2 <= 1.0);
        }
        let same = metrics(&y, &y).unwrap();
        prop_assert_eq!(same.r_squared, Some(1.0));

        let ys: Vec<f64> = y.iter().map(|v| alpha * v).collect();
        let hs: Vec<f64> = y_hat.iter().map(|v| alpha * v).collect();
        let s = metrics(&ys, &hs).unwrap();
        let a = alpha.abs();
        prop_assert!((s.mae - a * m.mae).abs() <= 1e-12 * a * m.mae.max(1e-300));
        prop_assert!((s.rmse - a * m.rmse).abs() <= 1e-12 * a * m.rmse.max(1e-300));
        let (p, q) = (s.mape_percent.unwrap(), m.mape_percent.unwrap());
        prop_assert!((p - q).abs() <= 1e-12 * q.max(1e-300));
        match (s.r_squared, m.r_squared) {
            (Some(p), Some(q)) => prop_assert!((p - q).abs() <= 1e-10 * q.abs().max(1.0)),
            (p, q) => prop_assert_eq!(p.is_some(), q.is_some()),
        }
    }

    #[test]
    fn box_summary_is_ordered(v in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
        let b = BoxSummary::from_values(&v).unwrap();
        prop_assert!(b.q25 <= b.median && b.median <= b.q75);
        prop_assert!(b.lo_whisker <= b.hi_whisker);
        prop_assert_eq!(b.n, v.len());
    }
}

#[test]
fn box_summary_drops_outliers() {
    let b = BoxSummary::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert_eq!(
        (b.q25, b.median, b.q75, b.lo_whisker, b.hi_whisker),
        (2.0, 3.0, 4.0, 1.0, 5.0)
    );
    let b = BoxSummary::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]).unwrap();
    assert_eq!(b.hi_whisker, 5.0);
    assert_eq!(b.n, 6);
    assert!(BoxSummary::from_values(&[]).is_none());
}

#[test]
fn csv_has_one_row_per_feature() {
    let g = FeatureGrad {
        node: vec![[1.0; NODE_DIM]; 3],
        edge: vec![[-2.0; EDGE_DIM]; 2],
    };
    let r = SensitivityReport::from_gradients(&[g]);
    let csv = r.edge_csv();
    assert_eq!(csv.lines().count(), EDGE_DIM + 1);
    assert!(csv.starts_with("feature,median,q25,q75,lo_whisker,hi_whisker,n\n"));
    assert!(csv.contains("throat_total_length,-2e0,"));
    assert_eq!(r.node_csv().lines().count(), NODE_DIM + 1);
    assert_eq!(r.summary("pore_diameter").unwrap().n, 3);
}

fn random_features<const D: usize>(rng: &mut ChaCha8Rng) -> [f64; D] {
    std::array::from_fn(|_| rng.gen_range(-1.5..1.5))
}

#[test]
fn zero_parameters_give_zero_sensitivity() {
    let net = crate::network::generate_synthetic(4, 20, 4.0).unwrap();
    let p = GnnParameters::zeros(GnnDims::default());
    let g = network_sensitivity(&net, &p).unwrap();
    assert!(g
        .node
        .iter()
        .flatten()
        .chain(g.edge.iter().flatten())
        .all(|&v| v == 0.0));
}

#[test]
fn mirror_symmetric_network_has_paired_sensitivities() {
    // inlet 0, outlet 5, lanes 0-1-2-5 and 0-3-4-5, centre pore 6 tied to both lanes
    let throats = [
        [0, 1],
        [1, 2],
        [2, 5],
        [0, 3],
        [3, 4],
        [4, 5],
        [1, 6],
        [3, 6],
        [2, 6],
        [4, 6],
    ];
    let mut net = bare(7, &throats, &[0], &[5]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in [0, 1, 2, 5, 6] {
        net.node_features[p] = random_features(&mut rng);
    }
    net.node_features[3] = net.node_features[1];
    net.node_features[4] = net.node_features[2];
    let pairs = [(0, 3), (1, 4), (2, 5), (6, 7), (8, 9)];
    for &(a, b) in &pairs {
        net.edge_features[a] = random_features(&mut rng);
        net.edge_features[b] = net.edge_features[a];
    }
    let p = GnnParameters::init(GnnDims::default(), 3);
    let g = network_sensitivity(&net, &p).unwrap();
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * x.abs().max(y.abs()).max(1e-300);
    for &(a, b) in &pairs {
        for k in 0..EDGE_DIM {
            assert!(
                close(g.edge[a][k], g.edge[b][k]),
                "throats {a},{b} feature {k}"
            );
        }
    }
    for (a, b) in [(1, 3), (2, 4)] {
        for k in 0..NODE_DIM {
            assert!(
                close(g.node[a][k], g.node[b][k]),
                "pores {a},{b} feature {k}"
            );
        }
    }
    let rep = SensitivityReport::from_gradients(&[g]);
    assert!(rep.edge.iter().all(|f| f.summary.n == throats.len()));
}

#[test]
fn one_throat_sensitivity_matches_finite_differences() {
    let tol = 1e-4;
    let h = 1e-6;
    let mut net = bare(2, &[[0, 1]], &[0], &[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    net.node_features = vec![random_features(&mut rng), random_features(&mut rng)];
    net.edge_features = vec![random_features(&mut rng)];
    let p = GnnParameters::init(GnnDims::default(), 6);
    let k = |n: &PoreNetwork| predict(&ModelParameters::Embedded(p.clone()), n).unwrap();
    let k0 = k(&net);
    let floor = crate::adjoint::FD_NOISE_FACTOR * f64::EPSILON * k0 / h / tol;
    let g = network_sensitivity(&net, &p).unwrap();
    let check = |an: f64, bump: &dyn Fn(&mut PoreNetwork, f64)| {
        let mut a = net.clone();
        bump(&mut a, h);
        let mut b = net.clone();
        bump(&mut b, -h);
        let fd = (k(&a) - k(&b)) / (2.0 * h);
        let err = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
        assert!(err < tol, "analytic {an} fd {fd}");
    };
    for pore in 0..2 {
        for f in 0..NODE_DIM {
            check(g.node[pore][f], &|n, d| n.node_features[pore][f] += d);
        }
    }
    for f in 0..EDGE_DIM {
        check(g.edge[0][f], &|n, d| n.edge_features[0][f] += d);
    }
}

#[test]
fn analytic_model_is_not_the_truth() {
    let data = generate_dataset(&DatasetSpec::new(3, 30, 30, 4.0)).unwrap();
    let e = evaluate(&EvalModel::Analytic(ShapeFactor::ConesCylinders), &data).unwrap();
    assert_eq!(e.predictions.len(), 30);
    assert_eq!(e.model, "analytic:cones-cylinders");
    assert!(e.metrics.r_squared.unwrap() < 1.0);
    assert!(e.predictions.iter().all(|p| p.predicted > 0.0));
}

#[test]
fn trained_model_fits_training_set_and_penalizes_length() {
    let data = generate_dataset(&DatasetSpec::new(7, 20, 50, 4.0)).unwrap();
    let cfg = TrainConfig {
        model: ModelKind::Embedded,
        num_epochs: 500,
        batch_size: 6,
        learning_rate: 0.05,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, &data).unwrap();
    t.run(|_| {}).unwrap();
    let ck = t.state.checkpoint();
    let e = evaluate(&EvalModel::Trained(ck), &data).unwrap();
    assert!(e.metrics.r_squared.unwrap() > 0.99, "{:?}", e.metrics);

    let ModelParameters::Embedded(p) = &t.state.params else {
        unreachable!()
    };
    let rep = feature_sensitivity(t.networks(), p).unwrap();
    let len = rep.summary("throat_total_length").unwrap();
    assert!(len.median < 0.0, "{len:?}");
}

#[test]
fn evaluation_requires_targets() {
    let mut data = generate_dataset(&DatasetSpec::new(3, 4, 12, 4.0)).unwrap();
    data[2].target_permeability = None;
    assert!(matches!(
        evaluate(&EvalModel::Analytic(ShapeFactor::ConesCylinders), &data),
        Err(Error::Sample { sample: 2, .. })
    ));
}

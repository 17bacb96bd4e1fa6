//! End-to-end acceptance checks. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::time::Instant;

use porenet::adjoint::{gradient_check, permeability_gradient, FD_NOISE_FACTOR};
use porenet::eval::{evaluate, metrics, EvalModel};
use porenet::gnn::{gnn_backward, gnn_forward, GnnDims, GnnParameters, ModelKind};
use porenet::network::{
    compute_norm_stats, generate_dataset, generate_synthetic, normalize, synthetic_truth,
    DatasetSpec, Physical, PoreKind, PoreNetwork, EDGE_DIM, NODE_DIM,
};
use porenet::solver::{self, analytic_conductance, throat_flows, ShapeFactor};
use porenet::training::{predict, sample_gradient, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn truth_network(seed: u64, pores: usize) -> PoreNetwork {
    let net = generate_synthetic(seed, pores, 4.0).unwrap();
    synthetic_truth(&net, seed ^ 0x5eed).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn adjoint_matches_finite_differences() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut throats = 0;
    for i in 0..20u64 {
        let pores = 10 + (90 * i as usize) / 19;
        let net = truth_network(100 + i, pores);
        let g =
            analytic_conductance(&net, ShapeFactor::ConesCylinders).map_err(|e| e.to_string())?;
        let check = gradient_check(&net, &g, net.target_permeability.unwrap(), 1e-6, 1e-5)
            .map_err(|e| e.to_string())?;
        worst = worst.max(check.max_relative_error);
        throats += g.len();
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-5 && secs < 10.0,
        format!("20 networks, {throats} throats, max relative error {worst:.2e} (< 1e-5), {secs:.2} s (< 10 s)"),
    )
}

fn micro_network(num_pores: usize, throats: &[[usize; 2]], physical: Physical) -> PoreNetwork {
    PoreNetwork {
        num_pores,
        num_throats: throats.len(),
        throat_endpoints: throats.to_vec(),
        node_features: vec![[1.0; NODE_DIM]; num_pores],
        edge_features: vec![[1.0; EDGE_DIM]; throats.len()],
        inlet_pores: vec![0],
        outlet_pores: vec![num_pores - 1],
        physical,
        target_permeability: None,
    }
}

fn analytic_micro_networks() -> Outcome {
    let physical = Physical {
        viscosity: 1.0e-3,
        domain_length: 2.0e-4,
        cross_section_area: 3.0e-8,
        inlet_pressure: 250.0,
        outlet_pressure: 50.0,
    };
    let dp = physical.pressure_drop();
    let c = physical.viscosity * physical.domain_length / (physical.cross_section_area * dp);
    let (g1, g2) = (3.7e-15, 1.3e-14);
    let mut worst: f64 = 0.0;

    let series = micro_network(3, &[[0, 1], [1, 2]], physical);
    let sol = solver::forward(&series, &[g1, g2]).map_err(|e| e.to_string())?;
    worst = worst.max(rel(sol.inlet_flow, dp * g1 * g2 / (g1 + g2)));
    worst = worst.max(rel(sol.permeability, c * sol.inlet_flow));

    // reversed throat orientation must not change the flow
    let flipped = micro_network(3, &[[1, 0], [2, 1]], physical);
    let sol = solver::forward(&flipped, &[g1, g2]).map_err(|e| e.to_string())?;
    worst = worst.max(rel(sol.inlet_flow, dp * g1 * g2 / (g1 + g2)));

    let parallel = micro_network(2, &[[0, 1], [0, 1]], physical);
    let sol = solver::forward(&parallel, &[g1, g2]).map_err(|e| e.to_string())?;
    worst = worst.max(rel(sol.inlet_flow, dp * (g1 + g2)));
    worst = worst.max(rel(sol.permeability, c * sol.inlet_flow));

    check(
        worst <= 1e-12,
        format!("series, parallel and K = cQ, max relative error {worst:.2e} (<= 1e-12)"),
    )
}

fn gnn_reverse_mode_matches_finite_differences() -> Outcome {
    let h = 1e-6;
    let raw = truth_network(7, 15);
    let stats = compute_norm_stats(std::slice::from_ref(&raw)).map_err(|e| e.to_string())?;
    let net = normalize(&raw, &stats).map_err(|e| e.to_string())?;
    let mut params = GnnParameters::init(GnnDims::default(), 11);
    let (g0, _) = gnn_forward(&net, &params).map_err(|e| e.to_string())?;
    params.output_scale =
        raw.target_permeability.unwrap() / solver::forward(&raw, &g0).unwrap().permeability;
    let (g0, tape) = gnn_forward(&net, &params).map_err(|e| e.to_string())?;

    // full Jacobian by one backward pass per throat
    let jac: Vec<Vec<f64>> = (0..g0.len())
        .map(|t| {
            let mut c = vec![0.0; g0.len()];
            c[t] = 1.0;
            gnn_backward(&tape, &params, &c).unwrap().0.to_flat()
        })
        .collect();
    let w0 = params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sampled: Vec<usize> = (0..50).map(|_| rng.gen_range(0..w0.len())).collect();
    let mut q = params.clone();
    let mut worst_g: f64 = 0.0;
    for &k in &sampled {
        let mut w = w0.clone();
        w[k] += h;
        q.set_flat(&w).unwrap();
        let gp = gnn_forward(&net, &q).unwrap().0;
        w[k] -= 2.0 * h;
        q.set_flat(&w).unwrap();
        let gm = gnn_forward(&net, &q).unwrap().0;
        for t in 0..g0.len() {
            let fd = (gp[t] - gm[t]) / (2.0 * h);
            let floor = FD_NOISE_FACTOR * f64::EPSILON * g0[t] / h / 1e-5;
            let an = jac[t][k];
            worst_g = worst_g.max((an - fd).abs() / an.abs().max(fd.abs()).max(floor));
        }
    }

    // end-to-end loss through the solver, in the training loss scale
    let model = porenet::gnn::ModelParameters::Embedded(params.clone());
    let k_star = raw.target_permeability.unwrap();
    let mut shifted = net.clone();
    shifted.target_permeability = Some(0.5 * k_star);
    let scale = 1.0 / k_star;
    let sg = sample_gradient(&model, &shifted, scale).map_err(|e| e.to_string())?;
    let j = |m: &porenet::gnn::ModelParameters| {
        let k = predict(m, &shifted).unwrap();
        0.5 * scale * scale * (k - 0.5 * k_star).powi(2)
    };
    let floor = FD_NOISE_FACTOR * f64::EPSILON * sg.loss / h / 1e-4;
    let mut qm = model.clone();
    let mut worst_j: f64 = 0.0;
    for &k in &sampled {
        let mut w = w0.clone();
        w[k] += h;
        qm.set_flat(&w).unwrap();
        let jp = j(&qm);
        w[k] -= 2.0 * h;
        qm.set_flat(&w).unwrap();
        let jm = j(&qm);
        let fd = (jp - jm) / (2.0 * h);
        let an = sg.grad[k];
        worst_j = worst_j.max((an - fd).abs() / an.abs().max(fd.abs()).max(floor));
    }
    check(
        worst_g < 1e-5 && worst_j < 1e-4,
        format!(
            "15 pores, 50 parameters: dg/dw max relative error {worst_g:.2e} (< 1e-5), dJ/dw {worst_j:.2e} (< 1e-4)"
        ),
    )
}

fn physical_invariants() -> Outcome {
    let mut homogeneity: f64 = 0.0;
    let mut principle_violation: f64 = 0.0;
    let mut balance: f64 = 0.0;
    // roundoff allowance for boundary excursions, relative to the pressure drop
    let excursion_tol = 1e-12;
    let mut min_sensitivity = f64::INFINITY;
    for i in 0..20u64 {
        let net = generate_synthetic(300 + i, 10 + 5 * i as usize, 4.0).unwrap();
        let g =
            analytic_conductance(&net, ShapeFactor::PyramidsCuboids).map_err(|e| e.to_string())?;
        let sol = solver::forward(&net, &g).map_err(|e| e.to_string())?;

        let alpha = 3.25;
        let scaled: Vec<f64> = g.iter().map(|v| alpha * v).collect();
        let k_scaled = solver::forward(&net, &scaled)
            .map_err(|e| e.to_string())?
            .permeability;
        homogeneity = homogeneity.max(rel(k_scaled, alpha * sol.permeability));

        let (lo, hi) = (net.physical.outlet_pressure, net.physical.inlet_pressure);
        let span = hi - lo;
        for x in &sol.pressures {
            principle_violation = principle_violation
                .max((lo - x) / span)
                .max((x - hi) / span);
        }

        let q = throat_flows(&net, &g, &sol.pressures);
        let kinds = net.pore_kinds();
        let mut net_in = vec![0.0; net.num_pores];
        let mut gross = vec![0.0; net.num_pores];
        for (t, &[a, b]) in net.throat_endpoints.iter().enumerate() {
            net_in[a] -= q[t];
            net_in[b] += q[t];
            gross[a] += q[t].abs();
            gross[b] += q[t].abs();
        }
        // dead-end pores carry no flow, so their residual is measured against the throughput
        for p in 0..net.num_pores {
            if kinds[p] == PoreKind::Internal {
                balance = balance.max(net_in[p].abs() / gross[p].max(sol.inlet_flow.abs()));
            }
        }

        let dk = permeability_gradient(&net, &g, &sol).map_err(|e| e.to_string())?;
        for (d, gi) in dk.iter().zip(&g) {
            min_sensitivity = min_sensitivity.min(d * gi / sol.permeability);
        }
    }
    check(
        homogeneity <= 1e-12 && principle_violation <= excursion_tol && balance <= 1e-9 && min_sensitivity >= -1e-12,
        format!(
            "20 networks: homogeneity {homogeneity:.2e} (<= 1e-12), pressure excursion {principle_violation:.2e} (<= 1e-12), \
             mass balance {balance:.2e} (<= 1e-9), min g/K dK/dg {min_sensitivity:.2e} (>= -1e-12)"
        ),
    )
}

fn training_dataset() -> Vec<PoreNetwork> {
    let mut spec = DatasetSpec::new(7, 200, 50, 4.0);
    spec.pores_jitter = 0.1;
    spec.coordination_jitter = 0.1;
    generate_dataset(&spec).unwrap()
}

fn train(model: ModelKind, data: &[PoreNetwork]) -> Trainer {
    let config = TrainConfig {
        model,
        learning_rate: 0.05,
        num_epochs: 200,
        batch_size: 10,
        seed: 0,
        dims: GnnDims::new(32, 32, 32),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, data).unwrap();
    trainer.run(|_| {}).unwrap();
    trainer
}

fn r_squared(trainer: &Trainer, ids: &[usize]) -> f64 {
    let nets = trainer.networks();
    let y: Vec<f64> = ids
        .iter()
        .map(|&i| nets[i].target_permeability.unwrap())
        .collect();
    let y_hat: Vec<f64> = ids
        .iter()
        .map(|&i| predict(&trainer.state.params, &nets[i]).unwrap())
        .collect();
    metrics(&y, &y_hat).unwrap().r_squared.unwrap()
}

fn end_to_end_learning(trainer: &Trainer, secs: f64) -> Outcome {
    let losses = &trainer.state.progress.train_loss;
    let first = losses[0];
    let last = *losses.last().unwrap();
    let reduction = first / last;
    let r2 = r_squared(trainer, &trainer.val_ids);
    check(
        reduction >= 100.0 && r2 > 0.9,
        format!(
            "200 networks: mean J {first:.3e} -> {last:.3e} ({reduction:.0}x, >= 100x), held-out R^2 {r2:.4} (> 0.9), {secs:.0} s"
        ),
    )
}

fn shifted_r2(trainer: &Trainer, pores: usize) -> f64 {
    let mut spec = DatasetSpec::new(99, 60, pores, 4.0);
    spec.pores_jitter = 0.1;
    let data = generate_dataset(&spec).unwrap();
    let model = EvalModel::Trained(trainer.state.checkpoint());
    evaluate(&model, &data).unwrap().metrics.r_squared.unwrap()
}

fn cross_scale_generalization(embedded: &Trainer, data: &[PoreNetwork]) -> Outcome {
    let baseline = train(ModelKind::Baseline, data);
    let mut ok = true;
    let mut parts = Vec::new();
    for pores in [25, 100] {
        let e = shifted_r2(embedded, pores);
        let b = shifted_r2(&baseline, pores);
        ok &= e >= b;
        parts.push(format!(
            "{pores} pores: embedded R^2 {e:.4} vs baseline {b:.4}"
        ));
    }
    check(ok, parts.join(", "))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..60);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
        let y_hat: Vec<f64> = y
            .iter()
            .map(|v| v * rng.gen_range(0.5..1.5) + rng.gen_range(-0.5..0.5))
            .collect();
        let m = metrics(&y, &y_hat).unwrap();
        let exact = metrics(&y, &y).unwrap();
        let alpha = 10f64.powf(rng.gen_range(-6.0..6.0));
        let sy: Vec<f64> = y.iter().map(|v| alpha * v).collect();
        let sh: Vec<f64> = y_hat.iter().map(|v| alpha * v).collect();
        let s = metrics(&sy, &sh).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300);
        let ok = m.mae <= m.rmse
            && exact.r_squared == Some(1.0)
            && exact.mae == 0.0
            && close(s.mae, alpha * m.mae)
            && close(s.rmse, alpha * m.rmse)
            && close(s.mape_percent.unwrap(), m.mape_percent.unwrap())
            && close(s.r_squared.unwrap(), m.r_squared.unwrap());
        if !ok {
            failures += 1;
        }
    }
    check(
        failures == 0,
        format!("1000 random vectors, {failures} violations"),
    )
}

fn artifacts(jobs: usize) -> Vec<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .unwrap();
    pool.install(|| {
        let mut spec = DatasetSpec::new(5, 24, 18, 4.0);
        spec.pores_jitter = 0.2;
        let data = generate_dataset(&spec).unwrap();
        let mut out: Vec<String> = data.iter().map(PoreNetwork::to_json).collect();
        for model in [ModelKind::Embedded, ModelKind::Baseline] {
            let config = TrainConfig {
                model,
                num_epochs: 3,
                batch_size: 4,
                seed: 9,
                dims: GnnDims::new(8, 8, 8),
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(config, &data).unwrap();
            trainer.run(|_| {}).unwrap();
            let ck = trainer.state.checkpoint();
            out.push(ck.to_json());
            let evaluation = evaluate(&EvalModel::Trained(ck), &data).unwrap();
            out.push(serde_json::to_string(&evaluation).unwrap());
        }
        let analytic = evaluate(&EvalModel::Analytic(ShapeFactor::CubesCuboids), &data).unwrap();
        out.push(serde_json::to_string(&analytic).unwrap());
        out
    })
}

fn determinism() -> Outcome {
    let a = artifacts(1);
    let b = artifacts(1);
    let c = artifacts(2);
    check(
        a == b && a == c,
        format!(
            "{} gen/train/eval artifacts: rerun identical {}, 1 vs 2 threads identical {}",
            a.len(),
            a == b,
            a == c
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag}: {name}: {detail}");
    };
    report(1, "adjoint gradient", adjoint_matches_finite_differences());
    report(2, "analytic micro-networks", analytic_micro_networks());
    report(
        3,
        "GNN reverse mode",
        gnn_reverse_mode_matches_finite_differences(),
    );
    report(4, "physical invariants", physical_invariants());

    let data = training_dataset();
    let start = Instant::now();
    let embedded = train(ModelKind::Embedded, &data);
    let secs = start.elapsed().as_secs_f64();
    report(
        5,
        "end-to-end learning",
        end_to_end_learning(&embedded, secs),
    );
    report(
        6,
        "cross-scale generalization",
        cross_scale_generalization(&embedded, &data),
    );
    report(7, "metric identities", metric_identities());
    report(8, "determinism", determinism());

    if failed > 0 {
        println!("acceptance: {failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 8 criteria passed");
}

//! Discrete adjoint of the reduced pore-pressure system.
//!
//! With `r(x, g) = A(g) x − b(g)` and a scalar loss `J(K(x))`, one solve of
//! `Aᵀ λ = (∂J/∂x)ᵀ` yields every `dJ/dg_i`:
//!
//! `dJ/dg_i = (λ_p2 − λ_p1)(x_p1 − x_p2) + ∂J/∂K · c · s_i δ_inlet(i) (x_p1 − x_p2)`
//!
//! where `λ` is zero on boundary pores and `s_i = ±1` orients inlet throats.
//! `A` is symmetric, so the adjoint solve reuses the forward factorization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::PoreNetwork;
use crate::solver::{self, check_conductance, FlowSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointResult {
    /// Adjoint over internal pores, indexed like the reduced system.
    pub lambda: Vec<f64>,
    pub dj_dg: Vec<f64>,
    /// `∂J/∂K`; equals `K − K*` for the squared loss.
    pub dj_dk: f64,
}

/// `½ (K − K*)²`.
pub fn squared_loss(k: f64, k_star: f64) -> f64 {
    0.5 * (k - k_star).powi(2)
}

fn check_pairing(network: &PoreNetwork, g: &[f64], sol: &FlowSolution) -> Result<()> {
    check_conductance(network, g)?;
    if sol.pressures.len() != network.num_pores
        || sol.system.internal_index.len() != network.num_pores
    {
        return Err(Error::DimensionMismatch(
            "flow solution does not belong to this network".into(),
        ));
    }
    Ok(())
}

/// `∂Q_in/∂x` over internal pores: `± s_i g_i` at internal endpoints of inlet throats.
pub fn inlet_flow_sensitivity(network: &PoreNetwork, g: &[f64], sol: &FlowSolution) -> Vec<f64> {
    let sys = &sol.system;
    let mut lq = vec![0.0; sys.num_unknowns()];
    for it in &sys.inlet_throats {
        let [a, b] = network.throat_endpoints[it.throat];
        let w = it.sign * g[it.throat];
        if let Some(ia) = sys.internal_index[a] {
            lq[ia] += w;
        }
        if let Some(ib) = sys.internal_index[b] {
            lq[ib] -= w;
        }
    }
    lq
}

/// Adjoint solve for an arbitrary loss cotangent `∂J/∂K`.
pub fn adjoint_with_cotangent(
    network: &PoreNetwork,
    g: &[f64],
    sol: &FlowSolution,
    dj_dk: f64,
) -> Result<AdjointResult> {
    check_pairing(network, g, sol)?;
    if !dj_dk.is_finite() {
        return Err(Error::NonFinite {
            layer: "loss cotangent".into(),
            index: 0,
        });
    }
    let scale = dj_dk * sol.darcy_factor;
    let rhs: Vec<f64> = inlet_flow_sensitivity(network, g, sol)
        .into_iter()
        .map(|v| scale * v)
        .collect();
    let lambda = if rhs.iter().all(|&v| v == 0.0) {
        vec![0.0; rhs.len()]
    } else {
        sol.system.solve_linear(&rhs)?
    };
    let mut adj = AdjointResult {
        lambda,
        dj_dg: Vec::new(),
        dj_dk,
    };
    adj.dj_dg = gradient_wrt_conductance(network, g, sol, &adj)?;
    Ok(adj)
}

/// Adjoint of the squared loss `½ (K − K*)²`.
pub fn adjoint_solve(
    network: &PoreNetwork,
    g: &[f64],
    sol: &FlowSolution,
    k_star: f64,
) -> Result<AdjointResult> {
    if !k_star.is_finite() {
        return Err(Error::InvalidArgument(
            "target permeability is not finite".into(),
        ));
    }
    adjoint_with_cotangent(network, g, sol, sol.permeability - k_star)
}

/// Closed-form per-throat gradient from a solved adjoint.
pub fn gradient_wrt_conductance(
    network: &PoreNetwork,
    g: &[f64],
    sol: &FlowSolution,
    adj: &AdjointResult,
) -> Result<Vec<f64>> {
    check_pairing(network, g, sol)?;
    let sys = &sol.system;
    if adj.lambda.len() != sys.num_unknowns() {
        return Err(Error::DimensionMismatch(format!(
            "adjoint has {} entries, system has {} unknowns",
            adj.lambda.len(),
            sys.num_unknowns()
        )));
    }
    let x = &sol.pressures;
    let lam = |p: usize| sys.internal_index[p].map_or(0.0, |i| adj.lambda[i]);
    let mut grad: Vec<f64> = network
        .throat_endpoints
        .iter()
        .map(|&[a, b]| (lam(b) - lam(a)) * (x[a] - x[b]))
        .collect();
    let direct = adj.dj_dk * sol.darcy_factor;
    for it in &sys.inlet_throats {
        let [a, b] = network.throat_endpoints[it.throat];
        grad[it.throat] += direct * it.sign * (x[a] - x[b]);
    }
    Ok(grad)
}

/// `dK/dg` via the adjoint with unit loss cotangent.
pub fn permeability_gradient(
    network: &PoreNetwork,
    g: &[f64],
    sol: &FlowSolution,
) -> Result<Vec<f64>> {
    Ok(adjoint_with_cotangent(network, g, sol, 1.0)?.dj_dg)
}

/// Central differences of `J(g) = ½ (K(g) − K*)²` with step `delta · g_i` per throat.
///
/// Each entry costs two full forward solves; meant for verification only.
pub fn fd_gradient(network: &PoreNetwork, g: &[f64], k_star: f64, delta: f64) -> Result<Vec<f64>> {
    check_conductance(network, g)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "relative step must lie in (0, 1), got {delta}"
        )));
    }
    (0..g.len())
        .into_par_iter()
        .map(|i| {
            let h = delta * g[i];
            let mut gp = g.to_vec();
            gp[i] += h;
            let kp = solver::forward(network, &gp)?.permeability;
            gp[i] = g[i] - h;
            let km = solver::forward(network, &gp)?.permeability;
            // J(+) − J(−) = ½ (K₊ − K₋)(K₊ + K₋ − 2K*), free of cancellation in J itself
            Ok(0.5 * (kp - km) * (kp + km - 2.0 * k_star) / (2.0 * h))
        })
        .collect()
}

/// `|a − f| / max(|f|, floor)` elementwise, returning the maximum.
pub fn max_relative_error(adjoint: &[f64], fd: &[f64], floor: f64) -> f64 {
    adjoint
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Absolute floor below which a relative comparison is meaningless.
pub const GRADCHECK_EPS: f64 = 1e-14;
/// Safety factor on the central-difference roundoff estimate.
pub const FD_NOISE_FACTOR: f64 = 64.0;

/// Roundoff bound of each central difference: `ε |K − K*| |K| / h_i` with `h_i = delta · g_i`.
pub fn fd_roundoff(g: &[f64], k: f64, k_star: f64, delta: f64) -> Vec<f64> {
    g.iter()
        .map(|gi| f64::EPSILON * (k - k_star).abs() * k.abs() / (delta * gi))
        .collect()
}

/// Adjoint-versus-finite-difference comparison for every throat.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheck {
    pub adjoint: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// Denominator floor per throat: `max(ε, FD_NOISE_FACTOR · roundoff / tol)`.
    pub floor: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Runs the adjoint and the central-difference oracle on one network and compares them.
///
/// Entries whose magnitude falls below the finite-difference resolution are compared
/// against that resolution instead of their own size.
pub fn gradient_check(
    network: &PoreNetwork,
    g: &[f64],
    k_star: f64,
    delta: f64,
    tolerance: f64,
) -> Result<GradCheck> {
    let sol = solver::forward(network, g)?;
    let adj = adjoint_solve(network, g, &sol, k_star)?;
    let fd = fd_gradient(network, g, k_star, delta)?;
    let floor: Vec<f64> = fd_roundoff(g, sol.permeability, k_star, delta)
        .into_iter()
        .map(|n| (FD_NOISE_FACTOR * n / tolerance).max(GRADCHECK_EPS))
        .collect();
    let relative_error: Vec<f64> = adj
        .dj_dg
        .iter()
        .zip(&fd)
        .zip(&floor)
        .map(|((a, f), fl)| (a - f).abs() / f.abs().max(*fl))
        .collect();
    let max_relative_error = relative_error.iter().copied().fold(0.0, f64::max);
    Ok(GradCheck {
        adjoint: adj.dj_dg,
        finite_difference: fd,
        floor,
        relative_error,
        max_relative_error,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::bare;
    use crate::network::generate_synthetic;
    use crate::solver::forward;
    use rand::{Rng, SeedableRng};

    fn chain() -> PoreNetwork {
        bare(3, &[[0, 1], [1, 2]], &[0], &[2])
    }

    fn random_g(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| rng.gen_range(0.1f64.ln()..10f64.ln()).exp())
            .collect()
    }

    #[test]
    fn zero_loss_gives_zero_adjoint() {
        let net = chain();
        let g = [2.0, 3.0];
        let sol = forward(&net, &g).unwrap();
        let adj = adjoint_solve(&net, &g, &sol, sol.permeability).unwrap();
        assert!(adj.lambda.iter().all(|&v| v == 0.0));
        assert!(adj.dj_dg.iter().all(|&v| v == 0.0));
        assert_eq!(adj.dj_dk, 0.0);
    }

    #[test]
    fn chain_adjoint_by_hand() {
        let net = chain();
        let g = [2.0, 2.0];
        let sol = forward(&net, &g).unwrap();
        let adj = adjoint_solve(&net, &g, &sol, 0.0).unwrap();
        // [4] λ = (K − 0) · c · (−2)
        assert!((adj.lambda[0] + 0.5).abs() < 1e-15);
        // (λ₁ − 0)(1 − 0.5) + 1·1·(1 − 0.5)
        assert!((adj.dj_dg[0] - 0.25).abs() < 1e-15);
        // throat 2: (0 − λ₁)(0.5 − 0) = 0.25
        assert!((adj.dj_dg[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gradient_recomputed_from_lambda_matches() {
        let net = chain();
        let g = [2.0, 2.0];
        let sol = forward(&net, &g).unwrap();
        let adj = adjoint_solve(&net, &g, &sol, 0.0).unwrap();
        let zero = AdjointResult {
            lambda: vec![0.0],
            dj_dg: vec![],
            dj_dk: 0.0,
        };
        assert_eq!(
            gradient_wrt_conductance(&net, &g, &sol, &zero).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            gradient_wrt_conductance(&net, &g, &sol, &adj).unwrap(),
            adj.dj_dg
        );
    }

    #[test]
    fn series_permeability_gradient() {
        let net = chain();
        let g = [2.0, 2.0];
        let sol = forward(&net, &g).unwrap();
        let dk = permeability_gradient(&net, &g, &sol).unwrap();
        assert!((dk[0] - 0.25).abs() < 1e-15);
        let g = [1.0, 3.0];
        let sol = forward(&net, &g).unwrap();
        let dk = permeability_gradient(&net, &g, &sol).unwrap();
        // c ΔP g₂² / (g₁ + g₂)²
        assert!((dk[0] - 9.0 / 16.0).abs() < 1e-14);
        assert!((dk[1] - 1.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn parallel_permeability_gradient() {
        let net = bare(2, &[[0, 1], [1, 0]], &[0], &[1]);
        let g = [3.0, 5.0];
        let sol = forward(&net, &g).unwrap();
        let dk = permeability_gradient(&net, &g, &sol).unwrap();
        assert_eq!(dk, vec![1.0, 1.0]);
    }

    #[test]
    fn lambda_matches_dense_solve() {
        let net = generate_synthetic(30, 30, 4.0).unwrap();
        let g = random_g(net.num_throats, 1);
        let sol = forward(&net, &g).unwrap();
        let adj = adjoint_solve(&net, &g, &sol, 0.3 * sol.permeability).unwrap();
        let sys = &sol.system;
        let n = sys.num_unknowns();
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| sys.matrix.get(j, i));
        let scale = adj.dj_dk * sol.darcy_factor;
        let rhs: Vec<f64> = inlet_flow_sensitivity(&net, &g, &sol)
            .iter()
            .map(|v| v * scale)
            .collect();
        let dense = a.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        let norm = dense.norm();
        let diff: f64 = adj
            .lambda
            .iter()
            .zip(dense.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff / norm < 1e-10, "{}", diff / norm);
    }

    #[test]
    fn fd_step_sizes_agree_on_series_network() {
        let net = chain();
        let g = [2.0, 3.0];
        let a = fd_gradient(&net, &g, 0.0, 1e-4).unwrap();
        let b = fd_gradient(&net, &g, 0.0, 1e-6).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() / y.abs() < 5e-5);
        }
    }

    #[test]
    fn fd_vanishes_at_zero_loss() {
        let net = chain();
        let g = [2.0, 3.0];
        let k = forward(&net, &g).unwrap().permeability;
        let fd = fd_gradient(&net, &g, k, 1e-6).unwrap();
        assert!(fd.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn adjoint_matches_fd_on_synthetic_networks() {
        for seed in 0..4 {
            let net = generate_synthetic(100 + seed, 25, 4.0).unwrap();
            let g = random_g(net.num_throats, seed);
            let k = forward(&net, &g).unwrap().permeability;
            let check = gradient_check(&net, &g, 0.5 * k, 1e-6, 1e-5).unwrap();
            assert!(check.passed(), "seed {seed}: {}", check.max_relative_error);
            // well-resolved entries meet the bound on their own magnitude
            for (i, f) in check.finite_difference.iter().enumerate() {
                if f.abs() > check.floor[i] {
                    assert!((check.adjoint[i] - f).abs() / f.abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn adjoint_reuses_factorization() {
        let net = generate_synthetic(5, 40, 4.0).unwrap();
        let g = random_g(net.num_throats, 5);
        let sol = forward(&net, &g).unwrap();
        assert_eq!(sol.system.counters().factorizations(), 1);
        assert_eq!(sol.system.counters().solves(), 1);
        adjoint_solve(&net, &g, &sol, 0.0).unwrap();
        assert_eq!(sol.system.counters().factorizations(), 1);
        assert_eq!(sol.system.counters().solves(), 2);
    }

    #[test]
    fn mismatched_solution_rejected() {
        let net = chain();
        let other = bare(2, &[[0, 1]], &[0], &[1]);
        let sol = forward(&other, &[1.0]).unwrap();
        assert!(matches!(
            adjoint_solve(&net, &[1.0, 1.0], &sol, 0.0),
            Err(Error::DimensionMismatch(_))
        ));
    }
}

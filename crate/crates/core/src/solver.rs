//! Pore-pressure assembly, solution and Darcy permeability.
//!
//! Mass balance at every internal pore gives `Σ_i g_i (x_p − x_p') = 0`. Boundary
//! pressures are data: their contributions move to the right-hand side, so the
//! reduced matrix over internal pores stays symmetric positive definite.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{edge, PoreKind, PoreNetwork, UnionFind};
use crate::sparse::{pcg, relative_residual, Cholesky, CsrMatrix};

/// Idealized conduit geometry selecting one precomputed size-factor column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFactor {
    PyramidsCuboids,
    ConesCylinders,
    TrapezoidsRectangles,
    CubesCuboids,
    SquaresRectangles,
}

impl ShapeFactor {
    pub const ALL: [ShapeFactor; 5] = [
        ShapeFactor::PyramidsCuboids,
        ShapeFactor::ConesCylinders,
        ShapeFactor::TrapezoidsRectangles,
        ShapeFactor::CubesCuboids,
        ShapeFactor::SquaresRectangles,
    ];

    pub fn feature_index(self) -> usize {
        match self {
            ShapeFactor::PyramidsCuboids => edge::SIZE_FACTOR_PYRAMIDS_CUBOIDS,
            ShapeFactor::ConesCylinders => edge::SIZE_FACTOR_CONES_CYLINDERS,
            ShapeFactor::TrapezoidsRectangles => edge::SIZE_FACTOR_TRAPEZOIDS_RECTANGLES,
            ShapeFactor::CubesCuboids => edge::SIZE_FACTOR_CUBES_CUBOIDS,
            ShapeFactor::SquaresRectangles => edge::SIZE_FACTOR_SQUARES_RECTANGLES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeFactor::PyramidsCuboids => "pyramids-cuboids",
            ShapeFactor::ConesCylinders => "cones-cylinders",
            ShapeFactor::TrapezoidsRectangles => "trapezoids-rectangles",
            ShapeFactor::CubesCuboids => "cubes-cuboids",
            ShapeFactor::SquaresRectangles => "squares-rectangles",
        }
    }
}

impl fmt::Display for ShapeFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFactor::ALL
            .into_iter()
            .find(|sf| sf.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape factor {s:?}")))
    }
}

/// `g_i = F_i / μ` from the selected size-factor feature of the raw network.
pub fn analytic_conductance(network: &PoreNetwork, shape: ShapeFactor) -> Result<Vec<f64>> {
    let k = shape.feature_index();
    let mu = network.physical.viscosity;
    network
        .edge_features
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if f[k] > 0.0 {
                Ok(f[k] / mu)
            } else {
                Err(Error::Validation(format!(
                    "nonpositive {shape} size factor {} at throat {t}",
                    f[k]
                )))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Systems up to this many unknowns are factored; larger ones use PCG.
    pub direct_max_unknowns: usize,
    pub tolerance: f64,
    pub max_cg_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            direct_max_unknowns: 50_000,
            tolerance: 1e-10,
            max_cg_iterations: 100_000,
        }
    }
}

/// Solver call counters, shared by every solve against one assembled system.
#[derive(Debug, Default)]
pub struct SolveCounters {
    factorizations: AtomicUsize,
    solves: AtomicUsize,
}

impl SolveCounters {
    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

/// A throat carrying inlet flow; `sign` orients `g (x_p1 − x_p2)` to point away from the inlet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InletThroat {
    pub throat: usize,
    pub sign: f64,
}

#[derive(Debug)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Row of each pore in the reduced system; `None` for boundary pores.
    pub internal_index: Vec<Option<usize>>,
    /// Prescribed pressure of each boundary pore.
    pub boundary_pressure: Vec<Option<f64>>,
    pub inlet_throats: Vec<InletThroat>,
    pub options: SolverOptions,
    factor: OnceLock<Cholesky>,
    counters: SolveCounters,
}

impl AssembledSystem {
    pub fn num_unknowns(&self) -> usize {
        self.matrix.n
    }

    pub fn counters(&self) -> &SolveCounters {
        &self.counters
    }

    pub fn uses_direct(&self) -> bool {
        self.matrix.n <= self.options.direct_max_unknowns
    }

    fn factor(&self) -> Result<&Cholesky> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = Cholesky::factor(&self.matrix)?;
        self.counters.factorizations.fetch_add(1, Ordering::Relaxed);
        Ok(self.factor.get_or_init(|| f))
    }

    /// Solves `A y = rhs` to the configured relative residual. `A` is symmetric, so this
    /// also serves transposed (adjoint) solves and reuses the cached factorization.
    pub fn solve_linear(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.matrix.n {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} entries, system has {}",
                rhs.len(),
                self.matrix.n
            )));
        }
        self.counters.solves.fetch_add(1, Ordering::Relaxed);
        if self.matrix.n == 0 {
            return Ok(Vec::new());
        }
        let tol = self.options.tolerance;
        if self.uses_direct() {
            let f = self.factor()?;
            let mut y = f.solve(rhs);
            let mut res = relative_residual(&self.matrix, &y, rhs);
            // iterative refinement for badly scaled systems
            for _ in 0..3 {
                if res <= tol {
                    break;
                }
                let ay = self.matrix.matvec(&y);
                let r: Vec<f64> = rhs.iter().zip(&ay).map(|(b, a)| b - a).collect();
                let dy = f.solve(&r);
                y.iter_mut().zip(&dy).for_each(|(a, d)| *a += d);
                res = relative_residual(&self.matrix, &y, rhs);
            }
            if !(res <= tol) {
                return Err(Error::NonConvergence {
                    residual: res,
                    iterations: 0,
                });
            }
            Ok(y)
        } else {
            let (y, _) = pcg(&self.matrix, rhs, tol, self.options.max_cg_iterations)?;
            Ok(y)
        }
    }
}

pub fn check_conductance(network: &PoreNetwork, g: &[f64]) -> Result<()> {
    if g.len() != network.num_throats {
        return Err(Error::DimensionMismatch(format!(
            "conductance vector has {} entries, network has {} throats",
            g.len(),
            network.num_throats
        )));
    }
    if let Some(t) = g.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Validation(format!(
            "conductance must be positive and finite, got {} at throat {t}",
            g[t]
        )));
    }
    Ok(())
}

pub fn assemble(network: &PoreNetwork, g: &[f64]) -> Result<AssembledSystem> {
    assemble_with(network, g, SolverOptions::default())
}

pub fn assemble_with(
    network: &PoreNetwork,
    g: &[f64],
    options: SolverOptions,
) -> Result<AssembledSystem> {
    network.validate_structure()?;
    check_conductance(network, g)?;
    let kinds = network.pore_kinds();
    let ph = &network.physical;

    let mut internal_index = vec![None; network.num_pores];
    let mut boundary_pressure = vec![None; network.num_pores];
    let mut n = 0;
    for (p, kind) in kinds.iter().enumerate() {
        match kind {
            PoreKind::Internal => {
                internal_index[p] = Some(n);
                n += 1;
            }
            PoreKind::Inlet => boundary_pressure[p] = Some(ph.inlet_pressure),
            PoreKind::Outlet => boundary_pressure[p] = Some(ph.outlet_pressure),
        }
    }

    // an internal cluster without any boundary contact has a floating pressure level
    let mut uf = UnionFind::new(network.num_pores);
    let mut touches = vec![false; network.num_pores];
    for &[a, b] in &network.throat_endpoints {
        match (internal_index[a], internal_index[b]) {
            (Some(_), Some(_)) => {
                uf.union(a, b);
            }
            (Some(_), None) => touches[a] = true,
            (None, Some(_)) => touches[b] = true,
            (None, None) => {}
        }
    }
    let mut root_touches = vec![false; network.num_pores];
    for p in 0..network.num_pores {
        if touches[p] {
            let r = uf.find(p);
            root_touches[r] = true;
        }
    }
    let deg = network.degrees();
    for p in 0..network.num_pores {
        if internal_index[p].is_some() {
            if deg[p] == 0 {
                return Err(Error::Singular(format!(
                    "internal pore {p} has no incident throat"
                )));
            }
            if !root_touches[uf.find(p)] {
                return Err(Error::Singular(format!(
                    "internal pore {p} belongs to a cluster with no boundary connection"
                )));
            }
        }
    }

    let mut triplets = Vec::with_capacity(4 * network.num_throats);
    let mut rhs = vec![0.0; n];
    let mut inlet_throats = Vec::new();
    for (t, &[a, b]) in network.throat_endpoints.iter().enumerate() {
        let gi = g[t];
        match (internal_index[a], internal_index[b]) {
            (Some(ia), Some(ib)) => {
                triplets.push((ia, ia, gi));
                triplets.push((ib, ib, gi));
                triplets.push((ia, ib, -gi));
                triplets.push((ib, ia, -gi));
            }
            (Some(ia), None) => {
                triplets.push((ia, ia, gi));
                rhs[ia] += gi * boundary_pressure[b].unwrap();
            }
            (None, Some(ib)) => {
                triplets.push((ib, ib, gi));
                rhs[ib] += gi * boundary_pressure[a].unwrap();
            }
            (None, None) => {}
        }
        match (kinds[a], kinds[b]) {
            (PoreKind::Inlet, PoreKind::Inlet) => {}
            (PoreKind::Inlet, _) => inlet_throats.push(InletThroat {
                throat: t,
                sign: 1.0,
            }),
            (_, PoreKind::Inlet) => inlet_throats.push(InletThroat {
                throat: t,
                sign: -1.0,
            }),
            _ => {}
        }
    }

    Ok(AssembledSystem {
        matrix: CsrMatrix::from_triplets(n, &triplets),
        rhs,
        internal_index,
        boundary_pressure,
        inlet_throats,
        options,
        factor: OnceLock::new(),
        counters: SolveCounters::default(),
    })
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Pressure at every pore; boundary entries hold the prescribed values.
    pub pressures: Vec<f64>,
    pub inlet_flow: f64,
    pub permeability: f64,
    /// `c = μL / (A_s ΔP)`, so that `permeability = darcy_factor · inlet_flow`.
    pub darcy_factor: f64,
    pub system: Arc<AssembledSystem>,
}

/// Signed inlet flow `Σ_{i∈T_inlet} s_i g_i (x_p1 − x_p2)`.
pub fn inlet_flow(system: &AssembledSystem, network: &PoreNetwork, g: &[f64], x: &[f64]) -> f64 {
    system
        .inlet_throats
        .iter()
        .map(|it| {
            let [a, b] = network.throat_endpoints[it.throat];
            it.sign * g[it.throat] * (x[a] - x[b])
        })
        .sum()
}

pub fn solve(
    system: &Arc<AssembledSystem>,
    network: &PoreNetwork,
    g: &[f64],
) -> Result<FlowSolution> {
    check_conductance(network, g)?;
    if system.internal_index.len() != network.num_pores {
        return Err(Error::DimensionMismatch(
            "assembled system does not belong to this network".into(),
        ));
    }
    let y = system.solve_linear(&system.rhs)?;
    let mut pressures = vec![0.0; network.num_pores];
    for p in 0..network.num_pores {
        pressures[p] = match (system.internal_index[p], system.boundary_pressure[p]) {
            (Some(i), _) => y[i],
            (None, Some(v)) => v,
            (None, None) => unreachable!("pore is neither internal nor boundary"),
        };
    }
    let q = inlet_flow(system, network, g, &pressures);
    let c = network.physical.darcy_factor();
    Ok(FlowSolution {
        pressures,
        inlet_flow: q,
        permeability: c * q,
        darcy_factor: c,
        system: Arc::clone(system),
    })
}

/// Assemble and solve in one call.
pub fn forward(network: &PoreNetwork, g: &[f64]) -> Result<FlowSolution> {
    forward_with(network, g, SolverOptions::default())
}

pub fn forward_with(
    network: &PoreNetwork,
    g: &[f64],
    options: SolverOptions,
) -> Result<FlowSolution> {
    let system = Arc::new(assemble_with(network, g, options)?);
    solve(&system, network, g)
}

/// `q_i = g_i (x_p1 − x_p2)` for every throat.
pub fn throat_flows(network: &PoreNetwork, g: &[f64], pressures: &[f64]) -> Vec<f64> {
    network
        .throat_endpoints
        .iter()
        .zip(g)
        .map(|(&[a, b], gi)| gi * (pressures[a] - pressures[b]))
        .collect()
}

/// Net flow entering the outlet pores from non-outlet neighbours.
pub fn outlet_flow(network: &PoreNetwork, g: &[f64], pressures: &[f64]) -> f64 {
    let kinds = network.pore_kinds();
    network
        .throat_endpoints
        .iter()
        .zip(g)
        .map(|(&[a, b], gi)| {
            let q = gi * (pressures[a] - pressures[b]);
            match (kinds[a], kinds[b]) {
                (PoreKind::Outlet, PoreKind::Outlet) => 0.0,
                (_, PoreKind::Outlet) => q,
                (PoreKind::Outlet, _) => -q,
                _ => 0.0,
            }
        })
        .sum()
}

/// Pressures and throat flows keyed by index, for diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct FlowDump {
    pub pressures: BTreeMap<usize, f64>,
    pub throat_flows: BTreeMap<usize, f64>,
    pub inlet_flow: f64,
    pub permeability: f64,
}

impl FlowDump {
    pub fn new(network: &PoreNetwork, g: &[f64], sol: &FlowSolution) -> Self {
        FlowDump {
            pressures: sol.pressures.iter().copied().enumerate().collect(),
            throat_flows: throat_flows(network, g, &sol.pressures)
                .into_iter()
                .enumerate()
                .collect(),
            inlet_flow: sol.inlet_flow,
            permeability: sol.permeability,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dump serializes")
    }
}

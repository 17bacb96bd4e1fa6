//! Seeded generator for desk-scale networks with hidden ground-truth conductances.
//!
//! Geometry (all SI):
//! - a per-network grain factor `s ~ LogU(0.6, 1.6)` sets the pore spacing
//!   `a = 60 µm · s`; the domain is a cube of side `a · n^(1/3)`;
//! - pore centres are uniform in the cube; pore diameter `~ a · LogU(0.25, 0.55)`,
//!   inscribed `= d · U(0.70, 0.95)`, extended `= d · U(1.05, 1.30)`;
//! - throat diameter `= min(d_p1, d_p2) · LogU(0.35, 0.75)`, inscribed `= d_t · U(0.75, 0.95)`;
//!   total length is the centre distance, direct length subtracts both pore radii
//!   (floored at 5% of the total);
//! - the five size factors integrate `dx / (C D⁴)` over the pore-throat-pore conduit
//!   under different idealized shapes (see [`size_factors`]).
//!
//! Hidden truth law, per throat `i`:
//! `g*_i = π d_t⁴ / (128 μ L_tot) · tanh(2 d_t / L_tot) · ρ_i`, with `ρ_i ~ LogU(0.9, 1.1)`
//! drawn from the truth seed. The `tanh` factor saturates for short fat throats and makes
//! the law differ in form from every size-factor column.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{edge, node, Physical, PoreNetwork, UnionFind, EDGE_DIM, NODE_DIM};
use crate::error::{Error, Result};
use crate::solver;

const BASE_SPACING: f64 = 6.0e-5;
const VISCOSITY: f64 = 1.0e-3;
const INLET_PRESSURE: f64 = 1.0e3;
const OUTLET_PRESSURE: f64 = 0.0;
const BOUNDARY_FRACTION: f64 = 0.1;

/// Square-duct Poiseuille coefficient: `g = C_SQUARE a⁴ / (μ L)` for side `a`.
const C_SQUARE: f64 = 1.0 / 28.45;

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-item seed derived from a root seed.
pub(crate) fn derive_seed(root: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(root ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)) ^ index)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn generate_synthetic(
    seed: u64,
    num_pores: usize,
    avg_coordination: f64,
) -> Result<PoreNetwork> {
    if num_pores < 4 {
        return Err(Error::InvalidArgument(format!(
            "num_pores must be at least 4, got {num_pores}"
        )));
    }
    if !(avg_coordination >= 2.0 && avg_coordination <= (num_pores - 1) as f64) {
        return Err(Error::InvalidArgument(format!(
            "avg_coordination must lie in [2, {}], got {avg_coordination}",
            num_pores - 1
        )));
    }
    let n = num_pores;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let grain = log_uniform(&mut rng, 0.6, 1.6);
    let spacing = BASE_SPACING * grain;
    let side = spacing * (n as f64).cbrt();

    let pos: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.gen::<f64>() * side,
                rng.gen::<f64>() * side,
                rng.gen::<f64>() * side,
            ]
        })
        .collect();
    let diam: Vec<f64> = (0..n)
        .map(|_| spacing * log_uniform(&mut rng, 0.25, 0.55))
        .collect();

    // neighbour lists by distance, ties broken by index
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|p| {
            let mut others: Vec<usize> = (0..n).filter(|&q| q != p).collect();
            others.sort_by(|&a, &b| {
                dist(&pos[p], &pos[a])
                    .total_cmp(&dist(&pos[p], &pos[b]))
                    .then(a.cmp(&b))
            });
            others
        })
        .collect();

    let target_throats = ((n as f64) * avg_coordination / 2.0).round() as usize;
    let mut pairs: Vec<[usize; 2]> = Vec::with_capacity(target_throats);
    let mut present = std::collections::HashSet::new();
    'rounds: for k in 0..n - 1 {
        for p in 0..n {
            if pairs.len() >= target_throats {
                break 'rounds;
            }
            let q = neighbours[p][k];
            let key = (p.min(q), p.max(q));
            if present.insert(key) {
                pairs.push([key.0, key.1]);
            }
        }
    }

    // bridge every component into the one holding pore 0
    loop {
        let mut uf = UnionFind::new(n);
        for &[a, b] in &pairs {
            uf.union(a, b);
        }
        let root = uf.find(0);
        let in_main: Vec<bool> = (0..n).map(|p| uf.find(p) == root).collect();
        if in_main.iter().all(|&m| m) {
            break;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for a in (0..n).filter(|&p| in_main[p]) {
            for b in (0..n).filter(|&p| !in_main[p]) {
                let d = dist(&pos[a], &pos[b]);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        pairs.push([best.1.min(best.2), best.1.max(best.2)]);
    }

    // orient throats along +x so positive flow runs inlet → outlet
    let throat_endpoints: Vec<[usize; 2]> = pairs
        .iter()
        .map(|&[a, b]| {
            if pos[a][0] <= pos[b][0] {
                [a, b]
            } else {
                [b, a]
            }
        })
        .collect();

    let mut by_x: Vec<usize> = (0..n).collect();
    by_x.sort_by(|&a, &b| pos[a][0].total_cmp(&pos[b][0]).then(a.cmp(&b)));
    let n_boundary = ((n as f64 * BOUNDARY_FRACTION).round() as usize).max(1);
    let mut inlet_pores: Vec<usize> = by_x[..n_boundary].to_vec();
    let mut outlet_pores: Vec<usize> = by_x[n - n_boundary..].to_vec();
    inlet_pores.sort_unstable();
    outlet_pores.sort_unstable();

    let mut coordination = vec![0usize; n];
    for &[a, b] in &throat_endpoints {
        coordination[a] += 1;
        coordination[b] += 1;
    }

    let node_features: Vec<[f64; NODE_DIM]> = (0..n)
        .map(|p| {
            let d = diam[p];
            let mut f = [0.0; NODE_DIM];
            f[node::DIAMETER] = d;
            f[node::INSCRIBED_DIAMETER] = d * rng.gen_range(0.70..0.95);
            f[node::EXTENDED_DIAMETER] = d * rng.gen_range(1.05..1.30);
            f[node::COORDINATION] = coordination[p] as f64;
            f[node::SURFACE_AREA_CUBE] = 6.0 * d * d;
            f[node::SURFACE_AREA_SPHERE] = PI * d * d;
            f[node::VOLUME_CUBE] = d * d * d;
            f[node::VOLUME_SPHERE] = PI * d * d * d / 6.0;
            f
        })
        .collect();

    let edge_features: Vec<[f64; EDGE_DIM]> = throat_endpoints
        .iter()
        .map(|&[a, b]| {
            let (da, db) = (diam[a], diam[b]);
            let dt = da.min(db) * log_uniform(&mut rng, 0.35, 0.75);
            let din = dt * rng.gen_range(0.75..0.95);
            let total = dist(&pos[a], &pos[b]);
            let direct = (total - 0.5 * (da + db)).max(0.05 * total);
            let area = PI * dt * dt / 4.0;
            let mut f = [0.0; EDGE_DIM];
            f[edge::DIAMETER] = dt;
            f[edge::INSCRIBED_DIAMETER] = din;
            f[edge::TOTAL_LENGTH] = total;
            f[edge::DIRECT_LENGTH] = direct;
            f[edge::CROSS_SECTIONAL_AREA] = area;
            f[edge::EQUIVALENT_DIAMETER] = 0.5 * (dt + din);
            let sf = size_factors(da, db, dt, din, direct);
            f[edge::SIZE_FACTOR_PYRAMIDS_CUBOIDS..=edge::SIZE_FACTOR_SQUARES_RECTANGLES]
                .copy_from_slice(&sf);
            f[edge::AREA_CUBOID] = dt * dt;
            f[edge::AREA_CYLINDER] = area;
            f[edge::PERIMETER_CUBOID] = 4.0 * dt;
            f[edge::PERIMETER_CYLINDER] = PI * dt;
            f
        })
        .collect();

    let net = PoreNetwork {
        num_pores: n,
        num_throats: throat_endpoints.len(),
        throat_endpoints,
        node_features,
        edge_features,
        inlet_pores,
        outlet_pores,
        physical: Physical {
            viscosity: VISCOSITY,
            domain_length: side,
            cross_section_area: side * side,
            inlet_pressure: INLET_PRESSURE,
            outlet_pressure: OUTLET_PRESSURE,
        },
        target_permeability: None,
    };
    net.validate()?;
    Ok(net)
}

/// Hydraulic size factors [m⁴] for the pore-throat-pore conduit, in column order
/// pyramids-cuboids, cones-cylinders, trapezoids-rectangles, cubes-cuboids,
/// squares-rectangles. Each pore contributes a segment of length equal to its radius.
fn size_factors(da: f64, db: f64, dt: f64, din: f64, lt: f64) -> [f64; 5] {
    let (ra, rb) = (0.5 * da, 0.5 * db);

    // pyramids taper from the pore side to the throat side; square throat of equal area
    let sq_throat = dt * PI.sqrt() / 2.0;
    let pyramid = |d: f64, len: f64| len / (C_SQUARE * (d * dt).powi(2));
    let pyramids_cuboids =
        1.0 / (pyramid(da, ra) + lt / (C_SQUARE * sq_throat.powi(4)) + pyramid(db, rb));

    // conical frustum r1 → r2 over length L: ∫dx/r⁴ = L (r1² + r1 r2 + r2²) / (3 r1³ r2³)
    let frustum = |r1: f64, r2: f64, len: f64| {
        len * (r1 * r1 + r1 * r2 + r2 * r2) / (3.0 * r1.powi(3) * r2.powi(3))
    };
    let rt = 0.5 * dt;
    let cones_cylinders =
        (PI / 8.0) / (frustum(ra, rt, ra) + lt / rt.powi(4) + frustum(rb, rt, rb));

    // slot flow with depth dt: ∫dx/h³ over a linear taper h1 → h2 is L (h1 + h2) / (2 h1² h2²)
    let taper = |h1: f64, h2: f64, len: f64| len * (h1 + h2) / (2.0 * h1 * h1 * h2 * h2);
    let trapezoids_rectangles =
        (dt / 12.0) / (taper(da, din, ra) + lt / din.powi(3) + taper(db, din, rb));

    let cubes_cuboids = C_SQUARE / (ra / da.powi(4) + lt / dt.powi(4) + rb / db.powi(4));

    // rectangle w × h (h ≤ w): g μ L ≈ w h³ / 12 · (1 - 0.63 h / w)
    let rect = |w: f64, h: f64| w * h.powi(3) / 12.0 * (1.0 - 0.63 * h / w);
    let sa = 0.9 * da;
    let sb = 0.9 * db;
    let squares_rectangles = 1.0 / (ra / rect(sa, sa) + lt / rect(dt, din) + rb / rect(sb, sb));

    [
        pyramids_cuboids,
        cones_cylinders,
        trapezoids_rectangles,
        cubes_cuboids,
        squares_rectangles,
    ]
}

/// Hidden per-throat conductances [m³/(Pa·s)] of the synthetic truth law.
pub fn truth_conductance(network: &PoreNetwork, truth_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(truth_seed);
    let mu = network.physical.viscosity;
    network
        .edge_features
        .iter()
        .map(|f| {
            let dt = f[edge::DIAMETER];
            let len = f[edge::TOTAL_LENGTH];
            let roughness = log_uniform(&mut rng, 0.9, 1.1);
            PI * dt.powi(4) / (128.0 * mu * len) * (2.0 * dt / len).tanh() * roughness
        })
        .collect()
}

/// Returns a copy of `network` whose `target_permeability` comes from the hidden truth law.
pub fn synthetic_truth(network: &PoreNetwork, truth_seed: u64) -> Result<PoreNetwork> {
    network.validate()?;
    let g = truth_conductance(network, truth_seed);
    let sol = solver::forward(network, &g)?;
    let mut out = network.clone();
    out.target_permeability = Some(sol.permeability);
    Ok(out)
}

/// Parameters of a generated dataset. Per-network pore counts and coordinations are
/// jittered uniformly by the given fractions around the nominal values.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub count: usize,
    pub pores: usize,
    pub coordination: f64,
    #[serde(default)]
    pub pores_jitter: f64,
    #[serde(default)]
    pub coordination_jitter: f64,
}

impl DatasetSpec {
    pub fn new(seed: u64, count: usize, pores: usize, coordination: f64) -> Self {
        DatasetSpec {
            seed,
            count,
            pores,
            coordination,
            pores_jitter: 0.0,
            coordination_jitter: 0.0,
        }
    }

    /// `(network seed, truth seed, pores, coordination)` for sample `k`.
    pub fn sample_params(&self, k: usize) -> (u64, u64, usize, f64) {
        let net_seed = derive_seed(self.seed, k as u64, 1);
        let truth_seed = derive_seed(self.seed, k as u64, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, k as u64, 3));
        let jp = if self.pores_jitter > 0.0 {
            rng.gen_range(-self.pores_jitter..=self.pores_jitter)
        } else {
            0.0
        };
        let jc = if self.coordination_jitter > 0.0 {
            rng.gen_range(-self.coordination_jitter..=self.coordination_jitter)
        } else {
            0.0
        };
        let pores = ((self.pores as f64) * (1.0 + jp)).round().max(4.0) as usize;
        let coord = (self.coordination * (1.0 + jc)).clamp(2.0, (pores - 1) as f64);
        (net_seed, truth_seed, pores, coord)
    }
}

/// Generates `spec.count` networks with targets set; output order is sample order.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<PoreNetwork>> {
    if spec.pores < 4 {
        return Err(Error::InvalidArgument(format!(
            "pores must be at least 4, got {}",
            spec.pores
        )));
    }
    (0..spec.count)
        .into_par_iter()
        .map(|k| {
            let (net_seed, truth_seed, pores, coord) = spec.sample_params(k);
            let net = generate_synthetic(net_seed, pores, coord)?;
            synthetic_truth(&net, truth_seed)
        })
        .collect()
}

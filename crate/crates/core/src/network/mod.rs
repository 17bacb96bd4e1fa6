//! Pore-network data model.
//!
//! A network is a graph of pores (nodes) joined by throats (edges). Each pore
//! carries [`NODE_FEATURES`] geometric descriptors and each throat carries
//! [`EDGE_FEATURES`]. Pressures are prescribed on the inlet and outlet pore
//! sets; everything else is an unknown of the flow problem.

mod norm;
mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use norm::{compute_norm_stats, normalize, NormStats};
pub(crate) use synthetic::derive_seed;
pub use synthetic::{
    generate_dataset, generate_synthetic, synthetic_truth, truth_conductance, DatasetSpec,
};

pub const NODE_DIM: usize = 8;
pub const EDGE_DIM: usize = 15;

pub const NODE_FEATURES: [&str; NODE_DIM] = [
    "pore_diameter",
    "pore_inscribed_diameter",
    "pore_extended_diameter",
    "coordination_number",
    "pore_surface_area_cube",
    "pore_surface_area_sphere",
    "pore_volume_cube",
    "pore_volume_sphere",
];

pub const EDGE_FEATURES: [&str; EDGE_DIM] = [
    "throat_diameter",
    "throat_inscribed_diameter",
    "throat_total_length",
    "throat_direct_length",
    "throat_cross_sectional_area",
    "throat_equivalent_diameter",
    "size_factor_pyramids_cuboids",
    "size_factor_cones_cylinders",
    "size_factor_trapezoids_rectangles",
    "size_factor_cubes_cuboids",
    "size_factor_squares_rectangles",
    "throat_area_cuboid",
    "throat_area_cylinder",
    "throat_perimeter_cuboid",
    "throat_perimeter_cylinder",
];

pub mod node {
    pub const DIAMETER: usize = 0;
    pub const INSCRIBED_DIAMETER: usize = 1;
    pub const EXTENDED_DIAMETER: usize = 2;
    pub const COORDINATION: usize = 3;
    pub const SURFACE_AREA_CUBE: usize = 4;
    pub const SURFACE_AREA_SPHERE: usize = 5;
    pub const VOLUME_CUBE: usize = 6;
    pub const VOLUME_SPHERE: usize = 7;
}

pub mod edge {
    pub const DIAMETER: usize = 0;
    pub const INSCRIBED_DIAMETER: usize = 1;
    pub const TOTAL_LENGTH: usize = 2;
    pub const DIRECT_LENGTH: usize = 3;
    pub const CROSS_SECTIONAL_AREA: usize = 4;
    pub const EQUIVALENT_DIAMETER: usize = 5;
    pub const SIZE_FACTOR_PYRAMIDS_CUBOIDS: usize = 6;
    pub const SIZE_FACTOR_CONES_CYLINDERS: usize = 7;
    pub const SIZE_FACTOR_TRAPEZOIDS_RECTANGLES: usize = 8;
    pub const SIZE_FACTOR_CUBES_CUBOIDS: usize = 9;
    pub const SIZE_FACTOR_SQUARES_RECTANGLES: usize = 10;
    pub const AREA_CUBOID: usize = 11;
    pub const AREA_CYLINDER: usize = 12;
    pub const PERIMETER_CUBOID: usize = 13;
    pub const PERIMETER_CYLINDER: usize = 14;
}

/// Fluid and domain constants, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Physical {
    /// Dynamic viscosity [Pa·s].
    pub viscosity: f64,
    /// Domain length along the flow direction [m].
    pub domain_length: f64,
    /// Cross-sectional area normal to the flow [m²].
    pub cross_section_area: f64,
    pub inlet_pressure: f64,
    pub outlet_pressure: f64,
}

impl Physical {
    pub fn pressure_drop(&self) -> f64 {
        self.inlet_pressure - self.outlet_pressure
    }

    /// Darcy factor `c = μL / (A_s ΔP)` so that `K = c·Q`.
    pub fn darcy_factor(&self) -> f64 {
        self.viscosity * self.domain_length / (self.cross_section_area * self.pressure_drop())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoreKind {
    Inlet,
    Outlet,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoreNetwork {
    pub num_pores: usize,
    pub num_throats: usize,
    /// Ordered `(p1, p2)` per throat; the order fixes the sign of `q = g (x_p1 - x_p2)`.
    pub throat_endpoints: Vec<[usize; 2]>,
    pub node_features: Vec<[f64; NODE_DIM]>,
    pub edge_features: Vec<[f64; EDGE_DIM]>,
    pub inlet_pores: Vec<usize>,
    pub outlet_pores: Vec<usize>,
    pub physical: Physical,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_permeability: Option<f64>,
}

impl PoreNetwork {
    pub fn from_json(text: &str) -> Result<Self> {
        let net: PoreNetwork =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Classifies every pore as inlet, outlet or internal.
    pub fn pore_kinds(&self) -> Vec<PoreKind> {
        let mut kinds = vec![PoreKind::Internal; self.num_pores];
        for &p in &self.inlet_pores {
            kinds[p] = PoreKind::Inlet;
        }
        for &p in &self.outlet_pores {
            kinds[p] = PoreKind::Outlet;
        }
        kinds
    }

    /// Number of throat occurrences at each pore.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_pores];
        for &[a, b] in &self.throat_endpoints {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Throats incident to each pore, in throat order.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_pores];
        for (t, &[a, b]) in self.throat_endpoints.iter().enumerate() {
            inc[a].push(t);
            inc[b].push(t);
        }
        inc
    }

    /// Connected-component label for every pore.
    pub fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.num_pores);
        for &[a, b] in &self.throat_endpoints {
            uf.union(a, b);
        }
        (0..self.num_pores).map(|p| uf.find(p)).collect()
    }

    /// Checks every structural, geometric and physical invariant.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for (p, f) in self.node_features.iter().enumerate() {
            if let Some(k) = f.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Validation(format!(
                    "negative or non-finite node feature {} at pore {p}",
                    NODE_FEATURES[k]
                )));
            }
        }
        for (t, f) in self.edge_features.iter().enumerate() {
            if let Some(k) = f.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Validation(format!(
                    "negative or non-finite edge feature {} at throat {t}",
                    EDGE_FEATURES[k]
                )));
            }
        }
        Ok(())
    }

    /// Invariants that survive normalization: topology, boundary sets and physical constants.
    pub fn validate_structure(&self) -> Result<()> {
        let v = |msg: String| Err(Error::Validation(msg));
        if self.throat_endpoints.len() != self.num_throats {
            return v(format!(
                "throat_endpoints has {} entries, num_throats is {}",
                self.throat_endpoints.len(),
                self.num_throats
            ));
        }
        if self.node_features.len() != self.num_pores {
            return v(format!(
                "node_features has {} rows, num_pores is {}",
                self.node_features.len(),
                self.num_pores
            ));
        }
        if self.edge_features.len() != self.num_throats {
            return v(format!(
                "edge_features has {} rows, num_throats is {}",
                self.edge_features.len(),
                self.num_throats
            ));
        }
        for (t, &[a, b]) in self.throat_endpoints.iter().enumerate() {
            if a >= self.num_pores || b >= self.num_pores {
                return v(format!("throat {t} references pore out of range"));
            }
            if a == b {
                return v(format!("self-loop throat at throat {t}"));
            }
        }
        if self.inlet_pores.is_empty() {
            return v("inlet pore set is empty".into());
        }
        if self.outlet_pores.is_empty() {
            return v("outlet pore set is empty".into());
        }
        let mut seen = vec![0u8; self.num_pores];
        for &p in &self.inlet_pores {
            if p >= self.num_pores {
                return v(format!("inlet pore {p} out of range"));
            }
            if seen[p] != 0 {
                return v(format!("duplicate inlet pore {p}"));
            }
            seen[p] = 1;
        }
        for &p in &self.outlet_pores {
            if p >= self.num_pores {
                return v(format!("outlet pore {p} out of range"));
            }
            match seen[p] {
                1 => return v(format!("pore {p} is both inlet and outlet")),
                2 => return v(format!("duplicate outlet pore {p}")),
                _ => seen[p] = 2,
            }
        }
        let deg = self.degrees();
        if let Some(p) = (0..self.num_pores).find(|&p| seen[p] == 0 && deg[p] == 0) {
            return v(format!("isolated internal pore {p}"));
        }
        let comp = self.components();
        let inlet_comps: std::collections::HashSet<usize> =
            self.inlet_pores.iter().map(|&p| comp[p]).collect();
        if !self
            .outlet_pores
            .iter()
            .any(|&p| inlet_comps.contains(&comp[p]))
        {
            return v("disconnected network: no inlet-to-outlet path".into());
        }
        let ph = &self.physical;
        if !(ph.viscosity > 0.0) {
            return v("viscosity must be positive".into());
        }
        if !(ph.domain_length > 0.0) {
            return v("domain_length must be positive".into());
        }
        if !(ph.cross_section_area > 0.0) {
            return v("cross_section_area must be positive".into());
        }
        if !(ph.inlet_pressure > ph.outlet_pressure) {
            return v("inlet_pressure must exceed outlet_pressure".into());
        }
        if let Some(k) = self.target_permeability {
            if !k.is_finite() {
                return v("target_permeability is not finite".into());
            }
        }
        Ok(())
    }

    /// Relabels pores by `perm` (old index → new index), keeping throat order.
    pub fn permute_pores(&self, perm: &[usize]) -> PoreNetwork {
        assert_eq!(perm.len(), self.num_pores);
        let mut node_features = vec![[0.0; NODE_DIM]; self.num_pores];
        for (old, &new) in perm.iter().enumerate() {
            node_features[new] = self.node_features[old];
        }
        PoreNetwork {
            throat_endpoints: self
                .throat_endpoints
                .iter()
                .map(|&[a, b]| [perm[a], perm[b]])
                .collect(),
            node_features,
            inlet_pores: self.inlet_pores.iter().map(|&p| perm[p]).collect(),
            outlet_pores: self.outlet_pores.iter().map(|&p| perm[p]).collect(),
            ..self.clone()
        }
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // smaller root wins so labels are order-stable
        if ra < rb {
            self.parent[rb] = ra;
        } else {
            self.parent[ra] = rb;
        }
        true
    }
}

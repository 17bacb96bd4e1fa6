use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PoreNetwork, EDGE_DIM, NODE_DIM};
use crate::error::{Error, Result};

/// Per-feature z-score statistics pooled over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
}

impl NormStats {
    /// Statistics that leave features unchanged.
    pub fn identity() -> Self {
        NormStats {
            node_mean: vec![0.0; NODE_DIM],
            node_std: vec![1.0; NODE_DIM],
            edge_mean: vec![0.0; EDGE_DIM],
            edge_std: vec![1.0; EDGE_DIM],
        }
    }

    pub fn check_dims(&self) -> Result<()> {
        let ok = self.node_mean.len() == NODE_DIM
            && self.node_std.len() == NODE_DIM
            && self.edge_mean.len() == EDGE_DIM
            && self.edge_std.len() == EDGE_DIM;
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "norm stats must have {NODE_DIM} node and {EDGE_DIM} edge entries"
            )))
        }
    }

    /// Divisor actually applied for a stored σ (zero maps to one).
    pub fn effective_std(sigma: f64) -> f64 {
        if sigma == 0.0 {
            1.0
        } else {
            sigma
        }
    }

    /// Hex SHA-256 over the bit patterns of all statistics.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in self
            .node_mean
            .iter()
            .chain(&self.node_std)
            .chain(&self.edge_mean)
            .chain(&self.edge_std)
        {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: NormStats =
            serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        stats.check_dims()?;
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn column_stats<'a, const D: usize>(
    rows: impl Iterator<Item = &'a [f64; D]> + Clone,
) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; D];
    for r in rows.clone() {
        n += 1;
        for k in 0..D {
            mean[k] += r[k];
        }
    }
    if n == 0 {
        return (mean, vec![0.0; D]);
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; D];
    for r in rows {
        for k in 0..D {
            let d = r[k] - mean[k];
            var[k] += d * d;
        }
    }
    let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
    (mean, std)
}

/// Pooled mean and population standard deviation of every feature column.
pub fn compute_norm_stats(networks: &[PoreNetwork]) -> Result<NormStats> {
    if networks.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute normalization statistics from an empty network list".into(),
        ));
    }
    let (node_mean, node_std) = column_stats(networks.iter().flat_map(|n| n.node_features.iter()));
    let (edge_mean, edge_std) = column_stats(networks.iter().flat_map(|n| n.edge_features.iter()));
    Ok(NormStats {
        node_mean,
        node_std,
        edge_mean,
        edge_std,
    })
}

/// Applies `z = (f - mean) / σ` to every feature; boundary sets and constants are untouched.
pub fn normalize(network: &PoreNetwork, stats: &NormStats) -> Result<PoreNetwork> {
    stats.check_dims()?;
    let mut out = network.clone();
    for row in &mut out.node_features {
        for k in 0..NODE_DIM {
            row[k] = (row[k] - stats.node_mean[k]) / NormStats::effective_std(stats.node_std[k]);
        }
    }
    for row in &mut out.edge_features {
        for k in 0..EDGE_DIM {
            row[k] = (row[k] - stats.edge_mean[k]) / NormStats::effective_std(stats.edge_std[k]);
        }
    }
    Ok(out)
}

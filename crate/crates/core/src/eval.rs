//! Prediction metrics and gradient-based feature sensitivity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::permeability_gradient;
use crate::error::{Error, Result};
use crate::gnn::{
    gnn_backward, gnn_forward, Checkpoint, FeatureGrad, GnnParameters, ModelParameters,
};
use crate::network::{normalize, PoreNetwork, EDGE_DIM, EDGE_FEATURES, NODE_DIM, NODE_FEATURES};
use crate::solver::{self, analytic_conductance, ShapeFactor};
use crate::training::predict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when some observed value is zero.
    pub mape_percent: Option<f64>,
    /// `None` when the observed values have zero variance.
    pub r_squared: Option<f64>,
}

/// MAE, RMSE, MAPE (percent) and R² of predictions `y_hat` against observations `y`.
pub fn metrics(y: &[f64], y_hat: &[f64]) -> Result<MetricReport> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations but {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument(
            "metrics need at least one sample".into(),
        ));
    }
    if let Some(i) = y.iter().chain(y_hat).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: "metrics input".into(),
            index: i % y.len(),
        });
    }
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut zero = false;
    for (&a, &b) in y.iter().zip(y_hat) {
        let r = a - b;
        abs += r.abs();
        sq += r * r;
        if a == 0.0 {
            zero = true;
        } else {
            pct += (r / a).abs();
        }
    }
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(MetricReport {
        n: y.len(),
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape_percent: (!zero).then(|| 100.0 * pct / n),
        r_squared: (ss_tot > 0.0).then(|| 1.0 - sq / ss_tot),
    })
}

/// Box-plot summary with whiskers at the most extreme points within 1.5 IQR of the quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
    pub n: usize,
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q25 = quantile(&v, 0.25);
        let median = quantile(&v, 0.5);
        let q75 = quantile(&v, 0.75);
        let iqr = q75 - q25;
        let lo_fence = q25 - 1.5 * iqr;
        let hi_fence = q75 + 1.5 * iqr;
        let lo_whisker = *v.iter().find(|&&x| x >= lo_fence).unwrap();
        let hi_whisker = *v.iter().rev().find(|&&x| x <= hi_fence).unwrap();
        Some(BoxSummary {
            median,
            q25,
            q75,
            lo_whisker,
            hi_whisker,
            n: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature: String,
    #[serde(flatten)]
    pub summary: BoxSummary,
}

/// Distributions of `∂K/∂z` [m² per unit z] pooled over every pore and throat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub node: Vec<FeatureSummary>,
    pub edge: Vec<FeatureSummary>,
}

impl SensitivityReport {
    pub fn from_gradients(grads: &[FeatureGrad]) -> Self {
        let column = |f: &dyn Fn(&FeatureGrad) -> Vec<f64>| -> Vec<f64> {
            grads.iter().flat_map(f).collect()
        };
        let node = (0..NODE_DIM)
            .filter_map(|k| {
                let v = column(&|g| g.node.iter().map(|r| r[k]).collect());
                BoxSummary::from_values(&v).map(|summary| FeatureSummary {
                    feature: NODE_FEATURES[k].to_string(),
                    summary,
                })
            })
            .collect();
        let edge = (0..EDGE_DIM)
            .filter_map(|k| {
                let v = column(&|g| g.edge.iter().map(|r| r[k]).collect());
                BoxSummary::from_values(&v).map(|summary| FeatureSummary {
                    feature: EDGE_FEATURES[k].to_string(),
                    summary,
                })
            })
            .collect();
        SensitivityReport { node, edge }
    }

    fn csv(rows: &[FeatureSummary]) -> String {
        let mut out = String::from("feature,median,q25,q75,lo_whisker,hi_whisker,n\n");
        for r in rows {
            let s = &r.summary;
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{}\n",
                r.feature, s.median, s.q25, s.q75, s.lo_whisker, s.hi_whisker, s.n
            ));
        }
        out
    }

    pub fn node_csv(&self) -> String {
        Self::csv(&self.node)
    }

    pub fn edge_csv(&self) -> String {
        Self::csv(&self.edge)
    }

    pub fn summary(&self, feature: &str) -> Option<&BoxSummary> {
        self.node
            .iter()
            .chain(&self.edge)
            .find(|f| f.feature == feature)
            .map(|f| &f.summary)
    }
}

/// `∂K/∂z` for every node and edge feature of one normalized network.
pub fn network_sensitivity(network: &PoreNetwork, params: &GnnParameters) -> Result<FeatureGrad> {
    let (g, tape) = gnn_forward(network, params)?;
    let sol = solver::forward(network, &g)?;
    let dk_dg = permeability_gradient(network, &g, &sol)?;
    Ok(gnn_backward(&tape, params, &dk_dg)?.1)
}

/// Pools [`network_sensitivity`] over normalized networks, in input order.
pub fn feature_sensitivity(
    networks: &[PoreNetwork],
    params: &GnnParameters,
) -> Result<SensitivityReport> {
    let grads: Vec<FeatureGrad> = networks
        .par_iter()
        .enumerate()
        .map(|(i, n)| {
            network_sensitivity(n, params).map_err(|e| Error::Sample {
                sample: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SensitivityReport::from_gradients(&grads))
}

/// What to evaluate.
#[derive(Debug, Clone)]
pub enum EvalModel {
    Trained(Checkpoint),
    Analytic(ShapeFactor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample: usize,
    pub target: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: String,
    pub metrics: MetricReport,
    pub predictions: Vec<Prediction>,
}

/// Permeability of one raw (unnormalized) network under the chosen model.
pub fn predict_raw(
    model: &EvalModel,
    params: Option<&ModelParameters>,
    network: &PoreNetwork,
) -> Result<f64> {
    match (model, params) {
        (EvalModel::Analytic(shape), _) => {
            let g = analytic_conductance(network, *shape)?;
            Ok(solver::forward(network, &g)?.permeability)
        }
        (EvalModel::Trained(ck), Some(p)) => predict(p, &normalize(network, &ck.norm_stats)?),
        (EvalModel::Trained(ck), None) => {
            predict(&ck.parameters()?, &normalize(network, &ck.norm_stats)?)
        }
    }
}

/// Runs `model` over raw networks carrying targets.
pub fn evaluate(model: &EvalModel, dataset: &[PoreNetwork]) -> Result<Evaluation> {
    let params = match model {
        EvalModel::Trained(ck) => Some(ck.parameters()?),
        EvalModel::Analytic(_) => None,
    };
    let predictions: Vec<Prediction> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, net)| {
            let wrap = |e| Error::Sample {
                sample: i,
                source: Box::new(e),
            };
            let target = net.target_permeability.ok_or_else(|| {
                wrap(Error::Validation(
                    "network has no target_permeability".into(),
                ))
            })?;
            let predicted = predict_raw(model, params.as_ref(), net).map_err(wrap)?;
            Ok(Prediction {
                sample: i,
                target,
                predicted,
            })
        })
        .collect::<Result<_>>()?;
    let y: Vec<f64> = predictions.iter().map(|p| p.target).collect();
    let y_hat: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
    Ok(Evaluation {
        model: match model {
            EvalModel::Trained(ck) => ck.model.to_string(),
            EvalModel::Analytic(s) => format!("analytic:{s}"),
        },
        metrics: metrics(&y, &y_hat)?,
        predictions,
    })
}

#[cfg(test)]
mod tests;

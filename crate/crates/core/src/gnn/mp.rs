//! Mean-aggregation message passing shared by the edge-level and graph-level models.
//!
//! For node `p` with incident throats `T_p`:
//! `H_p = mean_{t ∈ T_p} ReLU(W_msg [h_{p'}; e_t] + b_msg)` (zero when `T_p` is empty),
//! `h_p ← ReLU(W_apply [h_p; H_p] + b_apply)`.
//! Every throat sends one message in each direction.

use super::layers::{relu, relu_grad, Affine};
use crate::error::{Error, Result};
use crate::network::{PoreNetwork, EDGE_DIM, NODE_DIM};

/// Owned copy of the graph structure and input features of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub num_pores: usize,
    pub endpoints: Vec<[usize; 2]>,
    pub degrees: Vec<usize>,
    /// Row-major `num_pores × NODE_DIM`.
    pub node: Vec<f64>,
    /// Row-major `num_throats × EDGE_DIM`.
    pub edge: Vec<f64>,
}

impl GraphInput {
    pub fn new(network: &PoreNetwork) -> Result<Self> {
        if network.node_features.len() != network.num_pores
            || network.edge_features.len() != network.throat_endpoints.len()
        {
            return Err(Error::DimensionMismatch(
                "feature rows do not match pore/throat counts".into(),
            ));
        }
        if let Some(t) = network
            .throat_endpoints
            .iter()
            .position(|&[a, b]| a >= network.num_pores || b >= network.num_pores)
        {
            return Err(Error::DimensionMismatch(format!(
                "throat {t} references a pore out of range"
            )));
        }
        Ok(GraphInput {
            num_pores: network.num_pores,
            endpoints: network.throat_endpoints.clone(),
            degrees: network.degrees(),
            node: network.node_features.iter().flatten().copied().collect(),
            edge: network.edge_features.iter().flatten().copied().collect(),
        })
    }

    pub fn num_throats(&self) -> usize {
        self.endpoints.len()
    }

    pub fn edge_row(&self, t: usize) -> &[f64] {
        &self.edge[t * EDGE_DIM..(t + 1) * EDGE_DIM]
    }

    pub fn node_row(&self, p: usize) -> &[f64] {
        &self.node[p * NODE_DIM..(p + 1) * NODE_DIM]
    }

    /// `(target, source)` of directed message `2t + dir`.
    fn direction(&self, t: usize, dir: usize) -> (usize, usize) {
        let [a, b] = self.endpoints[t];
        if dir == 0 {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// Activations of one message-passing layer needed for reverse mode.
#[derive(Debug, Clone)]
pub struct LayerTape {
    pub d_in: usize,
    pub h_in: Vec<f64>,
    /// Message pre-activations, row `2t + dir`.
    pub msg_pre: Vec<f64>,
    /// Aggregated messages `H_p`.
    pub agg: Vec<f64>,
    pub apply_pre: Vec<f64>,
}

pub(crate) fn check_finite(values: &[f64], width: usize, layer: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NonFinite {
            layer: layer.to_string(),
            index: k / width.max(1),
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_layer(msg: &Affine, apply: &Affine, d_in: usize, name: &str) -> Result<()> {
    if msg.in_dim != d_in + EDGE_DIM || apply.in_dim != d_in + msg.out_dim {
        return Err(Error::DimensionMismatch(format!(
            "{name}: msg expects {} inputs and apply {}, embedding width is {d_in}",
            msg.in_dim, apply.in_dim
        )));
    }
    Ok(())
}

pub(crate) fn forward_layer(
    msg: &Affine,
    apply: &Affine,
    graph: &GraphInput,
    h_in: &[f64],
    d_in: usize,
    name: &str,
) -> Result<(Vec<f64>, LayerTape)> {
    check_layer(msg, apply, d_in, name)?;
    let n = graph.num_pores;
    let d_msg = msg.out_dim;
    let d_out = apply.out_dim;
    let nt = graph.num_throats();

    let mut msg_pre = vec![0.0; 2 * nt * d_msg];
    let mut agg = vec![0.0; n * d_msg];
    let mut x = vec![0.0; d_in + EDGE_DIM];
    for t in 0..nt {
        for dir in 0..2 {
            let (target, src) = graph.direction(t, dir);
            x[..d_in].copy_from_slice(&h_in[src * d_in..(src + 1) * d_in]);
            x[d_in..].copy_from_slice(graph.edge_row(t));
            let row = (2 * t + dir) * d_msg;
            let z = &mut msg_pre[row..row + d_msg];
            msg.forward(&x, z);
            let w = 1.0 / graph.degrees[target] as f64;
            for (h, &zk) in agg[target * d_msg..(target + 1) * d_msg]
                .iter_mut()
                .zip(z.iter())
            {
                *h += w * relu(zk);
            }
        }
    }
    check_finite(&msg_pre, d_msg, &format!("{name}.msg"))?;

    let mut apply_pre = vec![0.0; n * d_out];
    let mut h_out = vec![0.0; n * d_out];
    let mut x = vec![0.0; d_in + d_msg];
    for p in 0..n {
        x[..d_in].copy_from_slice(&h_in[p * d_in..(p + 1) * d_in]);
        x[d_in..].copy_from_slice(&agg[p * d_msg..(p + 1) * d_msg]);
        let u = &mut apply_pre[p * d_out..(p + 1) * d_out];
        apply.forward(&x, u);
        for (h, &uk) in h_out[p * d_out..(p + 1) * d_out].iter_mut().zip(u.iter()) {
            *h = relu(uk);
        }
    }
    check_finite(&apply_pre, d_out, &format!("{name}.apply"))?;

    Ok((
        h_out,
        LayerTape {
            d_in,
            h_in: h_in.to_vec(),
            msg_pre,
            agg,
            apply_pre,
        },
    ))
}

/// Reverse pass of one layer: accumulates parameter gradients into `msg_grad`/`apply_grad`
/// and input gradients into `dh_in` and `de`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_layer(
    msg: &Affine,
    apply: &Affine,
    graph: &GraphInput,
    tape: &LayerTape,
    dh_out: &[f64],
    msg_grad: &mut Affine,
    apply_grad: &mut Affine,
    dh_in: &mut [f64],
    de: &mut [f64],
) {
    let n = graph.num_pores;
    let d_in = tape.d_in;
    let d_msg = msg.out_dim;
    let d_out = apply.out_dim;

    let mut dagg = vec![0.0; n * d_msg];
    let mut x = vec![0.0; d_in + d_msg];
    let mut du = vec![0.0; d_out];
    let mut dx = vec![0.0; d_in + d_msg];
    for p in 0..n {
        let mut any = false;
        for k in 0..d_out {
            du[k] = dh_out[p * d_out + k] * relu_grad(tape.apply_pre[p * d_out + k]);
            any |= du[k] != 0.0;
        }
        if !any {
            continue;
        }
        x[..d_in].copy_from_slice(&tape.h_in[p * d_in..(p + 1) * d_in]);
        x[d_in..].copy_from_slice(&tape.agg[p * d_msg..(p + 1) * d_msg]);
        apply_grad.accumulate(&x, &du);
        dx.iter_mut().for_each(|v| *v = 0.0);
        apply.backprop_input(&du, &mut dx);
        for k in 0..d_in {
            dh_in[p * d_in + k] += dx[k];
        }
        dagg[p * d_msg..(p + 1) * d_msg].copy_from_slice(&dx[d_in..]);
    }

    let mut x = vec![0.0; d_in + EDGE_DIM];
    let mut dz = vec![0.0; d_msg];
    let mut dx = vec![0.0; d_in + EDGE_DIM];
    for t in 0..graph.num_throats() {
        for dir in 0..2 {
            let (target, src) = graph.direction(t, dir);
            let w = 1.0 / graph.degrees[target] as f64;
            let row = (2 * t + dir) * d_msg;
            let mut any = false;
            for k in 0..d_msg {
                dz[k] = w * dagg[target * d_msg + k] * relu_grad(tape.msg_pre[row + k]);
                any |= dz[k] != 0.0;
            }
            if !any {
                continue;
            }
            x[..d_in].copy_from_slice(&tape.h_in[src * d_in..(src + 1) * d_in]);
            x[d_in..].copy_from_slice(graph.edge_row(t));
            msg_grad.accumulate(&x, &dz);
            dx.iter_mut().for_each(|v| *v = 0.0);
            msg.backprop_input(&dz, &mut dx);
            for k in 0..d_in {
                dh_in[src * d_in + k] += dx[k];
            }
            for k in 0..EDGE_DIM {
                de[t * EDGE_DIM + k] += dx[d_in + k];
            }
        }
    }
}

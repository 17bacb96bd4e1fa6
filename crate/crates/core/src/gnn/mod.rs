//! Edge-level message-passing GNN predicting per-throat conductance, and the
//! graph-level baseline that regresses permeability directly.
//!
//! Edge model, per throat `t = (p1, p2)` after two message-passing layers:
//! `m = ReLU(W_hid [h_p1; h_p2; e_t] + b_hid)`, `g_t = s · Softplus(W_out m + b_out)`
//! where `s` is a fixed output scale (1 unless calibrated to a dataset).
//! Reverse mode is written out by hand over a [`ForwardTape`].

mod baseline;
mod checkpoint;
mod layers;
mod mp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{PoreNetwork, EDGE_DIM, NODE_DIM};

pub use baseline::{baseline_backward, baseline_forward, BaselineParameters, BaselineTape};
pub use checkpoint::{Checkpoint, ModelKind, ModelParameters, Progress};
pub use layers::{relu, relu_grad, sigmoid, softplus, Affine};
pub use mp::{GraphInput, LayerTape};

use mp::{backward_layer, check_finite, forward_layer};

/// Layer widths. Input widths are fixed by the feature sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnDims {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub predictor: usize,
}

impl Default for GnnDims {
    fn default() -> Self {
        GnnDims::new(32, 32, 32)
    }
}

impl GnnDims {
    pub fn new(hidden1: usize, hidden2: usize, predictor: usize) -> Self {
        GnnDims {
            node_dim: NODE_DIM,
            edge_dim: EDGE_DIM,
            hidden1,
            hidden2,
            predictor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_dim != NODE_DIM || self.edge_dim != EDGE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "input widths must be {NODE_DIM} (node) and {EDGE_DIM} (edge), got {} and {}",
                self.node_dim, self.edge_dim
            )));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 || self.predictor == 0 {
            return Err(Error::DimensionMismatch(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All learnable weights of the edge-level model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParameters {
    pub dims: GnnDims,
    pub msg1: Affine,
    pub apply1: Affine,
    pub msg2: Affine,
    pub apply2: Affine,
    pub hid: Affine,
    pub out: Affine,
    /// Fixed multiplier on the Softplus output [m³/(Pa·s)]; not trained.
    pub output_scale: f64,
}

impl GnnParameters {
    fn build(dims: GnnDims, mut make: impl FnMut(usize, usize) -> Affine) -> Self {
        let d0 = dims.node_dim;
        let de = dims.edge_dim;
        GnnParameters {
            dims,
            msg1: make(d0 + de, d0),
            apply1: make(2 * d0, dims.hidden1),
            msg2: make(dims.hidden1 + de, dims.hidden1),
            apply2: make(2 * dims.hidden1, dims.hidden2),
            hid: make(2 * dims.hidden2 + de, dims.predictor),
            out: make(dims.predictor, 1),
            output_scale: 1.0,
        }
    }

    pub fn zeros(dims: GnnDims) -> Self {
        Self::build(dims, Affine::zeros)
    }

    pub fn init(dims: GnnDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, |i, o| Affine::glorot(i, o, &mut rng))
    }

    fn layers(&self) -> [&Affine; 6] {
        [
            &self.msg1,
            &self.apply1,
            &self.msg2,
            &self.apply2,
            &self.hid,
            &self.out,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Affine; 6] {
        [
            &mut self.msg1,
            &mut self.apply1,
            &mut self.msg2,
            &mut self.apply2,
            &mut self.hid,
            &mut self.out,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    /// Flat view in layer order msg1, apply1, msg2, apply2, hid, out; weights then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            l.write_flat(&mut v);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for l in self.layers_mut() {
            off += l.read_flat(&flat[off..]);
        }
        Ok(())
    }

    pub fn from_flat(dims: GnnDims, flat: &[f64]) -> Result<Self> {
        dims.validate()?;
        let mut p = Self::zeros(dims);
        p.set_flat(flat)?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        self.dims.validate()?;
        let fresh = Self::zeros(self.dims);
        for (name, (a, b)) in ["msg1", "apply1", "msg2", "apply2", "hid", "out"]
            .iter()
            .zip(self.layers().iter().zip(fresh.layers()))
        {
            if a.in_dim != b.in_dim
                || a.out_dim != b.out_dim
                || a.weight.len() != b.weight.len()
                || a.bias.len() != b.bias.len()
            {
                return Err(Error::DimensionMismatch(format!(
                    "layer {name} does not match dims {:?}",
                    self.dims
                )));
            }
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::InvalidArgument(
                "output_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub graph: GraphInput,
    pub layer1: LayerTape,
    pub layer2: LayerTape,
    /// Final node embeddings `h²`, row-major `num_pores × hidden2`.
    pub h_final: Vec<f64>,
    /// Edge-predictor hidden pre-activations, `num_throats × predictor`.
    pub hid_pre: Vec<f64>,
    /// Output pre-activation per throat.
    pub out_pre: Vec<f64>,
    pub output_scale: f64,
    pub dims: GnnDims,
}

/// Gradients with respect to the (normalized) input features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrad {
    pub node: Vec<[f64; NODE_DIM]>,
    pub edge: Vec<[f64; EDGE_DIM]>,
}

impl FeatureGrad {
    fn from_flat(node: &[f64], edge: &[f64]) -> Self {
        FeatureGrad {
            node: node
                .chunks_exact(NODE_DIM)
                .map(|c| c.try_into().unwrap())
                .collect(),
            edge: edge
                .chunks_exact(EDGE_DIM)
                .map(|c| c.try_into().unwrap())
                .collect(),
        }
    }
}

fn edge_input(graph: &GraphInput, h: &[f64], d_h: usize, t: usize, x: &mut [f64]) {
    let [a, b] = graph.endpoints[t];
    x[..d_h].copy_from_slice(&h[a * d_h..(a + 1) * d_h]);
    x[d_h..2 * d_h].copy_from_slice(&h[b * d_h..(b + 1) * d_h]);
    x[2 * d_h..].copy_from_slice(graph.edge_row(t));
}

/// Predicts a strictly positive conductance for every throat and records the tape.
pub fn gnn_forward(
    network: &PoreNetwork,
    params: &GnnParameters,
) -> Result<(Vec<f64>, ForwardTape)> {
    params.check()?;
    let graph = GraphInput::new(network)?;
    let dims = params.dims;
    let (h1, layer1) = forward_layer(
        &params.msg1,
        &params.apply1,
        &graph,
        &graph.node,
        dims.node_dim,
        "layer1",
    )?;
    let (h2, layer2) = forward_layer(
        &params.msg2,
        &params.apply2,
        &graph,
        &h1,
        dims.hidden1,
        "layer2",
    )?;

    let nt = graph.num_throats();
    let d_h = dims.hidden2;
    let d_p = dims.predictor;
    let mut hid_pre = vec![0.0; nt * d_p];
    let mut out_pre = vec![0.0; nt];
    let mut g = vec![0.0; nt];
    let mut x = vec![0.0; 2 * d_h + EDGE_DIM];
    let mut m = vec![0.0; d_p];
    let mut z = [0.0];
    for t in 0..nt {
        edge_input(&graph, &h2, d_h, t, &mut x);
        let pre = &mut hid_pre[t * d_p..(t + 1) * d_p];
        params.hid.forward(&x, pre);
        for (mk, &zk) in m.iter_mut().zip(pre.iter()) {
            *mk = relu(zk);
        }
        params.out.forward(&m, &mut z);
        out_pre[t] = z[0];
        g[t] = params.output_scale * softplus(z[0]);
    }
    check_finite(&hid_pre, d_p, "edge.hid")?;
    check_finite(&g, 1, "edge.out")?;
    if let Some(t) = g.iter().position(|&v| !(v > 0.0)) {
        // Softplus underflow for extremely negative logits
        return Err(Error::NonFinite {
            layer: "edge.out (underflow to zero)".into(),
            index: t,
        });
    }

    Ok((
        g,
        ForwardTape {
            graph,
            layer1,
            layer2,
            h_final: h2,
            hid_pre,
            out_pre,
            output_scale: params.output_scale,
            dims,
        },
    ))
}

/// Reverse pass: returns `Σ_t c_t dg_t/dw` shaped like the parameters, and `Σ_t c_t dg_t/dz`
/// for every input feature, where `c` is the per-throat cotangent `dJ/dg`.
pub fn gnn_backward(
    tape: &ForwardTape,
    params: &GnnParameters,
    edge_cotangent: &[f64],
) -> Result<(GnnParameters, FeatureGrad)> {
    let graph = &tape.graph;
    let nt = graph.num_throats();
    if edge_cotangent.len() != nt || params.dims != tape.dims {
        return Err(Error::DimensionMismatch(format!(
            "stale tape: cotangent has {} entries for {nt} throats",
            edge_cotangent.len()
        )));
    }
    let dims = tape.dims;
    let n = graph.num_pores;
    let d_h = dims.hidden2;
    let d_p = dims.predictor;

    let mut grad = GnnParameters::zeros(dims);
    grad.output_scale = tape.output_scale;
    let mut dh2 = vec![0.0; n * d_h];
    let mut de = vec![0.0; nt * EDGE_DIM];

    let mut x = vec![0.0; 2 * d_h + EDGE_DIM];
    let mut m = vec![0.0; d_p];
    let mut dm = vec![0.0; d_p];
    let mut dx = vec![0.0; 2 * d_h + EDGE_DIM];
    for t in 0..nt {
        let c = edge_cotangent[t];
        if c == 0.0 {
            continue;
        }
        let dz = c * tape.output_scale * sigmoid(tape.out_pre[t]);
        let pre = &tape.hid_pre[t * d_p..(t + 1) * d_p];
        for (mk, &zk) in m.iter_mut().zip(pre) {
            *mk = relu(zk);
        }
        grad.out.accumulate(&m, &[dz]);
        dm.iter_mut().for_each(|v| *v = 0.0);
        params.out.backprop_input(&[dz], &mut dm);
        for (d, &zk) in dm.iter_mut().zip(pre) {
            *d *= relu_grad(zk);
        }
        edge_input(graph, &tape.h_final, d_h, t, &mut x);
        grad.hid.accumulate(&x, &dm);
        dx.iter_mut().for_each(|v| *v = 0.0);
        params.hid.backprop_input(&dm, &mut dx);
        let [a, b] = graph.endpoints[t];
        for k in 0..d_h {
            dh2[a * d_h + k] += dx[k];
            dh2[b * d_h + k] += dx[d_h + k];
        }
        for k in 0..EDGE_DIM {
            de[t * EDGE_DIM + k] += dx[2 * d_h + k];
        }
    }

    let mut dh1 = vec![0.0; n * dims.hidden1];
    backward_layer(
        &params.msg2,
        &params.apply2,
        graph,
        &tape.layer2,
        &dh2,
        &mut grad.msg2,
        &mut grad.apply2,
        &mut dh1,
        &mut de,
    );
    let mut dh0 = vec![0.0; n * dims.node_dim];
    backward_layer(
        &params.msg1,
        &params.apply1,
        graph,
        &tape.layer1,
        &dh1,
        &mut grad.msg1,
        &mut grad.apply1,
        &mut dh0,
        &mut de,
    );
    Ok((grad, FeatureGrad::from_flat(&dh0, &de)))
}

//! Graph-level baseline: the same two message-passing layers, mean pooling over
//! pores, then `K = s · Softplus(β + w_Kᵀ h_G)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{sigmoid, softplus, Affine};
use super::mp::{backward_layer, forward_layer, GraphInput, LayerTape};
use super::GnnDims;
use crate::error::{Error, Result};
use crate::network::PoreNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParameters {
    pub dims: GnnDims,
    pub msg1: Affine,
    pub apply1: Affine,
    pub msg2: Affine,
    pub apply2: Affine,
    /// `hidden2 → 1`; the bias is `β`.
    pub readout: Affine,
    /// Fixed multiplier on the Softplus output [m²]; not trained.
    pub output_scale: f64,
}

impl BaselineParameters {
    fn build(dims: GnnDims, mut make: impl FnMut(usize, usize) -> Affine) -> Self {
        let d0 = dims.node_dim;
        let de = dims.edge_dim;
        BaselineParameters {
            dims,
            msg1: make(d0 + de, d0),
            apply1: make(2 * d0, dims.hidden1),
            msg2: make(dims.hidden1 + de, dims.hidden1),
            apply2: make(2 * dims.hidden1, dims.hidden2),
            readout: make(dims.hidden2, 1),
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

    fn layers(&self) -> [&Affine; 5] {
        [
            &self.msg1,
            &self.apply1,
            &self.msg2,
            &self.apply2,
            &self.readout,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Affine; 5] {
        [
            &mut self.msg1,
            &mut self.apply1,
            &mut self.msg2,
            &mut self.apply2,
            &mut self.readout,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

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
                "flat vector has {} entries, baseline has {}",
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
        for (a, b) in self.layers().iter().zip(fresh.layers()) {
            if a.in_dim != b.in_dim
                || a.out_dim != b.out_dim
                || a.weight.len() != b.weight.len()
                || a.bias.len() != b.bias.len()
            {
                return Err(Error::DimensionMismatch(format!(
                    "baseline layers do not match dims {:?}",
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

#[derive(Debug, Clone)]
pub struct BaselineTape {
    pub graph: GraphInput,
    pub layer1: LayerTape,
    pub layer2: LayerTape,
    pub pooled: Vec<f64>,
    pub out_pre: f64,
    pub output_scale: f64,
    pub dims: GnnDims,
}

pub fn baseline_forward(
    network: &PoreNetwork,
    params: &BaselineParameters,
) -> Result<(f64, BaselineTape)> {
    params.check()?;
    let graph = GraphInput::new(network)?;
    let dims = params.dims;
    if graph.num_pores == 0 {
        return Err(Error::DimensionMismatch("network has no pores".into()));
    }
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
    let d = dims.hidden2;
    let mut pooled = vec![0.0; d];
    for row in h2.chunks_exact(d) {
        for (s, v) in pooled.iter_mut().zip(row) {
            *s += v;
        }
    }
    let inv = 1.0 / graph.num_pores as f64;
    pooled.iter_mut().for_each(|v| *v *= inv);
    let mut z = [0.0];
    params.readout.forward(&pooled, &mut z);
    let k = params.output_scale * softplus(z[0]);
    if !k.is_finite() {
        return Err(Error::NonFinite {
            layer: "readout".into(),
            index: 0,
        });
    }
    Ok((
        k,
        BaselineTape {
            graph,
            layer1,
            layer2,
            pooled,
            out_pre: z[0],
            output_scale: params.output_scale,
            dims,
        },
    ))
}

/// Parameter gradient of `c · K` for a scalar cotangent `c = dJ/dK`.
pub fn baseline_backward(
    tape: &BaselineTape,
    params: &BaselineParameters,
    cotangent: f64,
) -> Result<BaselineParameters> {
    if params.dims != tape.dims {
        return Err(Error::DimensionMismatch("stale baseline tape".into()));
    }
    let dims = tape.dims;
    let graph = &tape.graph;
    let n = graph.num_pores;
    let mut grad = BaselineParameters::zeros(dims);
    grad.output_scale = tape.output_scale;
    if cotangent == 0.0 {
        return Ok(grad);
    }
    let dz = cotangent * tape.output_scale * sigmoid(tape.out_pre);
    grad.readout.accumulate(&tape.pooled, &[dz]);
    let mut dpool = vec![0.0; dims.hidden2];
    params.readout.backprop_input(&[dz], &mut dpool);
    let inv = 1.0 / n as f64;
    let dh2: Vec<f64> = (0..n).flat_map(|_| dpool.iter().map(|v| v * inv)).collect();

    let mut de = vec![0.0; graph.num_throats() * dims.edge_dim];
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
    Ok(grad)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense affine map `y = W x + b`, weights row-major `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Affine {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-limit..=limit))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *yo = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Adds `dy ⊗ x` to the weight gradient and `dy` to the bias gradient held in `self`.
    pub fn accumulate(&mut self, x: &[f64], dy: &[f64]) {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.bias[o] += d;
            let row = &mut self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (w, v) in row.iter_mut().zip(x) {
                *w += d * v;
            }
        }
    }

    /// Adds `Wᵀ dy` to `dx`.
    pub fn backprop_input(&self, dy: &[f64], dx: &mut [f64]) {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, w) in dx.iter_mut().zip(row) {
                *g += d * w;
            }
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    pub fn read_flat(&mut self, flat: &[f64]) -> usize {
        let nw = self.weight.len();
        self.weight.copy_from_slice(&flat[..nw]);
        self.bias.copy_from_slice(&flat[nw..nw + self.out_dim]);
        nw + self.out_dim
    }
}

pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// ReLU subgradient with `relu'(0) = 0`.
pub fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Derivative of softplus, the logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(-40.0) - (-40f64).exp()).abs() < 1e-30);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        assert_eq!(relu_grad(0.0), 0.0);
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(relu_grad(1e-300), 1.0);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Affine::glorot(10, 6, &mut rng);
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(a.weight.iter().all(|w| w.abs() <= lim));
        assert!(a.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn affine_forward_and_transpose() {
        let a = Affine {
            in_dim: 2,
            out_dim: 2,
            weight: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.5, -0.5],
        };
        let mut y = [0.0; 2];
        a.forward(&[1.0, 1.0], &mut y);
        assert_eq!(y, [3.5, 6.5]);
        let mut dx = [0.0; 2];
        a.backprop_input(&[1.0, 1.0], &mut dx);
        assert_eq!(dx, [4.0, 6.0]);
    }
}

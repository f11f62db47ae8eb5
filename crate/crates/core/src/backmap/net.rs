//! Small feed-forward regressor predicting angle offsets as (sin, cos) pairs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Output slots: N θ, N τ, C θ, C τ, O θ, O τ, then one torsion per
/// side-chain atom.
pub const OUTPUT_SLOTS: usize = 16;
pub const BACKBONE_SLOTS: usize = 6;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
const OUTPUT_INIT_SCALE: f64 = 1e-3;

/// Output slot driving parameter `k` (0 d, 1 θ, 2 τ) of pass-order row `row`.
pub fn slot_for(row: usize, k: usize) -> Option<usize> {
    match (row, k) {
        (0..=2, 1) => Some(2 * row),
        (0..=2, 2) => Some(2 * row + 1),
        (r, 2) if r >= 3 && r - 3 < OUTPUT_SLOTS - BACKBONE_SLOTS => Some(BACKBONE_SLOTS + r - 3),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionNet {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Hidden layers use tanh; the last layer is linear.
    pub layers: Vec<Layer>,
}

/// Activations kept for backpropagation.
pub struct Activations {
    values: Vec<DVector<f64>>,
}

impl Activations {
    pub fn output(&self) -> &DVector<f64> {
        self.values.last().expect("non-empty")
    }
}

/// Gradient buffers shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub layers: Vec<Layer>,
}

impl NetGradient {
    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights *= s;
            l.bias *= s;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect()
    }
}

/// Angle encoded by an unnormalized (sin, cos) pair; zero for a zero pair.
pub fn pair_angle(s: f64, c: f64) -> f64 {
    let r = s.hypot(c);
    if r == 0.0 || !r.is_finite() {
        0.0
    } else {
        (s / r).atan2(c / r)
    }
}

impl TorsionNet {
    /// Standardization from `samples`; output layer starts at (sin 0, cos 1)
    /// so initial offsets are zero.
    pub fn new(samples: &[Vec<f64>], hidden: &[usize], seed: u64) -> TorsionNet {
        let dim = samples.first().map_or(0, Vec::len);
        let n = samples.len().max(1) as f64;
        let input_mean: Vec<f64> = (0..dim).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
        let input_scale: Vec<f64> = (0..dim)
            .map(|k| {
                let var = samples.iter().map(|s| (s[k] - input_mean[k]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * OUTPUT_SLOTS);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let limit = if i == last { OUTPUT_INIT_SCALE } else { (6.0 / (fan_in + fan_out) as f64).sqrt() };
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit));
                let bias = if i == last {
                    DVector::from_fn(fan_out, |r, _| if r % 2 == 1 { 1.0 } else { 0.0 })
                } else {
                    DVector::zeros(fan_out)
                };
                Layer { weights, bias }
            })
            .collect();
        TorsionNet { input_mean, input_scale, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, features: &[f64]) -> Activations {
        assert_eq!(features.len(), self.input_dim(), "feature dimension");
        let x = DVector::from_iterator(
            features.len(),
            features.iter().zip(&self.input_mean).zip(&self.input_scale).map(|((f, m), s)| (f - m) / s),
        );
        let mut values = vec![x];
        for (i, layer) in self.layers.iter().enumerate() {
            let z = &layer.weights * values.last().unwrap() + &layer.bias;
            values.push(if i + 1 < self.layers.len() { z.map(f64::tanh) } else { z });
        }
        Activations { values }
    }

    /// Predicted offsets (radians) for all output slots.
    pub fn offsets(&self, features: &[f64]) -> [f64; OUTPUT_SLOTS] {
        let out = self.forward(features);
        let o = out.output();
        std::array::from_fn(|k| pair_angle(o[2 * k], o[2 * k + 1]))
    }

    pub fn zero_gradient(&self) -> NetGradient {
        NetGradient {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), bias: DVector::zeros(l.bias.len()) })
                .collect(),
        }
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative with
    /// respect to each slot's offset angle is `d_offsets`.
    pub fn backward(&self, acts: &Activations, d_offsets: &[f64; OUTPUT_SLOTS], grad: &mut NetGradient) {
        let o = acts.output();
        let mut delta = DVector::zeros(o.len());
        for k in 0..OUTPUT_SLOTS {
            let (s, c) = (o[2 * k], o[2 * k + 1]);
            let r2 = s * s + c * c;
            if r2 > 0.0 && d_offsets[k] != 0.0 {
                delta[2 * k] = d_offsets[k] * c / r2;
                delta[2 * k + 1] = -d_offsets[k] * s / r2;
            }
        }
        for i in (0..self.layers.len()).rev() {
            let input = &acts.values[i];
            grad.layers[i].weights += &delta * input.transpose();
            grad.layers[i].bias += &delta;
            if i > 0 {
                let back = self.layers[i].weights.transpose() * &delta;
                delta = back.component_mul(&input.map(|a| 1.0 - a * a));
            }
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn initial_offsets_are_near_zero() {
        let xs = inputs(8, 7, 1);
        let net = TorsionNet::new(&xs, &DEFAULT_HIDDEN, 3);
        for x in &xs {
            assert!(net.offsets(x).iter().all(|o| o.abs() < 0.05));
        }
    }

    #[test]
    fn slot_mapping() {
        assert_eq!(slot_for(0, 1), Some(0));
        assert_eq!(slot_for(2, 2), Some(5));
        assert_eq!(slot_for(0, 0), None);
        assert_eq!(slot_for(3, 1), None);
        assert_eq!(slot_for(3, 2), Some(6));
        assert_eq!(slot_for(12, 2), Some(15));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        // two residues' worth of input, a fixed linear functional of the offsets
        let xs = inputs(2, 5, 7);
        let mut net = TorsionNet::new(&xs, &[6, 4], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in net.params_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let weights: [f64; OUTPUT_SLOTS] = std::array::from_fn(|k| (k as f64 * 0.37).sin());
        let objective = |net: &TorsionNet| -> f64 {
            xs.iter().map(|x| net.offsets(x).iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>()).sum()
        };
        let mut grad = net.zero_gradient();
        for x in &xs {
            net.backward(&net.forward(x), &weights, &mut grad);
        }
        let analytic = grad.flat();
        let h = 1e-5;
        for (i, &g) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            *minus.params_mut().nth(i).unwrap() -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            if g.abs() > 1e-8 {
                assert!((g - fd).abs() / g.abs() < 1e-4, "param {i}: {g} vs {fd}");
            } else {
                assert!(fd.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pair_angle_is_total() {
        assert_eq!(pair_angle(0.0, 0.0), 0.0);
        assert!((pair_angle(2.0, 0.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(!pair_angle(1e-300, -1e-300).is_nan());
    }
}

//! Mini-batch Adam training of the torsion regressor against `L_recon`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{loss_gradients, FrameTarget, LossWeights};
use crate::structure::{cg_map, CGTrace, Ensemble, Structure};
use crate::topology::Exclusions;
use crate::zmatrix::{extract, ResidueRows, ZMatrixFrame};

use super::features::{featurize, FeatureSpec};
use super::net::{slot_for, Activations, NetGradient, TorsionNet, DEFAULT_HIDDEN, OUTPUT_SLOTS};
use super::tables::LookupTables;
use super::{apply_offsets, mean_rows, BackmapError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Frames per gradient step.
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 4,
            seed: 42,
            weights: LossWeights::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

/// Ground truth for one training frame.
#[derive(Debug, Clone)]
pub struct TrainingFrame {
    pub truth: Structure,
    pub trace: CGTrace,
    pub zmatrix: ZMatrixFrame,
    pub exclusions: Arc<Exclusions>,
}

impl TrainingFrame {
    pub fn target(&self) -> FrameTarget<'_> {
        FrameTarget { truth: &self.truth, trace: &self.trace, zmatrix: &self.zmatrix, exclusions: &self.exclusions }
    }
}

/// Traces, Z-matrices and exclusions for every frame of preprocessed ensembles.
pub fn prepare_frames(ensembles: &[Ensemble]) -> Result<Vec<TrainingFrame>, BackmapError> {
    let mut out = Vec::new();
    for e in ensembles {
        let Some(first) = e.frames.first() else { continue };
        let exclusions = Arc::new(Exclusions::for_chains(&first.sequence()));
        for frame in &e.frames {
            let trace = cg_map(frame).map_err(|err| BackmapError::Data(err.to_string()))?;
            let zmatrix = extract(frame, &trace)?;
            out.push(TrainingFrame { truth: frame.clone(), trace, zmatrix, exclusions: exclusions.clone() });
        }
    }
    Ok(out)
}

/// Prediction for one frame with the activations needed to backpropagate.
struct Prediction {
    zmatrix: ZMatrixFrame,
    activations: Vec<Activations>,
}

fn predict(frame: &TrainingFrame, tables: &LookupTables, net: &TorsionNet, spec: &FeatureSpec) -> Result<Prediction, BackmapError> {
    let mut residues = Vec::with_capacity(frame.zmatrix.residues.len());
    let mut activations = Vec::with_capacity(frame.zmatrix.residues.len());
    for truth_rows in &frame.zmatrix.residues {
        let mut rows = mean_rows(tables, truth_rows.kind, true)?;
        let acts = net.forward(&featurize(&frame.trace, truth_rows.bead, spec)?);
        let o = acts.output();
        let offsets: [f64; OUTPUT_SLOTS] = std::array::from_fn(|k| super::net::pair_angle(o[2 * k], o[2 * k + 1]));
        apply_offsets(&mut rows, &offsets);
        residues.push(ResidueRows { rows, ..truth_rows.clone() });
        activations.push(acts);
    }
    Ok(Prediction { zmatrix: ZMatrixFrame { residues }, activations })
}

/// `L_recon` of one frame and its gradient with respect to network weights.
pub fn frame_loss_and_gradient(
    frame: &TrainingFrame,
    tables: &LookupTables,
    net: &TorsionNet,
    spec: &FeatureSpec,
    weights: &LossWeights,
) -> Result<(f64, NetGradient), BackmapError> {
    let p = predict(frame, tables, net, spec)?;
    let (report, grad) = loss_gradients(&frame.target(), &p.zmatrix, weights)?;
    let mut net_grad = net.zero_gradient();
    let mut offset = 0;
    for (res, acts) in p.zmatrix.residues.iter().zip(&p.activations) {
        let mut d_offsets = [0.0; OUTPUT_SLOTS];
        for r in 0..res.rows.len() {
            for k in 1..3 {
                if let Some(slot) = slot_for(r, k) {
                    d_offsets[slot] += grad[3 * (offset + r) + k];
                }
            }
        }
        net.backward(acts, &d_offsets, &mut net_grad);
        offset += res.rows.len();
    }
    Ok((report.recon, net_grad))
}

/// Mean `L_recon` over `frames` with the network's predictions.
pub fn mean_recon_loss(
    frames: &[TrainingFrame],
    tables: &LookupTables,
    net: &TorsionNet,
    spec: &FeatureSpec,
    weights: &LossWeights,
) -> Result<f64, BackmapError> {
    let mut total = 0.0;
    for f in frames {
        let p = predict(f, tables, net, spec)?;
        total += crate::losses::evaluate_losses(&f.target(), &p.zmatrix, weights)?.recon;
    }
    Ok(total / frames.len() as f64)
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Adam {
        Adam { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, net: &mut TorsionNet, grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, p) in net.params_mut().enumerate() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TorsionNet,
    /// Mean `L_recon` at initialization, then after each epoch.
    pub trajectory: Vec<f64>,
}

pub fn train_torsion_net(
    frames: &[TrainingFrame],
    tables: &LookupTables,
    spec: &FeatureSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, BackmapError> {
    if frames.is_empty() {
        return Err(BackmapError::EmptyTrainingSet);
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.batch_size == 0 {
        return Err(BackmapError::Data("learning rate and batch size must be positive".into()));
    }
    let mut samples = Vec::new();
    for f in frames {
        for res in &f.zmatrix.residues {
            samples.push(featurize(&f.trace, res.bead, spec)?);
        }
    }
    let mut net = TorsionNet::new(&samples, &config.hidden, config.seed);
    let mut adam = Adam::new(net.parameter_count(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..frames.len()).collect();

    let check = |epoch: usize, loss: f64| {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(BackmapError::NonFinite { epoch, detail: format!("mean L_recon = {loss}") })
        }
    };
    let mut trajectory = vec![check(0, mean_recon_loss(frames, tables, &net, spec, &config.weights)?)?];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut total = net.zero_gradient();
            for &i in batch {
                let (loss, g) = frame_loss_and_gradient(&frames[i], tables, &net, spec, &config.weights)?;
                check(epoch, loss)?;
                for (t, l) in total.layers.iter_mut().zip(g.layers) {
                    t.weights += l.weights;
                    t.bias += l.bias;
                }
            }
            total.scale(1.0 / batch.len() as f64);
            let flat = total.flat();
            if flat.iter().any(|x| !x.is_finite()) {
                return Err(BackmapError::NonFinite { epoch, detail: "non-finite gradient".into() });
            }
            adam.step(&mut net, &flat);
        }
        trajectory.push(check(epoch, mean_recon_loss(frames, tables, &net, spec, &config.weights)?)?);
    }
    Ok(TrainOutcome { net, trajectory })
}

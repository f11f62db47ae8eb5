//! Training objectives and their analytic gradients.
//!
//! Local terms (bond lengths, bond angles, torsions) compare internal
//! coordinates directly. The Cartesian terms (`xyz`, `steric`) are pulled back
//! to internal coordinates through the reconstruction Jacobian.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::neighbors::nonbonded_pairs;
use crate::structure::{AtomKey, CGTrace, Structure};
use crate::topology::Exclusions;
use crate::zmatrix::{reconstruct_frame, reconstruct_with_jacobian, ZMatrixError, ZMatrixFrame};

pub const ANGULAR_EPSILON: f64 = 1e-7;
pub const STERIC_CUTOFF: f64 = 5.0;
pub const STERIC_THRESHOLD: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {expected} true values, {got} predicted")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("atom sets differ: {0}")]
    AtomMismatch(String),
    #[error("standard deviations must be positive")]
    NonPositiveSigma,
    #[error(transparent)]
    ZMatrix(#[from] ZMatrixError),
}

fn check_lengths(a: usize, b: usize) -> Result<(), LossError> {
    if a != b {
        return Err(LossError::LengthMismatch { expected: a, got: b });
    }
    if a == 0 {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// Mean squared error over bond lengths.
pub fn bond_loss(truth: &[f64], predicted: &[f64]) -> Result<f64, LossError> {
    check_lengths(truth.len(), predicted.len())?;
    Ok(truth.iter().zip(predicted).map(|(b, p)| (b - p).powi(2)).sum::<f64>() / truth.len() as f64)
}

/// `sqrt(2(1 − cos Δ) + ε)`, the chord length between two unit-circle points
/// smoothed at zero.
#[inline]
pub fn angular_term(delta: f64) -> f64 {
    (2.0 * (1.0 - delta.cos()) + ANGULAR_EPSILON).sqrt()
}

/// d/dΔ of [`angular_term`].
#[inline]
fn angular_term_derivative(delta: f64) -> f64 {
    delta.sin() / angular_term(delta)
}

/// Periodic loss over angles or torsions (radians).
pub fn angular_loss(truth: &[f64], predicted: &[f64]) -> Result<f64, LossError> {
    check_lengths(truth.len(), predicted.len())?;
    Ok(truth.iter().zip(predicted).map(|(t, p)| angular_term(t - p)).sum::<f64>() / truth.len() as f64)
}

/// Mean squared Euclidean deviation (Å²).
pub fn xyz_loss(truth: &[Vec3], predicted: &[Vec3]) -> Result<f64, LossError> {
    check_lengths(truth.len(), predicted.len())?;
    Ok(truth.iter().zip(predicted).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / truth.len() as f64)
}

fn steric_sum(points: &[Vec3], keys: &[AtomKey], exclusions: &Exclusions, brute: bool) -> f64 {
    nonbonded_pairs(points, keys, exclusions, STERIC_CUTOFF, brute)
        .iter()
        .map(|p| (STERIC_THRESHOLD - p.distance).max(0.0))
        .sum()
}

/// Hinge penalty `max(2 − d, 0)` summed over nonbonded pairs within 5 Å.
pub fn steric_loss(points: &[Vec3], keys: &[AtomKey], exclusions: &Exclusions) -> f64 {
    steric_sum(points, keys, exclusions, false)
}

/// [`steric_loss`] by exhaustive pair enumeration.
pub fn steric_loss_brute(points: &[Vec3], keys: &[AtomKey], exclusions: &Exclusions) -> f64 {
    steric_sum(points, keys, exclusions, true)
}

/// Gradient of [`steric_loss`] with respect to every point.
pub fn steric_position_gradient(points: &[Vec3], keys: &[AtomKey], exclusions: &Exclusions) -> Vec<Vec3> {
    let mut grad = vec![Vec3::zeros(); points.len()];
    for p in nonbonded_pairs(points, keys, exclusions, STERIC_THRESHOLD, false) {
        if p.distance > 0.0 {
            let u = (points[p.i] - points[p.j]) / p.distance;
            grad[p.i] -= u;
            grad[p.j] += u;
        }
    }
    grad
}

/// Closed-form KL(q ‖ p) between diagonal Gaussians.
pub fn kl_gaussian(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> Result<f64, LossError> {
    let n = mu_q.len();
    for len in [sigma_q.len(), mu_p.len(), sigma_p.len()] {
        if len != n {
            return Err(LossError::LengthMismatch { expected: n, got: len });
        }
    }
    if sigma_q.iter().chain(sigma_p).any(|s| s.is_nan() || *s <= 0.0) {
        return Err(LossError::NonPositiveSigma);
    }
    Ok((0..n)
        .map(|i| {
            (sigma_p[i] / sigma_q[i]).ln() + (sigma_q[i].powi(2) + (mu_q[i] - mu_p[i]).powi(2)) / (2.0 * sigma_p[i].powi(2))
                - 0.5
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub zeta: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { gamma: 1.0, delta: 1.0, eta: 1.0, zeta: 3.0, beta: 0.05 }
    }
}

pub fn recon_loss(bond: f64, angle: f64, torsion: f64, xyz: f64, steric: f64, w: &LossWeights) -> f64 {
    w.gamma * (bond + angle) + w.delta * torsion + w.eta * xyz + w.zeta * steric
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "L_bond")]
    pub bond: f64,
    #[serde(rename = "L_angle")]
    pub angle: f64,
    #[serde(rename = "L_torsion")]
    pub torsion: f64,
    #[serde(rename = "L_xyz")]
    pub xyz: f64,
    #[serde(rename = "L_steric")]
    pub steric: f64,
    #[serde(rename = "L_recon")]
    pub recon: f64,
    #[serde(rename = "L_KL")]
    pub kl: f64,
    #[serde(rename = "L_ELBO")]
    pub elbo: f64,
}

impl LossReport {
    pub fn from_components(bond: f64, angle: f64, torsion: f64, xyz: f64, steric: f64, kl: f64, w: &LossWeights) -> Self {
        let recon = recon_loss(bond, angle, torsion, xyz, steric, w);
        LossReport { bond, angle, torsion, xyz, steric, recon, kl, elbo: recon + w.beta * kl }
    }
}

/// Ground truth for one frame: all-atom structure, its trace and internal
/// coordinates, plus the 1-2/1-3 exclusions of its sequence.
pub struct FrameTarget<'a> {
    pub truth: &'a Structure,
    pub trace: &'a CGTrace,
    pub zmatrix: &'a ZMatrixFrame,
    pub exclusions: &'a Exclusions,
}

fn split_params(z: &ZMatrixFrame) -> [Vec<f64>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (_, row) in z.rows() {
        out[0].push(row.d);
        out[1].push(row.theta);
        out[2].push(row.tau);
    }
    out
}

fn check_rows(truth: &ZMatrixFrame, predicted: &ZMatrixFrame) -> Result<(), LossError> {
    let same = truth.residues.len() == predicted.residues.len()
        && truth
            .rows()
            .zip(predicted.rows())
            .all(|((ra, a), (rb, b))| ra.bead == rb.bead && a.atom == b.atom);
    if !same || truth.row_count() != predicted.row_count() {
        return Err(LossError::AtomMismatch("internal-coordinate rows differ".into()));
    }
    Ok(())
}

/// Predicted coordinates aligned with the truth's non-terminal atoms.
type Aligned = (Vec<AtomKey>, Vec<Vec3>, Vec<Vec3>);

fn aligned(target: &FrameTarget, predicted: &Structure) -> Result<Aligned, LossError> {
    let truth_atoms = target.truth.masked_atoms();
    let pred: HashMap<AtomKey, Vec3> = predicted.masked_atoms().into_iter().map(|(k, _, x)| (k, x)).collect();
    if pred.len() != truth_atoms.len() {
        return Err(LossError::AtomMismatch(format!("{} true atoms, {} predicted", truth_atoms.len(), pred.len())));
    }
    let mut keys = Vec::with_capacity(truth_atoms.len());
    let mut xs = Vec::with_capacity(truth_atoms.len());
    let mut ys = Vec::with_capacity(truth_atoms.len());
    for (key, _, x) in truth_atoms {
        let y = pred.get(&key).ok_or_else(|| LossError::AtomMismatch(format!("{}:{} not predicted", key.0, key.1)))?;
        keys.push(key);
        xs.push(x);
        ys.push(*y);
    }
    Ok((keys, xs, ys))
}

fn report(target: &FrameTarget, predicted_z: &ZMatrixFrame, predicted: &Structure, w: &LossWeights) -> Result<(LossReport, Aligned), LossError> {
    check_rows(target.zmatrix, predicted_z)?;
    let [d, theta, tau] = split_params(target.zmatrix);
    let [d_hat, theta_hat, tau_hat] = split_params(predicted_z);
    let (keys, xs, ys) = aligned(target, predicted)?;
    let r = LossReport::from_components(
        bond_loss(&d, &d_hat)?,
        angular_loss(&theta, &theta_hat)?,
        angular_loss(&tau, &tau_hat)?,
        xyz_loss(&xs, &ys)?,
        steric_loss(&ys, &keys, target.exclusions),
        0.0,
        w,
    );
    Ok((r, (keys, xs, ys)))
}

/// All loss terms of a predicted Z-matrix against the frame's ground truth.
pub fn evaluate_losses(target: &FrameTarget, predicted_z: &ZMatrixFrame, w: &LossWeights) -> Result<LossReport, LossError> {
    let predicted = reconstruct_frame(target.trace, predicted_z)?;
    report(target, predicted_z, &predicted, w).map(|r| r.0)
}

/// `L_recon` and its gradient with respect to the flat `[d, θ, τ]` parameter
/// vector of `predicted_z`.
pub fn loss_gradients(target: &FrameTarget, predicted_z: &ZMatrixFrame, w: &LossWeights) -> Result<(LossReport, Vec<f64>), LossError> {
    let (predicted, jacobian) = reconstruct_with_jacobian(target.trace, predicted_z)?;
    let (r, (keys, xs, ys)) = report(target, predicted_z, &predicted, w)?;

    let n_rows = predicted_z.row_count() as f64;
    let mut grad = vec![0.0; 3 * predicted_z.row_count()];
    for (i, ((_, t), (_, p))) in target.zmatrix.rows().zip(predicted_z.rows()).enumerate() {
        grad[3 * i] = w.gamma * -2.0 * (t.d - p.d) / n_rows;
        grad[3 * i + 1] = w.gamma * -angular_term_derivative(t.theta - p.theta) / n_rows;
        grad[3 * i + 2] = w.delta * -angular_term_derivative(t.tau - p.tau) / n_rows;
    }

    let n_atoms = keys.len() as f64;
    let steric = steric_position_gradient(&ys, &keys, target.exclusions);
    let position_grad: HashMap<AtomKey, Vec3> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (*k, w.eta * -2.0 * (xs[i] - ys[i]) / n_atoms + w.zeta * steric[i]))
        .collect();
    for (g, c) in grad.iter_mut().zip(jacobian.pullback(&position_grad)) {
        *g += c;
    }
    Ok((r, grad))
}

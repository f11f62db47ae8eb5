//! All-atom generation from an alpha-carbon trace.
//!
//! Internal coordinates come from fitted [`LookupTables`]: means in
//! deterministic mode, histogram draws for torsions in stochastic mode, or
//! table means corrected by a [`TorsionNet`] when one is supplied. The
//! resulting Z-matrix is decoded by the reconstruction engine.

pub mod features;
pub mod model;
pub mod net;
pub mod tables;
pub mod train;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::wrap_angle;
use crate::losses::LossError;
use crate::structure::{CGTrace, Structure};
use crate::templates::{template_for, ResidueType};
use crate::zmatrix::{reconstruct_frame, ResidueRows, ZMatrixError, ZMatrixFrame, ZRow};

pub use features::{featurize, FeatureSpec};
pub use model::{BackmapModel, FitMetadata, MODEL_VERSION};
pub use net::TorsionNet;
pub use tables::{fit_tables, LookupTables, SlotStats, TableAccumulator};
pub use train::{prepare_frames, train_torsion_net, TrainConfig, TrainOutcome, TrainingFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackmapError {
    #[error("residue {0} is terminal and has no feature window")]
    TerminalResidue(usize),
    #[error("model has no fitted statistics for residue type {0} and fallback is disabled")]
    Uncovered(ResidueType),
    #[error("feature dimension {got} does not match the network input {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss in epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    ZMatrix(#[from] ZMatrixError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

impl BackmapError {
    /// Degenerate geometry or non-finite values rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        match self {
            BackmapError::NonFinite { .. } => true,
            BackmapError::ZMatrix(e) | BackmapError::Loss(LossError::ZMatrix(e)) => e.is_numeric(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Deterministic,
    Stochastic,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Mode::Deterministic),
            "stochastic" => Ok(Mode::Stochastic),
            other => Err(format!("unknown mode `{other}` (deterministic|stochastic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackmapOptions {
    pub mode: Mode,
    pub seed: u64,
    pub allow_fallback: bool,
}

impl Default for BackmapOptions {
    fn default() -> Self {
        BackmapOptions { mode: Mode::Deterministic, seed: 0, allow_fallback: true }
    }
}

/// Table means for one residue, rows in pass order.
pub(crate) fn mean_rows(tables: &LookupTables, kind: ResidueType, allow_fallback: bool) -> Result<Vec<ZRow>, BackmapError> {
    if !allow_fallback && tables.uses_fallback(kind) {
        return Err(BackmapError::Uncovered(kind));
    }
    let slots = tables.slots(kind).ok_or(BackmapError::Uncovered(kind))?;
    let template = template_for(kind);
    if slots.len() != template.placed_count() {
        return Err(BackmapError::Model(format!("{kind} has {} slots, expected {}", slots.len(), template.placed_count())));
    }
    Ok(template
        .pass_order()
        .zip(slots)
        .map(|((atom, anchors), s)| ZRow { atom, anchors, d: s.bond_mean, theta: s.angle_mean, tau: s.torsion_mean })
        .collect())
}

/// Adds network offsets to the predicted angle slots of `rows`.
pub(crate) fn apply_offsets(rows: &mut [ZRow], offsets: &[f64; net::OUTPUT_SLOTS]) {
    for (r, row) in rows.iter_mut().enumerate() {
        if let Some(slot) = net::slot_for(r, 1) {
            row.theta += offsets[slot];
        }
        if let Some(slot) = net::slot_for(r, 2) {
            row.tau = wrap_angle(row.tau + offsets[slot]);
        }
    }
}

/// Internal coordinates for every non-terminal residue of `trace`.
pub fn build_zmatrix(
    trace: &CGTrace,
    tables: &LookupTables,
    net: Option<(&TorsionNet, &FeatureSpec)>,
    options: &BackmapOptions,
) -> Result<ZMatrixFrame, BackmapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut residues = Vec::new();
    for (i, bead) in trace.beads.iter().enumerate() {
        if trace.is_terminal(i) {
            continue;
        }
        let mut rows = mean_rows(tables, bead.kind, options.allow_fallback)?;
        match net {
            Some((net, spec)) => {
                let f = featurize(trace, i, spec)?;
                if f.len() != net.input_dim() {
                    return Err(BackmapError::FeatureDim { expected: net.input_dim(), got: f.len() });
                }
                apply_offsets(&mut rows, &net.offsets(&f));
            }
            None if options.mode == Mode::Stochastic => {
                let slots = tables.slots(bead.kind).expect("checked by mean_rows");
                for (row, s) in rows.iter_mut().zip(slots) {
                    row.tau = s.sample_torsion(&mut rng);
                }
            }
            None => {}
        }
        residues.push(ResidueRows { bead: i, chain: bead.chain, seq: bead.seq, kind: bead.kind, rows });
    }
    Ok(ZMatrixFrame { residues })
}

/// All-atom structure for `trace`. A network in the model takes precedence
/// over histogram sampling.
pub fn backmap(trace: &CGTrace, model: &BackmapModel, options: &BackmapOptions) -> Result<Structure, BackmapError> {
    let net = model.net.as_ref().map(|n| (n, &model.feature_spec));
    let z = build_zmatrix(trace, &model.tables, net, options)?;
    Ok(reconstruct_frame(trace, &z)?)
}

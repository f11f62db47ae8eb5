//! Cleaning raw ensembles: hydrogen removal, template pruning, terminal
//! masking and frame subsampling.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::structure::{sort_atoms, Ensemble};
use crate::templates::{template_for, Element, ResidueType};

pub const DEFAULT_FRAME_CAP: usize = 500;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessPolicy {
    pub frame_cap: usize,
    pub seed: u64,
}

impl Default for PreprocessPolicy {
    fn default() -> Self {
        PreprocessPolicy { frame_cap: DEFAULT_FRAME_CAP, seed: DEFAULT_SEED }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("chain {chain} has {len} residues; at least 3 are needed to anchor the backbone")]
    ChainTooShort { chain: char, len: usize },
    #[error("residue {kind} {chain}:{seq} has no CA atom")]
    MissingCa { chain: char, seq: i32, kind: ResidueType },
    #[error("ensemble has no frames")]
    NoFrames,
}

/// What preprocessing removed or masked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessLog {
    pub hydrogens_removed: usize,
    /// Non-template heavy atoms removed, by atom name (e.g. `OXT`).
    pub pruned: BTreeMap<String, usize>,
    pub terminal_residues: usize,
    pub frames_in: usize,
    pub frames_out: usize,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl PreprocessLog {
    /// Line-oriented `key value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("hydrogens_removed {}\n", self.hydrogens_removed));
        for (name, count) in &self.pruned {
            out.push_str(&format!("pruned {name} {count}\n"));
        }
        out.push_str(&format!("terminal_residues_masked {}\n", self.terminal_residues));
        out.push_str(&format!("frames_in {}\n", self.frames_in));
        out.push_str(&format!("frames_out {}\n", self.frames_out));
        out.push_str(&format!("seed {}\n", self.seed));
        for note in &self.notes {
            out.push_str(note);
            out.push('\n');
        }
        out
    }
}

/// Frame indices kept when subsampling `n` frames down to `cap`, sorted.
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, cap).into_vec();
    picked.sort_unstable();
    picked
}

pub fn preprocess(ensemble: &Ensemble, policy: &PreprocessPolicy) -> Result<(Ensemble, PreprocessLog), PreprocessError> {
    if ensemble.frames.is_empty() {
        return Err(PreprocessError::NoFrames);
    }
    let mut log = PreprocessLog { frames_in: ensemble.frames.len(), seed: policy.seed, ..Default::default() };

    let keep = subsample_indices(ensemble.frames.len(), policy.frame_cap, policy.seed);
    let mut frames = Vec::with_capacity(keep.len());
    for (new_id, &k) in keep.iter().enumerate() {
        let mut frame = ensemble.frames[k].clone();
        frame.frame_id = new_id;
        for chain in &mut frame.chains {
            if chain.residues.len() < 3 {
                return Err(PreprocessError::ChainTooShort { chain: chain.id, len: chain.residues.len() });
            }
            for residue in &mut chain.residues {
                let template = template_for(residue.kind);
                residue.atoms.retain(|atom| {
                    if atom.element == Element::H {
                        log.hydrogens_removed += 1;
                        false
                    } else if !template.contains(&atom.name) {
                        *log.pruned.entry(atom.name.to_string()).or_default() += 1;
                        false
                    } else {
                        true
                    }
                });
                if residue.atom("CA").is_none() {
                    return Err(PreprocessError::MissingCa { chain: chain.id, seq: residue.seq, kind: residue.kind });
                }
                sort_atoms(residue);
            }
        }
        frames.push(frame);
    }
    log.terminal_residues = 2 * frames[0].chains.len();
    log.frames_out = frames.len();
    if log.frames_out < log.frames_in {
        log.notes.push(format!("subsampled {} -> {} frames", log.frames_in, log.frames_out));
    }
    Ok((Ensemble { id: ensemble.id.clone(), frames }, log))
}

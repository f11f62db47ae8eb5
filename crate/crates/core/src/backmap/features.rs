//! Rigid-motion-invariant descriptors of a residue's alpha-carbon window.
//!
//! For window half-width `w` the vector holds, in order: distances between
//! every pair of window positions (grouped by sequence separation), the
//! interior angle at each inner position, sine and cosine of each
//! pseudo-dihedral, a validity mask per position and a residue-type one-hot.
//! Positions outside the chain contribute zeros and a cleared mask bit.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle, dihedral, Vec3};
use crate::structure::CGTrace;
use crate::templates::ResidueType;

use super::BackmapError;

pub const DEFAULT_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub window: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { window: DEFAULT_WINDOW }
    }
}

impl FeatureSpec {
    fn span(&self) -> usize {
        2 * self.window + 1
    }

    pub fn distance_count(&self) -> usize {
        self.span() * (self.span() - 1) / 2
    }

    pub fn angle_count(&self) -> usize {
        self.span() - 2
    }

    pub fn dihedral_count(&self) -> usize {
        self.span().saturating_sub(3)
    }

    pub fn dim(&self) -> usize {
        self.distance_count() + self.angle_count() + 2 * self.dihedral_count() + self.span() + ResidueType::ALL.len()
    }
}

/// Feature vector of non-terminal residue `index` of `trace`.
pub fn featurize(trace: &CGTrace, index: usize, spec: &FeatureSpec) -> Result<Vec<f64>, BackmapError> {
    if index >= trace.len() || trace.is_terminal(index) {
        return Err(BackmapError::TerminalResidue(index));
    }
    let chain = trace.beads[index].chain;
    let w = spec.window as isize;
    let window: Vec<Option<Vec3>> = (-w..=w)
        .map(|o| {
            let j = index as isize + o;
            (j >= 0 && (j as usize) < trace.len())
                .then(|| &trace.beads[j as usize])
                .filter(|b| b.chain == chain)
                .map(|b| b.ca)
        })
        .collect();
    let n = window.len();
    let mut out = Vec::with_capacity(spec.dim());
    for sep in 1..n {
        for a in 0..n - sep {
            out.push(match (window[a], window[a + sep]) {
                (Some(p), Some(q)) => (p - q).norm(),
                _ => 0.0,
            });
        }
    }
    for m in 1..n - 1 {
        out.push(match (window[m - 1], window[m], window[m + 1]) {
            (Some(a), Some(b), Some(c)) => angle(&a, &b, &c),
            _ => 0.0,
        });
    }
    for m in 0..spec.dihedral_count() {
        let (s, c) = match (window[m], window[m + 1], window[m + 2], window[m + 3]) {
            (Some(a), Some(b), Some(c), Some(d)) => dihedral(&a, &b, &c, &d).map(|t| (t.sin(), t.cos())).unwrap_or((0.0, 0.0)),
            _ => (0.0, 0.0),
        };
        out.push(s);
        out.push(c);
    }
    out.extend(window.iter().map(|p| if p.is_some() { 1.0 } else { 0.0 }));
    let kind = trace.beads[index].kind.index();
    out.extend((0..ResidueType::ALL.len()).map(|k| if k == kind { 1.0 } else { 0.0 }));
    debug_assert_eq!(out.len(), spec.dim());
    Ok(out)
}

//! In-memory protein structures, ensembles and coarse-grained traces.

use arrayvec::ArrayString;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::templates::{template_for, Element, ResidueType};

/// PDB atom names are at most four characters.
pub type AtomName = ArrayString<4>;

pub fn atom_name(name: &str) -> AtomName {
    AtomName::from(name.trim()).unwrap_or_else(|_| panic!("atom name `{name}` longer than 4 characters"))
}

/// Identity of an atom within a structure: (residue ordinal, atom name).
/// The ordinal counts residues across chains in file order.
pub type AtomKey = (usize, AtomName);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub name: AtomName,
    pub element: Element,
    pub coord: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    pub kind: ResidueType,
    pub seq: i32,
    pub atoms: Vec<Atom>,
}

impl Residue {
    pub fn atom(&self, name: &str) -> Option<&Atom> {
        self.atoms.iter().find(|a| a.name.as_str() == name)
    }

    pub fn coord(&self, name: &str) -> Option<Vec3> {
        self.atom(name).map(|a| a.coord)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub id: char,
    pub residues: Vec<Residue>,
}

impl Chain {
    /// First and last residues of a chain cannot anchor their backbone and are masked.
    pub fn is_terminal(&self, index: usize) -> bool {
        index == 0 || index + 1 == self.residues.len()
    }
}

/// One frame of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub frame_id: usize,
    pub chains: Vec<Chain>,
}

/// A residue visited in file order.
#[derive(Debug, Clone, Copy)]
pub struct ResidueRef<'a> {
    pub ordinal: usize,
    pub chain: &'a Chain,
    pub index: usize,
    pub residue: &'a Residue,
}

impl ResidueRef<'_> {
    pub fn is_terminal(&self) -> bool {
        self.chain.is_terminal(self.index)
    }
}

impl Structure {
    pub fn residues(&self) -> impl Iterator<Item = ResidueRef<'_>> {
        self.chains
            .iter()
            .flat_map(|chain| chain.residues.iter().enumerate().map(move |(index, residue)| (chain, index, residue)))
            .enumerate()
            .map(|(ordinal, (chain, index, residue))| ResidueRef { ordinal, chain, index, residue })
    }

    pub fn residue_count(&self) -> usize {
        self.chains.iter().map(|c| c.residues.len()).sum()
    }

    pub fn atom_count(&self) -> usize {
        self.residues().map(|r| r.residue.atoms.len()).sum()
    }

    /// Atoms of non-terminal residues, the set every loss and metric is taken over.
    pub fn masked_atoms(&self) -> Vec<(AtomKey, Element, Vec3)> {
        self.residues()
            .filter(|r| !r.is_terminal())
            .flat_map(|r| r.residue.atoms.iter().map(move |a| ((r.ordinal, a.name), a.element, a.coord)))
            .collect()
    }

    /// Residue types per chain, in order.
    pub fn sequence(&self) -> Vec<Vec<ResidueType>> {
        self.chains.iter().map(|c| c.residues.iter().map(|r| r.kind).collect()).collect()
    }

    /// (chain, seq, type, atom names) in file order; frames of an ensemble share it.
    pub fn skeleton(&self) -> Vec<(char, i32, ResidueType, AtomName)> {
        self.residues()
            .flat_map(|r| r.residue.atoms.iter().map(move |a| (r.chain.id, r.residue.seq, r.residue.kind, a.name)))
            .collect()
    }

    pub fn find_residue(&self, chain: char, seq: i32) -> Option<ResidueRef<'_>> {
        self.residues().find(|r| r.chain.id == chain && r.residue.seq == seq)
    }

    /// Applies `f` to every coordinate.
    pub fn map_coords(&self, f: impl Fn(&Vec3) -> Vec3) -> Structure {
        let mut out = self.clone();
        for chain in &mut out.chains {
            for residue in &mut chain.residues {
                for atom in &mut residue.atoms {
                    atom.coord = f(&atom.coord);
                }
            }
        }
        out
    }
}

/// Frames sharing one topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub id: String,
    pub frames: Vec<Structure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bead {
    pub chain: char,
    pub seq: i32,
    pub kind: ResidueType,
    pub ca: Vec3,
}

/// Alpha-carbon trace: one bead per residue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CGTrace {
    pub beads: Vec<Bead>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("residue {kind} {chain}:{seq} has no CA atom")]
    MissingCa { chain: char, seq: i32, kind: ResidueType },
    #[error("residue {chain}:{seq} has a non-finite CA coordinate")]
    NonFinite { chain: char, seq: i32 },
}

impl CGTrace {
    pub fn len(&self) -> usize {
        self.beads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beads.is_empty()
    }

    /// True for the first and last bead of each chain.
    pub fn is_terminal(&self, index: usize) -> bool {
        let chain = self.beads[index].chain;
        index == 0
            || index + 1 == self.beads.len()
            || self.beads[index - 1].chain != chain
            || self.beads[index + 1].chain != chain
    }

    /// Index ranges of consecutive beads sharing a chain id.
    pub fn chain_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.beads.len() {
            if i == self.beads.len() || self.beads[i].chain != self.beads[start].chain {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Structure holding only the CA atoms of the trace.
    pub fn to_structure(&self, frame_id: usize) -> Structure {
        let chains = self
            .chain_ranges()
            .into_iter()
            .map(|range| Chain {
                id: self.beads[range.start].chain,
                residues: self.beads[range]
                    .iter()
                    .map(|b| Residue {
                        kind: b.kind,
                        seq: b.seq,
                        atoms: vec![Atom { name: atom_name("CA"), element: Element::C, coord: b.ca }],
                    })
                    .collect(),
            })
            .collect();
        Structure { frame_id, chains }
    }

    pub fn map_coords(&self, f: impl Fn(&Vec3) -> Vec3) -> CGTrace {
        CGTrace { beads: self.beads.iter().map(|b| Bead { ca: f(&b.ca), ..b.clone() }).collect() }
    }
}

/// One bead per residue, centred on its alpha carbon.
pub fn cg_map(structure: &Structure) -> Result<CGTrace, TraceError> {
    let beads = structure
        .residues()
        .map(|r| {
            let (chain, seq, kind) = (r.chain.id, r.residue.seq, r.residue.kind);
            let ca = r.residue.coord("CA").ok_or(TraceError::MissingCa { chain, seq, kind })?;
            if !ca.iter().all(|x| x.is_finite()) {
                return Err(TraceError::NonFinite { chain, seq });
            }
            Ok(Bead { chain, seq, kind, ca })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CGTrace { beads })
}

/// Orders a residue's atoms as in its template; unknown atoms go last.
pub(crate) fn sort_atoms(residue: &mut Residue) {
    let names = template_for(residue.kind).atom_names();
    residue.atoms.sort_by_key(|a| names.iter().position(|n| *n == a.name.as_str()).unwrap_or(usize::MAX));
}

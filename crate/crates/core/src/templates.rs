//! Residue chemistry: heavy-atom lists, Z-matrix anchors and bonded terms.
//!
//! Every residue is rebuilt around its alpha carbon, which is the coarse-grained
//! bead and therefore never placed. Backbone `N` and `C` hang off the CA trace
//! (`CA_i`, `CA_{i-1}`, `CA_{i+1}`), `O` and the side chain hang off atoms of
//! the same residue. Side-chain anchors are derived from a parent table: the
//! first three ancestors of an atom, where the ancestry of `CB` continues
//! `CA -> C -> N`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("unknown residue code `{0}`")]
    UnknownResidue(String),
    #[error("atom `{atom}` is not placed in residue {residue}")]
    UnknownAtom { residue: ResidueType, atom: String },
    #[error("unknown anchor reference `{0}`")]
    UnknownAnchor(String),
    #[error("invalid template for {code}: {reason}")]
    Invalid { code: String, reason: String },
    #[error("template file is not valid JSON: {0}")]
    Json(String),
}

macro_rules! residue_types {
    ($($variant:ident => $code:literal),* $(,)?) => {
        /// The closed set of residue types accepted by the parser.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum ResidueType { $($variant),* }

        impl ResidueType {
            pub const ALL: [ResidueType; residue_types!(@count $($variant)*)] = [$(ResidueType::$variant),*];

            /// Canonical three-letter code.
            pub fn code(self) -> &'static str {
                match self { $(ResidueType::$variant => $code),* }
            }
        }
    };
    (@count $($x:ident)*) => { 0usize $(+ residue_types!(@one $x))* };
    (@one $x:ident) => { 1usize };
}

residue_types! {
    Ala => "ALA", Arg => "ARG", Asn => "ASN", Asp => "ASP", Cys => "CYS",
    Gln => "GLN", Glu => "GLU", Gly => "GLY", His => "HIS", Ile => "ILE",
    Leu => "LEU", Lys => "LYS", Met => "MET", Phe => "PHE", Pro => "PRO",
    Ser => "SER", Thr => "THR", Trp => "TRP", Tyr => "TYR", Val => "VAL",
    Tpo => "TPO", Sep => "SEP",
}

impl ResidueType {
    /// Position in [`ResidueType::ALL`], used for one-hot encodings.
    pub fn index(self) -> usize {
        ResidueType::ALL.iter().position(|&t| t == self).unwrap()
    }

    pub fn is_aromatic(self) -> bool {
        matches!(self, ResidueType::Phe | ResidueType::Tyr | ResidueType::Trp | ResidueType::His)
    }
}

impl FromStr for ResidueType {
    type Err = TemplateError;

    fn from_str(code: &str) -> Result<Self, Self::Err> {
        let code = code.trim();
        // phosphoserine appears under both spellings
        if code.eq_ignore_ascii_case("SPO") {
            return Ok(ResidueType::Sep);
        }
        ResidueType::ALL
            .iter()
            .copied()
            .find(|t| t.code().eq_ignore_ascii_case(code))
            .ok_or_else(|| TemplateError::UnknownResidue(code.to_string()))
    }
}

impl fmt::Display for ResidueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for ResidueType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for ResidueType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        code.parse().map_err(serde::de::Error::custom)
    }
}

/// Chemical element of a heavy atom (hydrogen only exists to be stripped).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    S,
    P,
}

impl Element {
    /// Single-bond covalent radius in Å.
    pub fn covalent_radius(self) -> f64 {
        match self {
            Element::H => 0.31,
            Element::C => 0.76,
            Element::N => 0.71,
            Element::O => 0.66,
            Element::S => 1.05,
            Element::P => 1.07,
        }
    }

    pub fn is_heteroatom(self) -> bool {
        matches!(self, Element::N | Element::O | Element::S | Element::P)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        match symbol.trim().to_ascii_uppercase().as_str() {
            "H" | "D" => Some(Element::H),
            "C" => Some(Element::C),
            "N" => Some(Element::N),
            "O" => Some(Element::O),
            "S" => Some(Element::S),
            "P" => Some(Element::P),
            _ => None,
        }
    }

    /// Element implied by a PDB heavy-atom name of the residues handled here.
    pub fn from_atom_name(name: &str) -> Option<Element> {
        let first = name.trim_start_matches(|c: char| c.is_ascii_digit()).chars().next()?;
        Element::from_symbol(&first.to_string())
    }
}

/// Reference to an anchor atom: an atom of the residue being built, or the
/// alpha carbon of a sequence neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AtomRef {
    Local(&'static str),
    PrevCa,
    NextCa,
}

impl AtomRef {
    pub fn is_ca(self) -> bool {
        matches!(self, AtomRef::PrevCa | AtomRef::NextCa | AtomRef::Local("CA"))
    }

    /// Parses the text form produced by `Display` against a template.
    pub fn parse(text: &str, template: &ResidueTemplate) -> Result<AtomRef, TemplateError> {
        match text {
            "CA-1" => Ok(AtomRef::PrevCa),
            "CA+1" => Ok(AtomRef::NextCa),
            name => template
                .atom_names()
                .iter()
                .find(|n| **n == name)
                .map(|n| AtomRef::Local(n))
                .ok_or_else(|| TemplateError::UnknownAnchor(text.to_string())),
        }
    }
}

impl fmt::Display for AtomRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomRef::Local(name) => f.write_str(name),
            AtomRef::PrevCa => f.write_str("CA-1"),
            AtomRef::NextCa => f.write_str("CA+1"),
        }
    }
}

/// Side-chain atoms in placement order, each with its bonded parent.
fn side_chain(kind: ResidueType) -> &'static [(&'static str, &'static str)] {
    use ResidueType::*;
    match kind {
        Gly => &[],
        Ala => &[("CB", "CA")],
        Ser => &[("CB", "CA"), ("OG", "CB")],
        Cys => &[("CB", "CA"), ("SG", "CB")],
        Thr => &[("CB", "CA"), ("OG1", "CB"), ("CG2", "CB")],
        Val => &[("CB", "CA"), ("CG1", "CB"), ("CG2", "CB")],
        Leu => &[("CB", "CA"), ("CG", "CB"), ("CD1", "CG"), ("CD2", "CG")],
        Ile => &[("CB", "CA"), ("CG1", "CB"), ("CG2", "CB"), ("CD1", "CG1")],
        Met => &[("CB", "CA"), ("CG", "CB"), ("SD", "CG"), ("CE", "SD")],
        Pro => &[("CB", "CA"), ("CG", "CB"), ("CD", "CG")],
        Asp => &[("CB", "CA"), ("CG", "CB"), ("OD1", "CG"), ("OD2", "CG")],
        Asn => &[("CB", "CA"), ("CG", "CB"), ("OD1", "CG"), ("ND2", "CG")],
        Glu => &[("CB", "CA"), ("CG", "CB"), ("CD", "CG"), ("OE1", "CD"), ("OE2", "CD")],
        Gln => &[("CB", "CA"), ("CG", "CB"), ("CD", "CG"), ("OE1", "CD"), ("NE2", "CD")],
        Lys => &[("CB", "CA"), ("CG", "CB"), ("CD", "CG"), ("CE", "CD"), ("NZ", "CE")],
        Arg => &[
            ("CB", "CA"),
            ("CG", "CB"),
            ("CD", "CG"),
            ("NE", "CD"),
            ("CZ", "NE"),
            ("NH1", "CZ"),
            ("NH2", "CZ"),
        ],
        His => &[
            ("CB", "CA"),
            ("CG", "CB"),
            ("ND1", "CG"),
            ("CD2", "CG"),
            ("CE1", "ND1"),
            ("NE2", "CD2"),
        ],
        Phe => &[
            ("CB", "CA"),
            ("CG", "CB"),
            ("CD1", "CG"),
            ("CD2", "CG"),
            ("CE1", "CD1"),
            ("CE2", "CD2"),
            ("CZ", "CE1"),
        ],
        Tyr => &[
            ("CB", "CA"),
            ("CG", "CB"),
            ("CD1", "CG"),
            ("CD2", "CG"),
            ("CE1", "CD1"),
            ("CE2", "CD2"),
            ("CZ", "CE1"),
            ("OH", "CZ"),
        ],
        Trp => &[
            ("CB", "CA"),
            ("CG", "CB"),
            ("CD1", "CG"),
            ("CD2", "CG"),
            ("NE1", "CD1"),
            ("CE2", "CD2"),
            ("CE3", "CD2"),
            ("CZ2", "CE2"),
            ("CZ3", "CE3"),
            ("CH2", "CZ2"),
        ],
        Tpo => &[
            ("CB", "CA"),
            ("OG1", "CB"),
            ("CG2", "CB"),
            ("P", "OG1"),
            ("O1P", "P"),
            ("O2P", "P"),
            ("O3P", "P"),
        ],
        Sep => &[("CB", "CA"), ("OG", "CB"), ("P", "OG"), ("O1P", "P"), ("O2P", "P"), ("O3P", "P")],
    }
}

/// Bonds closing rings; their lengths follow from the placed geometry.
fn ring_closures(kind: ResidueType) -> &'static [(&'static str, &'static str)] {
    use ResidueType::*;
    match kind {
        Phe | Tyr => &[("CZ", "CE2")],
        His => &[("CE1", "NE2")],
        Trp => &[("NE1", "CE2"), ("CZ3", "CH2")],
        Pro => &[("CD", "N")],
        _ => &[],
    }
}

/// Atoms whose centroid is the aromatic ring centre. Both Trp rings form one set.
pub fn aromatic_ring(kind: ResidueType) -> Option<&'static [&'static str]> {
    use ResidueType::*;
    match kind {
        Phe | Tyr => Some(&["CG", "CD1", "CD2", "CE1", "CE2", "CZ"]),
        His => Some(&["CG", "ND1", "CD2", "CE1", "NE2"]),
        Trp => Some(&["CG", "CD1", "CD2", "NE1", "CE2", "CE3", "CZ2", "CZ3", "CH2"]),
        _ => None,
    }
}

/// Static description of one residue type.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueTemplate {
    pub residue_type: ResidueType,
    /// `[O, N, C, side chain...]`; CA is the bead and never placed.
    pub placement_order: Vec<&'static str>,
    /// Anchor triple of each atom in `placement_order`, same order.
    pub anchors: Vec<[AtomRef; 3]>,
    /// Intra-residue bonds. The peptide bond `C_i - N_{i+1}` is implied between neighbours.
    pub bonds: Vec<(&'static str, &'static str)>,
    pub angles: Vec<[&'static str; 3]>,
    pub torsions: Vec<[&'static str; 4]>,
    atom_names: Vec<&'static str>,
    side_parents: Vec<(&'static str, &'static str)>,
}

/// Inter-residue peptide bond as (atom of residue i, atom of residue i+1).
pub const PEPTIDE_BOND: (&str, &str) = ("C", "N");

/// Atom placement schedule shared by every residue: backbone passes first.
pub const BACKBONE_PASSES: [&str; 3] = ["N", "C", "O"];

/// Largest number of atoms placed for any residue (Trp).
pub const MAX_PLACED_ATOMS: usize = 13;

impl ResidueTemplate {
    fn build(kind: ResidueType) -> ResidueTemplate {
        let side = side_chain(kind);
        let mut placement_order = vec!["O", "N", "C"];
        placement_order.extend(side.iter().map(|(name, _)| *name));

        let parent_of = |name: &str| -> &'static str {
            match name {
                "CA" => "C",
                "C" => "N",
                _ => side.iter().find(|(n, _)| *n == name).map(|(_, p)| *p).unwrap(),
            }
        };
        let anchors = placement_order
            .iter()
            .map(|&name| match name {
                "N" => [AtomRef::Local("CA"), AtomRef::PrevCa, AtomRef::NextCa],
                "C" => [AtomRef::Local("CA"), AtomRef::NextCa, AtomRef::PrevCa],
                "O" => [AtomRef::Local("C"), AtomRef::Local("CA"), AtomRef::Local("N")],
                _ => {
                    let j = parent_of(name);
                    let k = parent_of(j);
                    let l = parent_of(k);
                    [AtomRef::Local(j), AtomRef::Local(k), AtomRef::Local(l)]
                }
            })
            .collect();

        let mut bonds = vec![("N", "CA"), ("CA", "C"), ("C", "O")];
        bonds.extend(side.iter().map(|(name, parent)| (*parent, *name)));
        bonds.extend_from_slice(ring_closures(kind));

        let mut atom_names = vec!["N", "CA", "C", "O"];
        atom_names.extend(side.iter().map(|(name, _)| *name));

        let (angles, torsions) = bonded_terms(&atom_names, &bonds);
        ResidueTemplate {
            residue_type: kind,
            placement_order,
            anchors,
            bonds,
            angles,
            torsions,
            atom_names,
            side_parents: side.to_vec(),
        }
    }

    /// Every heavy atom of the residue in PDB order: `N CA C O` then side chain.
    pub fn atom_names(&self) -> &[&'static str] {
        &self.atom_names
    }

    /// Side-chain atoms with their bonded parents, in placement order.
    pub fn side_chain(&self) -> &[(&'static str, &'static str)] {
        &self.side_parents
    }

    pub fn contains(&self, atom: &str) -> bool {
        self.atom_names.contains(&atom)
    }

    /// Atoms in the order the reconstruction passes place them: `N, C, O`, then
    /// the side chain. Each anchor is CA or an earlier atom of this list.
    pub fn pass_order(&self) -> impl Iterator<Item = (&'static str, [AtomRef; 3])> + '_ {
        BACKBONE_PASSES
            .iter()
            .chain(self.side_parents.iter().map(|(name, _)| name))
            .map(move |name| (*name, self.anchors_for(name).unwrap()))
    }

    pub fn placed_count(&self) -> usize {
        self.placement_order.len()
    }

    pub fn anchors_for(&self, atom: &str) -> Result<[AtomRef; 3], TemplateError> {
        self.placement_order
            .iter()
            .position(|n| *n == atom)
            .map(|i| self.anchors[i])
            .ok_or_else(|| TemplateError::UnknownAtom { residue: self.residue_type, atom: atom.to_string() })
    }

    pub fn element_of(&self, atom: &str) -> Option<Element> {
        if self.contains(atom) {
            Element::from_atom_name(atom)
        } else {
            None
        }
    }

    pub fn to_record(&self) -> TemplateRecord {
        TemplateRecord {
            code: self.residue_type.code().to_string(),
            atoms: self.atom_names.iter().map(|s| s.to_string()).collect(),
            placement_order: self.placement_order.iter().map(|s| s.to_string()).collect(),
            anchors: self
                .placement_order
                .iter()
                .zip(&self.anchors)
                .map(|(name, a)| [name.to_string(), a[0].to_string(), a[1].to_string(), a[2].to_string()])
                .collect(),
            bonds: self.bonds.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect(),
            angles: self.angles.iter().map(|t| t.map(str::to_string)).collect(),
            torsions: self.torsions.iter().map(|t| t.map(str::to_string)).collect(),
        }
    }
}

fn bonded_terms(
    atoms: &[&'static str],
    bonds: &[(&'static str, &'static str)],
) -> (Vec<[&'static str; 3]>, Vec<[&'static str; 4]>) {
    let neighbours = |a: &str| -> Vec<&'static str> {
        let mut out: Vec<&'static str> = bonds
            .iter()
            .filter_map(|&(x, y)| if x == a { Some(y) } else if y == a { Some(x) } else { None })
            .collect();
        out.sort_by_key(|n| atoms.iter().position(|m| m == n));
        out
    };
    let rank = |a: &str| atoms.iter().position(|m| *m == a).unwrap();

    let mut angles = Vec::new();
    for &centre in atoms {
        let nb = neighbours(centre);
        for (i, &a) in nb.iter().enumerate() {
            for &c in &nb[i + 1..] {
                angles.push([a, centre, c]);
            }
        }
    }
    let mut torsions = Vec::new();
    for &(b, c) in bonds {
        for a in neighbours(b).into_iter().filter(|&a| a != c) {
            for d in neighbours(c).into_iter().filter(|&d| d != b && d != a) {
                let quad = if rank(a) <= rank(d) { [a, b, c, d] } else { [d, c, b, a] };
                if !torsions.contains(&quad) {
                    torsions.push(quad);
                }
            }
        }
    }
    (angles, torsions)
}

static TEMPLATES: Lazy<Vec<ResidueTemplate>> =
    Lazy::new(|| ResidueType::ALL.iter().map(|&t| ResidueTemplate::build(t)).collect());

/// The immutable template of a residue type.
pub fn template_for(kind: ResidueType) -> &'static ResidueTemplate {
    &TEMPLATES[kind.index()]
}

pub fn anchors_for(kind: ResidueType, atom: &str) -> Result<[AtomRef; 3], TemplateError> {
    template_for(kind).anchors_for(atom)
}

/// Owned, serializable form of a template, used for the exported data file.
///
/// Schema (JSON array of objects):
/// - `code`: three-letter residue code
/// - `atoms`: heavy atoms in PDB order
/// - `placement_order`: placed atoms, `[O, N, C, side chain...]`
/// - `anchors`: `[atom, j, k, l]` rows; `CA-1`/`CA+1` name neighbour alpha carbons
/// - `bonds`, `angles`, `torsions`: atom-name tuples within the residue
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub code: String,
    pub atoms: Vec<String>,
    pub placement_order: Vec<String>,
    pub anchors: Vec<[String; 4]>,
    pub bonds: Vec<[String; 2]>,
    pub angles: Vec<[String; 3]>,
    pub torsions: Vec<[String; 4]>,
}

impl TemplateRecord {
    /// Checks placeability and reference integrity.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let invalid = |reason: String| TemplateError::Invalid { code: self.code.clone(), reason };
        self.code.parse::<ResidueType>()?;
        let atoms: BTreeSet<&str> = self.atoms.iter().map(String::as_str).collect();
        if !atoms.contains("CA") {
            return Err(invalid("CA missing".into()));
        }
        if self.placement_order.iter().any(|a| a == "CA") {
            return Err(invalid("CA must not be placed".into()));
        }
        if self.anchors.len() != self.placement_order.len() {
            return Err(invalid("one anchor row per placed atom required".into()));
        }
        for (row, name) in self.anchors.iter().zip(&self.placement_order) {
            if &row[0] != name {
                return Err(invalid(format!("anchor row for {} out of order", row[0])));
            }
        }
        // simulate the pass schedule: N, C, O, side chain
        let mut placed: BTreeSet<&str> = ["CA"].into_iter().collect();
        let schedule = BACKBONE_PASSES
            .iter()
            .copied()
            .chain(self.placement_order.iter().map(String::as_str).filter(|a| !BACKBONE_PASSES.contains(a)));
        for atom in schedule {
            let row = self
                .anchors
                .iter()
                .find(|r| r[0] == atom)
                .ok_or_else(|| invalid(format!("no anchors for {atom}")))?;
            let refs = [&row[1], &row[2], &row[3]];
            if refs[0] == refs[1] || refs[1] == refs[2] || refs[0] == refs[2] {
                return Err(invalid(format!("repeated anchor for {atom}")));
            }
            for r in refs {
                let ok = r == "CA-1" || r == "CA+1" || placed.contains(r.as_str());
                if !ok {
                    return Err(invalid(format!("anchor {r} of {atom} not yet placed")));
                }
            }
            placed.insert(atom);
        }
        for name in self.bonds.iter().flatten().chain(self.angles.iter().flatten()).chain(self.torsions.iter().flatten())
        {
            if !atoms.contains(name.as_str()) {
                return Err(invalid(format!("bonded term references unknown atom {name}")));
            }
        }
        Ok(())
    }
}

/// Human-readable JSON export of every built-in template.
pub fn export_templates() -> String {
    let records: Vec<TemplateRecord> = ResidueType::ALL.iter().map(|&t| template_for(t).to_record()).collect();
    serde_json::to_string_pretty(&records).expect("template records serialize")
}

/// Parses and validates a template data file produced by [`export_templates`].
pub fn import_templates(json: &str) -> Result<Vec<TemplateRecord>, TemplateError> {
    let records: Vec<TemplateRecord> = serde_json::from_str(json).map_err(|e| TemplateError::Json(e.to_string()))?;
    for record in &records {
        record.validate()?;
    }
    Ok(records)
}

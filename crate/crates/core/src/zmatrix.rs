//! Internal-coordinate frames: extraction from Cartesian structures and
//! reconstruction from an alpha-carbon trace.
//!
//! Reconstruction is pass-parallel. Pass 1 places `N` of every non-terminal
//! residue from its three neighbouring alpha carbons, pass 2 places `C`, pass 3
//! places `O`, and each later pass places the next side-chain slot of every
//! residue that still has one. With Trp present that is 3 + 10 = 13 passes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{angle, dihedral, place_atom, GeometryError, PlacementFrame, Vec3};
use crate::structure::{atom_name, Atom, AtomKey, CGTrace, Chain, Residue, Structure};
use crate::templates::{template_for, AtomRef, Element, ResidueType, TemplateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZMatrixError {
    #[error("residue {kind} {chain}:{seq} is missing atom {atom}")]
    MissingAtom { chain: char, seq: i32, kind: ResidueType, atom: String },
    #[error("no internal coordinates for residue {kind} {chain}:{seq}")]
    MissingResidue { chain: char, seq: i32, kind: ResidueType },
    #[error("residue {chain}:{seq} atom {atom}: {source}")]
    Geometry { chain: char, seq: i32, atom: String, source: GeometryError },
    #[error("internal coordinates do not match the trace: {0}")]
    Mismatch(String),
    #[error("z-matrix line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl ZMatrixError {
    /// True when the failure is numeric (degenerate or non-finite geometry).
    pub fn is_numeric(&self) -> bool {
        matches!(self, ZMatrixError::Geometry { .. })
    }
}

/// Internal coordinates of one placed atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZRow {
    pub atom: &'static str,
    pub anchors: [AtomRef; 3],
    /// Bond length to anchor j, Å.
    pub d: f64,
    /// Angle (atom, j, k), radians.
    pub theta: f64,
    /// Dihedral (atom, j, k, l), radians in (-π, π].
    pub tau: f64,
}

/// Rows of one non-terminal residue, in pass order (`N, C, O`, side chain).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueRows {
    /// Index of the residue in the trace (its ordinal).
    pub bead: usize,
    pub chain: char,
    pub seq: i32,
    pub kind: ResidueType,
    pub rows: Vec<ZRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZMatrixFrame {
    pub residues: Vec<ResidueRows>,
}

impl ZMatrixFrame {
    pub fn row_count(&self) -> usize {
        self.residues.iter().map(|r| r.rows.len()).sum()
    }

    /// Rows with their residue, in parameter order.
    pub fn rows(&self) -> impl Iterator<Item = (&ResidueRows, &ZRow)> {
        self.residues.iter().flat_map(|r| r.rows.iter().map(move |row| (r, row)))
    }

    /// Flat parameter vector `[d, θ, τ]` per row.
    pub fn params(&self) -> Vec<f64> {
        self.rows().flat_map(|(_, row)| [row.d, row.theta, row.tau]).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), 3 * self.row_count(), "parameter count");
        for (row, p) in self.residues.iter_mut().flat_map(|r| r.rows.iter_mut()).zip(params.chunks_exact(3)) {
            row.d = p[0];
            row.theta = p[1];
            row.tau = p[2];
        }
    }

    pub fn with_params(&self, params: &[f64]) -> ZMatrixFrame {
        let mut out = self.clone();
        out.set_params(params);
        out
    }
}

fn resolve_anchor(
    r: AtomRef,
    bead: usize,
    trace: &CGTrace,
    residue: &Residue,
    chain: char,
) -> Result<Vec3, ZMatrixError> {
    match r {
        AtomRef::Local("CA") => Ok(trace.beads[bead].ca),
        AtomRef::Local(name) => residue.coord(name).ok_or_else(|| ZMatrixError::MissingAtom {
            chain,
            seq: residue.seq,
            kind: residue.kind,
            atom: name.to_string(),
        }),
        AtomRef::PrevCa => Ok(trace.beads[bead - 1].ca),
        AtomRef::NextCa => Ok(trace.beads[bead + 1].ca),
    }
}

/// Internal coordinates of every placed atom of the non-terminal residues.
pub fn extract(structure: &Structure, trace: &CGTrace) -> Result<ZMatrixFrame, ZMatrixError> {
    if trace.len() != structure.residue_count() {
        return Err(ZMatrixError::Mismatch(format!(
            "trace has {} beads, structure {} residues",
            trace.len(),
            structure.residue_count()
        )));
    }
    let mut residues = Vec::new();
    for r in structure.residues().filter(|r| !r.is_terminal()) {
        let (chain, residue) = (r.chain.id, r.residue);
        let template = template_for(residue.kind);
        let mut rows = Vec::with_capacity(template.placed_count());
        for (atom, anchors) in template.pass_order() {
            let a = residue.coord(atom).ok_or_else(|| ZMatrixError::MissingAtom {
                chain,
                seq: residue.seq,
                kind: residue.kind,
                atom: atom.to_string(),
            })?;
            let [b, c, d] = [0, 1, 2].map(|i| resolve_anchor(anchors[i], r.ordinal, trace, residue, chain));
            let (b, c, d) = (b?, c?, d?);
            let tau = dihedral(&a, &b, &c, &d).map_err(|source| ZMatrixError::Geometry {
                chain,
                seq: residue.seq,
                atom: atom.to_string(),
                source,
            })?;
            rows.push(ZRow { atom, anchors, d: (a - b).norm(), theta: angle(&a, &b, &c), tau });
        }
        residues.push(ResidueRows { bead: r.ordinal, chain, seq: residue.seq, kind: residue.kind, rows });
    }
    Ok(ZMatrixFrame { residues })
}

#[derive(Clone, Copy)]
enum Slot {
    Bead(usize),
    Row(usize),
}

/// Per-residue placement plan: anchor slots for every row.
struct Plan {
    /// Index into `ZMatrixFrame::residues` for each bead, if placed.
    entry_of_bead: Vec<Option<usize>>,
    slots: Vec<Vec<[Slot; 3]>>,
    /// First global row index of each entry.
    offsets: Vec<usize>,
    passes: usize,
}

fn plan(trace: &CGTrace, z: &ZMatrixFrame) -> Result<Plan, ZMatrixError> {
    let mut entry_of_bead = vec![None; trace.len()];
    for (e, res) in z.residues.iter().enumerate() {
        let bead = trace.beads.get(res.bead).ok_or_else(|| {
            ZMatrixError::Mismatch(format!("residue {}:{} has no bead {}", res.chain, res.seq, res.bead))
        })?;
        if bead.kind != res.kind || bead.chain != res.chain || bead.seq != res.seq {
            return Err(ZMatrixError::Mismatch(format!(
                "rows for {} {}:{} but bead {} is {} {}:{}",
                res.kind, res.chain, res.seq, res.bead, bead.kind, bead.chain, bead.seq
            )));
        }
        if trace.is_terminal(res.bead) {
            return Err(ZMatrixError::Mismatch(format!("terminal residue {}:{} cannot be placed", res.chain, res.seq)));
        }
        if entry_of_bead[res.bead].replace(e).is_some() {
            return Err(ZMatrixError::Mismatch(format!("duplicate rows for {}:{}", res.chain, res.seq)));
        }
    }
    for (i, bead) in trace.beads.iter().enumerate() {
        if !trace.is_terminal(i) && entry_of_bead[i].is_none() {
            return Err(ZMatrixError::MissingResidue { chain: bead.chain, seq: bead.seq, kind: bead.kind });
        }
    }

    let mut slots = Vec::with_capacity(z.residues.len());
    let mut offsets = Vec::with_capacity(z.residues.len());
    let mut passes = 0;
    let mut offset = 0;
    for res in &z.residues {
        let template = template_for(res.kind);
        let expected: Vec<_> = template.pass_order().collect();
        if expected.len() != res.rows.len() {
            let missing = expected.get(res.rows.len()).map(|(a, _)| a.to_string()).unwrap_or_default();
            return Err(ZMatrixError::MissingAtom { chain: res.chain, seq: res.seq, kind: res.kind, atom: missing });
        }
        let mut plan_rows = Vec::with_capacity(res.rows.len());
        for (row, (atom, anchors)) in res.rows.iter().zip(&expected) {
            if row.atom != *atom || row.anchors != *anchors {
                return Err(ZMatrixError::Mismatch(format!(
                    "{}:{} row {} does not follow the {} template",
                    res.chain, res.seq, row.atom, res.kind
                )));
            }
            let slot = |a: AtomRef| match a {
                AtomRef::Local("CA") => Slot::Bead(res.bead),
                AtomRef::Local(name) => Slot::Row(expected.iter().position(|(n, _)| *n == name).unwrap()),
                AtomRef::PrevCa => Slot::Bead(res.bead - 1),
                AtomRef::NextCa => Slot::Bead(res.bead + 1),
            };
            plan_rows.push(anchors.map(slot));
        }
        passes = passes.max(res.rows.len());
        slots.push(plan_rows);
        offsets.push(offset);
        offset += res.rows.len();
    }
    Ok(Plan { entry_of_bead, slots, offsets, passes })
}

/// Derivatives of every placed atom with respect to the flat parameter
/// vector of the frame (`3 * row + {0: d, 1: θ, 2: τ}`).
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementJacobian {
    pub n_params: usize,
    keys: Vec<AtomKey>,
    entries: Vec<Vec<(usize, Vec3)>>,
    index: HashMap<AtomKey, usize>,
}

impl PlacementJacobian {
    /// ∂(atom position)/∂(parameter); zero when independent.
    pub fn derivative(&self, key: AtomKey, param: usize) -> Vec3 {
        self.index
            .get(&key)
            .and_then(|&i| self.entries[i].iter().find(|(p, _)| *p == param))
            .map(|(_, v)| *v)
            .unwrap_or_else(Vec3::zeros)
    }

    /// Parameters the atom depends on, with their derivative vectors.
    pub fn dependencies(&self, key: AtomKey) -> &[(usize, Vec3)] {
        self.index.get(&key).map(|&i| self.entries[i].as_slice()).unwrap_or(&[])
    }

    pub fn atoms(&self) -> impl Iterator<Item = (AtomKey, &[(usize, Vec3)])> {
        self.keys.iter().copied().zip(self.entries.iter().map(Vec::as_slice))
    }

    /// Chain rule: gradient with respect to positions → gradient with respect
    /// to internal coordinates.
    pub fn pullback(&self, position_grad: &HashMap<AtomKey, Vec3>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params];
        for (key, entries) in self.keys.iter().zip(&self.entries) {
            if let Some(g) = position_grad.get(key) {
                for (p, v) in entries {
                    out[*p] += g.dot(v);
                }
            }
        }
        out
    }
}

/// Output of a reconstruction run.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub structure: Structure,
    /// Number of placement passes executed.
    pub passes: usize,
    pub jacobian: Option<PlacementJacobian>,
}

fn run(trace: &CGTrace, z: &ZMatrixFrame, with_jacobian: bool) -> Result<Reconstruction, ZMatrixError> {
    let plan = plan(trace, z)?;
    let mut positions: Vec<Vec<Vec3>> = z.residues.iter().map(|r| vec![Vec3::zeros(); r.rows.len()]).collect();
    let mut deps: Vec<Vec<Vec<(usize, Vec3)>>> =
        if with_jacobian { z.residues.iter().map(|r| vec![Vec::new(); r.rows.len()]).collect() } else { Vec::new() };

    // Each pass advances every residue by one atom; atoms in a pass only read
    // positions written by earlier passes.
    for pass in 0..plan.passes {
        for (e, res) in z.residues.iter().enumerate() {
            let Some(row) = res.rows.get(pass) else { continue };
            let slots = plan.slots[e][pass];
            let at = |s: Slot| match s {
                Slot::Bead(b) => trace.beads[b].ca,
                Slot::Row(r) => positions[e][r],
            };
            let [b, c, d] = slots.map(at);
            let geometry_error =
                |source| ZMatrixError::Geometry { chain: res.chain, seq: res.seq, atom: row.atom.to_string(), source };
            let placed = place_atom(&b, &c, &d, row.d, row.theta, row.tau).map_err(geometry_error)?;
            if with_jacobian {
                let frame = PlacementFrame::new(&b, &c, &d).map_err(geometry_error)?;
                let partials = frame.internal_partials(row.d, row.theta, row.tau);
                let anchor_jac = frame.anchor_jacobians(row.d, row.theta, row.tau);
                let base = 3 * (plan.offsets[e] + pass);
                let mut acc: BTreeMap<usize, Vec3> = (0..3).map(|k| (base + k, partials[k])).collect();
                for (x, slot) in slots.iter().enumerate() {
                    if let Slot::Row(r) = slot {
                        for (p, v) in &deps[e][*r] {
                            *acc.entry(*p).or_insert_with(Vec3::zeros) += anchor_jac[x] * v;
                        }
                    }
                }
                deps[e][pass] = acc.into_iter().collect();
            }
            positions[e][pass] = placed;
        }
    }

    let jacobian = with_jacobian.then(|| {
        let mut keys = Vec::new();
        let mut entries = Vec::new();
        for (e, res) in z.residues.iter().enumerate() {
            for (r, row) in res.rows.iter().enumerate() {
                keys.push((res.bead, atom_name(row.atom)));
                entries.push(std::mem::take(&mut deps[e][r]));
            }
        }
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        PlacementJacobian { n_params: 3 * z.row_count(), keys, entries, index }
    });

    let mut chains = Vec::new();
    for range in trace.chain_ranges() {
        let id = trace.beads[range.start].chain;
        let residues = range
            .map(|i| {
                let bead = &trace.beads[i];
                let template = template_for(bead.kind);
                let mut atoms = Vec::with_capacity(template.atom_names().len());
                for name in template.atom_names() {
                    let coord = if *name == "CA" {
                        Some(bead.ca)
                    } else {
                        plan.entry_of_bead[i].map(|e| {
                            let r = z.residues[e].rows.iter().position(|row| row.atom == *name).unwrap();
                            positions[e][r]
                        })
                    };
                    if let Some(coord) = coord {
                        let element = Element::from_atom_name(name).expect("template atoms have elements");
                        atoms.push(Atom { name: atom_name(name), element, coord });
                    }
                }
                Residue { kind: bead.kind, seq: bead.seq, atoms }
            })
            .collect();
        chains.push(Chain { id, residues });
    }
    Ok(Reconstruction { structure: Structure { frame_id: 0, chains }, passes: plan.passes, jacobian })
}

/// All-atom structure from a trace and internal coordinates. Terminal residues
/// keep only their alpha carbon.
pub fn reconstruct_frame(trace: &CGTrace, z: &ZMatrixFrame) -> Result<Structure, ZMatrixError> {
    run(trace, z, false).map(|r| r.structure)
}

/// Like [`reconstruct_frame`], also reporting the number of passes.
pub fn reconstruct_detailed(trace: &CGTrace, z: &ZMatrixFrame) -> Result<Reconstruction, ZMatrixError> {
    run(trace, z, false)
}

/// Reconstruction plus the exact Jacobian of every placed coordinate with
/// respect to every internal coordinate, by forward accumulation over passes.
pub fn reconstruct_with_jacobian(
    trace: &CGTrace,
    z: &ZMatrixFrame,
) -> Result<(Structure, PlacementJacobian), ZMatrixError> {
    let r = run(trace, z, true)?;
    Ok((r.structure, r.jacobian.expect("requested")))
}

pub const ZMATRIX_HEADER: &str = "# chain res_index atom j k l d theta tau";

/// Columnar text form, one row per placed atom, `FRAME k` before each frame.
/// Lengths in Å and angles in radians, six decimals.
pub fn write_zmatrix_text(frames: &[ZMatrixFrame]) -> String {
    let mut out = String::new();
    out.push_str(ZMATRIX_HEADER);
    out.push_str("\n# lengths in angstrom, angles in radians\n");
    for (k, frame) in frames.iter().enumerate() {
        writeln!(out, "FRAME {k}").unwrap();
        for (res, row) in frame.rows() {
            writeln!(
                out,
                "{} {} {} {} {} {} {:.6} {:.6} {:.6}",
                res.chain, res.seq, row.atom, row.anchors[0], row.anchors[1], row.anchors[2], row.d, row.theta, row.tau
            )
            .unwrap();
        }
    }
    out
}

/// Parses the text form, binding rows to residues of `traces` (one trace per
/// frame, or a single trace shared by all frames).
pub fn parse_zmatrix_text(text: &str, traces: &[CGTrace]) -> Result<Vec<ZMatrixFrame>, ZMatrixError> {
    let mut raw: Vec<Vec<(usize, Vec<String>)>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("FRAME") {
            rest.trim()
                .parse::<usize>()
                .map_err(|_| ZMatrixError::Parse { line: line_no, reason: "bad FRAME index".into() })?;
            raw.push(Vec::new());
            continue;
        }
        let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if fields.len() != 9 {
            return Err(ZMatrixError::Parse { line: line_no, reason: format!("expected 9 fields, got {}", fields.len()) });
        }
        match raw.last_mut() {
            Some(frame) => frame.push((line_no, fields)),
            None => raw.push(vec![(line_no, fields)]),
        }
    }
    if traces.is_empty() {
        return Err(ZMatrixError::Mismatch("no trace to bind rows to".into()));
    }
    if traces.len() != 1 && traces.len() != raw.len() {
        return Err(ZMatrixError::Mismatch(format!("{} z-matrix frames for {} traces", raw.len(), traces.len())));
    }
    raw.into_iter()
        .enumerate()
        .map(|(k, rows)| bind_rows(&traces[if traces.len() == 1 { 0 } else { k }], rows))
        .collect()
}

fn bind_rows(trace: &CGTrace, rows: Vec<(usize, Vec<String>)>) -> Result<ZMatrixFrame, ZMatrixError> {
    let lookup: HashMap<(char, i32), usize> = trace.beads.iter().enumerate().map(|(i, b)| ((b.chain, b.seq), i)).collect();
    let mut residues: Vec<ResidueRows> = Vec::new();
    for (line, f) in rows {
        let parse_err = |reason: String| ZMatrixError::Parse { line, reason };
        let chain = f[0].chars().next().filter(|_| f[0].chars().count() == 1).ok_or_else(|| parse_err("bad chain".into()))?;
        let seq: i32 = f[1].parse().map_err(|_| parse_err("bad residue index".into()))?;
        let bead = *lookup.get(&(chain, seq)).ok_or_else(|| parse_err(format!("residue {chain}:{seq} not in trace")))?;
        let kind = trace.beads[bead].kind;
        let template = template_for(kind);
        let atom = *template
            .atom_names()
            .iter()
            .find(|n| **n == f[2])
            .ok_or_else(|| parse_err(format!("atom {} not in {kind}", f[2])))?;
        let anchors = [
            AtomRef::parse(&f[3], template)?,
            AtomRef::parse(&f[4], template)?,
            AtomRef::parse(&f[5], template)?,
        ];
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(format!("bad number `{s}`")));
        let row = ZRow { atom, anchors, d: num(&f[6])?, theta: num(&f[7])?, tau: num(&f[8])? };
        match residues.last_mut() {
            Some(r) if r.bead == bead => r.rows.push(row),
            _ => {
                if residues.iter().any(|r| r.bead == bead) {
                    return Err(parse_err(format!("rows of {chain}:{seq} are not contiguous")));
                }
                residues.push(ResidueRows { bead, chain, seq, kind, rows: vec![row] });
            }
        }
    }
    Ok(ZMatrixFrame { residues })
}

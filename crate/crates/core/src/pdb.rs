//! Multi-model PDB reading and writing (fixed-width ATOM/MODEL records).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

use crate::geometry::Vec3;
use crate::structure::{sort_atoms, Atom, AtomName, Chain, Ensemble, Residue, Structure};
use crate::templates::{template_for, Element, ResidueType, TemplateError};

#[derive(Debug, Error)]
pub enum PdbError {
    #[error("line {line}: unknown residue `{code}` at {chain}:{seq}")]
    UnknownResidue { line: usize, code: String, chain: char, seq: i32 },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("model {frame} diverges from model 1 at {detail}")]
    SkeletonMismatch { frame: usize, detail: String },
    #[error("no ATOM records found")]
    Empty,
    #[error("cannot write {chain}:{seq} {kind}: atom {atom} is not placed")]
    Unplaced { chain: char, seq: i32, kind: ResidueType, atom: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Default)]
struct FrameBuilder {
    chains: Vec<Chain>,
}

impl FrameBuilder {
    fn push(&mut self, chain: char, seq: i32, kind: ResidueType, atom: Atom) {
        if self.chains.last().map(|c| c.id) != Some(chain) {
            self.chains.push(Chain { id: chain, residues: Vec::new() });
        }
        let residues = &mut self.chains.last_mut().unwrap().residues;
        if residues.last().map(|r| r.seq) != Some(seq) {
            residues.push(Residue { kind, seq, atoms: Vec::new() });
        }
        let residue = residues.last_mut().unwrap();
        if residue.atom(&atom.name).is_none() {
            residue.atoms.push(atom);
        }
    }

    fn finish(mut self, frame_id: usize) -> Structure {
        for residue in self.chains.iter_mut().flat_map(|c| c.residues.iter_mut()) {
            sort_atoms(residue);
        }
        Structure { frame_id, chains: self.chains }
    }
}

fn column(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        ""
    } else {
        line.get(start..end).unwrap_or("")
    }
}

fn parse_coord(line: &str, number: usize) -> Result<Vec3, PdbError> {
    let field = |s, e, axis| -> Result<f64, PdbError> {
        column(line, s, e).trim().parse::<f64>().map_err(|_| PdbError::Malformed {
            line: number,
            reason: format!("bad {axis} coordinate `{}`", column(line, s, e)),
        })
    };
    let v = Vec3::new(field(30, 38, 'x')?, field(38, 46, 'y')?, field(46, 54, 'z')?);
    if !v.iter().all(|x| x.is_finite()) {
        return Err(PdbError::Malformed { line: number, reason: "non-finite coordinate".into() });
    }
    Ok(v)
}

/// Parses a PDB stream into an ensemble, returning notes on dropped records.
///
/// MODEL/ENDMDL delimit frames; files without MODEL records hold one frame.
/// Only `ATOM` records are read, HETATM is skipped. Alternate locations other
/// than blank or `A` and residues with insertion codes are dropped and noted.
pub fn parse_pdb_logged<R: Read>(reader: R) -> Result<(Ensemble, Vec<String>), PdbError> {
    let mut notes = Vec::new();
    let mut frames: Vec<Structure> = Vec::new();
    let mut current = FrameBuilder::default();
    let mut in_model = false;
    let mut dropped_altloc = 0usize;
    let mut dropped_icode = 0usize;

    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let record = column(&line, 0, 6);
        if record.starts_with("MODEL") {
            if in_model || !current.chains.is_empty() {
                frames.push(std::mem::take(&mut current).finish(frames.len()));
            }
            in_model = true;
            continue;
        }
        if record.starts_with("ENDMDL") {
            frames.push(std::mem::take(&mut current).finish(frames.len()));
            in_model = false;
            continue;
        }
        if record != "ATOM  " && record != "ATOM" {
            continue;
        }
        if line.len() < 54 {
            return Err(PdbError::Malformed { line: number, reason: "ATOM record shorter than 54 columns".into() });
        }
        let name = column(&line, 12, 16).trim();
        let altloc = column(&line, 16, 17);
        let code = column(&line, 17, 20).trim();
        let chain = column(&line, 21, 22).chars().next().unwrap_or(' ');
        let seq: i32 = column(&line, 22, 26)
            .trim()
            .parse()
            .map_err(|_| PdbError::Malformed { line: number, reason: "bad residue number".into() })?;
        let icode = column(&line, 26, 27);
        if !(altloc.trim().is_empty() || altloc == "A") {
            dropped_altloc += 1;
            continue;
        }
        if !icode.trim().is_empty() {
            dropped_icode += 1;
            continue;
        }
        let kind = code.parse::<ResidueType>().map_err(|e| match e {
            TemplateError::UnknownResidue(code) => PdbError::UnknownResidue { line: number, code, chain, seq },
            other => PdbError::Malformed { line: number, reason: other.to_string() },
        })?;
        let name = canonical_atom_name(kind, name);
        let element = Element::from_symbol(column(&line, 76, 78))
            .or_else(|| Element::from_atom_name(&name))
            .ok_or_else(|| PdbError::Malformed { line: number, reason: format!("unknown element for atom {name}") })?;
        let coord = parse_coord(&line, number)?;
        let name = AtomName::from(&name)
            .map_err(|_| PdbError::Malformed { line: number, reason: format!("atom name `{name}` too long") })?;
        current.push(chain, seq, kind, Atom { name, element, coord });
    }
    if !current.chains.is_empty() {
        frames.push(current.finish(frames.len()));
    }
    if frames.is_empty() || frames.iter().all(|f| f.chains.is_empty()) {
        return Err(PdbError::Empty);
    }
    if dropped_altloc > 0 {
        notes.push(format!("dropped_altloc_records {dropped_altloc}"));
    }
    if dropped_icode > 0 {
        notes.push(format!("dropped_insertion_code_records {dropped_icode}"));
    }
    check_skeletons(&frames)?;
    Ok((Ensemble { id: String::new(), frames }, notes))
}

pub fn parse_pdb<R: Read>(reader: R) -> Result<Ensemble, PdbError> {
    parse_pdb_logged(reader).map(|(e, _)| e)
}

pub fn parse_pdb_str(text: &str) -> Result<Ensemble, PdbError> {
    parse_pdb(text.as_bytes())
}

/// Phosphate oxygens appear as either `O1P` or `OP1`.
fn canonical_atom_name(kind: ResidueType, name: &str) -> String {
    if matches!(kind, ResidueType::Tpo | ResidueType::Sep) {
        match name {
            "OP1" => return "O1P".into(),
            "OP2" => return "O2P".into(),
            "OP3" => return "O3P".into(),
            _ => {}
        }
    }
    name.to_string()
}

pub(crate) fn check_skeletons(frames: &[Structure]) -> Result<(), PdbError> {
    let Some(first) = frames.first() else { return Ok(()) };
    let reference = first.skeleton();
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let skeleton = frame.skeleton();
        let divergent = reference.iter().zip(&skeleton).position(|(a, b)| a != b);
        let detail = match divergent {
            Some(i) => {
                let (c, s, kind, name) = skeleton[i];
                Some(format!("atom {} of {c}:{s} {kind} (expected {})", name, describe(&reference[i])))
            }
            None if reference.len() != skeleton.len() => {
                let i = reference.len().min(skeleton.len());
                let longer = if reference.len() > skeleton.len() { &reference } else { &skeleton };
                Some(format!("atom {} (atom count {} vs {})", describe(&longer[i]), reference.len(), skeleton.len()))
            }
            None => None,
        };
        if let Some(detail) = detail {
            return Err(PdbError::SkeletonMismatch { frame: k + 1, detail });
        }
    }
    Ok(())
}

fn describe(entry: &(char, i32, ResidueType, AtomName)) -> String {
    format!("{}:{} {} {}", entry.0, entry.1, entry.2, entry.3)
}

fn format_atom_name(name: &str, element: Element) -> String {
    if name.len() < 4 && element.symbol().len() == 1 {
        format!(" {name:<3}")
    } else {
        format!("{name:<4}")
    }
}

fn write_frame(out: &mut String, frame: &Structure, serial: &mut usize) -> Result<(), PdbError> {
    for chain in &frame.chains {
        for (index, residue) in chain.residues.iter().enumerate() {
            let mut residue = residue.clone();
            if !chain.is_terminal(index) {
                let template = template_for(residue.kind);
                if let Some(missing) = template.atom_names().iter().find(|n| residue.atom(n).is_none()) {
                    return Err(PdbError::Unplaced {
                        chain: chain.id,
                        seq: residue.seq,
                        kind: residue.kind,
                        atom: missing.to_string(),
                    });
                }
            }
            sort_atoms(&mut residue);
            for atom in &residue.atoms {
                let c = atom.coord;
                writeln!(
                    out,
                    "ATOM  {:>5} {} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                    *serial % 100_000,
                    format_atom_name(&atom.name, atom.element),
                    residue.kind.code(),
                    chain.id,
                    residue.seq,
                    c.x,
                    c.y,
                    c.z,
                    1.0,
                    0.0,
                    atom.element.symbol()
                )
                .unwrap();
                *serial += 1;
            }
        }
        if let Some(last) = chain.residues.last() {
            writeln!(out, "TER   {:>5}      {:>3} {}{:>4}", *serial % 100_000, last.kind.code(), chain.id, last.seq)
                .unwrap();
            *serial += 1;
        }
    }
    Ok(())
}

/// Serializes frames as MODEL blocks with 3-decimal coordinates.
pub fn write_pdb_frames<'a>(frames: impl IntoIterator<Item = &'a Structure>) -> Result<String, PdbError> {
    let mut out = String::new();
    for (k, frame) in frames.into_iter().enumerate() {
        writeln!(out, "MODEL     {:>4}", k + 1).unwrap();
        let mut serial = 1;
        write_frame(&mut out, frame, &mut serial)?;
        out.push_str("ENDMDL\n");
    }
    out.push_str("END\n");
    Ok(out)
}

pub fn write_pdb(ensemble: &Ensemble) -> Result<String, PdbError> {
    write_pdb_frames(&ensemble.frames)
}

pub fn write_pdb_to<W: Write>(ensemble: &Ensemble, mut writer: W) -> Result<(), PdbError> {
    writer.write_all(write_pdb(ensemble)?.as_bytes())?;
    Ok(())
}

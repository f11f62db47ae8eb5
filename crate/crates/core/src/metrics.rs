//! Evaluation of generated structures against ground truth.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::neighbors::{nonbonded_pairs, pairs_within};
use crate::structure::{atom_name, AtomKey, AtomName, Structure};
use crate::templates::{aromatic_ring, Element};
use crate::topology::{BondGraph, Exclusions};

pub const BOND_TOLERANCE: f64 = 0.4;
pub const CLASH_DISTANCE: f64 = 1.2;
pub const CONTACT_CUTOFF: f64 = 5.0;
pub const HETERO_CONTACT: f64 = 3.3;
pub const RING_CONTACT: f64 = 5.5;
pub const ATOM_HINGE: f64 = 4.0;
pub const PI_HINGE: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("skeleton mismatch: {0}")]
    SkeletonMismatch(String),
    #[error("bond graphs have different node sets")]
    NodeMismatch,
    #[error("reference graph has no edges")]
    EmptyReference,
    #[error("bad atom spec `{0}` (expected CHAIN:SEQ:ATOM)")]
    BadSpec(String),
    #[error("atom {0} not found")]
    AtomNotFound(String),
}

fn residue_skeleton(s: &Structure) -> Vec<(char, i32, crate::ResidueType)> {
    s.residues().map(|r| (r.chain.id, r.residue.seq, r.residue.kind)).collect()
}

fn atom_map(s: &Structure) -> HashMap<AtomKey, Vec3> {
    s.masked_atoms().into_iter().map(|(k, _, x)| (k, x)).collect()
}

/// Pairs of (truth, generated) positions over the truth's non-terminal atoms.
fn paired(truth: &Structure, generated: &Structure) -> Result<Vec<(AtomKey, Vec3, Vec3)>, MetricsError> {
    if residue_skeleton(truth) != residue_skeleton(generated) {
        return Err(MetricsError::SkeletonMismatch("residue sequences differ".into()));
    }
    let gen = atom_map(generated);
    let truth_atoms = truth.masked_atoms();
    if truth_atoms.len() != gen.len() {
        return Err(MetricsError::SkeletonMismatch(format!("{} true atoms, {} generated", truth_atoms.len(), gen.len())));
    }
    truth_atoms
        .into_iter()
        .map(|(k, _, x)| {
            gen.get(&k)
                .map(|y| (k, x, *y))
                .ok_or_else(|| MetricsError::SkeletonMismatch(format!("atom {} of residue {} missing", k.1, k.0)))
        })
        .collect()
}

/// Root-mean-square deviation without superposition, over non-terminal atoms.
pub fn rmsd(truth: &Structure, generated: &Structure) -> Result<f64, MetricsError> {
    let pairs = paired(truth, generated)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    Ok((pairs.iter().map(|(_, x, y)| (x - y).norm_squared()).sum::<f64>() / pairs.len() as f64).sqrt())
}

/// Covalent-radius bond inference over non-terminal atoms.
pub fn infer_bond_graph(structure: &Structure, tolerance: f64) -> BondGraph {
    let atoms = structure.masked_atoms();
    let points: Vec<Vec3> = atoms.iter().map(|a| a.2).collect();
    let max_radius = atoms.iter().map(|a| a.1.covalent_radius()).fold(0.0, f64::max);
    let mut graph = BondGraph { nodes: atoms.iter().map(|a| a.0).collect(), edges: Default::default() };
    if atoms.len() < 2 {
        return graph;
    }
    for p in pairs_within(&points, 2.0 * max_radius + tolerance) {
        if p.distance < atoms[p.i].1.covalent_radius() + atoms[p.j].1.covalent_radius() + tolerance {
            graph.add_edge(atoms[p.i].0, atoms[p.j].0);
        }
    }
    graph
}

/// `|E_gen Δ E_true| / |E_true|` over a shared node set.
pub fn ged_ratio(generated: &BondGraph, truth: &BondGraph) -> Result<f64, MetricsError> {
    if generated.nodes != truth.nodes {
        return Err(MetricsError::NodeMismatch);
    }
    if truth.edges.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(generated.edges.symmetric_difference(&truth.edges).count() as f64 / truth.edges.len() as f64)
}

fn keyed_points(structure: &Structure) -> (Vec<AtomKey>, Vec<Vec3>, Vec<Element>) {
    let atoms = structure.masked_atoms();
    let mut keys = Vec::with_capacity(atoms.len());
    let mut points = Vec::with_capacity(atoms.len());
    let mut elements = Vec::with_capacity(atoms.len());
    for (k, e, x) in atoms {
        keys.push(k);
        points.push(x);
        elements.push(e);
    }
    (keys, points, elements)
}

fn clash_from(structure: &Structure, exclusions: &Exclusions, brute: bool) -> f64 {
    let (keys, points, _) = keyed_points(structure);
    let pairs = nonbonded_pairs(&points, &keys, exclusions, CONTACT_CUTOFF, brute);
    if pairs.is_empty() {
        return 0.0;
    }
    let clashes = pairs.iter().filter(|p| p.distance < CLASH_DISTANCE).count();
    100.0 * clashes as f64 / pairs.len() as f64
}

/// Percentage of nonbonded pairs within 5 Å that are closer than 1.2 Å.
pub fn clash_ratio(structure: &Structure, exclusions: &Exclusions) -> f64 {
    clash_from(structure, exclusions, false)
}

/// [`clash_ratio`] by exhaustive enumeration.
pub fn clash_ratio_brute(structure: &Structure, exclusions: &Exclusions) -> f64 {
    clash_from(structure, exclusions, true)
}

/// Aromatic ring centroids of non-terminal residues, by residue ordinal.
pub fn ring_centers(structure: &Structure) -> Vec<(usize, Vec3)> {
    structure
        .residues()
        .filter(|r| !r.is_terminal())
        .filter_map(|r| {
            let ring = aromatic_ring(r.residue.kind)?;
            let coords: Option<Vec<Vec3>> = ring.iter().map(|n| r.residue.coord(n)).collect();
            let coords = coords?;
            Some((r.ordinal, coords.iter().sum::<Vec3>() / coords.len() as f64))
        })
        .collect()
}

/// Interacting pairs identified on the truth, scored by generated distances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InteractionScores {
    pub atom: f64,
    pub pi: f64,
    pub atom_pairs: usize,
    pub pi_pairs: usize,
}

pub fn interaction_scores(truth: &Structure, generated: &Structure, exclusions: &Exclusions) -> Result<InteractionScores, MetricsError> {
    paired(truth, generated)?;
    let (keys, points, elements) = keyed_points(truth);
    let gen = atom_map(generated);
    let mut scores = InteractionScores::default();
    for p in nonbonded_pairs(&points, &keys, exclusions, HETERO_CONTACT, false) {
        if elements[p.i].is_heteroatom() && elements[p.j].is_heteroatom() {
            let d = (gen[&keys[p.i]] - gen[&keys[p.j]]).norm();
            scores.atom += (d - ATOM_HINGE).max(0.0);
            scores.atom_pairs += 1;
        }
    }
    let true_rings = ring_centers(truth);
    let gen_rings: HashMap<usize, Vec3> = ring_centers(generated).into_iter().collect();
    for (a, (ra, ca)) in true_rings.iter().enumerate() {
        for (rb, cb) in &true_rings[a + 1..] {
            if (ca - cb).norm() < RING_CONTACT {
                let (ga, gb) = match (gen_rings.get(ra), gen_rings.get(rb)) {
                    (Some(ga), Some(gb)) => (ga, gb),
                    _ => return Err(MetricsError::SkeletonMismatch("ring atoms missing in generated frame".into())),
                };
                scores.pi += ((ga - gb).norm() - PI_HINGE).max(0.0);
                scores.pi_pairs += 1;
            }
        }
    }
    Ok(scores)
}

/// Fixed-width histogram on `[0, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub width: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(max: f64, width: f64) -> Histogram {
        assert!(width > 0.0 && max > 0.0, "histogram bounds must be positive");
        let bins = (max / width - 1e-9).ceil() as usize;
        Histogram { width, max, counts: vec![0; bins] }
    }

    pub fn bin_lo(&self, i: usize) -> f64 {
        i as f64 * self.width
    }

    pub fn bin_hi(&self, i: usize) -> f64 {
        ((i + 1) as f64 * self.width).min(self.max)
    }

    /// Bin holding `d`, robust to edge values that are not exactly
    /// representable (3.7 with width 0.1 falls in [3.7, 3.8)).
    pub fn bin_index(&self, d: f64) -> Option<usize> {
        if d.is_nan() || d < 0.0 || d >= self.max {
            return None;
        }
        let mut i = (d / self.width).floor() as usize;
        let snap = 1e-9 * self.width;
        if d + snap >= self.bin_lo(i + 1) {
            i += 1;
        } else if i > 0 && d + snap < self.bin_lo(i) {
            i -= 1;
        }
        (i < self.counts.len()).then_some(i)
    }

    pub fn add(&mut self, d: f64) {
        if let Some(i) = self.bin_index(d) {
            self.counts[i] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts of bins lying entirely inside `[lo, hi]`.
    pub fn band_sum(&self, lo: f64, hi: f64) -> u64 {
        let slack = 1e-9 * self.width;
        (0..self.counts.len())
            .filter(|&i| self.bin_lo(i) + slack >= lo && self.bin_hi(i) <= hi + slack)
            .map(|i| self.counts[i])
            .sum()
    }

    /// `bin_lo,bin_hi,count` rows. An empty histogram writes only the header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        if self.total() == 0 {
            return out;
        }
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:.4},{:.4},{}", self.bin_lo(i), self.bin_hi(i), c).unwrap();
        }
        out
    }
}

/// Nonbonded pair distances below `max` across frames.
pub fn distance_histogram<'a>(
    frames: impl IntoIterator<Item = &'a Structure>,
    exclusions: &Exclusions,
    max: f64,
    width: f64,
) -> Histogram {
    let mut hist = Histogram::new(max, width);
    for frame in frames {
        let (keys, points, _) = keyed_points(frame);
        for p in nonbonded_pairs(&points, &keys, exclusions, max, false) {
            hist.add(p.distance);
        }
    }
    hist
}

/// An atom addressed as `CHAIN:SEQ:ATOM`, e.g. `A:14:OG1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomSpec {
    pub chain: char,
    pub seq: i32,
    pub atom: AtomName,
}

impl FromStr for AtomSpec {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MetricsError::BadSpec(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let [chain, seq, atom] = parts.as_slice() else { return Err(bad()) };
        let mut chars = chain.chars();
        let (Some(chain), None) = (chars.next(), chars.next()) else { return Err(bad()) };
        let seq = seq.parse().map_err(|_| bad())?;
        if atom.is_empty() || atom.len() > 4 {
            return Err(bad());
        }
        Ok(AtomSpec { chain, seq, atom: atom_name(atom) })
    }
}

impl std::fmt::Display for AtomSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.chain, self.seq, self.atom)
    }
}

fn locate(s: &Structure, spec: &AtomSpec) -> Result<Vec3, MetricsError> {
    s.find_residue(spec.chain, spec.seq)
        .and_then(|r| r.residue.coord(&spec.atom))
        .ok_or_else(|| MetricsError::AtomNotFound(spec.to_string()))
}

/// Distance between two named atoms in every frame.
pub fn pair_distances<'a>(
    frames: impl IntoIterator<Item = &'a Structure>,
    a: &AtomSpec,
    b: &AtomSpec,
) -> Result<Vec<f64>, MetricsError> {
    frames.into_iter().map(|f| Ok((locate(f, a)? - locate(f, b)?).norm())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub rmsd: f64,
    pub ged_ratio: f64,
    pub clash_ratio_pct: f64,
    pub interaction_atom: f64,
    pub interaction_pi: f64,
}

/// Frame-averaged metrics with the per-frame breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmsd: f64,
    pub ged_ratio: f64,
    pub clash_ratio_pct: f64,
    pub interaction_atom: f64,
    pub interaction_pi: f64,
    pub frames: Vec<FrameMetrics>,
}

impl MetricsReport {
    pub fn from_frames(mut frames: Vec<FrameMetrics>) -> MetricsReport {
        frames.sort_by_key(|f| f.frame);
        let n = frames.len().max(1) as f64;
        let mean = |f: fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            rmsd: mean(|f| f.rmsd),
            ged_ratio: mean(|f| f.ged_ratio),
            clash_ratio_pct: mean(|f| f.clash_ratio_pct),
            interaction_atom: mean(|f| f.interaction_atom),
            interaction_pi: mean(|f| f.interaction_pi),
            frames,
        }
    }
}

/// All metrics of one generated frame against its ground truth.
pub fn evaluate_frame(
    frame: usize,
    truth: &Structure,
    generated: &Structure,
    exclusions: &Exclusions,
    bond_tolerance: f64,
) -> Result<FrameMetrics, MetricsError> {
    let rmsd = rmsd(truth, generated)?;
    let g_true = infer_bond_graph(truth, bond_tolerance);
    let g_gen = infer_bond_graph(generated, bond_tolerance);
    let interactions = interaction_scores(truth, generated, exclusions)?;
    Ok(FrameMetrics {
        frame,
        rmsd,
        ged_ratio: ged_ratio(&g_gen, &g_true)?,
        clash_ratio_pct: clash_ratio(generated, exclusions),
        interaction_atom: interactions.atom,
        interaction_pi: interactions.pi,
    })
}

/// Node set of non-terminal atoms, for restricting reference graphs.
pub fn masked_nodes(structure: &Structure) -> BTreeSet<AtomKey> {
    structure.masked_atoms().into_iter().map(|a| a.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdb::parse_pdb_str;
    use crate::structure::test_support::ca_chain;
    use crate::structure::{Atom, Chain};
    use crate::topology::bond_graph_for_chains;
    use crate::ResidueType::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn peptide() -> Structure {
        parse_pdb_str(include_str!("../tests/fixtures/peptide_ensemble.pdb")).unwrap().frames.remove(0)
    }

    /// Middle residue of a three-residue chain carrying the given atoms.
    fn loose_atoms(atoms: &[(&str, Element, Vec3)]) -> Structure {
        let mut chain: Chain = ca_chain('A', &[Gly, Gly, Gly], Vec3::new(50.0, 50.0, 50.0));
        chain.residues[1].atoms.clear();
        for (name, element, coord) in atoms {
            chain.residues[1].atoms.push(Atom { name: atom_name(name), element: *element, coord: *coord });
        }
        Structure { frame_id: 0, chains: vec![chain] }
    }

    #[test]
    fn rmsd_examples() {
        let s = peptide();
        assert_eq!(rmsd(&s, &s).unwrap(), 0.0);
        let moved = s.map_coords(|x| x + Vec3::new(3.0, 4.0, 0.0));
        assert_relative_eq!(rmsd(&s, &moved).unwrap(), 5.0, epsilon = 1e-9);
        let a = loose_atoms(&[
            ("N", Element::N, Vec3::zeros()),
            ("CA", Element::C, Vec3::new(1.0, 0.0, 0.0)),
            ("C", Element::C, Vec3::new(2.0, 0.0, 0.0)),
            ("O", Element::O, Vec3::new(3.0, 0.0, 0.0)),
        ]);
        let mut b = a.clone();
        b.chains[0].residues[1].atoms[3].coord += Vec3::new(0.0, 2.0, 0.0);
        assert_relative_eq!(rmsd(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(rmsd(&b, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bond_inference_examples() {
        let cn = loose_atoms(&[("C", Element::C, Vec3::zeros()), ("N", Element::N, Vec3::new(1.33, 0.0, 0.0))]);
        assert_eq!(infer_bond_graph(&cn, BOND_TOLERANCE).edges.len(), 1);
        let cc = loose_atoms(&[("C", Element::C, Vec3::zeros()), ("CA", Element::C, Vec3::new(2.5, 0.0, 0.0))]);
        assert!(infer_bond_graph(&cc, BOND_TOLERANCE).edges.is_empty());
    }

    #[test]
    fn inferred_truth_matches_reference() {
        let s = peptide();
        let reference = bond_graph_for_chains(&s.sequence()).restrict_to(&masked_nodes(&s));
        assert_eq!(infer_bond_graph(&s, BOND_TOLERANCE), reference);
    }

    #[test]
    fn ged_examples() {
        let s = peptide();
        let truth = infer_bond_graph(&s, BOND_TOLERANCE);
        assert_eq!(ged_ratio(&truth, &truth).unwrap(), 0.0);
        let mut small = BondGraph::default();
        for i in 0..11 {
            small.add_edge((0, atom_name(&format!("A{i}"))), (0, atom_name(&format!("A{}", i + 1))));
        }
        let mut truth10 = small.clone();
        truth10.edges.pop_last();
        let mut missing = truth10.clone();
        missing.edges.pop_first();
        assert_relative_eq!(ged_ratio(&missing, &truth10).unwrap(), 0.1, epsilon = 1e-12);
        let other = BondGraph { nodes: BTreeSet::new(), edges: BTreeSet::new() };
        assert_eq!(ged_ratio(&other, &truth10), Err(MetricsError::NodeMismatch));
    }

    #[test]
    fn clash_examples() {
        let none = Exclusions::default();
        let close = loose_atoms(&[("CB", Element::C, Vec3::zeros()), ("CG", Element::C, Vec3::new(1.0, 0.0, 0.0))]);
        assert_eq!(clash_ratio(&close, &none), 100.0);
        let s = peptide();
        let ex = Exclusions::for_chains(&s.sequence());
        assert_eq!(clash_ratio(&s, &ex), 0.0);
    }

    #[test]
    fn clash_hash_equals_brute_on_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let atoms: Vec<(String, Vec3)> = (0..100)
            .map(|i| (format!("X{i}"), Vec3::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0), rng.random_range(0.0..8.0))))
            .collect();
        let refs: Vec<(&str, Element, Vec3)> = atoms.iter().map(|(n, x)| (n.as_str(), Element::C, *x)).collect();
        let s = loose_atoms(&refs);
        let none = Exclusions::default();
        assert_eq!(clash_ratio(&s, &none).to_bits(), clash_ratio_brute(&s, &none).to_bits());
        assert!(clash_ratio(&s, &none) > 0.0);
    }

    #[test]
    fn interaction_examples() {
        let none = Exclusions::default();
        let truth = loose_atoms(&[("OG", Element::O, Vec3::zeros()), ("NZ", Element::N, Vec3::new(3.0, 0.0, 0.0))]);
        let far = loose_atoms(&[("OG", Element::O, Vec3::zeros()), ("NZ", Element::N, Vec3::new(4.5, 0.0, 0.0))]);
        let near = loose_atoms(&[("OG", Element::O, Vec3::zeros()), ("NZ", Element::N, Vec3::new(3.5, 0.0, 0.0))]);
        let s = interaction_scores(&truth, &far, &none).unwrap();
        assert_relative_eq!(s.atom, 0.5, epsilon = 1e-12);
        assert_eq!(s.atom_pairs, 1);
        assert_eq!(interaction_scores(&truth, &near, &none).unwrap().atom, 0.0);
        let apart = loose_atoms(&[("OG", Element::O, Vec3::zeros()), ("NZ", Element::N, Vec3::new(3.4, 0.0, 0.0))]);
        let s = interaction_scores(&apart, &apart, &none).unwrap();
        assert_eq!((s.atom, s.pi), (0.0, 0.0));
    }

    #[test]
    fn histogram_examples() {
        let none = Exclusions::default();
        let s = loose_atoms(&[("CB", Element::C, Vec3::zeros()), ("CG", Element::C, Vec3::new(3.7, 0.0, 0.0))]);
        let h = distance_histogram([&s], &none, 5.0, 0.1);
        assert_eq!(h.counts.len(), 50);
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts[37], 1);
        let empty = distance_histogram(std::iter::empty(), &none, 5.0, 0.1);
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.to_csv(), "bin_lo,bin_hi,count\n");
        let mut band = Histogram::new(5.0, 0.1);
        for d in [2.65, 2.7, 2.9, 3.29, 3.3, 3.5] {
            band.add(d);
        }
        assert_eq!(band.band_sum(2.7, 3.3), 3);
    }

    #[test]
    fn atom_specs() {
        let spec: AtomSpec = "A:14:OG1".parse().unwrap();
        assert_eq!((spec.chain, spec.seq, spec.atom.as_str()), ('A', 14, "OG1"));
        assert_eq!(spec.to_string(), "A:14:OG1");
        for bad in ["A14OG1", "AB:1:CA", "A:x:CA", "A:1:", "A:1:ABCDE"] {
            assert!(bad.parse::<AtomSpec>().is_err(), "{bad}");
        }
        let s = peptide();
        let d = pair_distances([&s, &s], &"A:11:OG1".parse().unwrap(), &"A:11:CA".parse().unwrap()).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d[0] > 2.0 && d[0] < 3.0);
    }

    #[test]
    fn report_json_keys() {
        let s = peptide();
        let ex = Exclusions::for_chains(&s.sequence());
        let f = evaluate_frame(0, &s, &s, &ex, BOND_TOLERANCE).unwrap();
        assert_eq!((f.rmsd, f.ged_ratio, f.clash_ratio_pct), (0.0, 0.0, 0.0));
        let report = MetricsReport::from_frames(vec![f]);
        let json = serde_json::to_value(&report).unwrap();
        for key in ["rmsd", "ged_ratio", "clash_ratio_pct", "interaction_atom", "interaction_pi", "frames"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}

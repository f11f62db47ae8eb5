//! Bond graphs over (residue ordinal, atom name) nodes.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::structure::{atom_name, AtomKey};
use crate::templates::{template_for, ResidueType, PEPTIDE_BOND};

/// Undirected graph with edges stored as ordered `(min, max)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BondGraph {
    pub nodes: BTreeSet<AtomKey>,
    pub edges: BTreeSet<(AtomKey, AtomKey)>,
}

fn ordered(a: AtomKey, b: AtomKey) -> (AtomKey, AtomKey) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl BondGraph {
    pub fn add_edge(&mut self, a: AtomKey, b: AtomKey) {
        debug_assert!(a != b, "self loop");
        self.nodes.insert(a);
        self.nodes.insert(b);
        self.edges.insert(ordered(a, b));
    }

    pub fn contains_edge(&self, a: AtomKey, b: AtomKey) -> bool {
        self.edges.contains(&ordered(a, b))
    }

    /// Subgraph induced by `nodes`.
    pub fn restrict_to(&self, nodes: &BTreeSet<AtomKey>) -> BondGraph {
        BondGraph {
            nodes: self.nodes.intersection(nodes).copied().collect(),
            edges: self.edges.iter().filter(|(a, b)| nodes.contains(a) && nodes.contains(b)).copied().collect(),
        }
    }

    /// Same graph with residue ordinals shifted by `offset`.
    pub fn shifted(&self, offset: usize) -> BondGraph {
        let shift = |(r, n): AtomKey| (r + offset, n);
        BondGraph {
            nodes: self.nodes.iter().map(|&k| shift(k)).collect(),
            edges: self.edges.iter().map(|&(a, b)| (shift(a), shift(b))).collect(),
        }
    }
}

/// Ground-truth graph of one chain: template bonds plus peptide bonds.
pub fn bond_graph_reference(sequence: &[ResidueType]) -> BondGraph {
    bond_graph_for_chains(&[sequence.to_vec()])
}

/// Ground-truth graph over several chains; ordinals run across chains in order
/// and peptide bonds only join consecutive residues of the same chain.
pub fn bond_graph_for_chains(chains: &[Vec<ResidueType>]) -> BondGraph {
    let mut graph = BondGraph::default();
    let mut ordinal = 0;
    for chain in chains {
        for (i, &kind) in chain.iter().enumerate() {
            let r = ordinal + i;
            let template = template_for(kind);
            for name in template.atom_names() {
                graph.nodes.insert((r, atom_name(name)));
            }
            for (a, b) in &template.bonds {
                graph.add_edge((r, atom_name(a)), (r, atom_name(b)));
            }
            if i + 1 < chain.len() {
                graph.add_edge((r, atom_name(PEPTIDE_BOND.0)), (r + 1, atom_name(PEPTIDE_BOND.1)));
            }
        }
        ordinal += chain.len();
    }
    graph
}

/// Pairs separated by one or two bonds (1-2 and 1-3). These are excluded from
/// steric and clash evaluation; 1-4 pairs and beyond count as nonbonded.
#[derive(Debug, Clone, Default)]
pub struct Exclusions {
    pairs: HashSet<(AtomKey, AtomKey)>,
}

impl Exclusions {
    pub fn from_graph(graph: &BondGraph) -> Exclusions {
        let mut adjacency: HashMap<AtomKey, Vec<AtomKey>> = HashMap::new();
        for &(a, b) in &graph.edges {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        let mut pairs = HashSet::new();
        for (&a, neighbours) in &adjacency {
            for &b in neighbours {
                pairs.insert(ordered(a, b));
                for &c in &adjacency[&b] {
                    if c != a {
                        pairs.insert(ordered(a, c));
                    }
                }
            }
        }
        Exclusions { pairs }
    }

    pub fn for_chains(chains: &[Vec<ResidueType>]) -> Exclusions {
        Exclusions::from_graph(&bond_graph_for_chains(chains))
    }

    pub fn is_excluded(&self, a: AtomKey, b: AtomKey) -> bool {
        a == b || self.pairs.contains(&ordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

//! Alpha-carbon trace backmapping through internal coordinates.
//!
//! The crate is organised the way data flows through a backmapping run:
//!
//! - [`templates`]: per-residue heavy-atom chemistry and Z-matrix anchor tables.
//! - [`structure`], [`pdb`], [`preprocess`], [`fetch`], [`stats`]: structures,
//!   PDB I/O, cleaning of raw ensembles, remote retrieval and compactness tables.
//! - [`geometry`] and [`zmatrix`]: Cartesian ⇄ internal coordinate conversion,
//!   including the pass-parallel reconstruction and its Jacobian.
//! - [`losses`]: training objectives with analytic gradients.
//! - [`metrics`]: RMSD, bond-graph edit ratio, clash ratio, interaction scores.
//! - [`backmap`]: fitted lookup tables and the small torsion regressor.

pub mod backmap;
pub mod fetch;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod neighbors;
pub mod pdb;
pub mod preprocess;
pub mod stats;
pub mod structure;
pub mod templates;
pub mod topology;
pub mod zmatrix;

pub use geometry::{GeometryError, Vec3};
pub use structure::{AtomKey, AtomName, CGTrace, Ensemble, Structure};
pub use templates::{ResidueTemplate, ResidueType};

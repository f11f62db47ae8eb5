//! Ensemble compactness: radius of gyration against chain length.

use std::fmt::Write as _;

use serde::Serialize;

use crate::geometry::Vec3;
use crate::structure::Ensemble;

/// Geometric radius of gyration (unit weights). Zero for empty input.
pub fn radius_of_gyration(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let center = points.iter().sum::<Vec3>() / n;
    (points.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactnessRow {
    pub entry: String,
    pub chain: char,
    /// Residue count.
    pub length: usize,
    /// Rg over all heavy atoms of the chain, averaged over frames (Å).
    pub rg_mean: f64,
}

/// One row per chain per ensemble.
pub fn compactness_stats(ensembles: &[Ensemble]) -> Vec<CompactnessRow> {
    let mut rows = Vec::new();
    for ensemble in ensembles {
        let Some(first) = ensemble.frames.first() else { continue };
        for (c, chain) in first.chains.iter().enumerate() {
            let total: f64 = ensemble
                .frames
                .iter()
                .map(|frame| {
                    let points: Vec<Vec3> =
                        frame.chains[c].residues.iter().flat_map(|r| r.atoms.iter().map(|a| a.coord)).collect();
                    radius_of_gyration(&points)
                })
                .sum();
            rows.push(CompactnessRow {
                entry: ensemble.id.clone(),
                chain: chain.id,
                length: chain.residues.len(),
                rg_mean: total / ensemble.frames.len() as f64,
            });
        }
    }
    rows
}

pub fn compactness_csv(rows: &[CompactnessRow]) -> String {
    let mut out = String::from("entry,chain,length,rg_mean\n");
    for r in rows {
        writeln!(out, "{},{},{},{:.4}", r.entry, r.chain, r.length, r.rg_mean).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::test_support::ca_chain;
    use crate::structure::Structure;
    use crate::ResidueType;

    #[test]
    fn rg_examples() {
        assert_eq!(radius_of_gyration(&[Vec3::new(1.0, 2.0, 3.0); 5]), 0.0);
        assert!((radius_of_gyration(&[Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_row_per_chain() {
        let kinds = vec![ResidueType::Gly; 46];
        let frame = Structure {
            frame_id: 0,
            chains: vec![ca_chain('A', &kinds, Vec3::zeros()), ca_chain('B', &kinds[..5], Vec3::new(0.0, 0.0, 20.0))],
        };
        let e = Ensemble { id: "PED00151".into(), frames: vec![frame.clone(), frame] };
        let rows = compactness_stats(&[e]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].length, 46);
        assert!(rows[0].rg_mean > rows[1].rg_mean);
        let csv = compactness_csv(&rows);
        assert!(csv.starts_with("entry,chain,length,rg_mean\nPED00151,A,46,"));
    }
}

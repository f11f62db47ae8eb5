//! Pair enumeration within a cutoff: cell-list spatial hash and brute force.
//!
//! Both routes return the same sorted `(i, j, distance)` list with `i < j`,
//! with distances computed by the same expression, so sums taken over either
//! list are bit-identical.

use std::collections::HashMap;

use crate::geometry::Vec3;
use crate::structure::AtomKey;
use crate::topology::Exclusions;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

#[inline]
fn distance(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm()
}

/// All pairs closer than `cutoff`, O(n²).
pub fn pairs_within_brute(points: &[Vec3], cutoff: f64) -> Vec<Pair> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = distance(&points[i], &points[j]);
            if d < cutoff {
                out.push(Pair { i, j, distance: d });
            }
        }
    }
    out
}

/// Uniform grid with cell edge equal to the cutoff.
pub struct CellList {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl CellList {
    pub fn new(points: &[Vec3], cutoff: f64) -> CellList {
        assert!(cutoff > 0.0, "cutoff must be positive");
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_for(p, cutoff)).or_default().push(i);
        }
        CellList { cell: cutoff, cells }
    }

    fn key_for(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    /// Indices in the 27 cells around `p`.
    pub fn candidates<'a>(&'a self, p: &Vec3) -> impl Iterator<Item = usize> + 'a {
        let (x, y, z) = Self::key_for(p, self.cell);
        (-1..=1).flat_map(move |dx| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1).flat_map(move |dz| {
                    self.cells.get(&(x + dx, y + dy, z + dz)).into_iter().flat_map(|v| v.iter().copied())
                })
            })
        })
    }
}

/// All pairs closer than `cutoff` via the cell list.
pub fn pairs_within(points: &[Vec3], cutoff: f64) -> Vec<Pair> {
    if points.len() < 2 {
        return Vec::new();
    }
    let grid = CellList::new(points, cutoff);
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        for j in grid.candidates(p) {
            if j > i {
                let d = distance(p, &points[j]);
                if d < cutoff {
                    out.push(Pair { i, j, distance: d });
                }
            }
        }
    }
    out.sort_unstable_by_key(|p| (p.i, p.j));
    out
}

/// Pairs within `cutoff` that are neither bonded nor separated by one angle.
/// `brute` selects the O(n²) route; both give the same list.
pub fn nonbonded_pairs(points: &[Vec3], keys: &[AtomKey], exclusions: &Exclusions, cutoff: f64, brute: bool) -> Vec<Pair> {
    debug_assert_eq!(points.len(), keys.len());
    let pairs = if brute { pairs_within_brute(points, cutoff) } else { pairs_within(points, cutoff) };
    pairs.into_iter().filter(|p| !exclusions.is_excluded(keys[p.i], keys[p.j])).collect()
}

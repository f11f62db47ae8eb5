//! Per-residue, per-slot statistics of internal coordinates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::wrap_angle;
use crate::templates::{template_for, ResidueType};
use crate::zmatrix::ZMatrixFrame;

pub const TORSION_BINS: usize = 36;
pub const BIN_WIDTH: f64 = 2.0 * PI / TORSION_BINS as f64;

const DEFAULT_BOND: f64 = 1.5;
const DEFAULT_ANGLE_DEG: f64 = 111.0;

/// Bin of a torsion in (−π, π]; bin `k` covers (−π + kw, −π + (k+1)w].
pub fn torsion_bin(tau: f64) -> usize {
    let t = wrap_angle(tau);
    let k = ((t + PI) / BIN_WIDTH).ceil() as isize - 1;
    k.clamp(0, TORSION_BINS as isize - 1) as usize
}

pub fn circular_mean(sum_sin: f64, sum_cos: f64) -> f64 {
    sum_sin.atan2(sum_cos)
}

/// Running sums for one (residue type, slot).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotAccumulator {
    pub count: usize,
    sum_d: f64,
    sin_theta: f64,
    cos_theta: f64,
    sin_tau: f64,
    cos_tau: f64,
    hist: [u64; TORSION_BINS],
}

impl Default for SlotAccumulator {
    fn default() -> Self {
        SlotAccumulator {
            count: 0,
            sum_d: 0.0,
            sin_theta: 0.0,
            cos_theta: 0.0,
            sin_tau: 0.0,
            cos_tau: 0.0,
            hist: [0; TORSION_BINS],
        }
    }
}

impl SlotAccumulator {
    pub fn add(&mut self, d: f64, theta: f64, tau: f64) {
        self.count += 1;
        self.sum_d += d;
        self.sin_theta += theta.sin();
        self.cos_theta += theta.cos();
        self.sin_tau += tau.sin();
        self.cos_tau += tau.cos();
        self.hist[torsion_bin(tau)] += 1;
    }

    pub fn merge(&mut self, other: &SlotAccumulator) {
        self.count += other.count;
        self.sum_d += other.sum_d;
        self.sin_theta += other.sin_theta;
        self.cos_theta += other.cos_theta;
        self.sin_tau += other.sin_tau;
        self.cos_tau += other.cos_tau;
        for (a, b) in self.hist.iter_mut().zip(other.hist) {
            *a += b;
        }
    }

    fn finish(&self, atom: &str, fallback: bool) -> SlotStats {
        let n = self.count as f64;
        SlotStats {
            atom: atom.to_string(),
            count: self.count,
            bond_mean: self.sum_d / n,
            angle_mean: circular_mean(self.sin_theta, self.cos_theta),
            torsion_mean: circular_mean(self.sin_tau, self.cos_tau),
            torsion_hist: self.hist.iter().map(|&c| c as f64 / n).collect(),
            fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub atom: String,
    /// Observations behind this entry (zero for fallback entries).
    pub count: usize,
    pub bond_mean: f64,
    pub angle_mean: f64,
    pub torsion_mean: f64,
    /// Normalized counts over the 36 torsion bins.
    pub torsion_hist: Vec<f64>,
    /// True when the entry was not observed for this residue type.
    pub fallback: bool,
}

impl SlotStats {
    fn generic(atom: &str) -> SlotStats {
        let mut torsion_hist = vec![0.0; TORSION_BINS];
        torsion_hist[torsion_bin(PI)] = 1.0;
        SlotStats {
            atom: atom.to_string(),
            count: 0,
            bond_mean: DEFAULT_BOND,
            angle_mean: DEFAULT_ANGLE_DEG.to_radians(),
            torsion_mean: PI,
            torsion_hist,
            fallback: true,
        }
    }

    /// Inverse-CDF draw from the torsion histogram, uniform within the bin.
    pub fn sample_torsion<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let mut acc = 0.0;
        let mut bin = TORSION_BINS - 1;
        for (k, p) in self.torsion_hist.iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                bin = k;
                break;
            }
        }
        if self.torsion_hist[bin] == 0.0 {
            bin = self.torsion_hist.iter().rposition(|p| *p > 0.0).unwrap_or(bin);
        }
        let hi = -PI + (bin + 1) as f64 * BIN_WIDTH;
        wrap_angle(hi - v * BIN_WIDTH)
    }
}

/// Slot statistics for every residue type, slots in template pass order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTables {
    pub entries: BTreeMap<ResidueType, Vec<SlotStats>>,
}

impl LookupTables {
    pub fn slots(&self, kind: ResidueType) -> Option<&[SlotStats]> {
        self.entries.get(&kind).map(Vec::as_slice)
    }

    /// True when any slot of `kind` relies on fallback statistics.
    pub fn uses_fallback(&self, kind: ResidueType) -> bool {
        self.slots(kind).is_none_or(|s| s.iter().any(|x| x.fallback))
    }

    /// Checks histogram normalization and finiteness.
    pub fn validate(&self) -> Result<(), String> {
        for kind in ResidueType::ALL {
            let slots = self.slots(kind).ok_or_else(|| format!("no entry for {kind}"))?;
            if slots.len() != template_for(kind).placed_count() {
                return Err(format!("{kind}: {} slots, template has {}", slots.len(), template_for(kind).placed_count()));
            }
            for s in slots {
                let total: f64 = s.torsion_hist.iter().sum();
                if s.torsion_hist.len() != TORSION_BINS || (total - 1.0).abs() > 1e-9 {
                    return Err(format!("{kind} {}: torsion histogram not normalized", s.atom));
                }
                if ![s.bond_mean, s.angle_mean, s.torsion_mean].iter().all(|x| x.is_finite()) {
                    return Err(format!("{kind} {}: non-finite mean", s.atom));
                }
            }
        }
        Ok(())
    }
}

/// Accumulated observations, mergeable across workers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableAccumulator {
    slots: BTreeMap<ResidueType, Vec<SlotAccumulator>>,
}

impl TableAccumulator {
    pub fn add_frame(&mut self, frame: &ZMatrixFrame) {
        for res in &frame.residues {
            let slots = self.slots.entry(res.kind).or_insert_with(|| vec![SlotAccumulator::default(); res.rows.len()]);
            for (acc, row) in slots.iter_mut().zip(&res.rows) {
                acc.add(row.d, row.theta, row.tau);
            }
        }
    }

    pub fn merge(&mut self, other: &TableAccumulator) {
        for (kind, slots) in &other.slots {
            let mine = self.slots.entry(*kind).or_insert_with(|| vec![SlotAccumulator::default(); slots.len()]);
            for (a, b) in mine.iter_mut().zip(slots) {
                a.merge(b);
            }
        }
    }

    /// Observed slots keep their own statistics; unobserved ones pool the
    /// same atom name over all residue types, else take generic values.
    pub fn finish(&self) -> LookupTables {
        let mut pooled: BTreeMap<&str, SlotAccumulator> = BTreeMap::new();
        for (kind, slots) in &self.slots {
            for (acc, (atom, _)) in slots.iter().zip(template_for(*kind).pass_order()) {
                pooled.entry(atom).or_default().merge(acc);
            }
        }
        let entries = ResidueType::ALL
            .iter()
            .map(|&kind| {
                let observed = self.slots.get(&kind);
                let stats = template_for(kind)
                    .pass_order()
                    .enumerate()
                    .map(|(i, (atom, _))| match observed.map(|s| &s[i]).filter(|a| a.count > 0) {
                        Some(acc) => acc.finish(atom, false),
                        None => match pooled.get(atom).filter(|a| a.count > 0) {
                            Some(acc) => SlotStats { count: 0, ..acc.finish(atom, true) },
                            None => SlotStats::generic(atom),
                        },
                    })
                    .collect();
                (kind, stats)
            })
            .collect();
        LookupTables { entries }
    }
}

pub fn fit_tables<'a>(frames: impl IntoIterator<Item = &'a ZMatrixFrame>) -> LookupTables {
    let mut acc = TableAccumulator::default();
    for frame in frames {
        acc.add_frame(frame);
    }
    acc.finish()
}

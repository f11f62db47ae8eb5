//! Bond/angle/torsion geometry and single-atom placement.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Relative tolerance below which an anchor triple is treated as collinear.
pub const DEGENERACY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error("non-finite internal coordinate or position")]
    NonFinite,
}

/// Bond angle at `b` (radians, in `[0, π]`).
pub fn angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let u = a - b;
    let v = c - b;
    // atan2 form stays accurate near 0 and π
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// Signed dihedral of `a-b-c-d` in `(-π, π]`, IUPAC sign convention.
pub fn dihedral(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> Result<f64, GeometryError> {
    let b1 = b - a;
    let b2 = c - b;
    let b3 = d - c;
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let scale = b2.norm();
    if scale == 0.0
        || n1.norm() < DEGENERACY_TOLERANCE * b1.norm() * scale
        || n2.norm() < DEGENERACY_TOLERANCE * scale * b3.norm()
    {
        return Err(GeometryError::Degenerate("dihedral of collinear points"));
    }
    let x = n1.dot(&n2);
    let y = n1.cross(&n2).dot(&b2) / scale;
    let tau = y.atan2(x);
    Ok(if tau <= -std::f64::consts::PI { std::f64::consts::PI } else { tau })
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

fn check_anchors(b: &Vec3, c: &Vec3, d: &Vec3) -> Result<(), GeometryError> {
    if !(b.iter().chain(c.iter()).chain(d.iter()).all(|x| x.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let v_jk = b - c;
    let v_kl = c - d;
    let n = v_jk.cross(&v_kl);
    if v_jk.norm() == 0.0 || n.norm() < DEGENERACY_TOLERANCE * v_jk.norm() * v_kl.norm() {
        return Err(GeometryError::Degenerate("collinear anchor triple"));
    }
    Ok(())
}

/// Rotates `v` about the unit axis `k` by `angle` (Rodrigues).
fn rotate(v: &Vec3, k: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
}

/// Places atom A from anchors (B, C, D) so that `|A-B| = d`,
/// `angle(A, B, C) = theta` and `dihedral(A, B, C, D) = tau`.
///
/// A unit vector along B→C is rotated by `theta` about the normal of the anchor
/// plane, then by `tau` about the bond axis, and scaled to length `d`.
pub fn place_atom(b: &Vec3, c: &Vec3, d: &Vec3, dist: f64, theta: f64, tau: f64) -> Result<Vec3, GeometryError> {
    check_anchors(b, c, d)?;
    if !(dist.is_finite() && theta.is_finite() && tau.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let v_jk = b - c;
    let v_kl = c - d;
    let axis = v_jk.normalize();
    let normal = v_jk.cross(&v_kl).normalize();
    let v = -axis;
    let v = rotate(&v, &normal, theta);
    let v = rotate(&v, &axis, tau);
    Ok(b + v * dist)
}

/// Orthonormal placement frame of an anchor triple and its derivatives.
///
/// `e1` points B→C, `e2` lies in the anchor plane on D's side, `e3 = e2 × e1`.
/// The placed atom is `B + d (cosθ e1 + sinθ cosτ e2 + sinθ sinτ e3)`.
#[derive(Debug, Clone)]
pub(crate) struct PlacementFrame {
    e1: Vec3,
    e2: Vec3,
    e3: Vec3,
    /// d e_i / d anchor, indexed `[anchor][axis]` with anchors (B, C, D).
    de: [[Matrix3<f64>; 3]; 3],
}

fn normalize_jacobian(v: &Vec3) -> Matrix3<f64> {
    let n = v.norm();
    let u = v / n;
    (Matrix3::identity() - u * u.transpose()) / n
}

impl PlacementFrame {
    pub(crate) fn new(b: &Vec3, c: &Vec3, d: &Vec3) -> Result<Self, GeometryError> {
        check_anchors(b, c, d)?;
        let bc = c - b;
        let dc = d - c;
        let e1 = bc.normalize();
        let p = dc.cross(&e1);
        let e3 = p.normalize();
        let e2 = e1.cross(&e3);

        let j1 = normalize_jacobian(&bc);
        let j3 = normalize_jacobian(&p);
        let skew_e1 = e1.cross_matrix();
        let skew_e3 = e3.cross_matrix();
        let skew_dc = dc.cross_matrix();

        let zero = Matrix3::zeros();
        let de1 = [-j1, j1, zero];
        // p = (D - C) × e1
        let dp = [skew_dc * de1[0], skew_e1 + skew_dc * de1[1], -skew_e1];
        let de3 = [j3 * dp[0], j3 * dp[1], j3 * dp[2]];
        // e2 = e1 × e3
        let de2 = [0, 1, 2].map(|x| -skew_e3 * de1[x] + skew_e1 * de3[x]);
        let de = [0, 1, 2].map(|x| [de1[x], de2[x], de3[x]]);
        Ok(PlacementFrame { e1, e2, e3, de })
    }

    fn direction(&self, theta: f64, tau: f64) -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = tau.sin_cos();
        self.e1 * ct + self.e2 * (st * cp) + self.e3 * (st * sp)
    }

    #[cfg(test)]
    pub(crate) fn place(&self, b: &Vec3, dist: f64, theta: f64, tau: f64) -> Vec3 {
        b + self.direction(theta, tau) * dist
    }

    /// Partial derivatives of the placed atom with respect to (d, θ, τ).
    pub(crate) fn internal_partials(&self, dist: f64, theta: f64, tau: f64) -> [Vec3; 3] {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = tau.sin_cos();
        let dd = self.direction(theta, tau);
        let dtheta = (self.e1 * -st + self.e2 * (ct * cp) + self.e3 * (ct * sp)) * dist;
        let dtau = (self.e2 * (-st * sp) + self.e3 * (st * cp)) * dist;
        [dd, dtheta, dtau]
    }

    /// Jacobians of the placed atom with respect to anchor positions (B, C, D).
    pub(crate) fn anchor_jacobians(&self, dist: f64, theta: f64, tau: f64) -> [Matrix3<f64>; 3] {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = tau.sin_cos();
        let w = [ct, st * cp, st * sp];
        [0, 1, 2].map(|x| {
            let m = (self.de[x][0] * w[0] + self.de[x][1] * w[1] + self.de[x][2] * w[2]) * dist;
            if x == 0 {
                m + Matrix3::identity()
            } else {
                m
            }
        })
    }
}

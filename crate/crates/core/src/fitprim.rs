//! Weighted closed-form estimation of primitive parameters from per-point
//! positions, normals, and membership weights.
//!
//! Planes come from the smallest eigenvector of the weighted position
//! scatter, spheres from the weighted algebraic system, cylinders from the
//! normal second-moment axis plus a 2D circle fit, and cones from the
//! tangent-plane apex system followed by axis averaging.

use crate::math::{solve_dense, sym_eigen_3x3, Vec3};
use crate::primitive::Primitive;
use nalgebra::Matrix3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("support too small: {got} points, need at least {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("support lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("weights must be finite, non-negative, and not all zero")]
    BadWeights,
    #[error("degenerate support: {0}")]
    Degenerate(String),
}

/// Positions, unit normals, and non-negative weights, one triple per point.
#[derive(Debug, Clone)]
pub struct WeightedSupport<'a> {
    pub positions: &'a [Vec3],
    pub normals: &'a [Vec3],
    pub weights: &'a [f64],
}

impl<'a> WeightedSupport<'a> {
    pub fn new(positions: &'a [Vec3], normals: &'a [Vec3], weights: &'a [f64]) -> Self {
        WeightedSupport { positions, normals, weights }
    }

    fn validate(&self, min_points: usize) -> Result<f64, FitError> {
        if self.positions.len() != self.normals.len() || self.positions.len() != self.weights.len() {
            return Err(FitError::LengthMismatch(format!(
                "positions {}, normals {}, weights {}",
                self.positions.len(),
                self.normals.len(),
                self.weights.len()
            )));
        }
        if self.positions.len() < min_points {
            return Err(FitError::TooFewPoints { got: self.positions.len(), need: min_points });
        }
        let mut total = 0.0;
        for &w in self.weights {
            if !w.is_finite() || w < 0.0 {
                return Err(FitError::BadWeights);
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(FitError::BadWeights);
        }
        Ok(total)
    }

    fn weighted_centroid(&self, total: f64) -> Vec3 {
        let mut c = Vec3::zeros();
        for (p, &w) in self.positions.iter().zip(self.weights) {
            c += p * w;
        }
        c / total
    }
}

/// Plane through the weighted centroid whose normal is the smallest-scatter
/// direction; minimizes the weighted sum of squared point-plane distances.
pub fn fit_plane(support: &WeightedSupport) -> Result<Primitive, FitError> {
    let total = support.validate(3)?;
    let centroid = support.weighted_centroid(total);
    let mut scatter = Matrix3::<f64>::zeros();
    for (p, &w) in support.positions.iter().zip(support.weights) {
        let d = p - centroid;
        scatter += (d * d.transpose()) * w;
    }
    scatter /= total;
    let eig = sym_eigen_3x3(&scatter);
    // Collinear support: no unique in-plane spread (two near-zero eigenvalues).
    if eig.values[1] <= 1e-12 * eig.values[2].max(f64::MIN_POSITIVE) {
        return Err(FitError::Degenerate(
            "position scatter is rank-deficient (collinear support)".into(),
        ));
    }
    let normal = eig.vectors[0];
    Ok(Primitive::Plane { normal, offset: normal.dot(&centroid) }.canonicalized())
}

/// Algebraic weighted sphere fit: minimize
/// sum w (|p|^2 - 2 c.p + (|c|^2 - r^2))^2, linear in (c, |c|^2 - r^2).
pub fn fit_sphere(support: &WeightedSupport) -> Result<Primitive, FitError> {
    let total = support.validate(4)?;
    // Shift into the weighted centroid frame for conditioning.
    let shift = support.weighted_centroid(total);
    let mut a = [0.0f64; 16];
    let mut b = [0.0f64; 4];
    for (p, &w) in support.positions.iter().zip(support.weights) {
        let q = p - shift;
        let row = [2.0 * q.x, 2.0 * q.y, 2.0 * q.z, 1.0];
        let rhs = q.norm_squared();
        for i in 0..4 {
            for j in 0..4 {
                a[i * 4 + j] += w * row[i] * row[j];
            }
            b[i] += w * row[i] * rhs;
        }
    }
    solve_dense(4, &mut a, &mut b).map_err(|_| {
        FitError::Degenerate("sphere system is singular (coplanar or too-flat support)".into())
    })?;
    let center_local = Vec3::new(b[0], b[1], b[2]);
    let r2 = b[3] + center_local.norm_squared();
    if !(r2.is_finite() && r2 > 0.0) {
        return Err(FitError::Degenerate(format!("recovered squared radius {r2} is not positive")));
    }
    Ok(Primitive::Sphere { center: center_local + shift, radius: r2.sqrt() })
}

/// Cylinder axis from the weighted second moment of the normals (cylinder
/// normals are perpendicular to the axis), followed by a weighted 2D
/// algebraic circle fit in the plane orthogonal to the axis.
pub fn fit_cylinder(support: &WeightedSupport) -> Result<Primitive, FitError> {
    let total = support.validate(5)?;
    let mut moment = Matrix3::<f64>::zeros();
    for (n, &w) in support.normals.iter().zip(support.weights) {
        moment += (n * n.transpose()) * w;
    }
    moment /= total;
    let eig = sym_eigen_3x3(&moment);
    if eig.values[1] - eig.values[0] < 1e-6 {
        return Err(FitError::Degenerate(format!(
            "no dominant axis in the normal scatter (eigengap {:.3e})",
            eig.values[1] - eig.values[0]
        )));
    }
    let axis = eig.vectors[0];
    let centroid = support.weighted_centroid(total);
    let e1 = crate::math::any_orthonormal(&axis);
    let e2 = axis.cross(&e1);

    // Weighted algebraic circle in (u, v): minimize
    // sum w (u^2 + v^2 - 2 cu u - 2 cv v - rho)^2.
    let mut a = [0.0f64; 9];
    let mut b = [0.0f64; 3];
    for (p, &w) in support.positions.iter().zip(support.weights) {
        let d = p - centroid;
        let u = d.dot(&e1);
        let v = d.dot(&e2);
        let row = [2.0 * u, 2.0 * v, 1.0];
        let rhs = u * u + v * v;
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] += w * row[i] * row[j];
            }
            b[i] += w * row[i] * rhs;
        }
    }
    solve_dense(3, &mut a, &mut b)
        .map_err(|_| FitError::Degenerate("projected circle system is singular".into()))?;
    let r2 = b[2] + b[0] * b[0] + b[1] * b[1];
    if !(r2.is_finite() && r2 > 0.0) {
        return Err(FitError::Degenerate(format!("recovered squared radius {r2} is not positive")));
    }
    let axis_point = centroid + e1 * b[0] + e2 * b[1];
    Ok(Primitive::Cylinder { axis, axis_point, radius: r2.sqrt() }.canonicalized())
}

/// Maximum condition number accepted for the cone apex system.
const CONE_APEX_MAX_COND: f64 = 1e8;

/// Cone apex from the weighted tangent-plane system {n.x = n.p}, axis as the
/// weighted mean of unit apex-to-point directions, half-angle as the
/// weighted mean angular offset from the axis.
pub fn fit_cone(support: &WeightedSupport) -> Result<Primitive, FitError> {
    let total = support.validate(6)?;
    let mut a = Matrix3::<f64>::zeros();
    let mut b = Vec3::zeros();
    for ((p, n), &w) in support.positions.iter().zip(support.normals).zip(support.weights) {
        a += (n * n.transpose()) * w;
        b += n * (n.dot(p) * w);
    }
    a /= total;
    b /= total;
    let eig = sym_eigen_3x3(&a);
    let lo = eig.values[0].abs().max(f64::MIN_POSITIVE);
    let cond = eig.values[2].abs() / lo;
    if !cond.is_finite() || cond > CONE_APEX_MAX_COND {
        return Err(FitError::Degenerate(format!(
            "apex system condition number {cond:.3e} exceeds {CONE_APEX_MAX_COND:.0e} (near-parallel normals)"
        )));
    }
    // Solve via the eigen decomposition (A is symmetric positive definite).
    let mut apex = Vec3::zeros();
    for i in 0..3 {
        apex += eig.vectors[i] * (eig.vectors[i].dot(&b) / eig.values[i]);
    }

    let mut axis_sum = Vec3::zeros();
    for (p, &w) in support.positions.iter().zip(support.weights) {
        let d = p - apex;
        let norm = d.norm();
        if norm < 1e-12 {
            continue;
        }
        axis_sum += d / norm * w;
    }
    let axis_norm = axis_sum.norm();
    if axis_norm < 1e-12 {
        return Err(FitError::Degenerate("apex-to-point directions cancel out".into()));
    }
    let axis = axis_sum / axis_norm;

    let mut angle_sum = 0.0;
    let mut weight_sum = 0.0;
    for (p, &w) in support.positions.iter().zip(support.weights) {
        let d = p - apex;
        let norm = d.norm();
        if norm < 1e-12 {
            continue;
        }
        angle_sum += (d.dot(&axis) / norm).clamp(-1.0, 1.0).acos() * w;
        weight_sum += w;
    }
    let half_angle = angle_sum / weight_sum;
    let limits = (0.5f64.to_radians(), 89.5f64.to_radians());
    if !(half_angle > limits.0 && half_angle < limits.1) {
        return Err(FitError::Degenerate(format!(
            "recovered half angle {:.4} rad outside ({:.4}, {:.4})",
            half_angle, limits.0, limits.1
        )));
    }
    Ok(Primitive::Cone { apex, axis, half_angle })
}

/// Dispatch on the requested kind.
pub fn fit_kind(kind: crate::primitive::PrimitiveKind, support: &WeightedSupport) -> Result<Primitive, FitError> {
    use crate::primitive::PrimitiveKind::*;
    match kind {
        Plane => fit_plane(support),
        Sphere => fit_sphere(support),
        Cylinder => fit_cylinder(support),
        Cone => fit_cone(support),
    }
}

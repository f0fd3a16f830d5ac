//! Small numeric kernels shared across the crate: a symmetric 3x3 Jacobi
//! eigensolver, a dense Gaussian-elimination solve for the tiny normal-equation
//! systems that show up in the fits, seed derivation, and content hashing.

use nalgebra::{Matrix3, Vector3};

/// 3D vector with f64 components, used for positions, normals, and axes.
pub type Vec3 = Vector3<f64>;

/// Convergence tolerance of the Jacobi sweeps, relative to the Frobenius norm.
pub const JACOBI_TOL: f64 = 1e-12;

/// Eigen decomposition of a symmetric 3x3 matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen3 {
    pub values: [f64; 3],
    /// Unit eigenvectors, `vectors[i]` pairs with `values[i]`.
    pub vectors: [Vec3; 3],
}

/// Cyclic Jacobi rotations on a symmetric 3x3 matrix.
///
/// Runs sweeps until the off-diagonal mass drops below `JACOBI_TOL` times the
/// Frobenius norm (or 64 sweeps, which is far beyond what 3x3 needs).
pub fn sym_eigen_3x3(m: &Matrix3<f64>) -> SymEigen3 {
    let mut a = *m;
    let mut v = Matrix3::<f64>::identity();
    let fro = m.norm().max(f64::MIN_POSITIVE);

    for _ in 0..64 {
        let off = (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();
        if off <= JACOBI_TOL * fro {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J with the (p,q) Givens rotation J.
            for k in 0..3 {
                let akp = a[(k, p)];
                let akq = a[(k, q)];
                a[(k, p)] = c * akp - s * akq;
                a[(k, q)] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[(p, k)];
                let aqk = a[(q, k)];
                a[(p, k)] = c * apk - s * aqk;
                a[(q, k)] = s * apk + c * aqk;
            }
            for k in 0..3 {
                let vkp = v[(k, p)];
                let vkq = v[(k, q)];
                v[(k, p)] = c * vkp - s * vkq;
                v[(k, q)] = s * vkp + c * vkq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let values = [a[(order[0], order[0])], a[(order[1], order[1])], a[(order[2], order[2])]];
    let col = |i: usize| Vec3::new(v[(0, order[i])], v[(1, order[i])], v[(2, order[i])]);
    SymEigen3 {
        values,
        vectors: [col(0).normalize(), col(1).normalize(), col(2).normalize()],
    }
}

/// Error raised when a linear system has no usable pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularSystem;

/// Solve `A x = b` in place for a small dense row-major `n x n` system using
/// Gaussian elimination with partial pivoting. `a` is consumed as scratch and
/// the solution is left in `b`.
pub fn solve_dense(n: usize, a: &mut [f64], b: &mut [f64]) -> Result<(), SingularSystem> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[piv * n + col].abs() {
                piv = row;
            }
        }
        if a[piv * n + col].abs() < 1e-12 * scale {
            return Err(SingularSystem);
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col * n + k] * b[k];
        }
        b[col] = s / a[col * n + col];
    }
    Ok(())
}

/// FNV-1a 64-bit hash, used for content hashes in provenance logs and files.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child RNG seed from a base seed, a stage tag, and an index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = fnv1a64(tag.as_bytes());
    h ^= base;
    h = h.wrapping_mul(0x0000_0100_0000_01b3);
    h ^= index;
    h.wrapping_mul(0x0000_0100_0000_01b3)
}

/// Unsigned angle between two vectors in radians, in [0, pi].
/// Bitwise-equal inputs return exactly zero.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    if a == b {
        return 0.0;
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Orientation-agnostic angle between two directions, in [0, pi/2].
pub fn axis_angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let t = angle_between(a, b);
    t.min(std::f64::consts::PI - t)
}

/// Any unit vector orthogonal to `v` (which must be nonzero).
pub fn any_orthonormal(v: &Vec3) -> Vec3 {
    let candidate = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vec3::new(1.0, 0.0, 0.0)
    } else if v.y.abs() <= v.z.abs() {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    };
    v.cross(&candidate).normalize()
}

/// Rotate `v` by `angle` radians around the unit axis `axis` (Rodrigues).
pub fn rotate_about(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

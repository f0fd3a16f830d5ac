//! Shared test support: independent nonlinear-refinement oracles for the
//! fits (Levenberg-Marquardt with numeric Jacobians over independent
//! distance formulas), deterministic support generators, and engineered
//! scene builders.

#![allow(dead_code)]

use cpf_core::cloud::{SceneSpec, TrimmedSurface};
use cpf_core::math::{any_orthonormal, rotate_about, Vec3};
use cpf_core::primitive::Primitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// Independent distance formulas (deliberately re-derived here rather than
// calling the crate, so the oracle checks the implementation's arithmetic
// too).

pub fn plane_distance(params: &[f64], p: &Vec3) -> f64 {
    let n = Vec3::new(params[0], params[1], params[2]);
    (n.dot(p) - params[3]) / n.norm()
}

pub fn sphere_distance(params: &[f64], p: &Vec3) -> f64 {
    let c = Vec3::new(params[0], params[1], params[2]);
    (p - c).norm() - params[3]
}

pub fn cylinder_distance(params: &[f64], p: &Vec3) -> f64 {
    let a = Vec3::new(params[0], params[1], params[2]).normalize();
    let q = Vec3::new(params[3], params[4], params[5]);
    let d = p - q;
    (d - a * d.dot(&a)).norm() - params[6]
}

pub fn cone_distance(params: &[f64], p: &Vec3) -> f64 {
    let apex = Vec3::new(params[0], params[1], params[2]);
    let axis = Vec3::new(params[3], params[4], params[5]).normalize();
    let alpha = params[6];
    let v = p - apex;
    let t = v.norm();
    if t == 0.0 {
        return 0.0;
    }
    let beta = (v.dot(&axis) / t).clamp(-1.0, 1.0).acos();
    let delta = beta - alpha;
    if delta.cos() >= 0.0 {
        t * delta.sin().abs()
    } else {
        t
    }
}

// ---------------------------------------------------------------------------
// Small dense solver, independent of the crate's.

fn solve(n: usize, a: &mut [f64], b: &mut [f64]) -> bool {
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[piv * n + col].abs() {
                piv = row;
            }
        }
        if a[piv * n + col].abs() < 1e-14 {
            return false;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
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
    true
}

/// Levenberg-Marquardt over a parameter vector with a numeric Jacobian,
/// minimizing the weighted sum of squared residuals.
pub fn levenberg_marquardt<F>(
    residual: F,
    initial: &[f64],
    points: &[Vec3],
    weights: &[f64],
) -> Vec<f64>
where
    F: Fn(&[f64], &Vec3) -> f64,
{
    let dim = initial.len();
    let mut params = initial.to_vec();
    let cost = |theta: &[f64]| -> f64 {
        points
            .iter()
            .zip(weights)
            .map(|(p, &w)| {
                let r = residual(theta, p);
                w * r * r
            })
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(&params);
    for _ in 0..200 {
        // Numeric Jacobian by central differences.
        let mut jtj = vec![0.0; dim * dim];
        let mut jtr = vec![0.0; dim];
        for (p, &w) in points.iter().zip(weights) {
            let r = residual(&params, p);
            let mut grad = vec![0.0; dim];
            for d in 0..dim {
                let h = 1e-7 * params[d].abs().max(1.0);
                let mut plus = params.clone();
                plus[d] += h;
                let mut minus = params.clone();
                minus[d] -= h;
                grad[d] = (residual(&plus, p) - residual(&minus, p)) / (2.0 * h);
            }
            for i in 0..dim {
                for j in 0..dim {
                    jtj[i * dim + j] += w * grad[i] * grad[j];
                }
                jtr[i] -= w * grad[i] * r;
            }
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj.clone();
            for d in 0..dim {
                a[d * dim + d] += lambda * (1.0 + jtj[d * dim + d]);
            }
            let mut delta = jtr.clone();
            if !solve(dim, &mut a, &mut delta) {
                lambda *= 10.0;
                continue;
            }
            let trial: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p + d).collect();
            let trial_cost = cost(&trial);
            if trial_cost < current {
                params = trial;
                current = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    params
}

pub fn plane_params(p: &Primitive) -> Vec<f64> {
    match p {
        Primitive::Plane { normal, offset } => vec![normal.x, normal.y, normal.z, *offset],
        _ => panic!("expected plane"),
    }
}

pub fn sphere_params(p: &Primitive) -> Vec<f64> {
    match p {
        Primitive::Sphere { center, radius } => vec![center.x, center.y, center.z, *radius],
        _ => panic!("expected sphere"),
    }
}

pub fn cylinder_params(p: &Primitive) -> Vec<f64> {
    match p {
        Primitive::Cylinder { axis, axis_point, radius } => {
            vec![axis.x, axis.y, axis.z, axis_point.x, axis_point.y, axis_point.z, *radius]
        }
        _ => panic!("expected cylinder"),
    }
}

pub fn cone_params(p: &Primitive) -> Vec<f64> {
    match p {
        Primitive::Cone { apex, axis, half_angle } => {
            vec![apex.x, apex.y, apex.z, axis.x, axis.y, axis.z, *half_angle]
        }
        _ => panic!("expected cone"),
    }
}

// ---------------------------------------------------------------------------
// Deterministic support generators: points + normals on posed primitives,
// optionally displaced along the true normal by uniform noise.

pub struct SupportCase {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub truth: Primitive,
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z = rng.random::<f64>() * 2.0 - 1.0;
    let phi = rng.random::<f64>() * TAU;
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

fn apply_noise(case: &mut SupportCase, rng: &mut ChaCha8Rng, amplitude: f64) {
    if amplitude > 0.0 {
        for (p, n) in case.points.iter_mut().zip(&case.normals) {
            *p += n * ((rng.random::<f64>() * 2.0 - 1.0) * amplitude);
        }
    }
}

pub fn plane_support(seed: u64, noise: f64) -> SupportCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = random_unit(&mut rng);
    let offset = rng.random::<f64>() * 1.6 - 0.8;
    let e1 = any_orthonormal(&normal);
    let e2 = normal.cross(&e1);
    let (hu, hv) = (0.3 + rng.random::<f64>(), 0.3 + rng.random::<f64>());
    let count = 300 + (rng.random::<f64>() * 300.0) as usize;
    let center = normal * offset;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let a = (rng.random::<f64>() * 2.0 - 1.0) * hu;
        let b = (rng.random::<f64>() * 2.0 - 1.0) * hv;
        points.push(center + e1 * a + e2 * b);
    }
    let normals = vec![normal; count];
    let mut case = SupportCase {
        points,
        normals,
        truth: Primitive::Plane { normal, offset }.canonicalized(),
    };
    apply_noise(&mut case, &mut rng, noise);
    case
}

pub fn sphere_support(seed: u64, noise: f64) -> SupportCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = random_unit(&mut rng) * (rng.random::<f64>() * 0.5);
    let radius = 0.3 + rng.random::<f64>() * 0.6;
    let axis = random_unit(&mut rng);
    // Partial cap down to a hemisphere.
    let cos_min = rng.random::<f64>() * 0.5 - 0.0;
    let e1 = any_orthonormal(&axis);
    let e2 = axis.cross(&e1);
    let count = 300 + (rng.random::<f64>() * 300.0) as usize;
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let z = cos_min + rng.random::<f64>() * (1.0 - cos_min);
        let phi = rng.random::<f64>() * TAU;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let dir = e1 * (r * phi.cos()) + e2 * (r * phi.sin()) + axis * z;
        points.push(center + dir * radius);
        normals.push(dir);
    }
    let mut case = SupportCase { points, normals, truth: Primitive::Sphere { center, radius } };
    apply_noise(&mut case, &mut rng, noise);
    case
}

pub fn cylinder_support(seed: u64, noise: f64) -> SupportCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = random_unit(&mut rng);
    let axis_point = random_unit(&mut rng) * (rng.random::<f64>() * 0.4);
    let radius = 0.2 + rng.random::<f64>() * 0.5;
    let half_height = 0.4 + rng.random::<f64>() * 0.6;
    // Angular arc from a quarter turn up to a full circle.
    let arc = TAU * (0.25 + 0.75 * rng.random::<f64>());
    let phase = rng.random::<f64>() * TAU;
    let e1 = any_orthonormal(&axis);
    let e2 = axis.cross(&e1);
    let count = 300 + (rng.random::<f64>() * 300.0) as usize;
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let t = phase + rng.random::<f64>() * arc;
        let h = (rng.random::<f64>() * 2.0 - 1.0) * half_height;
        let radial = e1 * t.cos() + e2 * t.sin();
        points.push(axis_point + axis * h + radial * radius);
        normals.push(radial);
    }
    let mut case = SupportCase {
        points,
        normals,
        truth: Primitive::Cylinder { axis, axis_point, radius }.canonicalized(),
    };
    apply_noise(&mut case, &mut rng, noise);
    case
}

/// Cone supports are full rings (the axis estimator averages apex-to-point
/// directions, which is exact only under angular symmetry).
pub fn cone_support(seed: u64, noise: f64) -> SupportCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apex = random_unit(&mut rng) * (rng.random::<f64>() * 0.4);
    let axis = random_unit(&mut rng);
    let half_angle = (10.0 + rng.random::<f64>() * 50.0).to_radians();
    let e1 = any_orthonormal(&axis);
    let e2 = axis.cross(&e1);
    let rings = 6 + (rng.random::<f64>() * 8.0) as usize;
    let per_ring = 32;
    let mut points = Vec::with_capacity(rings * per_ring);
    let mut normals = Vec::with_capacity(rings * per_ring);
    let (s, c) = half_angle.sin_cos();
    for ring in 0..rings {
        let h = 0.3 + 0.7 * (ring as f64 + rng.random::<f64>() * 0.25) / rings as f64;
        for i in 0..per_ring {
            let t = TAU * i as f64 / per_ring as f64;
            let radial = e1 * t.cos() + e2 * t.sin();
            points.push(apex + axis * h + radial * (h * half_angle.tan()));
            normals.push(radial * c - axis * s);
        }
    }
    let mut case = SupportCase { points, normals, truth: Primitive::Cone { apex, axis, half_angle } };
    apply_noise(&mut case, &mut rng, noise);
    case
}

// ---------------------------------------------------------------------------
// Engineered scenes.

/// A body of large surfaces plus `small` deliberately small features, each
/// owning roughly `small_fraction` of the total area (above the culling
/// threshold, below the 1% scale bucket when called with ~0.007).
pub fn small_feature_spec(seed: u64, small: usize, small_fraction: f64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut surfaces = vec![
        TrimmedSurface::Rect {
            center: Vec3::new(0.0, 0.0, -1.0),
            u: Vec3::new(1.0, 0.0, 0.0),
            v: Vec3::new(0.0, 1.0, 0.0),
            half_u: 1.0,
            half_v: 1.0,
        },
        TrimmedSurface::Rect {
            center: Vec3::new(0.0, -1.2, 0.0),
            u: Vec3::new(1.0, 0.0, 0.0),
            v: Vec3::new(0.0, 0.0, 1.0),
            half_u: 1.0,
            half_v: 1.0,
        },
        TrimmedSurface::CylinderBand {
            axis_point: Vec3::new(0.0, 0.6, 0.2),
            axis: Vec3::new(0.0, 0.0, 1.0),
            radius: 0.5,
            half_height: 0.8,
        },
    ];
    let body_area: f64 = surfaces.iter().map(|s| s.area()).sum();
    // total = body / (1 - small * f); each small has area f * total.
    let total = body_area / (1.0 - small as f64 * small_fraction);
    let small_area = small_fraction * total;

    for i in 0..small {
        let x = -0.9 + 1.8 * (i % 4) as f64 / 3.0;
        let y = -0.5 + 1.2 * ((i / 4) % 3) as f64 / 2.0;
        let z = 0.9 + 0.5 * (i / 12) as f64;
        let center = Vec3::new(x, y, z);
        let axis = random_unit(&mut rng);
        match i % 3 {
            0 => {
                let radius = (small_area / (4.0 * std::f64::consts::PI)).sqrt();
                surfaces.push(TrimmedSurface::Sphere { center, radius });
            }
            1 => {
                let radius = 0.04;
                let half_height = small_area / (2.0 * TAU * radius);
                surfaces.push(TrimmedSurface::CylinderBand {
                    axis_point: center,
                    axis,
                    radius,
                    half_height,
                });
            }
            _ => {
                let half_angle = 25f64.to_radians();
                let h0 = 0.02;
                let h1 = (small_area * half_angle.cos() / (std::f64::consts::PI * half_angle.tan())
                    + h0 * h0)
                    .sqrt();
                surfaces.push(TrimmedSurface::ConeBand { apex: center, axis, half_angle, h0, h1 });
            }
        }
    }
    SceneSpec { seed, surfaces }
}

/// Big flat body plus `small` high-curvature features (small spheres), each
/// owning roughly `fraction` of the area. For the contrast case,
/// `flat_facets` swaps the spheres for small tilted rectangles.
pub fn curvature_contrast_spec(seed: u64, small: usize, fraction: f64, flat_facets: bool) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut surfaces = vec![TrimmedSurface::Rect {
        center: Vec3::new(0.0, 0.0, -0.5),
        u: Vec3::new(1.0, 0.0, 0.0),
        v: Vec3::new(0.0, 1.0, 0.0),
        half_u: 1.2,
        half_v: 1.2,
    }];
    let body_area: f64 = surfaces.iter().map(|s| s.area()).sum();
    let total = body_area / (1.0 - small as f64 * fraction);
    let small_area = fraction * total;
    for i in 0..small {
        let x = -0.9 + 1.8 * (i % 4) as f64 / 3.0;
        let y = -0.9 + 1.8 * ((i / 4) % 4) as f64 / 3.0;
        let center = Vec3::new(x, y, 0.5 + 0.3 * (i % 2) as f64);
        if flat_facets {
            let normal = rotate_about(
                &Vec3::new(0.0, 0.0, 1.0),
                &any_orthonormal(&Vec3::new(0.0, 0.0, 1.0)),
                0.3 + 0.9 * rng.random::<f64>(),
            );
            let u = any_orthonormal(&normal);
            let v = normal.cross(&u);
            let half = (small_area / 4.0).sqrt();
            surfaces.push(TrimmedSurface::Rect { center, u, v, half_u: half, half_v: half });
        } else {
            let radius = (small_area / (4.0 * std::f64::consts::PI)).sqrt();
            surfaces.push(TrimmedSurface::Sphere { center, radius });
        }
    }
    SceneSpec { seed, surfaces }
}

/// Jaccard index of two index sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::HashSet<usize> = a.iter().copied().collect();
    let sb: std::collections::HashSet<usize> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

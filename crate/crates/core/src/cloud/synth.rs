//! Trimmed sampling surfaces and the deterministic scene generator.

use super::{
    CloudError, PointCloud, Scene, ScenePrimitive, CULL_AREA_FRACTION, K_GLOB,
    SURFACE_SAMPLES_PER_PRIMITIVE,
};
use crate::math::{any_orthonormal, derive_seed, Vec3};
use crate::primitive::{Primitive, PrimitiveKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// A bounded region of an analytic surface with an exact area and a
/// uniform-by-area sampler. The analytic parameters of the untrimmed
/// primitive are recoverable at any time.
#[derive(Debug, Clone, PartialEq)]
pub enum TrimmedSurface {
    /// Rectangle on a plane; `u` and `v` are orthonormal in-plane axes and
    /// the normal is `u x v`.
    Rect { center: Vec3, u: Vec3, v: Vec3, half_u: f64, half_v: f64 },
    /// Complete sphere.
    Sphere { center: Vec3, radius: f64 },
    /// Spherical cap: directions `d` from the center with `d . axis >= cos_min`.
    SphereCap { center: Vec3, radius: f64, axis: Vec3, cos_min: f64 },
    /// Lateral cylinder surface between `-half_height` and `+half_height`
    /// along the axis.
    CylinderBand { axis_point: Vec3, axis: Vec3, radius: f64, half_height: f64 },
    /// Lateral cone surface between axial heights `h0` and `h1` from the apex.
    ConeBand { apex: Vec3, axis: Vec3, half_angle: f64, h0: f64, h1: f64 },
}

impl TrimmedSurface {
    /// Exact area of the trimmed region.
    pub fn area(&self) -> f64 {
        match self {
            TrimmedSurface::Rect { half_u, half_v, .. } => 4.0 * half_u * half_v,
            TrimmedSurface::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            TrimmedSurface::SphereCap { radius, cos_min, .. } => {
                TAU * radius * radius * (1.0 - cos_min)
            }
            TrimmedSurface::CylinderBand { radius, half_height, .. } => {
                TAU * radius * 2.0 * half_height
            }
            TrimmedSurface::ConeBand { half_angle, h0, h1, .. } => {
                std::f64::consts::PI * half_angle.tan() / half_angle.cos() * (h1 * h1 - h0 * h0)
            }
        }
    }

    /// Uniform-by-area sample: a surface point and its oriented unit normal.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match self {
            TrimmedSurface::Rect { center, u, v, half_u, half_v } => {
                let a = (rng.random::<f64>() * 2.0 - 1.0) * half_u;
                let b = (rng.random::<f64>() * 2.0 - 1.0) * half_v;
                (center + u * a + v * b, u.cross(v))
            }
            TrimmedSurface::Sphere { center, radius } => {
                let z = rng.random::<f64>() * 2.0 - 1.0;
                let phi = rng.random::<f64>() * TAU;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
                (center + dir * *radius, dir)
            }
            TrimmedSurface::SphereCap { center, radius, axis, cos_min } => {
                let z = cos_min + rng.random::<f64>() * (1.0 - cos_min);
                let phi = rng.random::<f64>() * TAU;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let e1 = any_orthonormal(axis);
                let e2 = axis.cross(&e1);
                let dir = e1 * (r * phi.cos()) + e2 * (r * phi.sin()) + axis * z;
                (center + dir * *radius, dir)
            }
            TrimmedSurface::CylinderBand { axis_point, axis, radius, half_height } => {
                let h = (rng.random::<f64>() * 2.0 - 1.0) * half_height;
                let phi = rng.random::<f64>() * TAU;
                let e1 = any_orthonormal(axis);
                let e2 = axis.cross(&e1);
                let radial = e1 * phi.cos() + e2 * phi.sin();
                (axis_point + axis * h + radial * *radius, radial)
            }
            TrimmedSurface::ConeBand { apex, axis, half_angle, h0, h1 } => {
                // Area density grows linearly with axial height, so h is drawn
                // with a sqrt warp.
                let t = rng.random::<f64>();
                let h = (h0 * h0 + t * (h1 * h1 - h0 * h0)).sqrt();
                let phi = rng.random::<f64>() * TAU;
                let e1 = any_orthonormal(axis);
                let e2 = axis.cross(&e1);
                let radial = e1 * phi.cos() + e2 * phi.sin();
                let (s, c) = half_angle.sin_cos();
                let point = apex + axis * h + radial * (h * half_angle.tan());
                (point, radial * c - axis * s)
            }
        }
    }

    /// Analytic parameters of the untrimmed surface, canonically oriented.
    pub fn to_primitive(&self) -> Primitive {
        match self {
            TrimmedSurface::Rect { center, u, v, .. } => {
                let n = u.cross(v);
                Primitive::Plane { normal: n, offset: n.dot(center) }.canonicalized()
            }
            TrimmedSurface::Sphere { center, radius }
            | TrimmedSurface::SphereCap { center, radius, .. } => {
                Primitive::Sphere { center: *center, radius: *radius }
            }
            TrimmedSurface::CylinderBand { axis_point, axis, radius, .. } => Primitive::Cylinder {
                axis: *axis,
                axis_point: *axis_point,
                radius: *radius,
            }
            .canonicalized(),
            TrimmedSurface::ConeBand { apex, axis, half_angle, .. } => Primitive::Cone {
                apex: *apex,
                axis: *axis,
                half_angle: *half_angle,
            },
        }
    }

    pub fn kind(&self) -> PrimitiveKind {
        match self {
            TrimmedSurface::Rect { .. } => PrimitiveKind::Plane,
            TrimmedSurface::Sphere { .. } | TrimmedSurface::SphereCap { .. } => PrimitiveKind::Sphere,
            TrimmedSurface::CylinderBand { .. } => PrimitiveKind::Cylinder,
            TrimmedSurface::ConeBand { .. } => PrimitiveKind::Cone,
        }
    }

    /// `p -> (p - center) / scale` applied to the trim description.
    fn to_frame(&self, center: &Vec3, scale: f64) -> TrimmedSurface {
        match self {
            TrimmedSurface::Rect { center: c, u, v, half_u, half_v } => TrimmedSurface::Rect {
                center: (c - center) / scale,
                u: *u,
                v: *v,
                half_u: half_u / scale,
                half_v: half_v / scale,
            },
            TrimmedSurface::Sphere { center: c, radius } => TrimmedSurface::Sphere {
                center: (c - center) / scale,
                radius: radius / scale,
            },
            TrimmedSurface::SphereCap { center: c, radius, axis, cos_min } => {
                TrimmedSurface::SphereCap {
                    center: (c - center) / scale,
                    radius: radius / scale,
                    axis: *axis,
                    cos_min: *cos_min,
                }
            }
            TrimmedSurface::CylinderBand { axis_point, axis, radius, half_height } => {
                TrimmedSurface::CylinderBand {
                    axis_point: (axis_point - center) / scale,
                    axis: *axis,
                    radius: radius / scale,
                    half_height: half_height / scale,
                }
            }
            TrimmedSurface::ConeBand { apex, axis, half_angle, h0, h1 } => {
                TrimmedSurface::ConeBand {
                    apex: (apex - center) / scale,
                    axis: *axis,
                    half_angle: *half_angle,
                    h0: h0 / scale,
                    h1: h1 / scale,
                }
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let area = self.area();
        if !area.is_finite() || area <= 0.0 {
            return Err(format!("area {area} is not positive and finite"));
        }
        match self {
            TrimmedSurface::Rect { u, v, .. } => {
                if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 {
                    return Err("rect axes must be unit length".into());
                }
                if u.dot(v).abs() > 1e-9 {
                    return Err("rect axes must be orthogonal".into());
                }
            }
            TrimmedSurface::SphereCap { cos_min, .. } => {
                if !(-1.0..1.0).contains(cos_min) {
                    return Err(format!("cap cos_min {cos_min} outside [-1, 1)"));
                }
            }
            TrimmedSurface::ConeBand { half_angle, h0, h1, .. } => {
                if !(*half_angle > 0.0 && *half_angle < std::f64::consts::FRAC_PI_2) {
                    return Err(format!("cone half angle {half_angle} outside (0, pi/2)"));
                }
                if !(*h0 >= 0.0 && h1 > h0) {
                    return Err(format!("cone band heights [{h0}, {h1}] are invalid"));
                }
            }
            _ => {}
        }
        self.to_primitive().validate()
    }
}

/// What to synthesize: a seed and the trimmed surfaces in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub surfaces: Vec<TrimmedSurface>,
}

/// Knobs for generating a random [`SceneSpec`]: a body of large surfaces plus
/// an optional batch of deliberately small features.
#[derive(Debug, Clone)]
pub struct RandomSceneParams {
    pub n_primitives: usize,
    /// Relative weight of plane/sphere/cylinder/cone draws.
    pub type_mix: [f64; 4],
    /// Characteristic size range of ordinary surfaces, in world units.
    pub size_range: (f64, f64),
    /// How many of `n_primitives` are drawn from `small_size_range` instead.
    pub small_count: usize,
    pub small_size_range: (f64, f64),
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        RandomSceneParams {
            n_primitives: 8,
            type_mix: [0.35, 0.15, 0.3, 0.2],
            size_range: (0.25, 1.0),
            small_count: 0,
            small_size_range: (0.1, 0.2),
        }
    }
}

impl SceneSpec {
    /// Deterministically generate a random mixed scene.
    pub fn random(seed: u64, params: &RandomSceneParams) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "scene-spec", 0));
        let mut surfaces = Vec::with_capacity(params.n_primitives);
        let total_mix: f64 = params.type_mix.iter().sum();
        for i in 0..params.n_primitives {
            let (lo, hi) = if i < params.small_count {
                params.small_size_range
            } else {
                params.size_range
            };
            let size = lo + rng.random::<f64>() * (hi - lo);
            let center = random_in_ball(&mut rng) * 0.8;
            let axis = random_unit(&mut rng);
            let mut pick = rng.random::<f64>() * total_mix;
            let mut kind = 3usize;
            for (k, w) in params.type_mix.iter().enumerate() {
                if pick < *w {
                    kind = k;
                    break;
                }
                pick -= w;
            }
            let surface = match kind {
                0 => {
                    let u = any_orthonormal(&axis);
                    let v = axis.cross(&u);
                    let aspect = 0.5 + rng.random::<f64>();
                    TrimmedSurface::Rect {
                        center,
                        u,
                        v,
                        half_u: size * 0.5,
                        half_v: size * 0.5 * aspect,
                    }
                }
                1 => TrimmedSurface::Sphere { center, radius: size * 0.4 },
                2 => TrimmedSurface::CylinderBand {
                    axis_point: center,
                    axis,
                    radius: size * 0.3,
                    half_height: size * (0.4 + 0.4 * rng.random::<f64>()),
                },
                _ => {
                    let half_angle = (15.0 + 20.0 * rng.random::<f64>()).to_radians();
                    TrimmedSurface::ConeBand {
                        apex: center,
                        axis,
                        half_angle,
                        h0: size * 0.1,
                        h1: size * 0.9,
                    }
                }
            };
            surfaces.push(surface);
        }
        SceneSpec { seed, surfaces }
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    let z = rng.random::<f64>() * 2.0 - 1.0;
    let phi = rng.random::<f64>() * TAU;
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

fn random_in_ball<R: Rng>(rng: &mut R) -> Vec3 {
    let dir = random_unit(rng);
    dir * rng.random::<f64>().cbrt()
}

/// Largest-remainder apportionment of `total` into parts proportional to
/// `weights`, with every part at least 1.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = Vec::with_capacity(weights.len());
    let mut fractions: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (i, w) in weights.iter().enumerate() {
        let exact = total as f64 * w / sum;
        let floor = exact.floor() as usize;
        counts.push(floor);
        assigned += floor;
        fractions.push((exact - floor as f64, i));
    }
    fractions.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    // The floors undershoot by less than one point per part.
    let leftover = total - assigned;
    debug_assert!(leftover < weights.len().max(1));
    for &(_, i) in fractions.iter().take(leftover) {
        counts[i] += 1;
    }
    // Every retained primitive must own at least one point.
    while let Some(zero) = counts.iter().position(|&c| c == 0) {
        let donor = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        counts[donor] -= 1;
        counts[zero] += 1;
    }
    counts
}

pub(super) fn synthesize(
    spec: &SceneSpec,
    total_points: usize,
    noise_amplitude: f64,
) -> Result<Scene, CloudError> {
    if spec.surfaces.is_empty() {
        return Err(CloudError::EmptyScene);
    }
    if spec.surfaces.len() > K_GLOB {
        return Err(CloudError::TooManyPrimitives { got: spec.surfaces.len(), limit: K_GLOB });
    }
    if total_points < 1024 {
        return Err(CloudError::TooFewPoints { got: total_points, min: 1024 });
    }
    if noise_amplitude < 0.0 {
        return Err(CloudError::NegativeNoise(noise_amplitude));
    }
    for (index, s) in spec.surfaces.iter().enumerate() {
        s.validate()
            .map_err(|reason| CloudError::DegenerateSurface { index, reason })?;
    }

    // Cull primitives below the area threshold; their point budget moves to
    // the survivors via the proportional re-apportionment below.
    let areas: Vec<f64> = spec.surfaces.iter().map(|s| s.area()).collect();
    let total_area: f64 = areas.iter().sum();
    let survivors: Vec<usize> = (0..spec.surfaces.len())
        .filter(|&i| areas[i] >= CULL_AREA_FRACTION * total_area)
        .collect();
    debug_assert!(!survivors.is_empty());

    let surviving_areas: Vec<f64> = survivors.iter().map(|&i| areas[i]).collect();
    let counts = apportion(total_points, &surviving_areas);

    let mut points = Vec::with_capacity(total_points);
    let mut normals = Vec::with_capacity(total_points);
    let mut labels = Vec::with_capacity(total_points);
    let mut types = Vec::with_capacity(total_points);
    for (new_label, (&orig, &count)) in survivors.iter().zip(counts.iter()).enumerate() {
        let surface = &spec.surfaces[orig];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "surface", orig as u64));
        for _ in 0..count {
            let (p, n) = surface.sample(&mut rng);
            points.push(p);
            normals.push(n);
            labels.push(new_label as i32);
            types.push(surface.kind());
        }
    }

    // 512 noise-free samples per retained primitive, from a dedicated stream.
    let mut sample_sets = Vec::with_capacity(survivors.len());
    for &orig in &survivors {
        let surface = &spec.surfaces[orig];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "samples", orig as u64));
        let samples: Vec<Vec3> = (0..SURFACE_SAMPLES_PER_PRIMITIVE)
            .map(|_| surface.sample(&mut rng).0)
            .collect();
        sample_sets.push(samples);
    }

    // Normalize the noise-free union to the unit sphere: translate by the
    // bounding-box midpoint, scale so the farthest point has norm 1.
    let mut lo = points[0];
    let mut hi = points[0];
    for p in &points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center = (lo + hi) * 0.5;
    let scale = points.iter().map(|p| (p - center).norm()).fold(0.0f64, f64::max);
    if scale <= 0.0 {
        return Err(CloudError::DegenerateSurface { index: survivors[0], reason: "all sampled points coincide".into() });
    }
    for p in points.iter_mut() {
        *p = (*p - center) / scale;
    }
    for set in sample_sets.iter_mut() {
        for p in set.iter_mut() {
            *p = (*p - center) / scale;
        }
    }

    let primitives: Vec<ScenePrimitive> = survivors
        .iter()
        .zip(sample_sets)
        .map(|(&orig, samples)| {
            let surface = spec.surfaces[orig].to_frame(&center, scale);
            let analytic = surface.to_primitive();
            ScenePrimitive { surface, analytic, samples }
        })
        .collect();

    // Displace along the true normal by a uniform draw in [-noise, +noise].
    if noise_amplitude > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "noise", 0));
        for (p, n) in points.iter_mut().zip(normals.iter()) {
            let u = (rng.random::<f64>() * 2.0 - 1.0) * noise_amplitude;
            *p += n * u;
        }
    }

    let cloud = PointCloud {
        points,
        normals: Some(normals),
        gt_label: Some(labels),
        gt_type: Some(types),
    };
    debug_assert!(cloud.validate(noise_amplitude).is_ok());
    Ok(Scene { primitives, cloud, noise_amplitude })
}

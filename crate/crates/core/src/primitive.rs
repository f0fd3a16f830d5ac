//! Analytic surface primitives: planes, spheres, cylinders, and cones, with
//! exact point-to-surface distances and a canonical parameter form so fitted
//! and ground-truth parameters can be compared directly.

use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Tag for the four supported primitive kinds. The discriminants double as
/// the on-disk type codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Plane = 0,
    Sphere = 1,
    Cylinder = 2,
    Cone = 3,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [
        PrimitiveKind::Plane,
        PrimitiveKind::Sphere,
        PrimitiveKind::Cylinder,
        PrimitiveKind::Cone,
    ];

    pub fn from_tag(tag: u8) -> Option<PrimitiveKind> {
        match tag {
            0 => Some(PrimitiveKind::Plane),
            1 => Some(PrimitiveKind::Sphere),
            2 => Some(PrimitiveKind::Cylinder),
            3 => Some(PrimitiveKind::Cone),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Plane => "plane",
            PrimitiveKind::Sphere => "sphere",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Cone => "cone",
        }
    }
}

/// An analytic, untrimmed surface primitive.
///
/// Direction fields are unit vectors. `canonicalized` flips plane normals and
/// cylinder axes into a fixed half-space; cone axes are geometric (a single
/// nappe opens along the axis) and are never flipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Points p with `normal . p = offset`.
    Plane { normal: Vec3, offset: f64 },
    Sphere { center: Vec3, radius: f64 },
    /// Infinite cylinder around the line `axis_point + t * axis`.
    Cylinder { axis: Vec3, axis_point: Vec3, radius: f64 },
    /// Single nappe opening along `axis` from `apex`, `half_angle` in (0, pi/2).
    Cone { apex: Vec3, axis: Vec3, half_angle: f64 },
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Plane { .. } => PrimitiveKind::Plane,
            Primitive::Sphere { .. } => PrimitiveKind::Sphere,
            Primitive::Cylinder { .. } => PrimitiveKind::Cylinder,
            Primitive::Cone { .. } => PrimitiveKind::Cone,
        }
    }

    /// Exact unsigned Euclidean distance from `point` to the untrimmed surface.
    pub fn distance_to(&self, point: &Vec3) -> f64 {
        match self {
            Primitive::Plane { normal, offset } => (normal.dot(point) - offset).abs(),
            Primitive::Sphere { center, radius } => ((point - center).norm() - radius).abs(),
            Primitive::Cylinder { axis, axis_point, radius } => {
                let d = point - axis_point;
                let radial = d - axis * d.dot(axis);
                (radial.norm() - radius).abs()
            }
            Primitive::Cone { apex, axis, half_angle } => {
                let v = point - apex;
                let t = v.norm();
                if t == 0.0 {
                    return 0.0;
                }
                // Work in the (axis, radial) half-plane through the point: the
                // nappe is the ray from the apex at `half_angle` off the axis.
                let beta = (v.dot(axis) / t).clamp(-1.0, 1.0).acos();
                let delta = beta - half_angle;
                if delta.cos() >= 0.0 {
                    t * delta.sin().abs()
                } else {
                    // Foot of the perpendicular falls behind the apex.
                    t
                }
            }
        }
    }

    /// Outward/oriented unit surface normal at (the projection of) `point`.
    ///
    /// For planes this is the stored normal; for the curved kinds it is the
    /// gradient direction at the nearest surface point, pointing away from the
    /// axis/center. Degenerate queries (on an axis, at a center or apex) fall
    /// back to an arbitrary valid direction.
    pub fn normal_at(&self, point: &Vec3) -> Vec3 {
        match self {
            Primitive::Plane { normal, .. } => *normal,
            Primitive::Sphere { center, .. } => {
                let d = point - center;
                let n = d.norm();
                if n < 1e-12 {
                    Vec3::new(0.0, 0.0, 1.0)
                } else {
                    d / n
                }
            }
            Primitive::Cylinder { axis, axis_point, .. } => {
                let d = point - axis_point;
                let radial = d - axis * d.dot(axis);
                let n = radial.norm();
                if n < 1e-12 {
                    crate::math::any_orthonormal(axis)
                } else {
                    radial / n
                }
            }
            Primitive::Cone { apex, axis, half_angle } => {
                let v = point - apex;
                let axial = v.dot(axis);
                let radial = v - axis * axial;
                let rn = radial.norm();
                let radial_dir = if rn < 1e-12 {
                    crate::math::any_orthonormal(axis)
                } else {
                    radial / rn
                };
                // Surface normal tilts away from the axis by the half-angle.
                let (s, c) = half_angle.sin_cos();
                radial_dir * c - axis * s
            }
        }
    }

    /// The axis used by the primitive-axis metric: plane normal or
    /// cylinder/cone axis. Spheres have none.
    pub fn metric_axis(&self) -> Option<Vec3> {
        match self {
            Primitive::Plane { normal, .. } => Some(*normal),
            Primitive::Sphere { .. } => None,
            Primitive::Cylinder { axis, .. } => Some(*axis),
            Primitive::Cone { axis, .. } => Some(*axis),
        }
    }

    /// Canonical orientation: plane normals and cylinder axes get a
    /// non-negative dot product with +z, ties broken toward +y then +x.
    /// Flipping a cone axis would select the opposite nappe, so cones are
    /// returned unchanged.
    pub fn canonicalized(&self) -> Primitive {
        fn keep(dir: &Vec3) -> bool {
            if dir.z != 0.0 {
                return dir.z > 0.0;
            }
            if dir.y != 0.0 {
                return dir.y > 0.0;
            }
            dir.x >= 0.0
        }
        match *self {
            Primitive::Plane { normal, offset } => {
                if keep(&normal) {
                    Primitive::Plane { normal, offset }
                } else {
                    Primitive::Plane { normal: -normal, offset: -offset }
                }
            }
            Primitive::Cylinder { axis, axis_point, radius } => {
                let axis = if keep(&axis) { axis } else { -axis };
                Primitive::Cylinder { axis, axis_point, radius }
            }
            other => other,
        }
    }

    /// Structural well-formedness: unit directions, positive radius, and a
    /// half-angle strictly inside (0, pi/2).
    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: &Vec3, what: &str| -> Result<(), String> {
            if (v.norm() - 1.0).abs() > 1e-9 {
                Err(format!("{what} is not unit length (norm {})", v.norm()))
            } else {
                Ok(())
            }
        };
        match self {
            Primitive::Plane { normal, .. } => unit(normal, "plane normal"),
            Primitive::Sphere { radius, .. } => {
                if *radius > 0.0 {
                    Ok(())
                } else {
                    Err(format!("sphere radius {radius} must be positive"))
                }
            }
            Primitive::Cylinder { axis, radius, .. } => {
                unit(axis, "cylinder axis")?;
                if *radius > 0.0 {
                    Ok(())
                } else {
                    Err(format!("cylinder radius {radius} must be positive"))
                }
            }
            Primitive::Cone { axis, half_angle, .. } => {
                unit(axis, "cone axis")?;
                if *half_angle > 0.0 && *half_angle < std::f64::consts::FRAC_PI_2 {
                    Ok(())
                } else {
                    Err(format!("cone half angle {half_angle} outside (0, pi/2)"))
                }
            }
        }
    }

    /// Apply the similarity `p -> (p - center) / scale` (patch normalization
    /// or scene normalization). Directions are unchanged; positions translate
    /// and lengths divide by the scale.
    pub fn to_frame(&self, center: &Vec3, scale: f64) -> Primitive {
        match *self {
            Primitive::Plane { normal, offset } => Primitive::Plane {
                normal,
                offset: (offset - normal.dot(center)) / scale,
            },
            Primitive::Sphere { center: c, radius } => Primitive::Sphere {
                center: (c - center) / scale,
                radius: radius / scale,
            },
            Primitive::Cylinder { axis, axis_point, radius } => Primitive::Cylinder {
                axis,
                axis_point: (axis_point - center) / scale,
                radius: radius / scale,
            },
            Primitive::Cone { apex, axis, half_angle } => Primitive::Cone {
                apex: (apex - center) / scale,
                axis,
                half_angle,
            },
        }
    }

    /// Inverse of [`Primitive::to_frame`]: `q -> q * scale + center`.
    pub fn from_frame(&self, center: &Vec3, scale: f64) -> Primitive {
        match *self {
            Primitive::Plane { normal, offset } => Primitive::Plane {
                normal,
                offset: offset * scale + normal.dot(center),
            },
            Primitive::Sphere { center: c, radius } => Primitive::Sphere {
                center: c * scale + center,
                radius: radius * scale,
            },
            Primitive::Cylinder { axis, axis_point, radius } => Primitive::Cylinder {
                axis,
                axis_point: axis_point * scale + center,
                radius: radius * scale,
            },
            Primitive::Cone { apex, axis, half_angle } => Primitive::Cone {
                apex: apex * scale + center,
                axis,
                half_angle,
            },
        }
    }
}

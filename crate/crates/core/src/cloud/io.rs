//! On-disk formats for clouds and scene sidecars.
//!
//! Cloud files hold an ASCII header line `CPFCLOUD 1 <count> <flags>` with
//! flags P, PN, PNL, or PNLT, followed by little-endian binary payloads:
//! f64 position triples, f64 normal triples, i32 labels, and u8 type tags,
//! in that order, for the channels the flags declare.
//!
//! Scene sidecars are structured text listing each primitive's analytic
//! parameters, its trimmed sampling extent, and its 512 surface samples.

use super::{PointCloud, Scene, ScenePrimitive, TrimmedSurface};
use crate::math::{fnv1a64, Vec3};
use crate::primitive::{Primitive, PrimitiveKind};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: {channel} ends at record {record} of {expected}")]
    Truncated { channel: &'static str, record: usize, expected: usize },
    #[error("non-finite value in {channel} at record {record}")]
    NonFinite { channel: &'static str, record: usize },
    #[error("unexpected trailing bytes after payload")]
    TrailingBytes,
    #[error("invalid type tag {tag} at record {record}")]
    BadTypeTag { tag: u8, record: usize },
    #[error("cloud channels not representable: {0}")]
    ChannelCombination(String),
    #[error("malformed sidecar at line {line}: {reason}")]
    MalformedSidecar { line: usize, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> FileError {
    FileError::Io { path: path.display().to_string(), source }
}

/// Serialize a cloud to the binary format. Also used for content hashing.
pub fn cloud_to_bytes(cloud: &PointCloud) -> Result<Vec<u8>, FileError> {
    let has_n = cloud.normals.is_some();
    let has_l = cloud.gt_label.is_some();
    let has_t = cloud.gt_type.is_some();
    let flags = match (has_n, has_l, has_t) {
        (false, false, false) => "P",
        (true, false, false) => "PN",
        (true, true, false) => "PNL",
        (true, true, true) => "PNLT",
        _ => {
            return Err(FileError::ChannelCombination(format!(
                "normals={has_n} labels={has_l} types={has_t}; flags must be one of P, PN, PNL, PNLT"
            )))
        }
    };
    let n = cloud.len();
    let mut out = Vec::with_capacity(64 + n * 53);
    writeln!(out, "CPFCLOUD 1 {n} {flags}").expect("write to vec");
    for p in &cloud.points {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    if let Some(normals) = &cloud.normals {
        for v in normals {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    if let Some(labels) = &cloud.gt_label {
        for &l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    if let Some(types) = &cloud.gt_type {
        for &t in types {
            out.push(t.tag());
        }
    }
    Ok(out)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<(), FileError> {
    let bytes = cloud_to_bytes(cloud)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Parse a cloud from raw bytes, validating the header, channel sizes, and
/// finiteness of every float.
pub fn cloud_from_bytes(bytes: &[u8]) -> Result<PointCloud, FileError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FileError::MalformedHeader("missing newline".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| FileError::MalformedHeader("header is not utf-8".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "CPFCLOUD" {
        return Err(FileError::MalformedHeader(format!("expected `CPFCLOUD 1 <count> <flags>`, got `{header}`")));
    }
    if fields[1] != "1" {
        return Err(FileError::MalformedHeader(format!("unsupported version {}", fields[1])));
    }
    let count: usize = fields[2]
        .parse()
        .map_err(|_| FileError::MalformedHeader(format!("bad count `{}`", fields[2])))?;
    let flags = fields[3];
    let (has_n, has_l, has_t) = match flags {
        "P" => (false, false, false),
        "PN" => (true, false, false),
        "PNL" => (true, true, false),
        "PNLT" => (true, true, true),
        other => return Err(FileError::MalformedHeader(format!("unknown flags `{other}`"))),
    };

    let mut cursor = newline + 1;
    let read_f64_triples = |cursor: &mut usize, channel: &'static str| -> Result<Vec<Vec3>, FileError> {
        let mut out = Vec::with_capacity(count);
        for record in 0..count {
            if *cursor + 24 > bytes.len() {
                return Err(FileError::Truncated { channel, record: record + 1, expected: count });
            }
            let mut coords = [0.0f64; 3];
            for c in coords.iter_mut() {
                let mut raw = [0u8; 8];
                raw.copy_from_slice(&bytes[*cursor..*cursor + 8]);
                *c = f64::from_le_bytes(raw);
                *cursor += 8;
            }
            if coords.iter().any(|c| !c.is_finite()) {
                return Err(FileError::NonFinite { channel, record: record + 1 });
            }
            out.push(Vec3::new(coords[0], coords[1], coords[2]));
        }
        Ok(out)
    };

    let points = read_f64_triples(&mut cursor, "positions")?;
    let normals = if has_n { Some(read_f64_triples(&mut cursor, "normals")?) } else { None };
    let gt_label = if has_l {
        let mut out = Vec::with_capacity(count);
        for record in 0..count {
            if cursor + 4 > bytes.len() {
                return Err(FileError::Truncated { channel: "labels", record: record + 1, expected: count });
            }
            let mut raw = [0u8; 4];
            raw.copy_from_slice(&bytes[cursor..cursor + 4]);
            out.push(i32::from_le_bytes(raw));
            cursor += 4;
        }
        Some(out)
    } else {
        None
    };
    let gt_type = if has_t {
        let mut out = Vec::with_capacity(count);
        for record in 0..count {
            if cursor >= bytes.len() {
                return Err(FileError::Truncated { channel: "types", record: record + 1, expected: count });
            }
            let tag = bytes[cursor];
            cursor += 1;
            out.push(
                PrimitiveKind::from_tag(tag).ok_or(FileError::BadTypeTag { tag, record: record + 1 })?,
            );
        }
        Some(out)
    } else {
        None
    };
    if cursor != bytes.len() {
        return Err(FileError::TrailingBytes);
    }
    Ok(PointCloud { points, normals, gt_label, gt_type })
}

pub fn load_cloud(path: &Path) -> Result<PointCloud, FileError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    cloud_from_bytes(&bytes)
}

/// FNV-1a hash of a cloud's serialized bytes, as a 16-digit hex string.
pub fn cloud_content_hash(cloud: &PointCloud) -> Result<String, FileError> {
    Ok(format!("{:016x}", fnv1a64(&cloud_to_bytes(cloud)?)))
}

fn write_vec3(out: &mut String, v: &Vec3) {
    out.push_str(&format!("{} {} {}", v.x, v.y, v.z));
}

pub(crate) fn primitive_record(p: &Primitive) -> String {
    let mut s = String::new();
    match p {
        Primitive::Plane { normal, offset } => {
            s.push_str("plane ");
            write_vec3(&mut s, normal);
            s.push_str(&format!(" {offset}"));
        }
        Primitive::Sphere { center, radius } => {
            s.push_str("sphere ");
            write_vec3(&mut s, center);
            s.push_str(&format!(" {radius}"));
        }
        Primitive::Cylinder { axis, axis_point, radius } => {
            s.push_str("cylinder ");
            write_vec3(&mut s, axis);
            s.push(' ');
            write_vec3(&mut s, axis_point);
            s.push_str(&format!(" {radius}"));
        }
        Primitive::Cone { apex, axis, half_angle } => {
            s.push_str("cone ");
            write_vec3(&mut s, apex);
            s.push(' ');
            write_vec3(&mut s, axis);
            s.push_str(&format!(" {half_angle}"));
        }
    }
    s
}

fn surface_line(s: &TrimmedSurface) -> String {
    let mut out = String::new();
    match s {
        TrimmedSurface::Rect { center, u, v, half_u, half_v } => {
            out.push_str("rect ");
            write_vec3(&mut out, center);
            out.push(' ');
            write_vec3(&mut out, u);
            out.push(' ');
            write_vec3(&mut out, v);
            out.push_str(&format!(" {half_u} {half_v}"));
        }
        TrimmedSurface::Sphere { center, radius } => {
            out.push_str("sphere ");
            write_vec3(&mut out, center);
            out.push_str(&format!(" {radius}"));
        }
        TrimmedSurface::SphereCap { center, radius, axis, cos_min } => {
            out.push_str("spherecap ");
            write_vec3(&mut out, center);
            out.push_str(&format!(" {radius} "));
            write_vec3(&mut out, axis);
            out.push_str(&format!(" {cos_min}"));
        }
        TrimmedSurface::CylinderBand { axis_point, axis, radius, half_height } => {
            out.push_str("cylband ");
            write_vec3(&mut out, axis_point);
            out.push(' ');
            write_vec3(&mut out, axis);
            out.push_str(&format!(" {radius} {half_height}"));
        }
        TrimmedSurface::ConeBand { apex, axis, half_angle, h0, h1 } => {
            out.push_str("coneband ");
            write_vec3(&mut out, apex);
            out.push(' ');
            write_vec3(&mut out, axis);
            out.push_str(&format!(" {half_angle} {h0} {h1}"));
        }
    }
    out
}

/// Write the scene sidecar (primitive parameters, extents, surface samples).
pub fn save_scene_sidecar(scene: &Scene, path: &Path) -> Result<(), FileError> {
    let mut out = String::new();
    out.push_str("CPFSCENE 1\n");
    out.push_str(&format!("noise {}\n", scene.noise_amplitude));
    out.push_str(&format!("primitives {}\n", scene.primitives.len()));
    for (i, prim) in scene.primitives.iter().enumerate() {
        out.push_str(&format!("primitive {i} {}\n", primitive_record(&prim.analytic)));
        out.push_str(&format!("extent {}\n", surface_line(&prim.surface)));
        out.push_str(&format!("samples {}\n", prim.samples.len()));
        for s in &prim.samples {
            out.push_str(&format!("{} {} {}\n", s.x, s.y, s.z));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

struct LineParser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineParser<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str), FileError> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or(FileError::MalformedSidecar { line: 0, reason: "unexpected end of file".into() })
    }
}

fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>, FileError> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| FileError::MalformedSidecar {
                line,
                reason: format!("bad float `{t}`"),
            })
        })
        .collect()
}

pub(crate) fn parse_primitive_record(tokens: &[&str], line: usize) -> Result<Primitive, FileError> {
    let bad = |reason: String| FileError::MalformedSidecar { line, reason };
    let need = |n: usize| -> Result<Vec<f64>, FileError> {
        if tokens.len() != n + 1 {
            return Err(bad(format!("expected {n} parameters for {}", tokens[0])));
        }
        parse_floats(&tokens[1..], line)
    };
    match tokens.first().copied() {
        Some("plane") => {
            let f = need(4)?;
            Ok(Primitive::Plane { normal: Vec3::new(f[0], f[1], f[2]), offset: f[3] })
        }
        Some("sphere") => {
            let f = need(4)?;
            Ok(Primitive::Sphere { center: Vec3::new(f[0], f[1], f[2]), radius: f[3] })
        }
        Some("cylinder") => {
            let f = need(7)?;
            Ok(Primitive::Cylinder {
                axis: Vec3::new(f[0], f[1], f[2]),
                axis_point: Vec3::new(f[3], f[4], f[5]),
                radius: f[6],
            })
        }
        Some("cone") => {
            let f = need(7)?;
            Ok(Primitive::Cone {
                apex: Vec3::new(f[0], f[1], f[2]),
                axis: Vec3::new(f[3], f[4], f[5]),
                half_angle: f[6],
            })
        }
        other => Err(bad(format!("unknown primitive kind {other:?}"))),
    }
}

fn parse_surface(tokens: &[&str], line: usize) -> Result<TrimmedSurface, FileError> {
    let bad = |reason: String| FileError::MalformedSidecar { line, reason };
    let need = |n: usize| -> Result<Vec<f64>, FileError> {
        if tokens.len() != n + 1 {
            return Err(bad(format!("expected {n} parameters for {}", tokens[0])));
        }
        parse_floats(&tokens[1..], line)
    };
    match tokens.first().copied() {
        Some("rect") => {
            let f = need(11)?;
            Ok(TrimmedSurface::Rect {
                center: Vec3::new(f[0], f[1], f[2]),
                u: Vec3::new(f[3], f[4], f[5]),
                v: Vec3::new(f[6], f[7], f[8]),
                half_u: f[9],
                half_v: f[10],
            })
        }
        Some("sphere") => {
            let f = need(4)?;
            Ok(TrimmedSurface::Sphere { center: Vec3::new(f[0], f[1], f[2]), radius: f[3] })
        }
        Some("spherecap") => {
            let f = need(8)?;
            Ok(TrimmedSurface::SphereCap {
                center: Vec3::new(f[0], f[1], f[2]),
                radius: f[3],
                axis: Vec3::new(f[4], f[5], f[6]),
                cos_min: f[7],
            })
        }
        Some("cylband") => {
            let f = need(8)?;
            Ok(TrimmedSurface::CylinderBand {
                axis_point: Vec3::new(f[0], f[1], f[2]),
                axis: Vec3::new(f[3], f[4], f[5]),
                radius: f[6],
                half_height: f[7],
            })
        }
        Some("coneband") => {
            let f = need(9)?;
            Ok(TrimmedSurface::ConeBand {
                apex: Vec3::new(f[0], f[1], f[2]),
                axis: Vec3::new(f[3], f[4], f[5]),
                half_angle: f[6],
                h0: f[7],
                h1: f[8],
            })
        }
        other => Err(bad(format!("unknown extent kind {other:?}"))),
    }
}

/// Load the sidecar content. The cloud is stored separately; pair them with
/// [`Scene::from_parts`].
pub fn load_scene_sidecar(path: &Path) -> Result<(Vec<ScenePrimitive>, f64), FileError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut parser = LineParser { lines: text.lines().enumerate() };

    let (line, header) = parser.next_line()?;
    if header.trim() != "CPFSCENE 1" {
        return Err(FileError::MalformedSidecar { line, reason: format!("bad header `{header}`") });
    }
    let (line, noise_line) = parser.next_line()?;
    let noise: f64 = noise_line
        .strip_prefix("noise ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| FileError::MalformedSidecar { line, reason: "expected `noise <value>`".into() })?;
    let (line, count_line) = parser.next_line()?;
    let count: usize = count_line
        .strip_prefix("primitives ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| FileError::MalformedSidecar { line, reason: "expected `primitives <count>`".into() })?;

    let mut primitives = Vec::with_capacity(count);
    for expect in 0..count {
        let (line, prim_line) = parser.next_line()?;
        let tokens: Vec<&str> = prim_line.split_whitespace().collect();
        if tokens.len() < 3 || tokens[0] != "primitive" || tokens[1] != expect.to_string() {
            return Err(FileError::MalformedSidecar {
                line,
                reason: format!("expected `primitive {expect} ...`, got `{prim_line}`"),
            });
        }
        let analytic = parse_primitive_record(&tokens[2..], line)?;
        analytic
            .validate()
            .map_err(|reason| FileError::MalformedSidecar { line, reason })?;

        let (line, extent_line) = parser.next_line()?;
        let tokens: Vec<&str> = extent_line.split_whitespace().collect();
        if tokens.first() != Some(&"extent") {
            return Err(FileError::MalformedSidecar { line, reason: "expected `extent ...`".into() });
        }
        let surface = parse_surface(&tokens[1..], line)?;

        let (line, samples_line) = parser.next_line()?;
        let n_samples: usize = samples_line
            .strip_prefix("samples ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| FileError::MalformedSidecar { line, reason: "expected `samples <count>`".into() })?;
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let (line, sample_line) = parser.next_line()?;
            let f = parse_floats(&sample_line.split_whitespace().collect::<Vec<_>>(), line)?;
            if f.len() != 3 {
                return Err(FileError::MalformedSidecar { line, reason: "sample needs 3 floats".into() });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(FileError::MalformedSidecar { line, reason: "non-finite sample".into() });
            }
            samples.push(Vec3::new(f[0], f[1], f[2]));
        }
        primitives.push(ScenePrimitive { surface, analytic, samples });
    }
    Ok((primitives, noise))
}

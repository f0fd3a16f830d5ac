//! Segmentation file format: ASCII header `CPFSEG 1 <scope> <N_full> <K>`,
//! then little-endian binary payloads — the scoped point count, one sparse
//! row record (u32 index + K f64 probabilities) per scoped point, the
//! scoped type distributions, and the scoped normal estimates.

use super::{Scope, SoftSegmentation};
use crate::math::Vec3;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload in {channel} at record {record}")]
    Truncated { channel: &'static str, record: usize },
    #[error("non-finite value in {channel} at record {record}")]
    NonFinite { channel: &'static str, record: usize },
    #[error("unexpected trailing bytes after payload")]
    TrailingBytes,
    #[error("point index {index} at record {record} is {problem}")]
    BadIndex { index: usize, record: usize, problem: &'static str },
}

pub fn segmentation_to_bytes(seg: &SoftSegmentation) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "CPFSEG 1 {} {} {}", seg.scope, seg.n_full, seg.k).expect("write to vec");
    out.extend_from_slice(&(seg.scope_len() as u64).to_le_bytes());
    for row in 0..seg.scope_len() {
        out.extend_from_slice(&(seg.point_indices[row] as u32).to_le_bytes());
        for &p in seg.row(row) {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    for row in 0..seg.scope_len() {
        for &t in seg.type_row(row) {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    for n in &seg.est_normals {
        for c in [n.x, n.y, n.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn save_segmentation(seg: &SoftSegmentation, path: &Path) -> Result<(), SegFileError> {
    fs::write(path, segmentation_to_bytes(seg))
        .map_err(|e| SegFileError::Io { path: path.display().to_string(), source: e })
}

pub fn segmentation_from_bytes(bytes: &[u8]) -> Result<SoftSegmentation, SegFileError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| SegFileError::MalformedHeader("missing newline".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| SegFileError::MalformedHeader("header is not utf-8".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "CPFSEG" || fields[1] != "1" {
        return Err(SegFileError::MalformedHeader(format!(
            "expected `CPFSEG 1 <scope> <N_full> <K>`, got `{header}`"
        )));
    }
    let scope = match fields[2] {
        "global" => Scope::Global,
        other => {
            let idx = other
                .strip_prefix("patch:")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| SegFileError::MalformedHeader(format!("bad scope `{other}`")))?;
            Scope::Patch(idx)
        }
    };
    let n_full: usize = fields[3]
        .parse()
        .map_err(|_| SegFileError::MalformedHeader(format!("bad N_full `{}`", fields[3])))?;
    let k: usize = fields[4]
        .parse()
        .map_err(|_| SegFileError::MalformedHeader(format!("bad K `{}`", fields[4])))?;
    if k == 0 {
        return Err(SegFileError::MalformedHeader("K must be positive".into()));
    }

    let mut cursor = newline + 1;
    let take = |cursor: &mut usize, n: usize, channel: &'static str, record: usize| -> Result<&[u8], SegFileError> {
        if *cursor + n > bytes.len() {
            return Err(SegFileError::Truncated { channel, record });
        }
        let s = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };

    let m = u64::from_le_bytes(
        take(&mut cursor, 8, "count", 1)?.try_into().expect("sized slice"),
    ) as usize;

    let mut point_indices: Vec<usize> = Vec::with_capacity(m);
    let mut probs = Vec::with_capacity(m * k);
    for record in 0..m {
        let idx = u32::from_le_bytes(
            take(&mut cursor, 4, "rows", record + 1)?.try_into().expect("sized slice"),
        ) as usize;
        if idx >= n_full {
            return Err(SegFileError::BadIndex { index: idx, record: record + 1, problem: "out of bounds" });
        }
        if point_indices.last().is_some_and(|&last| last >= idx) {
            return Err(SegFileError::BadIndex { index: idx, record: record + 1, problem: "not strictly increasing" });
        }
        point_indices.push(idx);
        for _ in 0..k {
            let p = f64::from_le_bytes(
                take(&mut cursor, 8, "rows", record + 1)?.try_into().expect("sized slice"),
            );
            if !p.is_finite() {
                return Err(SegFileError::NonFinite { channel: "rows", record: record + 1 });
            }
            probs.push(p);
        }
    }
    let mut type_probs = Vec::with_capacity(m * 4);
    for record in 0..m {
        for _ in 0..4 {
            let t = f64::from_le_bytes(
                take(&mut cursor, 8, "types", record + 1)?.try_into().expect("sized slice"),
            );
            if !t.is_finite() {
                return Err(SegFileError::NonFinite { channel: "types", record: record + 1 });
            }
            type_probs.push(t);
        }
    }
    let mut est_normals = Vec::with_capacity(m);
    for record in 0..m {
        let mut coords = [0.0f64; 3];
        for c in coords.iter_mut() {
            *c = f64::from_le_bytes(
                take(&mut cursor, 8, "normals", record + 1)?.try_into().expect("sized slice"),
            );
            if !c.is_finite() {
                return Err(SegFileError::NonFinite { channel: "normals", record: record + 1 });
            }
        }
        est_normals.push(Vec3::new(coords[0], coords[1], coords[2]));
    }
    if cursor != bytes.len() {
        return Err(SegFileError::TrailingBytes);
    }
    Ok(SoftSegmentation {
        scope,
        n_full,
        point_indices,
        k,
        probs,
        type_probs,
        est_normals,
        leftover: vec![false; m],
        unsegmented: false,
        segment_primitives: None,
    })
}

pub fn load_segmentation(path: &Path) -> Result<SoftSegmentation, SegFileError> {
    let bytes = fs::read(path)
        .map_err(|e| SegFileError::Io { path: path.display().to_string(), source: e })?;
    segmentation_from_bytes(&bytes)
}

//! Grouping and primitive-list files (structured text).

use super::MergeGrouping;
use crate::primitive::Primitive;
use crate::segmenters::Scope;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroupFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

fn bad(line: usize, reason: impl Into<String>) -> GroupFileError {
    GroupFileError::Malformed { line, reason: reason.into() }
}

/// Grouping file: one line per group listing `column:scope` pairs, plus the
/// achieved objective.
pub fn save_grouping(
    grouping: &MergeGrouping,
    column_scope: &[Scope],
    path: &Path,
) -> Result<(), GroupFileError> {
    let mut out = String::new();
    out.push_str("CPFGROUP 1\n");
    out.push_str(&format!("columns {}\n", column_scope.len()));
    out.push_str(&format!("objective {}\n", grouping.objective));
    out.push_str(&format!("groups {}\n", grouping.groups.len()));
    for (g, group) in grouping.groups.iter().enumerate() {
        let cols: Vec<String> = group.iter().map(|&c| format!("{c}:{}", column_scope[c])).collect();
        out.push_str(&format!("group {g} {}\n", cols.join(" ")));
    }
    fs::write(path, out).map_err(|e| GroupFileError::Io { path: path.display().to_string(), source: e })
}

/// Load a grouping file, returning the grouping and each column's scope.
pub fn load_grouping(path: &Path) -> Result<(MergeGrouping, Vec<Scope>), GroupFileError> {
    let text = fs::read_to_string(path)
        .map_err(|e| GroupFileError::Io { path: path.display().to_string(), source: e })?;
    let mut lines = text.lines().enumerate();
    let mut next = || {
        lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| bad(0, "unexpected end of file"))
    };
    let (line, header) = next()?;
    if header.trim() != "CPFGROUP 1" {
        return Err(bad(line, "bad header"));
    }
    let (line, columns_line) = next()?;
    let n_columns: usize = columns_line
        .strip_prefix("columns ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(line, "expected `columns <count>`"))?;
    let (line, objective_line) = next()?;
    let objective: f64 = objective_line
        .strip_prefix("objective ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(line, "expected `objective <value>`"))?;
    let (line, groups_line) = next()?;
    let n_groups: usize = groups_line
        .strip_prefix("groups ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(line, "expected `groups <count>`"))?;

    let mut groups = Vec::with_capacity(n_groups);
    let mut scopes = vec![None; n_columns];
    for expect in 0..n_groups {
        let (line, group_line) = next()?;
        let tokens: Vec<&str> = group_line.split_whitespace().collect();
        if tokens.len() < 3 || tokens[0] != "group" || tokens[1] != expect.to_string() {
            return Err(bad(line, format!("expected `group {expect} <col:scope>...`")));
        }
        let mut group = Vec::new();
        for token in &tokens[2..] {
            let (col_str, scope_str) = token
                .split_once(':')
                .ok_or_else(|| bad(line, format!("bad column token `{token}`")))?;
            let col: usize = col_str.parse().map_err(|_| bad(line, "bad column id"))?;
            if col >= n_columns {
                return Err(bad(line, format!("column {col} out of range")));
            }
            let scope = match scope_str {
                "global" => Scope::Global,
                other => Scope::Patch(
                    other
                        .strip_prefix("patch")
                        .map(|s| s.trim_start_matches(':'))
                        .unwrap_or(other)
                        .parse()
                        .map_err(|_| bad(line, format!("bad scope `{scope_str}`")))?,
                ),
            };
            scopes[col] = Some(scope);
            group.push(col);
        }
        groups.push(group);
    }
    let scopes: Result<Vec<Scope>, GroupFileError> = scopes
        .into_iter()
        .enumerate()
        .map(|(c, s)| s.ok_or_else(|| bad(0, format!("column {c} missing from every group"))))
        .collect();
    Ok((MergeGrouping { groups, objective }, scopes?))
}

/// Primitive list file: `CPFPRIM 1`, a count, then one record per primitive
/// with its kind tag and parameters (or `none` for a failed fit).
pub fn save_primitive_list(prims: &[Option<Primitive>], path: &Path) -> Result<(), GroupFileError> {
    let mut out = String::new();
    out.push_str("CPFPRIM 1\n");
    out.push_str(&format!("count {}\n", prims.len()));
    for (i, p) in prims.iter().enumerate() {
        match p {
            Some(p) => out.push_str(&format!("{i} {}\n", crate::cloud::io::primitive_record(p))),
            None => out.push_str(&format!("{i} none\n")),
        }
    }
    fs::write(path, out).map_err(|e| GroupFileError::Io { path: path.display().to_string(), source: e })
}

pub fn load_primitive_list(path: &Path) -> Result<Vec<Option<Primitive>>, GroupFileError> {
    let text = fs::read_to_string(path)
        .map_err(|e| GroupFileError::Io { path: path.display().to_string(), source: e })?;
    let mut lines = text.lines().enumerate();
    let mut next = || {
        lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| bad(0, "unexpected end of file"))
    };
    let (line, header) = next()?;
    if header.trim() != "CPFPRIM 1" {
        return Err(bad(line, "bad header"));
    }
    let (line, count_line) = next()?;
    let count: usize = count_line
        .strip_prefix("count ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(line, "expected `count <n>`"))?;
    let mut out = Vec::with_capacity(count);
    for expect in 0..count {
        let (line, record) = next()?;
        let tokens: Vec<&str> = record.split_whitespace().collect();
        if tokens.is_empty() || tokens[0] != expect.to_string() {
            return Err(bad(line, format!("expected record for primitive {expect}")));
        }
        if tokens.len() == 2 && tokens[1] == "none" {
            out.push(None);
        } else {
            let prim = crate::cloud::io::parse_primitive_record(&tokens[1..], line)
                .map_err(|e| bad(line, e.to_string()))?;
            out.push(Some(prim));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    #[test]
    fn grouping_round_trip() {
        let grouping = MergeGrouping {
            groups: vec![vec![0, 2], vec![1], vec![3, 4]],
            objective: 12.5,
        };
        let scopes = vec![
            Scope::Patch(0),
            Scope::Patch(0),
            Scope::Patch(1),
            Scope::Patch(1),
            Scope::Global,
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.cpfgroup");
        save_grouping(&grouping, &scopes, &path).unwrap();
        let (back, back_scopes) = load_grouping(&path).unwrap();
        assert_eq!(back, grouping);
        assert_eq!(back_scopes, scopes);
    }

    #[test]
    fn primitive_list_round_trip() {
        let prims = vec![
            Some(Primitive::Plane { normal: Vec3::new(0.0, 0.0, 1.0), offset: 0.25 }),
            None,
            Some(Primitive::Cone {
                apex: Vec3::new(0.1, 0.2, 0.3),
                axis: Vec3::new(0.0, 0.0, 1.0),
                half_angle: 0.5,
            }),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cpfprim");
        save_primitive_list(&prims, &path).unwrap();
        let back = load_primitive_list(&path).unwrap();
        assert_eq!(back, prims);
    }
}

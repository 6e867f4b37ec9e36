use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, MeshError, Result};
use crate::util::write_atomic;

/// Parses ASCII OBJ (`v`, `f`, comments). Unsupported records are skipped.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let (mesh, skipped) = parse_obj_report(text)?;
    if skipped > 0 {
        log::warn!("skipped {skipped} unsupported OBJ records");
    }
    Ok(mesh)
}

/// Like [`parse_obj`], also returning how many records were skipped.
///
/// Polygons are fan-triangulated; `a/b/c` suffixes are ignored; negative
/// indices count back from the most recent vertex.
pub fn parse_obj_report(text: &str) -> Result<(Mesh, usize)> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut pending: Vec<(usize, Vec<i64>)> = Vec::new();
    let mut skipped = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => {
                let mut p = [0.0; 3];
                for (k, slot) in p.iter_mut().enumerate() {
                    let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                        line: line_no,
                        msg: format!("vertex needs 3 coordinates, found {k}"),
                    })?;
                    *slot = tok.parse::<f64>().map_err(|_| MeshError::Parse {
                        line: line_no,
                        msg: format!("malformed coordinate `{tok}`"),
                    })?;
                    if !slot.is_finite() {
                        return Err(MeshError::Parse {
                            line: line_no,
                            msg: format!("non-finite coordinate `{tok}`"),
                        });
                    }
                }
                vertices.push(p);
            }
            "f" => {
                let mut idx = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|_| MeshError::Parse {
                        line: line_no,
                        msg: format!("malformed face index `{tok}`"),
                    })?;
                    let resolved = match raw {
                        0 => {
                            return Err(MeshError::FaceIndex {
                                line: line_no,
                                index: 0,
                                count: vertices.len(),
                            })
                        }
                        r if r < 0 => vertices.len() as i64 + r,
                        r => r - 1,
                    };
                    if resolved < 0 {
                        return Err(MeshError::FaceIndex {
                            line: line_no,
                            index: raw,
                            count: vertices.len(),
                        });
                    }
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        msg: format!("face needs at least 3 indices, found {}", idx.len()),
                    });
                }
                pending.push((line_no, idx));
            }
            _ => skipped += 1,
        }
    }

    if vertices.is_empty() {
        return Err(MeshError::NoVertices);
    }
    let count = vertices.len();
    let mut faces = Vec::new();
    for (line, idx) in pending {
        if let Some(&bad) = idx.iter().find(|&&k| k as usize >= count) {
            return Err(MeshError::FaceIndex {
                line,
                index: bad + 1,
                count,
            });
        }
        for k in 1..idx.len() - 1 {
            faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
        }
    }
    Ok((Mesh::new(vertices, faces)?, skipped))
}

/// OBJ text with 9 decimal places per coordinate and 1-based faces.
pub fn obj_string(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    if let Some(name) = &mesh.name {
        let _ = writeln!(s, "# {name}");
    }
    for p in &mesh.vertices {
        let _ = writeln!(s, "v {:.9} {:.9} {:.9}", p[0], p[1], p[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, obj_string(mesh).as_bytes()).map_err(|source| MeshError::Io {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn suffixes_and_negative_indices() {
        let a = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3").unwrap();
        let b = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3").unwrap();
        let c = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2//7 -1").unwrap();
        assert_eq!(a, b);
        assert_eq!(c, b);
    }

    #[test]
    fn comments_blank_lines_and_skipped_records() {
        let text = "# header\n\nmtllib x.mtl\nv 0 0 0 # trailing\nvn 0 0 1\nv 1 0 0\nv 0 1 0\ns off\nf 1 2 3\n";
        let (m, skipped) = parse_obj_report(text).unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(skipped, 3);
    }

    #[test]
    fn errors_report_line_numbers() {
        match parse_obj("v 0 0 0\nv 1 x 0\n") {
            Err(MeshError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n") {
            Err(MeshError::FaceIndex { line: 4, index: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_obj("# nothing\n"), Err(MeshError::NoVertices)));
    }
}

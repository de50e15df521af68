//! OBJ and binary STL readers, and a deterministic OBJ writer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// On-disk mesh encodings understood by [`load_mesh`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    StlBinary,
}

impl MeshFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "stl" => Some(MeshFormat::StlBinary),
            _ => None,
        }
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        MeshFormat::Obj => {
            let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
                line: 0,
                message: "file is not valid UTF-8".into(),
            })?;
            parse_obj(&text)
        }
        MeshFormat::StlBinary => parse_stl_binary(&bytes),
    }
}

/// Parses `v` and `f` records. Faces with more than three corners are
/// fan-triangulated; texture/normal indices are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens.next().ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad coordinate {tok:?}"),
                    })?;
                }
                vertices.push(Point3::from(coords));
            }
            Some("f") => {
                let mut corners = Vec::with_capacity(4);
                for tok in tokens {
                    let idx = tok.split('/').next().unwrap_or("");
                    let i: i64 = idx.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad face index {tok:?}"),
                    })?;
                    let resolved = match i {
                        i if i > 0 => (i - 1) as usize,
                        i if i < 0 && (-i) as usize <= vertices.len() => vertices.len() - (-i) as usize,
                        _ => {
                            return Err(Error::Parse {
                                line: line_no,
                                message: format!("face index {i} out of range"),
                            })
                        }
                    };
                    corners.push(resolved);
                }
                if corners.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "face needs at least three corners".into(),
                    });
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    // Forward references are legal in OBJ, so range checks happen here.
    for f in &faces {
        for &v in f {
            if v >= vertices.len() {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("face references vertex {} of {}", v + 1, vertices.len()),
                });
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Parses binary STL, welding vertices with bit-identical coordinates.
pub fn parse_stl_binary(bytes: &[u8]) -> Result<TriangleMesh> {
    let bad = |message: &str| Error::Parse {
        line: 0,
        message: message.into(),
    };
    if bytes.len() < 84 {
        return Err(bad("binary STL shorter than its header"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(bad("binary STL length does not match its triangle count"));
    }
    let mut weld: HashMap<[u32; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(count);
    for t in 0..count {
        let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
        let mut face = [0usize; 3];
        for (k, slot) in face.iter_mut().enumerate() {
            let base = 12 + 12 * k;
            let mut bits = [0u32; 3];
            for (c, b) in bits.iter_mut().enumerate() {
                let off = base + 4 * c;
                *b = u32::from_le_bytes(rec[off..off + 4].try_into().unwrap());
            }
            *slot = *weld.entry(bits).or_insert_with(|| {
                vertices.push(Point3::new(
                    f32::from_bits(bits[0]) as f64,
                    f32::from_bits(bits[1]) as f64,
                    f32::from_bits(bits[2]) as f64,
                ));
                vertices.len() - 1
            });
        }
        faces.push(face);
    }
    TriangleMesh::new(vertices, faces)
}

/// Serializes a mesh as OBJ text. Output depends only on the mesh.
pub fn write_obj(mesh: &TriangleMesh, comment: &str) -> String {
    let mut out = String::new();
    for line in comment.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn stl_bytes(mesh: &TriangleMesh) -> Vec<u8> {
        let mut out = vec![0u8; 80];
        out.extend((mesh.face_count() as u32).to_le_bytes());
        for f in 0..mesh.face_count() {
            out.extend([0u8; 12]);
            for p in mesh.triangle(f) {
                for k in 0..3 {
                    out.extend((p[k] as f32).to_le_bytes());
                }
            }
            out.extend([0u8; 2]);
        }
        out
    }

    #[test]
    fn obj_round_trip_preserves_cube() {
        let cube = fixtures::cube(1.0);
        let text = write_obj(&cube, "cube");
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 12);
        let back = parse_obj(&text).unwrap();
        assert_eq!(back.vertices(), cube.vertices());
        assert_eq!(back.faces(), cube.faces());
    }

    #[test]
    fn obj_rejects_out_of_range_index() {
        let mut text = write_obj(&fixtures::cube(1.0), "");
        text.push_str("f 1 2 99\n");
        assert!(matches!(parse_obj(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn obj_accepts_slashes_negatives_and_polygons() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3//3 -1\n";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_without_faces_is_empty() {
        assert!(matches!(parse_obj("v 0 0 0\n"), Err(Error::EmptyMesh)));
        assert!(matches!(parse_obj("v 0 zero 0\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn stl_is_welded_into_a_solid() {
        let cube = fixtures::cube(1.0);
        let mesh = parse_stl_binary(&stl_bytes(&cube)).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.face_count(), 12);
        assert!(mesh.is_solid());
    }

    #[test]
    fn stl_length_is_checked() {
        let mut bytes = stl_bytes(&fixtures::cube(1.0));
        bytes.pop();
        assert!(matches!(parse_stl_binary(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn load_mesh_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        std::fs::write(&path, write_obj(&fixtures::cube(1.0), "")).unwrap();
        assert_eq!(load_mesh(&path, MeshFormat::Obj).unwrap().face_count(), 12);
        assert_eq!(MeshFormat::from_path(&path), Some(MeshFormat::Obj));
        assert!(matches!(
            load_mesh(dir.path().join("missing.obj"), MeshFormat::Obj),
            Err(Error::Io { .. })
        ));
    }
}

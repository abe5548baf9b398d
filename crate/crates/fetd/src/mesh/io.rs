//! Plain-text mesh file format.
//!
//! ```text
//!     meshfmt 1 2d
//!     # comment lines and trailing comments start with '#'
//!     vertices 4
//!     0 0
//!     1 0
//!     1 1
//!     0 1
//!     triangles 2
//!     0 1 2 0
//!     0 2 3 1
//! ```
//!
//! Vertex lines hold `x y`; triangle lines hold three 0-based
//! counter-clockwise vertex ids and an integer material label.  The writer
//! prints coordinates with Rust's shortest round-trip formatting, so
//! write-then-parse reproduces a mesh bit for bit.

use super::Mesh;
use crate::error::{Error, Result};

/// Parses the `meshfmt 1 2d` format from a string.
pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, raw)| {
            let content = raw.split('#').next().unwrap_or("").trim();
            (n + 1, content)
        })
        .filter(|(_, content)| !content.is_empty());

    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::MeshParse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
    };

    let (line, header) = next("header")?;
    if header.split_whitespace().collect::<Vec<_>>() != ["meshfmt", "1", "2d"] {
        return Err(Error::MeshParse {
            line,
            msg: format!("expected header 'meshfmt 1 2d', found '{header}'"),
        });
    }

    let (line, decl) = next("'vertices N'")?;
    let n_vertices = parse_count(line, decl, "vertices")?;
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (line, v) = next("a vertex line 'x y'")?;
        let fields: Vec<&str> = v.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::MeshParse {
                line,
                msg: format!("expected 'x y', found '{v}'"),
            });
        }
        let x = parse_f64(line, fields[0])?;
        let y = parse_f64(line, fields[1])?;
        vertices.push([x, y]);
    }

    let (line, decl) = next("'triangles M'")?;
    let n_triangles = parse_count(line, decl, "triangles")?;
    let mut triangles = Vec::with_capacity(n_triangles);
    let mut labels = Vec::with_capacity(n_triangles);
    for _ in 0..n_triangles {
        let (line, t) = next("a triangle line 'i j k label'")?;
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::MeshParse {
                line,
                msg: format!("expected 'i j k label', found '{t}'"),
            });
        }
        let i = parse_usize(line, fields[0])?;
        let j = parse_usize(line, fields[1])?;
        let k = parse_usize(line, fields[2])?;
        let label = parse_u32(line, fields[3])?;
        triangles.push([i, j, k]);
        labels.push(label);
    }

    if let Some((line, extra)) = lines.next() {
        return Err(Error::MeshParse {
            line,
            msg: format!("trailing content after triangle list: '{extra}'"),
        });
    }

    Mesh::build(vertices, triangles, labels, 0)
}

/// Serialises a mesh to the `meshfmt 1 2d` format.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("meshfmt 1 2d\n");
    out.push_str(&format!("vertices {}\n", mesh.n_vertices()));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {}\n", v[0], v[1]));
    }
    out.push_str(&format!("triangles {}\n", mesh.n_triangles()));
    for (tri, label) in mesh.triangles.iter().zip(&mesh.labels) {
        out.push_str(&format!("{} {} {} {}\n", tri[0], tri[1], tri[2], label));
    }
    out
}

/// Reads and parses a mesh file.
pub fn read_mesh_file(path: &std::path::Path) -> Result<Mesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

/// Writes a mesh file.
pub fn write_mesh_file(path: &std::path::Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, write_mesh(mesh))?;
    Ok(())
}

fn parse_count(line: usize, decl: &str, keyword: &str) -> Result<usize> {
    let fields: Vec<&str> = decl.split_whitespace().collect();
    if fields.len() != 2 || fields[0] != keyword {
        return Err(Error::MeshParse {
            line,
            msg: format!("expected '{keyword} N', found '{decl}'"),
        });
    }
    parse_usize(line, fields[1])
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::MeshParse {
        line,
        msg: format!("invalid number '{s}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::MeshParse {
            line,
            msg: format!("non-finite coordinate '{s}'"),
        });
    }
    Ok(v)
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::MeshParse {
        line,
        msg: format!("invalid index '{s}'"),
    })
}

fn parse_u32(line: usize, s: &str) -> Result<u32> {
    s.parse().map_err(|_| Error::MeshParse {
        line,
        msg: format!("invalid label '{s}'"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = "\
meshfmt 1 2d
# unit square, two triangles
vertices 4
0 0
1 0
1 1   # trailing comment
0 1
triangles 2
0 1 2 0
0 2 3 1
";

    #[test]
    fn parses_comments_and_labels() {
        let m = parse_mesh(SQUARE).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.labels, vec![0, 1]);
        assert_eq!(m.vertices[2], [1.0, 1.0]);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = parse_mesh(SQUARE).unwrap();
        let text = write_mesh(&m);
        let m2 = parse_mesh(&text).unwrap();
        assert_eq!(m.vertices, m2.vertices);
        assert_eq!(m.triangles, m2.triangles);
        assert_eq!(m.labels, m2.labels);
        assert_eq!(text, write_mesh(&m2));
        // Also with coordinates that exercise shortest-float printing.
        let m3 = Mesh::build(
            vec![[0.1, 0.2], [1.0 / 3.0, 0.0], [0.3 + 1e-16, 0.7]],
            vec![[0, 1, 2]],
            vec![3],
            0,
        )
        .unwrap();
        let t3 = write_mesh(&m3);
        let m4 = parse_mesh(&t3).unwrap();
        assert_eq!(m3.vertices, m4.vertices);
    }

    #[test]
    fn error_messages_carry_line_numbers() {
        let bad_header = "meshfmt 2 2d\nvertices 0\ntriangles 0\n";
        match parse_mesh(bad_header) {
            Err(Error::MeshParse { line: 1, .. }) => {}
            other => panic!("expected header error, got {other:?}"),
        }
        let bad_vertex = "meshfmt 1 2d\nvertices 1\n0 zero\ntriangles 0\n";
        match parse_mesh(bad_vertex) {
            Err(Error::MeshParse { line: 3, .. }) => {}
            other => panic!("expected vertex error, got {other:?}"),
        }
        let bad_count = "meshfmt 1 2d\nvertices 2\n0 0\ntriangles 0\n";
        assert!(parse_mesh(bad_count).is_err());
        let flat = "meshfmt 1 2d\nvertices 3\n0 0\n1 0\n2 0\ntriangles 1\n0 1 2 0\n";
        match parse_mesh(flat) {
            Err(Error::InvalidMesh(msg)) => assert!(msg.contains("triangle 0")),
            other => panic!("expected degenerate-triangle error, got {other:?}"),
        }
        let trailing = "meshfmt 1 2d\nvertices 0\ntriangles 0\nextra\n";
        match parse_mesh(trailing) {
            Err(Error::MeshParse { line: 4, .. }) => {}
            other => panic!("expected trailing-content error, got {other:?}"),
        }
    }
}

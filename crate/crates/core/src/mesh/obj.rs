//! Wavefront OBJ subset: `#` comments, `v x y z`, triangular `f a b c`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Point3;

use super::TriMesh;
use crate::error::{Error, Result};

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obj(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses OBJ text. Normals, texture coordinates, groups and materials are
/// skipped; polygons with more than three corners are rejected.
pub fn parse_obj(reader: impl BufRead) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    // (line, raw 1-based index after resolving negatives)
    let mut faces: Vec<(usize, [i64; 3])> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<obj stream>", e))?;
        let content = line.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let tok = tokens.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("bad coordinate {tok:?}"),
                    })?;
                }
                vertices.push(Point3::from(xyz));
            }
            Some("f") => {
                let corners: Vec<&str> = tokens.collect();
                if corners.len() != 3 {
                    if corners.len() > 3 {
                        return Err(Error::NonTriangularFace { line: lineno });
                    }
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("face needs 3 vertices, got {}", corners.len()),
                    });
                }
                let mut idx = [0i64; 3];
                for (slot, tok) in idx.iter_mut().zip(&corners) {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("bad face index {tok:?}"),
                    })?;
                    *slot = match raw {
                        0 => {
                            return Err(Error::IndexOutOfRange {
                                line: lineno,
                                index: 0,
                                count: vertices.len(),
                            })
                        }
                        r if r < 0 => vertices.len() as i64 + r + 1,
                        r => r,
                    };
                    if *slot < 1 {
                        return Err(Error::IndexOutOfRange {
                            line: lineno,
                            index: raw,
                            count: vertices.len(),
                        });
                    }
                }
                faces.push((lineno, idx));
            }
            _ => {}
        }
    }

    let count = vertices.len();
    let faces = faces
        .into_iter()
        .map(|(line, idx)| {
            let mut out = [0usize; 3];
            for (o, &i) in out.iter_mut().zip(&idx) {
                if i as usize > count {
                    return Err(Error::IndexOutOfRange {
                        line,
                        index: i,
                        count,
                    });
                }
                *o = i as usize - 1;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TriMesh::new(vertices, faces))
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_obj(mesh, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "# untangle mesh: {} vertices, {} faces",
        mesh.num_vertices(),
        mesh.num_faces()
    )?;
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", fmt_g9(v.x), fmt_g9(v.y), fmt_g9(v.z))?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// C `printf("%.9g")`.
pub(crate) fn fmt_g9(x: f64) -> String {
    const PRECISION: i32 = 9;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= PRECISION {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (PRECISION - 1 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

//! Wavefront OBJ geometry with a `.labels` sidecar holding one integer per face.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::LabeledMesh;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn sidecar_path(obj: &Path) -> PathBuf {
    obj.with_extension("labels")
}

pub fn load_obj<T: Scalar>(path: &Path) -> Result<LabeledMesh<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // source polygon index for each emitted triangle
    let mut poly_of = Vec::new();
    let mut polys = 0usize;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut xyz = [T::zero(); 3];
                for c in &mut xyz {
                    let v: f64 = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Parse {
                            offset: start,
                            message: "malformed vertex".into(),
                        })?;
                    *c = T::lit(v);
                }
                vertices.push(xyz);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let idx: i64 = t
                        .split('/')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Parse {
                            offset: start,
                            message: format!("malformed face index '{t}'"),
                        })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else {
                        vertices.len() as i64 + idx
                    };
                    if resolved < 0 {
                        return Err(Error::Parse {
                            offset: start,
                            message: format!("face index {idx} out of range"),
                        });
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(Error::Parse {
                        offset: start,
                        message: "face with fewer than 3 vertices".into(),
                    });
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                    poly_of.push(polys);
                }
                polys += 1;
            }
            _ => {}
        }
    }
    let side = sidecar_path(path);
    let labels_text = fs::read_to_string(&side)
        .map_err(|_| Error::Unlabeled(format!("no label sidecar at {}", side.display())))?;
    let mut poly_labels = Vec::new();
    let mut offset = 0usize;
    for line in labels_text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        poly_labels.push(t.parse::<u32>().map_err(|_| Error::Parse {
            offset: start,
            message: format!("malformed label '{t}' in {}", side.display()),
        })?);
    }
    if poly_labels.len() != polys {
        return Err(Error::Unlabeled(format!(
            "{} labels for {polys} faces in {}",
            poly_labels.len(),
            side.display()
        )));
    }
    let face_labels = poly_of.iter().map(|&p| poly_labels[p]).collect();
    let mesh = LabeledMesh {
        vertices,
        faces,
        face_labels,
        vertex_labels: None,
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn save_obj<T: Scalar>(path: &Path, mesh: &LabeledMesh<T>) -> Result<()> {
    let mut obj = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(
            obj,
            "v {:?} {:?} {:?}",
            v[0].to_f64_lossy(),
            v[1].to_f64_lossy(),
            v[2].to_f64_lossy()
        );
    }
    for f in &mesh.faces {
        let _ = writeln!(obj, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    let mut labels = String::new();
    for l in &mesh.face_labels {
        let _ = writeln!(labels, "{l}");
    }
    fs::write(path, obj).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, labels).map_err(|e| Error::io(side, e))
}

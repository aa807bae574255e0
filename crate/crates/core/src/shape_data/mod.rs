//! Labeled shape ingestion: meshes with per-face part labels, surface
//! sampling, normalization into the training volume, and synthetic
//! primitive-union shapes.

mod obj;
mod ply;
mod sample;
mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::scalar::Scalar;

pub use obj::{load_obj, save_obj};
pub use ply::{load_ply, load_ply_bytes, save_ply, write_ply, PlyFormat};
pub use sample::sample_surface;
pub use synthetic::{generate_synthetic, Primitive, PrimitiveShape, SyntheticShapeSpec};

/// Surface points with unit normals and part labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPointCloud<T> {
    pub points: Vec<Vec3<T>>,
    pub normals: Vec<Vec3<T>>,
    pub labels: Vec<u32>,
    pub num_parts: u32,
}

impl<T: Scalar> LabeledPointCloud<T> {
    pub fn new(
        points: Vec<Vec3<T>>,
        normals: Vec<Vec3<T>>,
        labels: Vec<u32>,
        num_parts: u32,
    ) -> Result<Self> {
        let cloud = Self {
            points,
            normals,
            labels,
            num_parts,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.normals.len() || self.points.len() != self.labels.len() {
            return Err(Error::Shape(format!(
                "cloud has {} points, {} normals, {} labels",
                self.points.len(),
                self.normals.len(),
                self.labels.len()
            )));
        }
        if self.num_parts == 0 {
            return Err(Error::invalid("part count must be at least 1"));
        }
        let tol = T::lit(1e-6);
        for (i, n) in self.normals.iter().enumerate() {
            if (linalg::norm(*n) - T::one()).abs() > tol {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.num_parts) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {} parts",
                self.num_parts
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Triangle mesh with per-face part labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
    pub face_labels: Vec<u32>,
    pub vertex_labels: Option<Vec<u32>>,
}

impl<T: Scalar> LabeledMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, faces: Vec<[u32; 3]>, face_labels: Vec<u32>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            face_labels,
            vertex_labels: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            face_labels: Vec::new(),
            vertex_labels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.len() != self.face_labels.len() {
            return Err(Error::Shape(format!(
                "{} faces but {} face labels",
                self.faces.len(),
                self.face_labels.len()
            )));
        }
        let nv = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= nv) {
                return Err(Error::invalid(format!("face {i} references a missing vertex")));
            }
        }
        if let Some(vl) = &self.vertex_labels {
            if vl.len() != nv {
                return Err(Error::Shape(format!("{} vertex labels for {nv} vertices", vl.len())));
            }
        }
        Ok(())
    }

    /// `K = max label + 1`, or 0 for a mesh without faces.
    pub fn num_parts(&self) -> u32 {
        self.face_labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Un-normalized face normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> Vec3<T> {
        let [a, b, c] = self.triangle(f);
        linalg::cross(linalg::sub(b, a), linalg::sub(c, a))
    }

    pub fn face_area(&self, f: usize) -> T {
        linalg::norm(self.face_cross(f)) * T::lit(0.5)
    }

    pub fn face_centroid(&self, f: usize) -> Vec3<T> {
        let [a, b, c] = self.triangle(f);
        linalg::scale(linalg::add(linalg::add(a, b), c), T::one() / T::lit(3.0))
    }

    /// Number of connected components under shared-vertex adjacency.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let a = find(&mut parent, f[0] as usize);
                let b = find(&mut parent, f[k] as usize);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v as usize] = true;
            }
        }
        let mut roots = std::collections::BTreeSet::new();
        for v in 0..self.vertices.len() {
            if used[v] {
                roots.insert(find(&mut parent, v));
            }
        }
        roots.len()
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Loads a labeled mesh from `.ply`, or `.obj` with a `.labels` sidecar.
pub fn load_labeled_mesh<T: Scalar>(path: &Path) -> Result<LabeledMesh<T>> {
    match extension(path).as_deref() {
        Some("ply") => load_ply(path),
        Some("obj") => load_obj(path),
        other => Err(Error::invalid(format!(
            "unsupported mesh extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

/// Writes `.ply` (binary little endian) or `.obj` plus `.labels` sidecar.
pub fn save_labeled_mesh<T: Scalar>(path: &Path, mesh: &LabeledMesh<T>, comments: &[String]) -> Result<()> {
    match extension(path).as_deref() {
        Some("ply") => save_ply(path, mesh, PlyFormat::BinaryLittleEndian, comments),
        Some("obj") => save_obj(path, mesh),
        other => Err(Error::invalid(format!(
            "unsupported mesh extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Uniform scale plus translation taking world coordinates into the
/// normalized training volume: `normalized = (world - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

/// Largest absolute normalized coordinate.
pub const NORMALIZED_EXTENT: f64 = 0.9;

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    /// Centers the axis-aligned bounding box at the origin and scales so the
    /// largest absolute coordinate becomes [`NORMALIZED_EXTENT`].
    pub fn fit<T: Scalar>(points: &[Vec3<T>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot normalize an empty point set"));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                let v = p[a].to_f64_lossy();
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let center = [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ];
        let extent = points
            .iter()
            .flat_map(|p| (0..3).map(move |a| (p[a].to_f64_lossy() - center[a]).abs()))
            .fold(0.0f64, f64::max);
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::invalid("zero-extent point set cannot be normalized"));
        }
        Ok(Self {
            center,
            scale: NORMALIZED_EXTENT / extent,
        })
    }

    pub fn apply<T: Scalar>(&self, p: Vec3<T>) -> Vec3<T> {
        let s = T::lit(self.scale);
        [
            (p[0] - T::lit(self.center[0])) * s,
            (p[1] - T::lit(self.center[1])) * s,
            (p[2] - T::lit(self.center[2])) * s,
        ]
    }

    pub fn invert<T: Scalar>(&self, q: Vec3<T>) -> Vec3<T> {
        let s = T::lit(self.scale);
        [
            q[0] / s + T::lit(self.center[0]),
            q[1] / s + T::lit(self.center[1]),
            q[2] / s + T::lit(self.center[2]),
        ]
    }
}

/// Normalizes a cloud into the training volume. Normals are unchanged.
pub fn normalize<T: Scalar>(cloud: &LabeledPointCloud<T>) -> Result<(LabeledPointCloud<T>, Normalization)> {
    let norm = Normalization::fit(&cloud.points)?;
    let out = LabeledPointCloud {
        points: cloud.points.iter().map(|&p| norm.apply(p)).collect(),
        ..cloud.clone()
    };
    Ok((out, norm))
}

pub fn denormalize<T: Scalar>(cloud: &LabeledPointCloud<T>, norm: &Normalization) -> LabeledPointCloud<T> {
    LabeledPointCloud {
        points: cloud.points.iter().map(|&p| norm.invert(p)).collect(),
        ..cloud.clone()
    }
}

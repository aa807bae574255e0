//! Labeled primitive unions used as desk-scale stand-ins for annotated CAD parts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledMesh;
use crate::error::{Error, Result};
use crate::extractor::marching_cubes;
use crate::linalg::{self, Vec3};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveShape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Capped cylinder around `axis` through `center`.
    Cylinder {
        center: [f64; 3],
        axis: [f64; 3],
        radius: f64,
        half_height: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticShapeSpec {
    pub primitives: Vec<Primitive>,
}

impl PrimitiveShape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Sphere { radius, .. } => *radius > 0.0,
            Self::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Self::Cylinder {
                axis,
                radius,
                half_height,
                ..
            } => *radius > 0.0 && *half_height > 0.0 && linalg::normalized(*axis).is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("primitive parameters must be positive: {self:?}")))
        }
    }

    /// Exact signed distance.
    pub fn sdf(&self, p: Vec3<f64>) -> f64 {
        match self {
            Self::Sphere { center, radius } => linalg::norm(linalg::sub(p, *center)) - radius,
            Self::Box {
                center,
                half_extents,
            } => {
                let d = linalg::sub(p, *center);
                let q = [
                    d[0].abs() - half_extents[0],
                    d[1].abs() - half_extents[1],
                    d[2].abs() - half_extents[2],
                ];
                let outside = linalg::norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Self::Cylinder {
                center,
                axis,
                radius,
                half_height,
            } => {
                let a = linalg::normalized(*axis).unwrap_or([0.0, 0.0, 1.0]);
                let d = linalg::sub(p, *center);
                let along = linalg::dot(d, a);
                let radial = linalg::norm(linalg::sub(d, linalg::scale(a, along)));
                let q = [radial - radius, along.abs() - half_height];
                let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2)).sqrt();
                outside + q[0].max(q[1]).min(0.0)
            }
        }
    }

    /// Conservative axis-aligned bounds.
    pub fn bounds(&self) -> (Vec3<f64>, Vec3<f64>) {
        let r = match self {
            Self::Sphere { radius, .. } => [*radius; 3],
            Self::Box { half_extents, .. } => *half_extents,
            Self::Cylinder {
                radius, half_height, ..
            } => [(radius * radius + half_height * half_height).sqrt(); 3],
        };
        let c = match self {
            Self::Sphere { center, .. } | Self::Box { center, .. } | Self::Cylinder { center, .. } => *center,
        };
        (linalg::sub(c, r), linalg::add(c, r))
    }
}

impl SyntheticShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("synthetic shape needs at least one primitive"));
        }
        self.primitives.iter().try_for_each(|p| p.shape.validate())
    }

    /// Union signed distance.
    pub fn sdf(&self, p: Vec3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|q| q.shape.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Label of the primitive with the smallest signed distance at `p`;
    /// ties go to the lowest primitive index.
    pub fn nearest_label(&self, p: Vec3<f64>) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for q in &self.primitives {
            let d = q.shape.sdf(p);
            if d < best.0 {
                best = (d, q.label);
            }
        }
        best.1
    }
}

/// Triangulates the primitive union with marching cubes on a grid whose
/// longest axis spans `resolution` cells. `seed` jitters the grid origin by
/// less than one cell. Faces are labeled by the nearest primitive at their
/// centroid.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticShapeSpec, resolution: usize, seed: u64) -> Result<LabeledMesh<T>> {
    spec.validate()?;
    if resolution < 2 {
        return Err(Error::invalid("synthetic resolution must be at least 2"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &spec.primitives {
        let (a, b) = p.shape.bounds();
        for k in 0..3 {
            lo[k] = lo[k].min(a[k]);
            hi[k] = hi[k].max(b[k]);
        }
    }
    let longest = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let spacing = longest / resolution as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin: Vec3<f64> = std::array::from_fn(|k| lo[k] - 2.0 * spacing - rng.gen::<f64>() * spacing);
    let dims: [usize; 3] = std::array::from_fn(|k| ((hi[k] + 2.0 * spacing - origin[k]) / spacing).ceil() as usize + 1);
    let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = [
                    origin[0] + i as f64 * spacing,
                    origin[1] + j as f64 * spacing,
                    origin[2] + k as f64 * spacing,
                ];
                values.push(spec.sdf(p));
            }
        }
    }
    let (vertices, faces) = marching_cubes(&values, dims, origin, spacing, 0.0);
    if faces.is_empty() {
        return Err(Error::invalid("synthetic shape produced no surface"));
    }
    let mut mesh = LabeledMesh {
        vertices,
        faces,
        face_labels: Vec::new(),
        vertex_labels: None,
    };
    mesh.face_labels = (0..mesh.faces.len())
        .map(|f| spec.nearest_label(mesh.face_centroid(f)))
        .collect();
    Ok(mesh.map_vertices_cast())
}

impl LabeledMesh<f64> {
    fn map_vertices_cast<T: Scalar>(self) -> LabeledMesh<T> {
        LabeledMesh {
            vertices: self.vertices.iter().map(|&v| linalg::cast3(v)).collect(),
            faces: self.faces,
            face_labels: self.face_labels,
            vertex_labels: self.vertex_labels,
        }
    }
}

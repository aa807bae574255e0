//! Zero-level-set extraction with marching cubes and per-face labeling.

mod tables;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_net::FieldNetwork;
use crate::linalg::Vec3;
use crate::scalar::Scalar;
use crate::shape_data::{LabeledMesh, Normalization};
use tables::{CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE};

/// Regular grid over `[-1, 1]^3` in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// samples per axis
    pub resolution: usize,
    /// points per field query
    pub chunk_size: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 256,
            chunk_size: 65_536,
        }
    }
}

impl GridSpec {
    pub fn new(resolution: usize, chunk_size: usize) -> Result<Self> {
        let g = Self {
            resolution,
            chunk_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::invalid("grid resolution must be at least 2"));
        }
        if self.chunk_size == 0 {
            return Err(Error::invalid("chunk size must be at least 1"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 / (self.resolution - 1) as f64
    }

    /// Normalized coordinate of grid sample `i` along one axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.spacing()
    }
}

/// A field that can be contoured and labeled.
pub trait LabeledField<T> {
    fn sdf_batch(&self, xs: &[Vec3<T>]) -> Vec<T>;
    /// Part label per point, in inference mode.
    fn label_batch(&self, xs: &[Vec3<T>]) -> Vec<u32>;
}

impl<T: Scalar> LabeledField<T> for FieldNetwork<T> {
    fn sdf_batch(&self, xs: &[Vec3<T>]) -> Vec<T> {
        FieldNetwork::sdf_batch(self, xs)
    }

    fn label_batch(&self, xs: &[Vec3<T>]) -> Vec<u32> {
        let logits = self.logits_batch(xs);
        (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// The label shared by at least two of the three; the first when all differ.
pub fn majority_label(l1: u32, l2: u32, l3: u32) -> u32 {
    if l2 == l3 {
        l2
    } else {
        l1
    }
}

/// Marching cubes over `values`, stored with x fastest:
/// `values[i + nx * (j + ny * k)]` sits at `origin + spacing * (i, j, k)`.
/// Vertices on a shared edge are welded. Triangles wind counter-clockwise
/// seen from the side where the field exceeds `level`.
pub fn marching_cubes<T: Scalar>(
    values: &[T],
    dims: [usize; 3],
    origin: Vec3<T>,
    spacing: T,
    level: T,
) -> (Vec<Vec3<T>>, Vec<[u32; 3]>) {
    let [nx, ny, nz] = dims;
    assert_eq!(values.len(), nx * ny * nz, "value count must match grid dims");
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    if nx < 2 || ny < 2 || nz < 2 {
        return (vertices, faces);
    }
    let index = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    // key: 3 * (lower grid index) + axis
    let mut welded: HashMap<usize, u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut corner = [T::zero(); 8];
                let mut case = 0usize;
                for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                    corner[c] = values[index(i + off[0], j + off[1], k + off[2])];
                    if corner[c] < level {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut edge_vertex = |e: usize| -> u32 {
                    let [a, b] = EDGE_CORNERS[e];
                    let (oa, ob) = (CORNER_OFFSETS[a], CORNER_OFFSETS[b]);
                    let axis = (0..3).find(|&d| oa[d] != ob[d]).expect("edge spans one axis");
                    let (lo, hi) = if oa[axis] < ob[axis] { (a, b) } else { (b, a) };
                    let base = CORNER_OFFSETS[lo];
                    let gi = [i + base[0], j + base[1], k + base[2]];
                    let key = 3 * index(gi[0], gi[1], gi[2]) + axis;
                    *welded.entry(key).or_insert_with(|| {
                        let (v0, v1) = (corner[lo], corner[hi]);
                        let denom = v1 - v0;
                        let t = if denom.abs() > T::epsilon() * (v0.abs() + v1.abs()) {
                            ((level - v0) / denom).max(T::zero()).min(T::one())
                        } else {
                            T::lit(0.5)
                        };
                        let mut p: Vec3<T> = std::array::from_fn(|d| origin[d] + T::lit(gi[d] as f64) * spacing);
                        p[axis] += t * spacing;
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    })
                };
                for tri in row.chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let a = edge_vertex(tri[0] as usize);
                    let b = edge_vertex(tri[1] as usize);
                    let c = edge_vertex(tri[2] as usize);
                    faces.push([a, c, b]);
                }
            }
        }
    }
    (vertices, faces)
}

/// Samples `field` on the grid in chunks of `grid.chunk_size` points.
pub fn sample_grid<T: Scalar, F: LabeledField<T> + ?Sized>(field: &F, grid: &GridSpec) -> Vec<T> {
    let n = grid.resolution;
    let total = n * n * n;
    let coords: Vec<T> = (0..n).map(|i| T::lit(grid.coordinate(i))).collect();
    let mut values = Vec::with_capacity(total);
    let mut start = 0;
    while start < total {
        let end = (start + grid.chunk_size).min(total);
        let pts: Vec<Vec3<T>> = (start..end)
            .map(|idx| [coords[idx % n], coords[(idx / n) % n], coords[idx / (n * n)]])
            .collect();
        values.extend(field.sdf_batch(&pts));
        start = end;
    }
    values
}

/// Extraction in normalized coordinates, with per-vertex and per-face labels.
/// A field without a zero crossing yields an empty mesh and a warning.
pub fn extract_normalized<T: Scalar, F: LabeledField<T> + ?Sized>(field: &F, grid: &GridSpec) -> Result<LabeledMesh<T>> {
    grid.validate()?;
    let values = sample_grid(field, grid);
    let n = grid.resolution;
    let (vertices, faces) = marching_cubes(&values, [n; 3], [-T::one(); 3], T::lit(grid.spacing()), T::zero());
    if faces.is_empty() {
        log::warn!("field has no zero crossing on the {n}^3 grid; returning an empty mesh");
        return Ok(LabeledMesh::empty());
    }
    let mut vertex_labels = Vec::with_capacity(vertices.len());
    for chunk in vertices.chunks(grid.chunk_size) {
        vertex_labels.extend(field.label_batch(chunk));
    }
    let face_labels = faces
        .iter()
        .map(|f| {
            majority_label(
                vertex_labels[f[0] as usize],
                vertex_labels[f[1] as usize],
                vertex_labels[f[2] as usize],
            )
        })
        .collect();
    Ok(LabeledMesh {
        vertices,
        faces,
        face_labels,
        vertex_labels: Some(vertex_labels),
    })
}

/// Extracts the labeled zero level set and maps it to world coordinates.
pub fn extract_mesh<T: Scalar, F: LabeledField<T> + ?Sized>(
    field: &F,
    grid: &GridSpec,
    norm: &Normalization,
) -> Result<LabeledMesh<T>> {
    let mesh = extract_normalized(field, grid)?;
    Ok(mesh.map_vertices(|v| norm.invert(v)))
}

//! Per-iteration training batches: surface samples with labels, uniform
//! off-surface samples, and a thin shell around the surface carrying
//! tangent frames for the curvature term.

use rand::distributions::{Distribution, Uniform};
use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::scalar::Scalar;
use crate::shape_data::LabeledPointCloud;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_manifold: usize,
    pub n_nonmanifold: usize,
    /// shell points per iteration, built from the first `n_shell` manifold samples
    pub n_shell: usize,
    pub shell_min: f64,
    pub shell_max: f64,
    /// fraction of manifold samples whose labels feed the segmentation loss
    pub labeled_fraction: f64,
    /// draw manifold samples with replacement (required when `n_manifold`
    /// exceeds the cloud size)
    pub with_replacement: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_manifold: 20_000,
            n_nonmanifold: 20_000,
            n_shell: 20_000,
            shell_min: 1e-3,
            shell_max: 1e-2,
            labeled_fraction: 1.0,
            with_replacement: false,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_manifold == 0 {
            return Err(Error::invalid("n_manifold must be at least 1"));
        }
        if self.n_shell > self.n_manifold {
            return Err(Error::invalid(format!(
                "n_shell ({}) cannot exceed n_manifold ({})",
                self.n_shell, self.n_manifold
            )));
        }
        if !(self.shell_min > 0.0 && self.shell_min <= self.shell_max && self.shell_max.is_finite()) {
            return Err(Error::invalid("shell offsets need 0 < shell_min <= shell_max"));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::invalid("labeled_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Number of manifold samples that carry a supervised label.
    pub fn n_labeled(&self) -> usize {
        ((self.labeled_fraction * self.n_manifold as f64).ceil() as usize).min(self.n_manifold)
    }
}

/// Right-handed orthonormal frame `(u, v, n)` with `n` the surface normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentFrame<T> {
    pub n: Vec3<T>,
    pub u: Vec3<T>,
    pub v: Vec3<T>,
}

/// Base frame from the coordinate axis least aligned with `n` (lowest index
/// on ties), projected into the tangent plane, then rotated by `angle`
/// about `n`.
pub fn tangent_frame<T: Scalar>(n: Vec3<T>, angle: T) -> Result<TangentFrame<T>> {
    let n = linalg::normalized(n).ok_or_else(|| Error::invalid("tangent frame needs a nonzero normal"))?;
    let mut axis = 0;
    for k in 1..3 {
        if n[k].abs() < n[axis].abs() {
            axis = k;
        }
    }
    let mut a = [T::zero(); 3];
    a[axis] = T::one();
    let u0 = linalg::normalized(linalg::sub(a, linalg::scale(n, linalg::dot(a, n))))
        .expect("least-aligned axis is never parallel to a unit normal");
    let v0 = linalg::cross(n, u0);
    let (s, c) = angle.sin_cos();
    Ok(TangentFrame {
        n,
        u: linalg::add(linalg::scale(u0, c), linalg::scale(v0, s)),
        v: linalg::sub(linalg::scale(v0, c), linalg::scale(u0, s)),
    })
}

/// One iteration's samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch<T> {
    pub manifold: Vec<Vec3<T>>,
    pub manifold_normals: Vec<Vec3<T>>,
    pub labels: Vec<u32>,
    /// the first `n_labeled` manifold samples are supervised
    pub n_labeled: usize,
    pub nonmanifold: Vec<Vec3<T>>,
    pub shell: Vec<Vec3<T>>,
    pub shell_frames: Vec<TangentFrame<T>>,
    /// signed offset of each shell point along its source normal
    pub shell_offsets: Vec<T>,
}

impl<T: Scalar> SampleBatch<T> {
    /// Eikonal query set: manifold followed by non-manifold points.
    pub fn eikonal(&self) -> impl Iterator<Item = &Vec3<T>> {
        self.manifold.iter().chain(&self.nonmanifold)
    }
}

pub fn make_batch<T: Scalar>(cloud: &LabeledPointCloud<T>, config: &SamplingConfig, seed: u64) -> Result<SampleBatch<T>> {
    make_batch_with(cloud, config, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// [`make_batch`] drawing from a caller-owned generator.
pub fn make_batch_with<T: Scalar, R: Rng>(
    cloud: &LabeledPointCloud<T>,
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<SampleBatch<T>> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(Error::invalid("cannot sample from an empty point cloud"));
    }
    let n = config.n_manifold;
    let picks: Vec<usize> = if config.with_replacement {
        let d = Uniform::new(0, cloud.len());
        (0..n).map(|_| d.sample(rng)).collect()
    } else {
        if n > cloud.len() {
            return Err(Error::invalid(format!(
                "n_manifold ({n}) exceeds the cloud size ({}); enable with_replacement",
                cloud.len()
            )));
        }
        index::sample(rng, cloud.len(), n).into_vec()
    };
    let manifold: Vec<_> = picks.iter().map(|&i| cloud.points[i]).collect();
    let manifold_normals: Vec<_> = picks.iter().map(|&i| cloud.normals[i]).collect();
    let labels = picks.iter().map(|&i| cloud.labels[i]).collect();

    let unit = Uniform::new_inclusive(-1.0f64, 1.0);
    let nonmanifold = (0..config.n_nonmanifold)
        .map(|_| std::array::from_fn(|_| T::lit(unit.sample(rng))))
        .collect();

    let magnitude = Uniform::new_inclusive(config.shell_min, config.shell_max);
    let turn = Uniform::new(0.0, std::f64::consts::TAU);
    let mut shell = Vec::with_capacity(config.n_shell);
    let mut shell_frames = Vec::with_capacity(config.n_shell);
    let mut shell_offsets = Vec::with_capacity(config.n_shell);
    for i in 0..config.n_shell {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let delta = T::lit(sign * magnitude.sample(rng));
        let frame = tangent_frame(manifold_normals[i], T::lit(turn.sample(rng)))?;
        shell.push(linalg::add(manifold[i], linalg::scale(frame.n, delta)));
        shell_frames.push(frame);
        shell_offsets.push(delta);
    }
    Ok(SampleBatch {
        manifold,
        manifold_normals,
        labels,
        n_labeled: config.n_labeled(),
        nonmanifold,
        shell,
        shell_frames,
        shell_offsets,
    })
}

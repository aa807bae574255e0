//! Reconstruction and segmentation evaluation: Chamfer distances, normal
//! consistency, F1 at a distance threshold, label transfer, mIoU/accuracy,
//! local segmentation consistency, part counts and summary statistics.

mod kdtree;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Vec3};
use crate::scalar::Scalar;
use crate::shape_data::{sample_surface, LabeledMesh, Normalization};

pub use kdtree::KdTree;
pub use stats::{aggregate, correlations, paired_t_test, pearson, AggregateRow, CorrelationEntry, TTest};

pub const DEFAULT_TAU: f64 = 0.005;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_ANCHORS: usize = 1000;

/// Nearest neighbor of every point of `from` in `to`, as `(index, distance)`.
pub fn nearest_neighbors<T: Scalar>(from: &[Vec3<T>], to: &[Vec3<T>]) -> Result<Vec<(usize, T)>> {
    if to.is_empty() {
        return Err(Error::invalid("nearest-neighbor target cloud is empty"));
    }
    let tree = KdTree::new(to);
    Ok(from
        .iter()
        .map(|&p| {
            let (i, d2) = tree.nearest(p).expect("nonempty tree");
            (i, d2.sqrt())
        })
        .collect())
}

/// Bidirectional nearest-neighbor matches between two clouds.
#[derive(Clone, Debug)]
pub struct Matches<T> {
    pub gt_to_pred: Vec<(usize, T)>,
    pub pred_to_gt: Vec<(usize, T)>,
}

impl<T: Scalar> Matches<T> {
    pub fn new(gt: &[Vec3<T>], pred: &[Vec3<T>]) -> Result<Self> {
        if gt.is_empty() || pred.is_empty() {
            return Err(Error::invalid("metric clouds must be nonempty"));
        }
        Ok(Self {
            gt_to_pred: nearest_neighbors(gt, pred)?,
            pred_to_gt: nearest_neighbors(pred, gt)?,
        })
    }

    pub fn chamfer(&self) -> (T, T) {
        let half = T::lit(0.5);
        let mean = |m: &[(usize, T)], sq: bool| {
            m.iter().map(|&(_, d)| if sq { d * d } else { d }).sum::<T>() / T::lit(m.len() as f64)
        };
        (
            half * (mean(&self.gt_to_pred, false) + mean(&self.pred_to_gt, false)),
            half * (mean(&self.gt_to_pred, true) + mean(&self.pred_to_gt, true)),
        )
    }

    pub fn normal_consistency(&self, gt_normals: &[Vec3<T>], pred_normals: &[Vec3<T>]) -> Result<T> {
        if gt_normals.len() != self.gt_to_pred.len() || pred_normals.len() != self.pred_to_gt.len() {
            return Err(Error::Shape("every point needs a normal".into()));
        }
        let cosine = |a: Vec3<T>, b: Vec3<T>| -> Result<T> {
            let d = norm(a) * norm(b);
            if !(d > T::zero()) {
                return Err(Error::invalid("zero-length normal"));
            }
            Ok((dot(a, b) / d).abs())
        };
        let mut gt_sum = T::zero();
        for (i, &(j, _)) in self.gt_to_pred.iter().enumerate() {
            gt_sum += cosine(gt_normals[i], pred_normals[j])?;
        }
        let mut pred_sum = T::zero();
        for (j, &(i, _)) in self.pred_to_gt.iter().enumerate() {
            pred_sum += cosine(pred_normals[j], gt_normals[i])?;
        }
        let half = T::lit(0.5);
        Ok(half * (gt_sum / T::lit(gt_normals.len() as f64) + pred_sum / T::lit(pred_normals.len() as f64)))
    }

    pub fn f1(&self, tau: T) -> Result<T> {
        if !(tau > T::zero()) {
            return Err(Error::invalid("F1 threshold must be positive"));
        }
        let frac = |m: &[(usize, T)]| T::lit(m.iter().filter(|&&(_, d)| d < tau).count() as f64 / m.len() as f64);
        let precision = frac(&self.pred_to_gt);
        let recall = frac(&self.gt_to_pred);
        if precision + recall == T::zero() {
            return Ok(T::zero());
        }
        Ok(T::lit(2.0) * precision * recall / (precision + recall))
    }
}

/// Symmetric mean nearest-neighbor distance and squared distance.
pub fn chamfer<T: Scalar>(gt: &[Vec3<T>], pred: &[Vec3<T>]) -> Result<(T, T)> {
    Ok(Matches::new(gt, pred)?.chamfer())
}

/// Mean absolute cosine between matched normals, averaged over both directions.
pub fn normal_consistency<T: Scalar>(
    gt: &[Vec3<T>],
    gt_normals: &[Vec3<T>],
    pred: &[Vec3<T>],
    pred_normals: &[Vec3<T>],
) -> Result<T> {
    Matches::new(gt, pred)?.normal_consistency(gt_normals, pred_normals)
}

/// Harmonic mean of precision (pred within `tau` of gt) and recall.
pub fn f1_micro<T: Scalar>(gt: &[Vec3<T>], pred: &[Vec3<T>], tau: T) -> Result<T> {
    Matches::new(gt, pred)?.f1(tau)
}

/// Label of each `pred` point's nearest ground-truth point.
pub fn transfer_labels<T: Scalar>(gt: &[Vec3<T>], gt_labels: &[u32], pred: &[Vec3<T>]) -> Result<Vec<u32>> {
    if gt.len() != gt_labels.len() {
        return Err(Error::Shape(format!("{} points, {} labels", gt.len(), gt_labels.len())));
    }
    Ok(nearest_neighbors(pred, gt)?.into_iter().map(|(i, _)| gt_labels[i]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub miou: f64,
    pub accuracy: f64,
    pub per_part_iou: BTreeMap<u32, f64>,
}

/// Per-class IoU over point indices, averaged over classes present in the
/// reference; accuracy is the fraction of matching labels.
pub fn miou_accuracy(reference: &[u32], predicted: &[u32], k: u32) -> Result<SegmentationScores> {
    if reference.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} reference labels, {} predicted",
            reference.len(),
            predicted.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("cannot score an empty labeling"));
    }
    if let Some(&bad) = reference.iter().chain(predicted).find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let k = k as usize;
    let mut inter = vec![0usize; k];
    let mut ref_count = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    for (&r, &p) in reference.iter().zip(predicted) {
        ref_count[r as usize] += 1;
        pred_count[p as usize] += 1;
        if r == p {
            inter[r as usize] += 1;
        }
    }
    let per_part_iou: BTreeMap<u32, f64> = (0..k)
        .filter(|&c| ref_count[c] > 0)
        .map(|c| (c as u32, inter[c] as f64 / (ref_count[c] + pred_count[c] - inter[c]) as f64))
        .collect();
    let miou = per_part_iou.values().sum::<f64>() / per_part_iou.len() as f64;
    let accuracy = inter.iter().sum::<usize>() as f64 / reference.len() as f64;
    Ok(SegmentationScores {
        miou,
        accuracy,
        per_part_iou,
    })
}

/// Mean over `min(m_cap, n)` seeded anchors of the fraction of each anchor's
/// `k` nearest neighbors (the anchor itself excluded) sharing its label.
pub fn consistency<T: Scalar>(points: &[Vec3<T>], labels: &[u32], k: usize, m_cap: usize, seed: u64) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Shape(format!("{} points, {} labels", points.len(), labels.len())));
    }
    if k == 0 || points.len() <= k {
        return Err(Error::invalid(format!(
            "consistency needs more than k = {k} points, got {}",
            points.len()
        )));
    }
    if m_cap == 0 {
        return Err(Error::invalid("consistency needs at least one anchor"));
    }
    let m = m_cap.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = rand::seq::index::sample(&mut rng, points.len(), m).into_vec();
    anchors.sort_unstable();
    let tree = KdTree::new(points);
    let total: f64 = anchors
        .iter()
        .map(|&a| {
            let same = tree
                .knn(points[a], k, Some(a))
                .iter()
                .filter(|&&(j, _)| labels[j] == labels[a])
                .count();
            same as f64 / k as f64
        })
        .sum();
    Ok(total / m as f64)
}

/// Number of distinct labels present.
pub fn part_count(labels: &[u32]) -> usize {
    labels.iter().collect::<BTreeSet<_>>().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// surface samples drawn from each mesh
    pub n_samples: usize,
    pub tau: f64,
    pub k: usize,
    pub anchors: usize,
    pub seed: u64,
    /// map both meshes into the ground truth's normalized frame first
    pub normalize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 30_000,
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
            anchors: DEFAULT_ANCHORS,
            seed: 0,
            normalize: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("tau must be positive"));
        }
        if self.k == 0 || self.anchors == 0 {
            return Err(Error::invalid("k and anchors must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub nc: f64,
    pub f1: f64,
    pub miou: f64,
    pub accuracy: f64,
    pub consistency: f64,
    pub parts_pred: usize,
    pub parts_gt: usize,
    pub per_part_iou: BTreeMap<u32, f64>,
    pub tau: f64,
    pub n_samples: usize,
}

impl ShapeMetrics {
    /// Scalar metrics by name, in report order.
    pub fn scalars(&self) -> [(&'static str, f64); 9] {
        [
            ("cd_l1", self.cd_l1),
            ("cd_l2", self.cd_l2),
            ("nc", self.nc),
            ("f1", self.f1),
            ("miou", self.miou),
            ("accuracy", self.accuracy),
            ("consistency", self.consistency),
            ("parts_pred", self.parts_pred as f64),
            ("parts_gt", self.parts_gt as f64),
        ]
    }
}

/// Samples both meshes at equal density and runs every metric. Reference
/// labels for the predicted samples come from their nearest ground-truth
/// sample; part counts are taken over the samples.
pub fn evaluate_shape<T: Scalar>(gt: &LabeledMesh<T>, pred: &LabeledMesh<T>, cfg: &EvalConfig) -> Result<ShapeMetrics> {
    cfg.validate()?;
    if gt.faces.is_empty() || pred.faces.is_empty() {
        return Err(Error::invalid("evaluation meshes must have faces"));
    }
    let (gt, pred) = if cfg.normalize {
        let norm = Normalization::fit(&gt.vertices)?;
        (gt.map_vertices(|p| norm.apply(p)), pred.map_vertices(|p| norm.apply(p)))
    } else {
        (gt.clone(), pred.clone())
    };
    let gs = sample_surface(&gt, cfg.n_samples, cfg.seed)?;
    // one seed for both, so evaluating a mesh against itself is exact
    let ps = sample_surface(&pred, cfg.n_samples, cfg.seed)?;
    let matches = Matches::new(&gs.points, &ps.points)?;
    let (cd_l1, cd_l2) = matches.chamfer();
    let nc = matches.normal_consistency(&gs.normals, &ps.normals)?;
    let f1 = matches.f1(T::lit(cfg.tau))?;
    let reference: Vec<u32> = matches.pred_to_gt.iter().map(|&(i, _)| gs.labels[i]).collect();
    let k = reference.iter().chain(&ps.labels).max().map_or(1, |&m| m + 1);
    let seg = miou_accuracy(&reference, &ps.labels, k)?;
    let consistency = consistency(&ps.points, &ps.labels, cfg.k, cfg.anchors, cfg.seed.wrapping_add(2))?;
    Ok(ShapeMetrics {
        cd_l1: cd_l1.to_f64_lossy(),
        cd_l2: cd_l2.to_f64_lossy(),
        nc: nc.to_f64_lossy(),
        f1: f1.to_f64_lossy(),
        miou: seg.miou,
        accuracy: seg.accuracy,
        consistency,
        parts_pred: part_count(&ps.labels),
        parts_gt: part_count(&gs.labels),
        per_part_iou: seg.per_part_iou,
        tau: cfg.tau,
        n_samples: cfg.n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist2;
    use crate::shape_data::{generate_synthetic, Primitive, PrimitiveShape, SyntheticShapeSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()
    }

    /// O(n^2) nearest neighbor with lowest-index ties.
    fn brute_nn(q: Vec3<f64>, to: &[Vec3<f64>]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, &p) in to.iter().enumerate() {
            let d = dist2(q, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let (a, b) = (cloud(500, 1), cloud(500, 2));
        let ab: Vec<f64> = a.iter().map(|&p| brute_nn(p, &b).1).collect();
        let ba: Vec<f64> = b.iter().map(|&p| brute_nn(p, &a).1).collect();
        let l1 = 0.5 * (ab.iter().sum::<f64>() / 500.0 + ba.iter().sum::<f64>() / 500.0);
        let l2 = 0.5 * (ab.iter().map(|d| d * d).sum::<f64>() / 500.0 + ba.iter().map(|d| d * d).sum::<f64>() / 500.0);
        let (c1, c2) = chamfer(&a, &b).unwrap();
        assert_eq!(c1, l1);
        assert_eq!(c2, l2);
        let (s1, s2) = chamfer(&b, &a).unwrap();
        assert_eq!((s1, s2), (c1, c2));
        let max_nn = ab.iter().chain(&ba).cloned().fold(0.0, f64::max);
        assert!(c2 <= c1 * max_nn);
    }

    #[test]
    fn chamfer_closed_forms() {
        let a = cloud(50, 3);
        assert_eq!(chamfer(&a, &a).unwrap(), (0.0, 0.0));
        let (l1, l2): (f64, f64) = chamfer(&[[0.0, 0.0, 0.0]], &[[0.1, 0.0, 0.0]]).unwrap();
        assert!((l1 - 0.1).abs() < 1e-15 && (l2 - 0.01).abs() < 1e-15);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn normal_consistency_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plane: Vec<Vec3<f64>> = (0..500).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]).collect();
        let up = vec![[0.0, 0.0, 1.0]; 500];
        let noisy: Vec<Vec3<f64>> = plane.iter().map(|p| [p[0], p[1], rng.gen_range(-0.01..0.01)]).collect();
        let jitter: Vec<Vec3<f64>> = (0..500)
            .map(|_| {
                let n = [rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), 1.0];
                crate::linalg::normalized(n).unwrap()
            })
            .collect();
        let cos = |a: Vec3<f64>, b: Vec3<f64>| (dot(a, b) / (norm(a) * norm(b))).abs();
        let forward: f64 = (0..500).map(|i| cos(up[i], jitter[brute_nn(plane[i], &noisy).0])).sum::<f64>() / 500.0;
        let backward: f64 = (0..500).map(|j| cos(jitter[j], up[brute_nn(noisy[j], &plane).0])).sum::<f64>() / 500.0;
        let nc = normal_consistency(&plane, &up, &noisy, &jitter).unwrap();
        assert_eq!(nc, 0.5 * (forward + backward));
        assert!(nc > 0.99 && nc < 1.0);

        assert_eq!(normal_consistency(&plane, &up, &plane, &up).unwrap(), 1.0);
        let down = vec![[0.0, 0.0, -1.0]; 500];
        assert_eq!(normal_consistency(&plane, &up, &plane, &down).unwrap(), 1.0);
        assert!(normal_consistency(&plane, &up[..10], &plane, &down).is_err());
    }

    #[test]
    fn f1_fixtures() {
        let tau = 0.01;
        let a = cloud(500, 5);
        let b = cloud(500, 6);
        assert_eq!(f1_micro(&a, &a, tau).unwrap(), 1.0);
        let far: Vec<Vec3<f64>> = a.iter().map(|p| [p[0] + 10.0, p[1], p[2]]).collect();
        assert_eq!(f1_micro(&a, &far, tau).unwrap(), 0.0);
        // half the prediction is the ground truth, the other half far away
        let gt = cloud(100, 7);
        let mut pred = gt.clone();
        pred.extend(gt.iter().map(|p| [p[0] + 10.0, p[1], p[2]]));
        let f = f1_micro(&gt, &pred, tau).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        // brute force on random clouds
        let t = 0.1;
        let p = b.iter().filter(|&&q| brute_nn(q, &a).1 < t).count() as f64 / 500.0;
        let r = a.iter().filter(|&&q| brute_nn(q, &b).1 < t).count() as f64 / 500.0;
        assert_eq!(f1_micro(&a, &b, t).unwrap(), 2.0 * p * r / (p + r));
        assert!(f1_micro(&a, &b, 0.0).is_err());
    }

    #[test]
    fn label_transfer() {
        let a = cloud(500, 8);
        let labels: Vec<u32> = (0..500).map(|i| (i % 7) as u32).collect();
        assert_eq!(transfer_labels(&a, &labels, &a).unwrap(), labels);
        let b = cloud(500, 9);
        let brute: Vec<u32> = b.iter().map(|&q| labels[brute_nn(q, &a).0]).collect();
        assert_eq!(transfer_labels(&a, &labels, &b).unwrap(), brute);
        let clusters = vec![[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [5.0, 0.0, 0.0], [5.01, 0.0, 0.0]];
        let near_one = vec![[4.9, 0.1, 0.0], [5.2, 0.0, -0.1]];
        assert_eq!(transfer_labels(&clusters, &[0, 0, 1, 1], &near_one).unwrap(), vec![1, 1]);
    }

    #[test]
    fn miou_fixtures() {
        let s = miou_accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((s.per_part_iou[&0] - 0.5).abs() < 1e-15);
        assert!((s.per_part_iou[&1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(s.accuracy, 0.75);
        let same = miou_accuracy(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((same.miou, same.accuracy), (1.0, 1.0));
        let disjoint = miou_accuracy(&[0; 4], &[1; 4], 2).unwrap();
        assert_eq!((disjoint.miou, disjoint.accuracy), (0.0, 0.0));
        assert!(miou_accuracy(&[0, 1], &[0], 2).is_err());
        assert!(miou_accuracy(&[0, 2], &[0, 1], 2).is_err());
    }

    proptest! {
        #[test]
        fn miou_invariant_to_joint_relabeling(
            pairs in prop::collection::vec((0u32..4, 0u32..4), 1..60),
            perm in Just(vec![0u32, 1, 2, 3]).prop_shuffle(),
        ) {
            let (r, p): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let a = miou_accuracy(&r, &p, 4).unwrap();
            let rp: Vec<u32> = r.iter().map(|&l| perm[l as usize]).collect();
            let pp: Vec<u32> = p.iter().map(|&l| perm[l as usize]).collect();
            let b = miou_accuracy(&rp, &pp, 4).unwrap();
            prop_assert!((a.miou - b.miou).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }

        #[test]
        fn consistency_invariant_to_palette(
            labels in prop::collection::vec(0u32..5, 60),
            perm in Just(vec![0u32, 1, 2, 3, 4]).prop_shuffle(),
            seed in 0u64..50,
        ) {
            let pts = cloud(60, seed);
            let a = consistency(&pts, &labels, 10, 1000, seed).unwrap();
            let relabeled: Vec<u32> = labels.iter().map(|&l| perm[l as usize]).collect();
            prop_assert_eq!(a, consistency(&pts, &relabeled, 10, 1000, seed).unwrap());
        }
    }

    #[test]
    fn consistency_fixtures() {
        let pts = cloud(300, 10);
        assert_eq!(consistency(&pts, &[3; 300], 10, 1000, 0).unwrap(), 1.0);
        let distinct: Vec<u32> = (0..300).collect();
        assert_eq!(consistency(&pts, &distinct, 10, 1000, 0).unwrap(), 0.0);
        // two far-apart clusters with pure labels
        let mut two = cloud(100, 11);
        two.extend(cloud(100, 12).iter().map(|p| [p[0] + 50.0, p[1], p[2]]));
        let labels: Vec<u32> = (0..200).map(|i| u32::from(i >= 100)).collect();
        assert_eq!(consistency(&two, &labels, 10, 1000, 1).unwrap(), 1.0);
        let swapped: Vec<u32> = labels.iter().map(|&l| 1 - l).collect();
        assert_eq!(consistency(&two, &swapped, 10, 1000, 1).unwrap(), 1.0);
        assert!(consistency(&pts[..10], &[0; 10], 10, 1000, 0).is_err());
    }

    #[test]
    fn part_counts() {
        assert_eq!(part_count(&[0, 0, 3]), 2);
        assert_eq!(part_count(&[]), 0);
        let many: Vec<u32> = (0..18).chain(0..18).collect();
        assert_eq!(part_count(&many), 18);
    }

    fn two_part_mesh() -> LabeledMesh<f64> {
        let spec = SyntheticShapeSpec {
            primitives: vec![
                Primitive {
                    shape: PrimitiveShape::Sphere {
                        center: [0.0, 0.0, 0.4],
                        radius: 0.4,
                    },
                    label: 0,
                },
                Primitive {
                    shape: PrimitiveShape::Cylinder {
                        center: [0.0, 0.0, -0.1],
                        axis: [0.0, 0.0, 1.0],
                        radius: 0.4,
                        half_height: 0.5,
                    },
                    label: 1,
                },
            ],
        };
        generate_synthetic(&spec, 32, 0).unwrap()
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let mesh = two_part_mesh();
        let cfg = EvalConfig {
            n_samples: 3000,
            ..EvalConfig::default()
        };
        let m = evaluate_shape(&mesh, &mesh, &cfg).unwrap();
        assert_eq!((m.cd_l1, m.cd_l2, m.nc, m.f1, m.miou, m.accuracy), (0.0, 0.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!((m.parts_gt, m.parts_pred), (2, 2));
        let again = evaluate_shape(&mesh, &mesh, &cfg).unwrap();
        assert_eq!(m, again);
    }
}

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledMesh, LabeledPointCloud};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Area-uniform surface samples. Each point carries its source face's label
/// and unit face normal.
pub fn sample_surface<T: Scalar>(mesh: &LabeledMesh<T>, n: usize, seed: u64) -> Result<LabeledPointCloud<T>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    mesh.validate()?;
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut normals = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0f64;
    for f in 0..mesh.faces.len() {
        let c = mesh.face_cross(f);
        let area = 0.5 * linalg::norm(c).to_f64_lossy();
        let unit = linalg::normalized(c);
        if unit.is_some() && area.is_finite() {
            total += area;
        }
        cumulative.push(total);
        normals.push(unit);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has no face with nonzero area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut out_normals = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        // first face whose cumulative area exceeds r; zero-area faces are never chosen
        let mut f = cumulative.partition_point(|&c| c <= r).min(mesh.faces.len() - 1);
        while normals[f].is_none() {
            f -= 1;
        }
        let (u, v): (f64, f64) = (rng.gen(), rng.gen());
        let su = u.sqrt();
        let (wa, wb, wc) = (1.0 - su, su * (1.0 - v), su * v);
        let [a, b, c] = mesh.triangle(f);
        let p = [
            a[0] * T::lit(wa) + b[0] * T::lit(wb) + c[0] * T::lit(wc),
            a[1] * T::lit(wa) + b[1] * T::lit(wb) + c[1] * T::lit(wc),
            a[2] * T::lit(wa) + b[2] * T::lit(wb) + c[2] * T::lit(wc),
        ];
        points.push(p);
        out_normals.push(normals[f].expect("nonzero-area face"));
        labels.push(mesh.face_labels[f]);
    }
    let k = mesh.num_parts().max(1);
    LabeledPointCloud::new(points, out_normals, labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn square(z: f64, label: u32, offset: u32) -> (Vec<[f64; 3]>, Vec<[u32; 3]>, Vec<u32>) {
        (
            vec![[0.0, 0.0, z], [1.0, 0.0, z], [1.0, 1.0, z], [0.0, 1.0, z]],
            vec![[offset, offset + 1, offset + 2], [offset, offset + 2, offset + 3]],
            vec![label; 2],
        )
    }

    #[test]
    fn unit_square_single_label() {
        let (v, f, l) = square(0.0, 0, 0);
        let mesh = LabeledMesh::new(v, f, l).unwrap();
        let cloud = sample_surface(&mesh, 1000, 1).unwrap();
        assert_eq!(cloud.len(), 1000);
        assert!(cloud.labels.iter().all(|&l| l == 0));
        assert!(cloud.normals.iter().all(|&n| n == [0.0, 0.0, 1.0]));
        assert!(cloud
            .points
            .iter()
            .all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) && p[2] == 0.0));
    }

    fn two_squares(scale_second: f64) -> LabeledMesh<f64> {
        let (mut v, mut f, mut l) = square(0.0, 0, 0);
        let (v2, f2, l2) = square(1.0, 1, 4);
        v.extend(v2.into_iter().map(|p| [p[0] * scale_second, p[1], p[2]]));
        f.extend(f2);
        l.extend(l2);
        LabeledMesh::new(v, f, l).unwrap()
    }

    #[test]
    fn parallel_squares_split_evenly() {
        let cloud = sample_surface(&two_squares(1.0), 10_000, 7).unwrap();
        let frac = cloud.labels.iter().filter(|&&l| l == 0).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn label_histogram_follows_area_chi_square() {
        // areas 1 and 3 -> expected fractions 1/4 and 3/4
        let n = 100_000;
        let cloud = sample_surface(&two_squares(3.0), n, 11).unwrap();
        let observed = [
            cloud.labels.iter().filter(|&&l| l == 0).count() as f64,
            cloud.labels.iter().filter(|&&l| l == 1).count() as f64,
        ];
        let expected = [0.25 * n as f64, 0.75 * n as f64];
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn exact_count_and_determinism() {
        let mesh = two_squares(2.0);
        let a = sample_surface(&mesh, 30_000, 3).unwrap();
        let b = sample_surface(&mesh, 30_000, 3).unwrap();
        assert_eq!(a.len(), 30_000);
        assert_eq!(a, b);
        assert_ne!(a, sample_surface(&mesh, 30_000, 4).unwrap());
    }

    #[test]
    fn degenerate_meshes_rejected() {
        let mesh = LabeledMesh::new(vec![[0.0f64; 3]; 3], vec![[0, 1, 2]], vec![0]).unwrap();
        assert!(sample_surface(&mesh, 10, 0).is_err());
        assert!(sample_surface(&two_squares(1.0), 0, 0).is_err());
    }
}

//! Recording the network onto a [`Tape`] for training.

use super::{Activation, FieldNetwork, HeadVariant};
use crate::autodiff::{Tape, Var};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Tape handles of every parameter, in [`FieldNetwork::parameters`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    fn dense(&self, layer: usize) -> (Var, Var) {
        (self.vars[2 * layer], self.vars[2 * layer + 1])
    }
}

/// Trunk outputs for one batch.
#[derive(Clone, Copy, Debug)]
pub struct TrunkRecord {
    /// `rows x 1` signed distances
    pub sdf: Var,
    /// tapped features, `rows x trunk_width`
    pub features: Var,
    /// `d f / d x_j` for each coordinate, `rows x 1` each, differentiable
    /// with respect to the parameters
    pub gradient: Option<[Var; 3]>,
}

impl<T: Scalar> FieldNetwork<T> {
    /// Pushes every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.parameters().into_iter().map(|p| tape.param(p.clone())).collect(),
        }
    }

    /// Records the trunk and SDF head for the `rows x 3` input `x`. With
    /// `with_gradient`, the three coordinate tangents are carried alongside
    /// so `grad_x f` is available as differentiable nodes.
    pub fn record_trunk(&self, tape: &mut Tape<T>, params: &BoundParams, x: Var, with_gradient: bool) -> TrunkRecord {
        let rows = tape.value(x).rows();
        let mut h = x;
        let mut features = x;
        let mut tangents: Vec<Var> = Vec::new();
        for i in 0..self.trunk.len() {
            let (w, b) = params.dense(i);
            let omega = T::lit(if i == 0 { self.shape.omega0 } else { self.shape.omega });
            let z = tape.linear(h, w, b);
            if with_gradient {
                let (s, c) = tape.sin_cos(z, omega);
                tangents = if i == 0 {
                    (0..3)
                        .map(|j| {
                            let mut e = Matrix::zeros(rows, 3);
                            (0..rows).for_each(|r| e.set(r, j, T::one()));
                            let e = tape.constant(e);
                            let m = tape.matmul_t(e, w);
                            tape.mul(c, m)
                        })
                        .collect()
                } else {
                    tangents
                        .iter()
                        .map(|&t| {
                            let m = tape.matmul_t(t, w);
                            tape.mul(c, m)
                        })
                        .collect()
                };
                h = s;
            } else {
                h = tape.sin(z, omega);
            }
            if i == self.shape.feature_tap {
                features = h;
            }
        }
        let (w, b) = params.dense(self.trunk.len());
        let sdf = tape.linear(h, w, b);
        let gradient = with_gradient.then(|| {
            let g: Vec<Var> = tangents.iter().map(|&t| tape.matmul_t(t, w)).collect();
            [g[0], g[1], g[2]]
        });
        TrunkRecord {
            sdf,
            features,
            gradient,
        }
    }

    /// Records the segmentation head. `mask` is the dropout mask for the
    /// first layer (training only).
    pub fn record_seg(&self, tape: &mut Tape<T>, params: &BoundParams, features: Var, x: Var, mask: Option<Matrix<T>>) -> Var {
        let first = self.trunk.len() + 1;
        let acts = self.seg_activations();
        let mut h = tape.hconcat(features, x);
        let mut second = None;
        let mut mask = mask;
        for (i, act) in acts.iter().enumerate() {
            let (w, b) = params.dense(first + i);
            let input = if self.shape.head == HeadVariant::DeepSkip && i == 1 {
                tape.hconcat(h, x)
            } else {
                h
            };
            let mut z = tape.linear(input, w, b);
            if let (true, 3, Some(h1)) = (self.seg_skip.is_some(), i, second) {
                let s = *params.vars.last().expect("skip parameter");
                let skip = tape.matmul_t(h1, s);
                z = tape.add(z, skip);
            }
            h = match act {
                Activation::Sine(omega) => tape.sin(z, T::lit(*omega)),
                Activation::Relu => tape.relu(z),
                Activation::Identity => z,
            };
            if i == 0 {
                if let Some(m) = mask.take() {
                    h = tape.mul_const(h, m);
                }
            }
            if i == 1 {
                second = Some(h);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::super::NetworkShape;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn tape_matches_inference() {
        for head in HeadVariant::ALL {
            let shape = NetworkShape {
                trunk_width: 24,
                seg_widths: [16, 8],
                head,
                num_classes: 3,
                ..NetworkShape::default()
            };
            let net = FieldNetwork::<f64>::init(shape, 5).unwrap();
            let pts = points(9);
            let mut tape = Tape::new();
            let params = net.bind(&mut tape);
            let x = tape.constant(Matrix::from_points(&pts));
            let rec = net.record_trunk(&mut tape, &params, x, true);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mask = net.dropout_mask(pts.len(), &mut rng);
            let logits = net.record_seg(&mut tape, &params, rec.features, x, Some(mask));

            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let b = net.forward_batch(&pts, Some(&mut rng));
            let close = |a: &[f64], e: &[f64]| a.iter().zip(e).all(|(a, e)| (a - e).abs() <= 1e-14 * (1.0 + e.abs()));
            assert!(close(tape.value(rec.sdf).as_slice(), &b.sdf));
            assert!(close(tape.value(rec.features).as_slice(), b.features.as_slice()));
            assert!(close(tape.value(logits).as_slice(), b.logits.as_slice()));
            let (_, grads) = net.sdf_and_gradient_batch(&pts);
            let g = rec.gradient.unwrap();
            for (r, gr) in grads.iter().enumerate() {
                for j in 0..3 {
                    assert_eq!(tape.value(g[j]).get(r, 0), gr[j]);
                }
            }
        }
    }

    #[test]
    fn parameter_gradient_of_input_gradient_matches_differences() {
        let shape = NetworkShape {
            trunk_width: 8,
            seg_widths: [6, 4],
            num_classes: 2,
            ..NetworkShape::default()
        };
        let net = FieldNetwork::<f64>::init(shape, 2).unwrap();
        let pts = points(4);
        // loss = sum_j sum_rows (df/dx_j)^2
        let loss = |n: &FieldNetwork<f64>| -> f64 {
            let (_, g) = n.sdf_and_gradient_batch(&pts);
            g.iter().flat_map(|v| v.iter()).map(|v| v * v).sum()
        };
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let x = tape.constant(Matrix::from_points(&pts));
        let rec = net.record_trunk(&mut tape, &params, x, true);
        let g = rec.gradient.unwrap();
        let sq: Vec<Var> = g.iter().map(|&v| tape.square(v)).collect();
        let s01 = tape.add(sq[0], sq[1]);
        let s = tape.add(s01, sq[2]);
        let root = tape.sum(s);
        let grads = tape.backward(root);
        let h = 1e-6;
        for (pi, &v) in params.vars.iter().enumerate().take(2 * net.trunk.len() + 2) {
            let shape = net.parameters()[pi].shape();
            // the SDF bias does not reach the input gradient
            let analytic = grads.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
            for idx in (0..analytic.len()).step_by(7) {
                let mut plus = net.clone();
                plus.parameters_mut()[pi].as_mut_slice()[idx] += h;
                let mut minus = net.clone();
                minus.parameters_mut()[pi].as_mut_slice()[idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic.as_slice()[idx];
                assert!((a - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "param {pi}[{idx}]: {a} vs {fd}");
            }
        }
    }
}

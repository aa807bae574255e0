//! Per-shape fitting with Adam.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_net::{FieldNetwork, NetworkShape};
use crate::linalg::Matrix;
use crate::losses::{objective, LossReport, LossWeights};
use crate::sampler::{make_batch_with, SamplingConfig};
use crate::scalar::Scalar;
use crate::shape_data::LabeledPointCloud;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// logging only: iterations are split evenly into this many epochs
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub sampling: SamplingConfig,
    pub network: NetworkShape,
    /// rows per recorded chunk; bounds memory, does not change the math
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            iterations: 10_000,
            epochs: 10,
            seed: 0,
            weights: LossWeights::default(),
            sampling: SamplingConfig::default(),
            network: NetworkShape::default(),
            chunk_size: 2048,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.chunk_size == 0 {
            return Err(Error::invalid("chunk size must be at least 1"));
        }
        self.weights.validate()?;
        self.sampling.validate()?;
        self.network.validate()
    }

    pub fn epoch_of(&self, iteration: usize) -> usize {
        (iteration * self.epochs / self.iterations.max(1)).min(self.epochs - 1)
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Self {
            m,
            v,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_network(net: &FieldNetwork<T>) -> Self {
        Self::new(net.parameters().iter().map(|p| p.shape()))
    }
}

pub fn adam_step<T: Scalar>(params: &mut [&mut Matrix<T>], grads: &[Matrix<T>], state: &mut AdamState<T>, lr: T) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!(
                "tensor {i}: parameter {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::one() - T::lit(state.beta1.powf(state.step as f64));
    let c2 = T::one() - T::lit(state.beta2.powf(state.step as f64));
    let eps = T::lit(state.eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &gi), mi), vi) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossReport,
    pub wall_time_s: f64,
}

/// Fits with default observation (nothing streamed).
pub fn fit<T: Scalar>(cloud: &LabeledPointCloud<T>, config: &TrainConfig) -> Result<(FieldNetwork<T>, Vec<LogEntry>)> {
    fit_with(cloud, config, |_, _| Ok(()))
}

/// Fits a fresh network to `cloud`. `observe` sees every log entry with the
/// parameters after that iteration's update, e.g. to stream the log or
/// write checkpoints.
pub fn fit_with<T: Scalar>(
    cloud: &LabeledPointCloud<T>,
    config: &TrainConfig,
    mut observe: impl FnMut(&LogEntry, &FieldNetwork<T>) -> Result<()>,
) -> Result<(FieldNetwork<T>, Vec<LogEntry>)> {
    config.validate()?;
    cloud.validate()?;
    if cloud.num_parts > config.network.num_classes {
        return Err(Error::invalid(format!(
            "cloud has {} parts but the head predicts {} classes",
            cloud.num_parts, config.network.num_classes
        )));
    }
    let outside = cloud
        .points
        .iter()
        .any(|p| p.iter().any(|c| !(c.abs() <= T::one())));
    if outside {
        return Err(Error::invalid("training cloud must be normalized into [-1, 1]^3"));
    }
    if config.sampling.n_labeled() == 0 {
        log::warn!("no labeled samples per iteration; the segmentation term is disabled");
    }
    let mut net = FieldNetwork::<T>::init(config.network.clone(), config.seed)?;
    let mut adam = AdamState::for_network(&net);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(2);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(3);
    let lr = T::lit(config.learning_rate);
    let start = Instant::now();
    let mut log = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let batch = make_batch_with(cloud, &config.sampling, &mut batch_rng)?;
        let obj = objective(&net, &batch, &config.weights, config.chunk_size, Some(&mut dropout_rng))?;
        if let Some((term, _)) = obj.report.terms().into_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { term, iteration });
        }
        if obj.gradients.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: "gradient",
                iteration,
            });
        }
        adam_step(&mut net.parameters_mut(), &obj.gradients, &mut adam, lr)?;
        let entry = LogEntry {
            iteration,
            epoch: config.epoch_of(iteration),
            loss: obj.report,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        observe(&entry, &net)?;
        log.push(entry);
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_net::HeadVariant;
    use crate::linalg;
    use rand::Rng;

    /// Straightforward per-scalar Adam used as the reference.
    fn reference_adam(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: i32, lr: f64) {
        for i in 0..w.len() {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            w[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }

    #[test]
    fn matches_reference_over_random_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Matrix::from_vec(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut w = p.as_slice().to_vec();
        let (mut m, mut v) = (vec![0.0; 6], vec![0.0; 6]);
        let mut state = AdamState::<f64>::new([(2, 3)]);
        for t in 1..=100 {
            let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            adam_step(&mut [&mut p], &[Matrix::from_vec(2, 3, g.clone())], &mut state, 1e-2).unwrap();
            reference_adam(&mut w, &g, &mut m, &mut v, t, 1e-2);
        }
        assert_eq!(state.step, 100);
        for (a, b) in p.as_slice().iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_and_first_step() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
        let mut state = AdamState::<f64>::new([(1, 3)]);
        adam_step(&mut [&mut p], &[Matrix::from_vec(1, 3, vec![0.3, -4.0, 1e-3])], &mut state, 0.1).unwrap();
        let expect = [1.0 - 0.1, -2.0 + 0.1, 0.5 - 0.1];
        for (a, e) in p.as_slice().iter().zip(expect) {
            assert!((a - e).abs() < 1e-6);
        }
        let before = p.clone();
        let m_before = state.m[0].max_abs();
        adam_step(&mut [&mut p], &[Matrix::zeros(1, 3)], &mut state, 0.1).unwrap();
        assert!(state.m[0].max_abs() < m_before);
        // zero gradient with nonzero moments still moves; from a fresh state nothing moves
        let mut fresh = AdamState::<f64>::new([(1, 3)]);
        let mut q = before.clone();
        adam_step(&mut [&mut q], &[Matrix::zeros(1, 3)], &mut fresh, 0.1).unwrap();
        assert_eq!(q, before);
        assert!(adam_step(&mut [&mut q], &[Matrix::zeros(2, 3)], &mut fresh, 0.1).is_err());
    }

    #[test]
    fn quadratic_converges() {
        let mut w = Matrix::from_vec(1, 1, vec![0.0f64]);
        let mut state = AdamState::new([(1, 1)]);
        for _ in 0..5000 {
            let g = 2.0 * (w.get(0, 0) - 3.0);
            adam_step(&mut [&mut w], &[Matrix::from_vec(1, 1, vec![g])], &mut state, 1e-2).unwrap();
        }
        assert!((w.get(0, 0) - 3.0).abs() < 1e-3, "{}", w.get(0, 0));
    }

    fn tiny_cloud(k: u32) -> LabeledPointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        let mut normals = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..200 {
            let d = linalg::normalized(std::array::from_fn(|_| rng.gen_range(-1.0f64..1.0))).unwrap();
            pts.push(linalg::scale(d, 0.6));
            normals.push(d);
            labels.push(u32::from(d[2] > 0.0) % k);
        }
        LabeledPointCloud::new(pts, normals, labels, k).unwrap()
    }

    fn tiny_config(head: HeadVariant) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            iterations: 6,
            seed: 3,
            sampling: SamplingConfig {
                n_manifold: 32,
                n_nonmanifold: 32,
                n_shell: 16,
                ..SamplingConfig::default()
            },
            network: NetworkShape {
                trunk_width: 16,
                seg_widths: [12, 8],
                head,
                num_classes: 2,
                ..NetworkShape::default()
            },
            chunk_size: 24,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let cfg = TrainConfig {
            iterations: 0,
            ..tiny_config(HeadVariant::Relu)
        };
        let (net, log) = fit(&tiny_cloud(2), &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(net, FieldNetwork::init(cfg.network.clone(), cfg.seed).unwrap());
    }

    #[test]
    fn fitting_is_bitwise_reproducible() {
        let cfg = tiny_config(HeadVariant::Hybrid);
        let (a, la) = fit(&tiny_cloud(2), &cfg).unwrap();
        let (b, lb) = fit(&tiny_cloud(2), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.len(), 6);
        for (x, y) in la.iter().zip(&lb) {
            assert_eq!(x.loss, y.loss);
        }
        assert_eq!(la.last().unwrap().epoch, 8);
    }

    #[test]
    fn reconstruction_is_neutral_to_the_head_without_segmentation_loss() {
        let cloud = tiny_cloud(2);
        let mut reference: Option<FieldNetwork<f64>> = None;
        for head in HeadVariant::ALL {
            let mut cfg = tiny_config(head);
            cfg.weights.seg = 0.0;
            let (net, _) = fit(&cloud, &cfg).unwrap();
            if let Some(r) = &reference {
                assert_eq!(net.trunk, r.trunk);
                assert_eq!(net.sdf, r.sdf);
            } else {
                reference = Some(net);
            }
        }
    }

    #[test]
    fn non_finite_loss_names_the_term() {
        let mut cfg = tiny_config(HeadVariant::Relu);
        // each weighted term is finite on its own, their sum is not
        cfg.weights.eik = f64::MAX;
        cfg.weights.seg = f64::MAX;
        let err = fit(&tiny_cloud(2), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite { term: "total", iteration: 0 }), "{err}");
    }

    #[test]
    fn rejects_unnormalized_or_overlabeled_clouds() {
        let mut cloud = tiny_cloud(2);
        cloud.points[0] = [3.0, 0.0, 0.0];
        assert!(fit(&cloud, &tiny_config(HeadVariant::Relu)).is_err());
        let mut cfg = tiny_config(HeadVariant::Relu);
        cfg.network.num_classes = 1;
        assert!(fit(&tiny_cloud(2), &cfg).is_err());
    }

    #[test]
    fn unlabeled_run_reports_zero_segmentation() {
        let mut cfg = tiny_config(HeadVariant::Relu);
        cfg.sampling.labeled_fraction = 0.0;
        let (_, log) = fit(&tiny_cloud(2), &cfg).unwrap();
        assert!(log.iter().all(|e| e.loss.seg == 0.0));
    }
}

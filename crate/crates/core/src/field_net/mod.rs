//! Dual-head implicit network: a sine-activated trunk feeding a signed
//! distance head, with an intermediate feature tap feeding a part-label head.

mod checkpoint;
mod record;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sine_with_derivative;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vec3};
use crate::scalar::Scalar;

pub use checkpoint::{
    decode_checkpoint, decode_checkpoint_with, encode_checkpoint, encode_checkpoint_with, load_checkpoint, save_checkpoint,
    CHECKPOINT_VERSION,
};
pub use record::{BoundParams, TrunkRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// two ReLU layers (dropout after the first) then linear
    Relu,
    /// two sine layers, the first at the large input frequency, then linear
    Siren,
    /// one sine layer, one ReLU layer, then linear
    Hybrid,
    /// four sine layers with an input-coordinate concatenation at the second
    /// layer and a learned skip from the second layer into the fourth
    DeepSkip,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 4] = [Self::Relu, Self::Siren, Self::Hybrid, Self::DeepSkip];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Siren => "siren",
            Self::Hybrid => "hybrid",
            Self::DeepSkip => "deep_skip",
        }
    }
}

impl std::str::FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown head variant '{s}'")))
    }
}

/// Architecture hyperparameters. Defaults give the 5 x 256 trunk, tap at
/// layer 2, and the 259 -> 256 -> 128 -> K segmentation head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkShape {
    pub trunk_width: usize,
    pub trunk_layers: usize,
    pub feature_tap: usize,
    pub seg_widths: [usize; 2],
    pub omega0: f64,
    pub omega: f64,
    pub dropout: f64,
    pub head: HeadVariant,
    pub num_classes: u32,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            trunk_width: 256,
            trunk_layers: 5,
            feature_tap: 2,
            seg_widths: [256, 128],
            omega0: 30.0,
            omega: 1.0,
            dropout: 0.2,
            head: HeadVariant::Relu,
            num_classes: 4,
        }
    }
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_width == 0 || self.seg_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.trunk_layers < 2 {
            return Err(Error::invalid("trunk needs at least two layers"));
        }
        if self.feature_tap >= self.trunk_layers {
            return Err(Error::invalid(format!(
                "feature tap {} outside a {}-layer trunk",
                self.feature_tap, self.trunk_layers
            )));
        }
        if !(self.omega0 > 0.0) || !(self.omega > 0.0) {
            return Err(Error::invalid("sine frequencies must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout probability must lie in [0, 1)"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("class count must be at least 1"));
        }
        Ok(())
    }

    /// Width of the segmentation input `[features; x]`.
    pub fn seg_input(&self) -> usize {
        self.trunk_width + 3
    }

    /// Expected `(rows, cols)` of every parameter tensor in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut dense = |o: usize, i: usize| {
            out.push((o, i));
            out.push((1, o));
        };
        let w = self.trunk_width;
        dense(w, 3);
        for _ in 1..self.trunk_layers {
            dense(w, w);
        }
        dense(1, w);
        let k = self.num_classes as usize;
        let [h1, h2] = self.seg_widths;
        let si = self.seg_input();
        match self.head {
            HeadVariant::Relu | HeadVariant::Siren | HeadVariant::Hybrid => {
                dense(h1, si);
                dense(h2, h1);
                dense(k, h2);
            }
            HeadVariant::DeepSkip => {
                dense(h1, si);
                dense(h1, h1 + 3);
                dense(h1, h1);
                dense(h1, h1);
                dense(k, h1);
            }
        }
        if self.head == HeadVariant::DeepSkip {
            out.push((h1, h1));
        }
        out
    }
}

/// Activation applied after a segmentation layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Activation {
    Sine(f64),
    Relu,
    Identity,
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Matrix::zeros(out, inp),
            bias: Matrix::zeros(1, out),
        }
    }

    fn uniform(out: usize, inp: usize, w_bound: f64, b_bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(out, inp);
        fill_uniform(&mut layer.weight, w_bound, rng);
        fill_uniform(&mut layer.bias, b_bound, rng);
        layer
    }

    pub fn apply(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = x.matmul_t(&self.weight);
        y.add_row_broadcast(&self.bias);
        y
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

fn fill_uniform<T: Scalar>(m: &mut Matrix<T>, bound: f64, rng: &mut ChaCha8Rng) {
    if bound <= 0.0 {
        return;
    }
    let dist = Uniform::new(-bound, bound);
    for v in m.as_mut_slice() {
        *v = T::lit(dist.sample(rng));
    }
}

// PyTorch-style default bias bound.
fn default_bias_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

pub const SDF_INIT_BOUND: f64 = 1e-5;
pub const CLASSIFIER_INIT_BOUND: f64 = 1e-3;

/// Trunk, SDF head, and segmentation head parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldNetwork<T> {
    pub shape: NetworkShape,
    pub trunk: Vec<Dense<T>>,
    pub sdf: Dense<T>,
    pub seg: Vec<Dense<T>>,
    /// DeepSkip only: skip from the second seg layer into the fourth.
    pub seg_skip: Option<Matrix<T>>,
}

/// Single-point evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult<T> {
    pub sdf: T,
    pub logits: Vec<T>,
    pub features: Vec<T>,
}

/// Batched evaluation; rows follow the input order.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardBatch<T> {
    pub sdf: Vec<T>,
    pub logits: Matrix<T>,
    pub features: Matrix<T>,
}

/// `grad_x f` at one point. The differentiable form used during training
/// is [`TrunkRecord::gradient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputGradient<T> {
    pub grad: Vec3<T>,
}

impl<T: Scalar> FieldNetwork<T> {
    /// SIREN-style initialization. Trunk and SDF head draw from one stream
    /// and the segmentation head from another, so reconstruction parameters
    /// do not depend on the head variant.
    pub fn init(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = shape.trunk_width;
        let mut trunk = Vec::with_capacity(shape.trunk_layers);
        trunk.push(Dense::uniform(w, 3, 1.0 / 3.0, default_bias_bound(3), &mut rng));
        let hidden = (6.0 / w as f64).sqrt() / shape.omega;
        for _ in 1..shape.trunk_layers {
            trunk.push(Dense::uniform(w, w, hidden, default_bias_bound(w), &mut rng));
        }
        let sdf = Dense::uniform(1, w, SDF_INIT_BOUND, SDF_INIT_BOUND, &mut rng);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let (seg, seg_skip) = init_seg_head(&shape, &mut rng);
        Ok(Self {
            shape,
            trunk,
            sdf,
            seg,
            seg_skip,
        })
    }

    /// Network with every parameter zero.
    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        let mut net = Self::init(shape, 0)?;
        for p in net.parameters_mut() {
            p.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(net)
    }

    pub fn num_classes(&self) -> usize {
        self.shape.num_classes as usize
    }

    /// Parameter tensors in canonical order: trunk layers (weight, bias),
    /// SDF head, segmentation layers, then the DeepSkip skip matrix.
    pub fn parameters(&self) -> Vec<&Matrix<T>> {
        let mut out = Vec::new();
        for d in self.trunk.iter().chain(std::iter::once(&self.sdf)).chain(&self.seg) {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        if let Some(s) = &self.seg_skip {
            out.push(s);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::new();
        for d in self.trunk.iter_mut().chain(std::iter::once(&mut self.sdf)).chain(&mut self.seg) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        if let Some(s) = &mut self.seg_skip {
            out.push(s);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn seg_parameter_count(&self) -> usize {
        self.seg.iter().map(Dense::parameter_count).sum::<usize>()
            + self.seg_skip.as_ref().map_or(0, Matrix::len)
    }

    /// Canonical-order index ranges of the parameter groups.
    pub fn parameter_groups(&self) -> ParameterGroups {
        let trunk = 2 * self.trunk.len();
        let tap = 2 * (self.shape.feature_tap + 1);
        let total = self.parameters().len();
        ParameterGroups {
            trunk_to_tap: 0..tap,
            trunk_above_tap: tap..trunk,
            sdf_head: trunk..trunk + 2,
            seg_head: trunk + 2..total,
        }
    }

    pub(crate) fn seg_activations(&self) -> Vec<Activation> {
        let s = &self.shape;
        match s.head {
            HeadVariant::Relu => vec![Activation::Relu, Activation::Relu, Activation::Identity],
            HeadVariant::Siren => vec![
                Activation::Sine(s.omega0),
                Activation::Sine(s.omega),
                Activation::Identity,
            ],
            HeadVariant::Hybrid => vec![Activation::Sine(s.omega0), Activation::Relu, Activation::Identity],
            HeadVariant::DeepSkip => vec![
                Activation::Sine(s.omega0),
                Activation::Sine(s.omega),
                Activation::Sine(s.omega),
                Activation::Sine(s.omega),
                Activation::Identity,
            ],
        }
    }

    /// Trunk activations up to and including `last` (inclusive layer index).
    fn trunk_until(&self, x: &Matrix<T>, last: usize) -> Vec<Matrix<T>> {
        let mut acts = Vec::with_capacity(last + 1);
        let mut h = x.clone();
        for (i, layer) in self.trunk.iter().enumerate().take(last + 1) {
            let omega = T::lit(if i == 0 { self.shape.omega0 } else { self.shape.omega });
            h = layer.apply(&h).map(|v| (omega * v).sin());
            acts.push(h.clone());
        }
        acts
    }

    fn sdf_from_last(&self, last: &Matrix<T>) -> Vec<T> {
        self.sdf.apply(last).into_vec()
    }

    /// Segmentation logits from the tapped features and raw coordinates.
    /// `dropout` supplies the mask randomness when training.
    pub fn seg_logits(&self, features: &Matrix<T>, x: &Matrix<T>, dropout: Option<&mut ChaCha8Rng>) -> Matrix<T> {
        let mask = dropout.map(|rng| self.dropout_mask(features.rows(), rng));
        let input = features.hconcat(x);
        let acts = self.seg_activations();
        let mut h = input;
        let mut second: Option<Matrix<T>> = None;
        for (i, (layer, act)) in self.seg.iter().zip(&acts).enumerate() {
            let pre_input = if self.shape.head == HeadVariant::DeepSkip && i == 1 {
                h.hconcat(x)
            } else {
                h.clone()
            };
            let mut z = layer.apply(&pre_input);
            if let (Some(skip), 3, Some(h1)) = (&self.seg_skip, i, &second) {
                z.add_assign(&h1.matmul_t(skip));
            }
            h = match act {
                Activation::Sine(w) => {
                    let w = T::lit(*w);
                    z.map(|v| (w * v).sin())
                }
                Activation::Relu => z.map(|v| if v > T::zero() { v } else { T::zero() }),
                Activation::Identity => z,
            };
            if i == 0 {
                if let Some(m) = &mask {
                    h = h.zip_map(m, |a, b| a * b);
                }
            }
            if i == 1 {
                second = Some(h.clone());
            }
        }
        h
    }

    /// Inverted-dropout mask for the first segmentation layer.
    pub fn dropout_mask(&self, rows: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
        let p = self.shape.dropout;
        let keep = T::lit(1.0 / (1.0 - p));
        let width = self.shape.seg_widths[0];
        let mut m = Matrix::zeros(rows, width);
        for v in m.as_mut_slice() {
            *v = if rng.gen::<f64>() < p { T::zero() } else { keep };
        }
        m
    }

    /// Full evaluation of a batch. Dropout is active only when an RNG is given.
    pub fn forward_batch(&self, xs: &[Vec3<T>], dropout: Option<&mut ChaCha8Rng>) -> ForwardBatch<T> {
        let x = Matrix::from_points(xs);
        let acts = self.trunk_until(&x, self.trunk.len() - 1);
        let features = acts[self.shape.feature_tap].clone();
        let sdf = self.sdf_from_last(acts.last().expect("non-empty trunk"));
        let logits = self.seg_logits(&features, &x, dropout);
        ForwardBatch { sdf, logits, features }
    }

    /// Signed distance only.
    pub fn sdf_batch(&self, xs: &[Vec3<T>]) -> Vec<T> {
        let x = Matrix::from_points(xs);
        let acts = self.trunk_until(&x, self.trunk.len() - 1);
        self.sdf_from_last(acts.last().expect("non-empty trunk"))
    }

    /// Logits only, in inference mode; skips the trunk above the tap.
    pub fn logits_batch(&self, xs: &[Vec3<T>]) -> Matrix<T> {
        let x = Matrix::from_points(xs);
        let acts = self.trunk_until(&x, self.shape.feature_tap);
        self.seg_logits(acts.last().expect("tap layer"), &x, None)
    }

    pub fn forward(&self, x: Vec3<T>, dropout: Option<&mut ChaCha8Rng>) -> Result<ForwardResult<T>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite query point"));
        }
        let b = self.forward_batch(&[x], dropout);
        Ok(ForwardResult {
            sdf: b.sdf[0],
            logits: b.logits.row(0).to_vec(),
            features: b.features.row(0).to_vec(),
        })
    }

    /// Signed distances and analytic input gradients by forward-mode
    /// propagation of the three coordinate tangents through the trunk.
    pub fn sdf_and_gradient_batch(&self, xs: &[Vec3<T>]) -> (Vec<T>, Vec<Vec3<T>>) {
        let x = Matrix::from_points(xs);
        let n = xs.len();
        let mut h = x;
        let mut tangents: Vec<Matrix<T>> = Vec::new();
        for (i, layer) in self.trunk.iter().enumerate() {
            let omega = T::lit(if i == 0 { self.shape.omega0 } else { self.shape.omega });
            let z = layer.apply(&h);
            let deriv = z.map(|v| sine_with_derivative(omega, v).1);
            h = z.map(|v| sine_with_derivative(omega, v).0);
            tangents = if i == 0 {
                (0..3)
                    .map(|j| {
                        let mut e = Matrix::zeros(n, 3);
                        (0..n).for_each(|r| e.set(r, j, T::one()));
                        e.matmul_t(&layer.weight).zip_map(&deriv, |a, d| a * d)
                    })
                    .collect()
            } else {
                tangents
                    .iter()
                    .map(|t| t.matmul_t(&layer.weight).zip_map(&deriv, |a, d| a * d))
                    .collect()
            };
        }
        let sdf = self.sdf_from_last(&h);
        let cols: Vec<Matrix<T>> = tangents.iter().map(|t| t.matmul_t(&self.sdf.weight)).collect();
        let grads = (0..n)
            .map(|r| [cols[0].get(r, 0), cols[1].get(r, 0), cols[2].get(r, 0)])
            .collect();
        (sdf, grads)
    }

    pub fn input_gradient(&self, x: Vec3<T>) -> InputGradient<T> {
        let (_, g) = self.sdf_and_gradient_batch(&[x]);
        InputGradient { grad: g[0] }
    }

    pub fn cast<U: Scalar>(&self) -> FieldNetwork<U> {
        let cd = |d: &Dense<T>| Dense {
            weight: d.weight.cast(),
            bias: d.bias.cast(),
        };
        FieldNetwork {
            shape: self.shape.clone(),
            trunk: self.trunk.iter().map(cd).collect(),
            sdf: cd(&self.sdf),
            seg: self.seg.iter().map(cd).collect(),
            seg_skip: self.seg_skip.as_ref().map(Matrix::cast),
        }
    }
}

fn init_seg_head<T: Scalar>(shape: &NetworkShape, rng: &mut ChaCha8Rng) -> (Vec<Dense<T>>, Option<Matrix<T>>) {
    let k = shape.num_classes as usize;
    let [h1, h2] = shape.seg_widths;
    let si = shape.seg_input();
    let kaiming = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
    let sine_first = |fan_in: usize| 1.0 / fan_in as f64;
    let sine_hidden = |fan_in: usize| (6.0 / fan_in as f64).sqrt() / shape.omega;
    let classifier = |inp: usize, rng: &mut ChaCha8Rng| {
        Dense::uniform(k, inp, CLASSIFIER_INIT_BOUND, CLASSIFIER_INIT_BOUND, rng)
    };
    match shape.head {
        HeadVariant::Relu => (
            vec![
                Dense::uniform(h1, si, kaiming(si), default_bias_bound(si), rng),
                Dense::uniform(h2, h1, kaiming(h1), default_bias_bound(h1), rng),
                classifier(h2, rng),
            ],
            None,
        ),
        HeadVariant::Siren => (
            vec![
                Dense::uniform(h1, si, sine_first(si), default_bias_bound(si), rng),
                Dense::uniform(h2, h1, sine_hidden(h1), default_bias_bound(h1), rng),
                classifier(h2, rng),
            ],
            None,
        ),
        HeadVariant::Hybrid => (
            vec![
                Dense::uniform(h1, si, sine_first(si), default_bias_bound(si), rng),
                Dense::uniform(h2, h1, kaiming(h1), default_bias_bound(h1), rng),
                classifier(h2, rng),
            ],
            None,
        ),
        HeadVariant::DeepSkip => {
            let layers = vec![
                Dense::uniform(h1, si, sine_first(si), default_bias_bound(si), rng),
                Dense::uniform(h1, h1 + 3, sine_hidden(h1 + 3), default_bias_bound(h1 + 3), rng),
                Dense::uniform(h1, h1, sine_hidden(h1), default_bias_bound(h1), rng),
                Dense::uniform(h1, h1, sine_hidden(h1), default_bias_bound(h1), rng),
                classifier(h1, rng),
            ];
            let mut skip = Matrix::zeros(h1, h1);
            fill_uniform(&mut skip, sine_hidden(h1), rng);
            (layers, Some(skip))
        }
    }
}

/// Canonical-order parameter index ranges (see [`FieldNetwork::parameters`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterGroups {
    /// trunk layers `0..=feature_tap`, shared by both heads
    pub trunk_to_tap: std::ops::Range<usize>,
    /// trunk layers after the tap, used by the SDF path only
    pub trunk_above_tap: std::ops::Range<usize>,
    pub sdf_head: std::ops::Range<usize>,
    pub seg_head: std::ops::Range<usize>,
}

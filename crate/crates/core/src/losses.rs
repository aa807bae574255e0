//! Loss terms: surface fit, off-surface decay, Eikonal, off-diagonal
//! Weingarten (curvature), and segmentation cross entropy.
//!
//! Each term has a plain evaluation path over values or fields, and the
//! training path [`objective`] records the same quantities on a tape to
//! obtain parameter gradients of the weighted total.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_cross_entropy, Tape, Var};
use crate::error::{Error, Result};
use crate::field_net::FieldNetwork;
use crate::linalg::{self, Matrix, Vec3};
use crate::sampler::{SampleBatch, TangentFrame};
use crate::scalar::Scalar;

/// Shell points whose gradient norm is at or below this are skipped.
pub const MIN_GRADIENT_NORM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub dm: f64,
    pub dnm: f64,
    pub eik: f64,
    pub odw: f64,
    pub seg: f64,
    /// decay rate of the off-surface penalty
    pub alpha: f64,
    /// curvature stencil step
    pub h: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dm: 7000.0,
            dnm: 600.0,
            eik: 50.0,
            odw: 10.0,
            seg: 100.0,
            alpha: 100.0,
            h: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            dm: 0.0,
            dnm: 0.0,
            eik: 0.0,
            odw: 0.0,
            seg: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.dm, self.dnm, self.eik, self.odw, self.seg];
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if !(self.alpha > 0.0) || !(self.h > 0.0) {
            return Err(Error::invalid("alpha and the stencil step must be positive"));
        }
        Ok(())
    }
}

/// Per-term values and their weighted sum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dm: f64,
    pub dnm: f64,
    pub eik: f64,
    pub odw: f64,
    pub seg: f64,
    pub total: f64,
    /// shell points dropped from the curvature term for a vanishing gradient
    pub odw_skipped: usize,
}

impl LossReport {
    pub fn from_terms(dm: f64, dnm: f64, eik: f64, odw: f64, seg: f64, weights: &LossWeights) -> Self {
        let total = weights.dm * dm + weights.dnm * dnm + weights.eik * eik + weights.odw * odw + weights.seg * seg;
        Self {
            dm,
            dnm,
            eik,
            odw,
            seg,
            total,
            odw_skipped: 0,
        }
    }

    /// Named terms in a fixed order, for diagnostics.
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("dm", self.dm),
            ("dnm", self.dnm),
            ("eik", self.eik),
            ("odw", self.odw),
            ("seg", self.seg),
            ("total", self.total),
        ]
    }
}

fn nonempty<T>(xs: &[T], what: &str) -> Result<()> {
    if xs.is_empty() {
        Err(Error::invalid(format!("{what} loss needs at least one sample")))
    } else {
        Ok(())
    }
}

fn mean<T: Scalar>(xs: impl Iterator<Item = T>, n: usize) -> T {
    xs.sum::<T>() / T::lit(n as f64)
}

/// Mean absolute signed distance at surface samples.
pub fn loss_dm<T: Scalar>(values: &[T]) -> Result<T> {
    nonempty(values, "surface")?;
    Ok(mean(values.iter().map(|v| v.abs()), values.len()))
}

/// Mean of `exp(-alpha |f|)` at off-surface samples.
pub fn loss_dnm<T: Scalar>(values: &[T], alpha: T) -> Result<T> {
    nonempty(values, "off-surface")?;
    if !(alpha > T::zero()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    Ok(mean(values.iter().map(|v| (-alpha * v.abs()).exp()), values.len()))
}

/// Mean of `(|grad f|^2 - 1)^2`.
pub fn loss_eik<T: Scalar>(grads: &[Vec3<T>]) -> Result<T> {
    nonempty(grads, "Eikonal")?;
    Ok(mean(
        grads.iter().map(|&g| {
            let d = linalg::dot(g, g) - T::one();
            d * d
        }),
        grads.len(),
    ))
}

/// Mean softmax cross entropy of `logits` rows against `labels`.
pub fn loss_seg<T: Scalar>(logits: &Matrix<T>, labels: &[u32]) -> Result<T> {
    nonempty(labels, "segmentation")?;
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!("{} logit rows for {} labels", logits.rows(), labels.len())));
    }
    let k = logits.cols();
    let mut sum = T::zero();
    for (r, &l) in labels.iter().enumerate() {
        if l as usize >= k {
            return Err(Error::invalid(format!("label {l} out of range for {k} classes")));
        }
        sum += softmax_cross_entropy(logits.row(r), l as usize).0;
    }
    Ok(sum / T::lit(labels.len() as f64))
}

/// A scalar field with a spatial gradient.
pub trait ImplicitField<T> {
    fn sdf(&self, p: Vec3<T>) -> T;
    fn gradient(&self, p: Vec3<T>) -> Vec3<T>;
}

impl<T: Scalar> ImplicitField<T> for FieldNetwork<T> {
    fn sdf(&self, p: Vec3<T>) -> T {
        self.sdf_batch(&[p])[0]
    }

    fn gradient(&self, p: Vec3<T>) -> Vec3<T> {
        self.input_gradient(p).grad
    }
}

/// Estimator of the mixed second derivative `u^T H_f v`. The stencil is the
/// only estimator used in training; exact Hessian products slot in here.
pub trait MixedDerivative<T, F: ?Sized> {
    fn mixed(&self, field: &F, p: Vec3<T>, u: Vec3<T>, v: Vec3<T>) -> T;
}

/// Symmetric four-point stencil with step `h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil<T> {
    pub h: T,
}

impl<T: Scalar> Stencil<T> {
    /// The four evaluation points in the order the stencil combines them:
    /// `p+hu+hv, p+hu-hv, p-hu+hv, p-hu-hv`.
    pub fn points(&self, p: Vec3<T>, u: Vec3<T>, v: Vec3<T>) -> [Vec3<T>; 4] {
        let hu = linalg::scale(u, self.h);
        let hv = linalg::scale(v, self.h);
        [
            linalg::add(linalg::add(p, hu), hv),
            linalg::sub(linalg::add(p, hu), hv),
            linalg::add(linalg::sub(p, hu), hv),
            linalg::sub(linalg::sub(p, hu), hv),
        ]
    }

    pub fn combine(&self, f: [T; 4]) -> T {
        (f[0] - f[1] - f[2] + f[3]) / (T::lit(4.0) * self.h * self.h)
    }
}

impl<T: Scalar, F: ImplicitField<T> + ?Sized> MixedDerivative<T, F> for Stencil<T> {
    fn mixed(&self, field: &F, p: Vec3<T>, u: Vec3<T>, v: Vec3<T>) -> T {
        self.combine(self.points(p, u, v).map(|q| field.sdf(q)))
    }
}

/// Off-diagonal Weingarten entry `u^T H v / |grad f|` by the stencil with
/// step `h`; `None` when the gradient norm is at most [`MIN_GRADIENT_NORM`].
pub fn s12<T: Scalar, F: ImplicitField<T> + ?Sized>(field: &F, p: Vec3<T>, frame: &TangentFrame<T>, h: T) -> Option<T> {
    s12_with(&Stencil { h }, field, p, frame)
}

pub fn s12_with<T: Scalar, F: ImplicitField<T> + ?Sized, M: MixedDerivative<T, F>>(
    estimator: &M,
    field: &F,
    p: Vec3<T>,
    frame: &TangentFrame<T>,
) -> Option<T> {
    let g = linalg::norm(field.gradient(p));
    if !(g > T::lit(MIN_GRADIENT_NORM)) {
        return None;
    }
    Some(estimator.mixed(field, p, frame.u, frame.v) / g)
}

/// Mean curvature-term value over non-skipped shell points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdwValue<T> {
    pub value: T,
    pub skipped: usize,
}

pub fn loss_odw<T: Scalar, F: ImplicitField<T> + ?Sized>(
    field: &F,
    points: &[Vec3<T>],
    frames: &[TangentFrame<T>],
    h: T,
) -> Result<OdwValue<T>> {
    nonempty(points, "curvature")?;
    if points.len() != frames.len() {
        return Err(Error::Shape(format!("{} shell points for {} frames", points.len(), frames.len())));
    }
    let vals: Vec<T> = points
        .iter()
        .zip(frames)
        .filter_map(|(&p, f)| s12(field, p, f, h).map(|s| s.abs()))
        .collect();
    let skipped = points.len() - vals.len();
    if vals.is_empty() {
        return Err(Error::Degenerate("every shell point has a vanishing gradient".into()));
    }
    Ok(OdwValue {
        value: mean(vals.iter().copied(), vals.len()),
        skipped,
    })
}

/// Evaluates every term in inference mode (no dropout) with batched
/// network queries of at most `chunk_size` points.
pub fn loss_total<T: Scalar>(
    net: &FieldNetwork<T>,
    batch: &SampleBatch<T>,
    weights: &LossWeights,
    chunk_size: usize,
) -> Result<LossReport> {
    weights.validate()?;
    let chunk_size = chunk_size.max(1);
    let mut man_sdf = Vec::with_capacity(batch.manifold.len());
    let mut grads = Vec::with_capacity(batch.manifold.len() + batch.nonmanifold.len());
    for c in batch.manifold.chunks(chunk_size) {
        let (f, g) = net.sdf_and_gradient_batch(c);
        man_sdf.extend(f);
        grads.extend(g);
    }
    let mut non_sdf = Vec::with_capacity(batch.nonmanifold.len());
    for c in batch.nonmanifold.chunks(chunk_size) {
        let (f, g) = net.sdf_and_gradient_batch(c);
        non_sdf.extend(f);
        grads.extend(g);
    }
    let dm = loss_dm(&man_sdf)?;
    let dnm = loss_dnm(&non_sdf, T::lit(weights.alpha))?;
    let eik = loss_eik(&grads)?;

    let stencil = Stencil { h: T::lit(weights.h) };
    let mut s12_abs = Vec::new();
    let mut skipped = 0;
    let shell_chunk = (chunk_size / 4).max(1);
    for (cp, cf) in batch.shell.chunks(shell_chunk).zip(batch.shell_frames.chunks(shell_chunk)) {
        let (_, g) = net.sdf_and_gradient_batch(cp);
        let pts: Vec<Vec3<T>> = cp
            .iter()
            .zip(cf)
            .flat_map(|(&p, f)| stencil.points(p, f.u, f.v))
            .collect();
        let f = net.sdf_batch(&pts);
        for (i, gi) in g.iter().enumerate() {
            let gn = linalg::norm(*gi);
            if gn > T::lit(MIN_GRADIENT_NORM) {
                let q = [f[4 * i], f[4 * i + 1], f[4 * i + 2], f[4 * i + 3]];
                s12_abs.push((stencil.combine(q) / gn).abs());
            } else {
                skipped += 1;
            }
        }
    }
    let odw = if s12_abs.is_empty() {
        if weights.odw > 0.0 {
            return Err(Error::Degenerate(
                "curvature term has no shell point with a usable gradient".into(),
            ));
        }
        T::zero()
    } else {
        mean(s12_abs.iter().copied(), s12_abs.len())
    };

    let n_lab = batch.n_labeled.min(batch.manifold.len());
    let seg = if n_lab == 0 {
        T::zero()
    } else {
        let mut sum = T::zero();
        for (c, l) in batch.manifold[..n_lab]
            .chunks(chunk_size)
            .zip(batch.labels[..n_lab].chunks(chunk_size))
        {
            sum += loss_seg(&net.logits_batch(c), l)? * T::lit(c.len() as f64);
        }
        sum / T::lit(n_lab as f64)
    };
    let mut report = LossReport::from_terms(
        dm.to_f64_lossy(),
        dnm.to_f64_lossy(),
        eik.to_f64_lossy(),
        odw.to_f64_lossy(),
        seg.to_f64_lossy(),
        weights,
    );
    report.odw_skipped = skipped;
    Ok(report)
}

/// Loss report and the parameter gradient of the weighted total, in
/// [`FieldNetwork::parameters`] order.
pub struct Objective<T> {
    pub report: LossReport,
    pub gradients: Vec<Matrix<T>>,
}

struct Accumulator<T> {
    grads: Vec<Matrix<T>>,
}

impl<T: Scalar> Accumulator<T> {
    fn new(net: &FieldNetwork<T>) -> Self {
        Self {
            grads: net.parameters().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }

    fn backward(&mut self, tape: &Tape<T>, params: &[Var], root: Option<Var>) {
        let Some(root) = root else { return };
        let g = tape.backward(root);
        for (acc, &v) in self.grads.iter_mut().zip(params) {
            if let Some(d) = g.get(v) {
                acc.add_assign(d);
            }
        }
    }
}

fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, root: &mut Option<Var>, rows: Var, weight: T) {
    if weight == T::zero() {
        return;
    }
    let s = tape.sum(rows);
    let s = tape.scale(s, weight);
    *root = Some(match *root {
        Some(r) => tape.add(r, s),
        None => s,
    });
}

/// `(|grad f|^2 - 1)^2` per row.
fn eikonal_rows<T: Scalar>(tape: &mut Tape<T>, g: [Var; 3]) -> Var {
    let sq = g.map(|v| tape.square(v));
    let a = tape.add(sq[0], sq[1]);
    let n2 = tape.add(a, sq[2]);
    let d = tape.add_scalar(n2, -T::one());
    tape.square(d)
}

/// Weighted objective and its parameter gradient.
///
/// Samples are processed in chunks of at most `chunk_size` rows in a fixed
/// order (surface, off-surface, shell), so results are deterministic. The
/// segmentation head runs in training mode when `dropout` supplies a
/// generator. Terms with zero weight are reported but do not enter the
/// differentiated total.
pub fn objective<T: Scalar>(
    net: &FieldNetwork<T>,
    batch: &SampleBatch<T>,
    weights: &LossWeights,
    chunk_size: usize,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<Objective<T>> {
    weights.validate()?;
    let chunk = chunk_size.max(1);
    let nm = batch.manifold.len();
    let nn = batch.nonmanifold.len();
    nonempty(&batch.manifold, "surface")?;
    nonempty(&batch.nonmanifold, "off-surface")?;
    let n_lab = batch.n_labeled.min(nm);
    let k = net.num_classes() as u32;
    if let Some(&bad) = batch.labels[..n_lab].iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let lit = T::lit;
    let w_dm = lit(weights.dm / nm as f64);
    let w_dnm = lit(weights.dnm / nn as f64);
    let w_eik = lit(weights.eik / (nm + nn) as f64);
    let w_seg = if n_lab > 0 { lit(weights.seg / n_lab as f64) } else { T::zero() };
    let alpha = lit(weights.alpha);

    let mut acc = Accumulator::new(net);
    let (mut dm, mut dnm, mut eik, mut seg) = (T::zero(), T::zero(), T::zero(), T::zero());

    for start in (0..nm).step_by(chunk) {
        let end = (start + chunk).min(nm);
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let x = tape.constant(Matrix::from_points(&batch.manifold[start..end]));
        let rec = net.record_trunk(&mut tape, &params, x, true);
        let mut root = None;

        let abs = tape.abs(rec.sdf);
        dm += tape.value(abs).sum();
        weighted_sum(&mut tape, &mut root, abs, w_dm);

        let e = eikonal_rows(&mut tape, rec.gradient.expect("recorded with gradient"));
        eik += tape.value(e).sum();
        weighted_sum(&mut tape, &mut root, e, w_eik);

        let lab_end = end.min(n_lab);
        if lab_end > start {
            let rows = lab_end - start;
            let feats = tape.rows(rec.features, 0, rows);
            let xs = tape.rows(x, 0, rows);
            let mask = dropout.as_deref_mut().map(|rng| net.dropout_mask(rows, rng));
            let logits = net.record_seg(&mut tape, &params, feats, xs, mask);
            let ce = tape.cross_entropy(logits, batch.labels[start..lab_end].to_vec());
            seg += tape.value(ce).sum();
            weighted_sum(&mut tape, &mut root, ce, w_seg);
        }
        acc.backward(&tape, &params.vars, root);
    }

    for start in (0..nn).step_by(chunk) {
        let end = (start + chunk).min(nn);
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let x = tape.constant(Matrix::from_points(&batch.nonmanifold[start..end]));
        let rec = net.record_trunk(&mut tape, &params, x, true);
        let mut root = None;

        let abs = tape.abs(rec.sdf);
        let decay = tape.exp(abs, -alpha);
        dnm += tape.value(decay).sum();
        weighted_sum(&mut tape, &mut root, decay, w_dnm);

        let e = eikonal_rows(&mut tape, rec.gradient.expect("recorded with gradient"));
        eik += tape.value(e).sum();
        weighted_sum(&mut tape, &mut root, e, w_eik);
        acc.backward(&tape, &params.vars, root);
    }

    // Curvature term: gradients are accumulated unscaled, then divided by
    // the number of usable shell points once it is known.
    let mut odw_acc = Accumulator::new(net);
    let mut odw_sum = T::zero();
    let mut used = 0usize;
    let ns = batch.shell.len();
    let stencil = Stencil { h: lit(weights.h) };
    let shell_chunk = (chunk / 4).max(1);
    for start in (0..ns).step_by(shell_chunk) {
        let end = (start + shell_chunk).min(ns);
        let rows = end - start;
        let pts = &batch.shell[start..end];
        let frames = &batch.shell_frames[start..end];
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let x = tape.constant(Matrix::from_points(pts));
        let rec = net.record_trunk(&mut tape, &params, x, true);
        let g = rec.gradient.expect("recorded with gradient");
        let sq = g.map(|v| tape.square(v));
        let a = tape.add(sq[0], sq[1]);
        let n2 = tape.add(a, sq[2]);
        let min2 = lit(MIN_GRADIENT_NORM * MIN_GRADIENT_NORM);
        let mask = tape.value(n2).map(|v| if v > min2 { T::one() } else { T::zero() });
        used += mask.as_slice().iter().filter(|&&m| m > T::zero()).count();
        // skipped rows get a unit norm so nothing non-finite enters the sweep
        let fill = tape.constant(mask.map(|m| T::one() - m));
        let safe = tape.add(n2, fill);
        let gnorm = tape.sqrt(safe);

        // stencil rows in four blocks: all (+u+v), all (+u-v), all (-u+v), all (-u-v)
        let mut stencil_pts = Vec::with_capacity(4 * rows);
        for corner in 0..4 {
            stencil_pts.extend(pts.iter().zip(frames).map(|(&p, f)| stencil.points(p, f.u, f.v)[corner]));
        }
        let xs = tape.constant(Matrix::from_points(&stencil_pts));
        let srec = net.record_trunk(&mut tape, &params, xs, false);
        let f: Vec<Var> = (0..4).map(|c| tape.rows(srec.sdf, c * rows, rows)).collect();
        let d1 = tape.sub(f[0], f[1]);
        let d2 = tape.sub(d1, f[2]);
        let num = tape.add(d2, f[3]);
        let num = tape.scale(num, T::one() / (lit(4.0) * stencil.h * stencil.h));
        let s = tape.div(num, gnorm);
        let s = tape.abs(s);
        let s = tape.mul_const(s, mask);
        odw_sum += tape.value(s).sum();
        let mut root = None;
        weighted_sum(&mut tape, &mut root, s, T::one());
        if weights.odw > 0.0 {
            odw_acc.backward(&tape, &params.vars, root);
        }
    }
    let skipped = ns - used;
    let odw = if used > 0 {
        odw_sum / lit(used as f64)
    } else if weights.odw > 0.0 {
        return Err(Error::Degenerate(
            "curvature term has no shell point with a usable gradient".into(),
        ));
    } else {
        T::zero()
    };
    if used > 0 && weights.odw > 0.0 {
        let w_odw = lit(weights.odw / used as f64);
        for (a, o) in acc.grads.iter_mut().zip(&odw_acc.grads) {
            a.scaled_add_assign(w_odw, o);
        }
    }

    let mean_of = |s: T, n: usize| (s / lit(n as f64)).to_f64_lossy();
    let mut report = LossReport::from_terms(
        mean_of(dm, nm),
        mean_of(dnm, nn),
        mean_of(eik, nm + nn),
        odw.to_f64_lossy(),
        if n_lab > 0 { mean_of(seg, n_lab) } else { 0.0 },
        weights,
    );
    report.odw_skipped = skipped;
    Ok(Objective {
        report,
        gradients: acc.grads,
    })
}

/// Closed-form fields used as oracles for the curvature and Eikonal terms.
pub mod analytic {
    use super::ImplicitField;
    use crate::linalg::{self, Vec3};
    use crate::scalar::Scalar;

    /// `f(x) = n . x + d` with unit `n`.
    #[derive(Clone, Copy, Debug)]
    pub struct Plane<T> {
        pub normal: Vec3<T>,
        pub offset: T,
    }

    impl<T: Scalar> ImplicitField<T> for Plane<T> {
        fn sdf(&self, p: Vec3<T>) -> T {
            linalg::dot(self.normal, p) + self.offset
        }

        fn gradient(&self, _p: Vec3<T>) -> Vec3<T> {
            self.normal
        }
    }

    /// `f(x) = |x - c| - r`.
    #[derive(Clone, Copy, Debug)]
    pub struct Sphere<T> {
        pub center: Vec3<T>,
        pub radius: T,
    }

    impl<T: Scalar> ImplicitField<T> for Sphere<T> {
        fn sdf(&self, p: Vec3<T>) -> T {
            linalg::norm(linalg::sub(p, self.center)) - self.radius
        }

        fn gradient(&self, p: Vec3<T>) -> Vec3<T> {
            let d = linalg::sub(p, self.center);
            linalg::scale(d, T::one() / linalg::norm(d))
        }
    }

    /// Infinite cylinder around the z axis, `f(x) = sqrt(x^2 + y^2) - r`.
    #[derive(Clone, Copy, Debug)]
    pub struct Cylinder<T> {
        pub radius: T,
    }

    impl<T: Scalar> ImplicitField<T> for Cylinder<T> {
        fn sdf(&self, p: Vec3<T>) -> T {
            (p[0] * p[0] + p[1] * p[1]).sqrt() - self.radius
        }

        fn gradient(&self, p: Vec3<T>) -> Vec3<T> {
            let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
            [p[0] / rho, p[1] / rho, T::zero()]
        }
    }
}

//! Small stateless models with closed-form per-sample gradients.
//!
//! Parameters are one flat vector; [`Layout`] documents the block order:
//!
//! | model                | blocks (in order)                         |
//! |----------------------|-------------------------------------------|
//! | linear regression    | `weight[inputs]`, `bias[1]`               |
//! | binary logistic      | `weight[inputs]`, `bias[1]`               |
//! | multinomial logistic | `weight[classes x inputs]`, `bias[classes]` |
//! | two-layer perceptron | `w1[hidden x inputs]`, `b1[hidden]`, `w2[classes x hidden]`, `b2[classes]` |
//!
//! Matrices are row-major. Losses: half squared error, binary cross-entropy
//! with labels in {0, 1}, and softmax cross-entropy with integer class labels.
//! The perceptron uses `tanh` hidden units.

use alloc::vec;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sorter::GradientMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    /// Class index (as a float) for classifiers, real target for regression.
    pub y: f64,
    pub id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    LinearRegression { inputs: usize },
    BinaryLogistic { inputs: usize },
    MultinomialLogistic { inputs: usize, classes: usize },
    Mlp { inputs: usize, hidden: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub name: &'static str,
    pub range: Range<usize>,
    /// `(rows, cols)`; vectors are `(len, 1)`.
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    fn from_shapes(shapes: &[(&'static str, usize, usize)]) -> Self {
        let mut start = 0;
        let blocks = shapes
            .iter()
            .map(|&(name, r, c)| {
                let b = Block { name, range: start..start + r * c, shape: (r, c) };
                start += r * c;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.range.end)
    }
}

impl ModelKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        match *self {
            ModelKind::LinearRegression { inputs } | ModelKind::BinaryLogistic { inputs } => {
                if inputs == 0 {
                    return bad("model inputs must be at least 1");
                }
            }
            ModelKind::MultinomialLogistic { inputs, classes } => {
                if inputs == 0 {
                    return bad("model inputs must be at least 1");
                }
                if classes < 2 {
                    return bad("multinomial model needs at least 2 classes");
                }
            }
            ModelKind::Mlp { inputs, hidden, classes } => {
                if inputs == 0 || hidden == 0 {
                    return bad("perceptron inputs and hidden width must be at least 1");
                }
                if classes < 2 {
                    return bad("perceptron needs at least 2 classes");
                }
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        match *self {
            ModelKind::LinearRegression { inputs }
            | ModelKind::BinaryLogistic { inputs }
            | ModelKind::MultinomialLogistic { inputs, .. }
            | ModelKind::Mlp { inputs, .. } => inputs,
        }
    }

    /// Number of classes, or `None` for regression.
    pub fn classes(&self) -> Option<usize> {
        match *self {
            ModelKind::LinearRegression { .. } => None,
            ModelKind::BinaryLogistic { .. } => Some(2),
            ModelKind::MultinomialLogistic { classes, .. } | ModelKind::Mlp { classes, .. } => {
                Some(classes)
            }
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.classes().is_some()
    }

    pub fn layout(&self) -> Layout {
        match *self {
            ModelKind::LinearRegression { inputs } | ModelKind::BinaryLogistic { inputs } => {
                Layout::from_shapes(&[("weight", 1, inputs), ("bias", 1, 1)])
            }
            ModelKind::MultinomialLogistic { inputs, classes } => {
                Layout::from_shapes(&[("weight", classes, inputs), ("bias", classes, 1)])
            }
            ModelKind::Mlp { inputs, hidden, classes } => Layout::from_shapes(&[
                ("w1", hidden, inputs),
                ("b1", hidden, 1),
                ("w2", classes, hidden),
                ("b2", classes, 1),
            ]),
        }
    }

    pub fn param_dim(&self) -> usize {
        self.layout().total()
    }

    /// Mean loss and the per-example losses, in batch order.
    pub fn loss<E: Borrow<Example>>(
        &self,
        params: &ModelParams,
        batch: &[E],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let per = batch
            .iter()
            .map(|e| self.example_loss(&params.theta, e.borrow(), None))
            .collect::<Result<Vec<_>>>()?;
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        Ok((mean, per))
    }

    /// One gradient row per example, in batch order, tagged with example ids.
    pub fn per_sample_grads<E: Borrow<Example>>(
        &self,
        params: &ModelParams,
        batch: &[E],
    ) -> Result<GradientMatrix> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let d = self.param_dim();
        let mut data = vec![0.0; batch.len() * d];
        for (e, row) in batch.iter().zip(data.chunks_exact_mut(d)) {
            self.example_loss(&params.theta, e.borrow(), Some(row))?;
        }
        let ids = batch.iter().map(|e| e.borrow().id).collect();
        GradientMatrix::new(d, ids, data)
    }

    /// Predicted class (as a float) or regression value.
    pub fn predict(&self, params: &ModelParams, x: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        self.check_x(x)?;
        let t = &params.theta;
        Ok(match *self {
            ModelKind::LinearRegression { inputs } => linear(t, x, inputs),
            ModelKind::BinaryLogistic { inputs } => {
                if linear(t, x, inputs) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::MultinomialLogistic { inputs, classes } => {
                let mut z = vec![0.0; classes];
                affine(t, 0, inputs * classes, x, &mut z);
                argmax(&z) as f64
            }
            ModelKind::Mlp { inputs, hidden, classes } => {
                let mut h = vec![0.0; hidden];
                affine(t, 0, hidden * inputs, x, &mut h);
                h.iter_mut().for_each(|a| *a = libm::tanh(*a));
                let w2 = hidden * inputs + hidden;
                let mut z = vec![0.0; classes];
                affine(t, w2, w2 + classes * hidden, &h, &mut z);
                argmax(&z) as f64
            }
        })
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        self.validate()?;
        check_dim(self.param_dim(), params.theta.len())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        check_dim(self.inputs(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(())
    }

    fn class_label(&self, y: f64, classes: usize) -> Result<usize> {
        if libm::trunc(y) != y || y < 0.0 || y >= classes as f64 {
            return Err(Error::InvalidLabel { label: y, what: "class index" });
        }
        Ok(y as usize)
    }

    /// Loss of one example; writes its gradient into `grad` when given.
    fn example_loss(&self, t: &[f64], e: &Example, grad: Option<&mut [f64]>) -> Result<f64> {
        self.check_x(&e.x)?;
        if !e.y.is_finite() {
            return Err(Error::NonFinite("target"));
        }
        let x = &e.x;
        match *self {
            ModelKind::LinearRegression { inputs } => {
                let r = linear(t, x, inputs) - e.y;
                if let Some(g) = grad {
                    g[..inputs].iter_mut().zip(x).for_each(|(gi, xi)| *gi = r * xi);
                    g[inputs] = r;
                }
                Ok(0.5 * r * r)
            }
            ModelKind::BinaryLogistic { inputs } => {
                let y = self.class_label(e.y, 2)? as f64;
                let z = linear(t, x, inputs);
                if let Some(g) = grad {
                    let r = sigmoid(z) - y;
                    g[..inputs].iter_mut().zip(x).for_each(|(gi, xi)| *gi = r * xi);
                    g[inputs] = r;
                }
                Ok(softplus(z) - y * z)
            }
            ModelKind::MultinomialLogistic { inputs, classes } => {
                let y = self.class_label(e.y, classes)?;
                let mut z = vec![0.0; classes];
                affine(t, 0, inputs * classes, x, &mut z);
                let lse = log_sum_exp(&z);
                if let Some(g) = grad {
                    let (gw, gb) = g.split_at_mut(inputs * classes);
                    for c in 0..classes {
                        let dz = libm::exp(z[c] - lse) - if c == y { 1.0 } else { 0.0 };
                        gw[c * inputs..(c + 1) * inputs]
                            .iter_mut()
                            .zip(x)
                            .for_each(|(gi, xi)| *gi = dz * xi);
                        gb[c] = dz;
                    }
                }
                Ok(lse - z[y])
            }
            ModelKind::Mlp { inputs, hidden, classes } => {
                let y = self.class_label(e.y, classes)?;
                let mut h = vec![0.0; hidden];
                affine(t, 0, hidden * inputs, x, &mut h);
                h.iter_mut().for_each(|a| *a = libm::tanh(*a));
                let w2 = hidden * inputs + hidden;
                let b2 = w2 + classes * hidden;
                let mut z = vec![0.0; classes];
                affine(t, w2, b2, &h, &mut z);
                let lse = log_sum_exp(&z);
                if let Some(g) = grad {
                    let mut dh = vec![0.0; hidden];
                    for c in 0..classes {
                        let dz = libm::exp(z[c] - lse) - if c == y { 1.0 } else { 0.0 };
                        let row = &t[w2 + c * hidden..w2 + (c + 1) * hidden];
                        for j in 0..hidden {
                            g[w2 + c * hidden + j] = dz * h[j];
                            dh[j] += row[j] * dz;
                        }
                        g[b2 + c] = dz;
                    }
                    for j in 0..hidden {
                        let da = dh[j] * (1.0 - h[j] * h[j]);
                        g[j * inputs..(j + 1) * inputs]
                            .iter_mut()
                            .zip(x)
                            .for_each(|(gi, xi)| *gi = da * xi);
                        g[hidden * inputs + j] = da;
                    }
                }
                Ok(lse - z[y])
            }
        }
    }
}

/// Flat parameter vector plus its block layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub layout: Layout,
}

impl ModelParams {
    pub fn zeros(kind: &ModelKind) -> Self {
        let layout = kind.layout();
        Self { theta: vec![0.0; layout.total()], layout }
    }

    pub fn from_vec(kind: &ModelKind, theta: Vec<f64>) -> Result<Self> {
        let layout = kind.layout();
        check_dim(layout.total(), theta.len())?;
        Ok(Self { theta, layout })
    }

    /// Zero biases; weight blocks uniform in `±1/sqrt(cols)`. Linear models
    /// start at zero.
    pub fn init(kind: &ModelKind, seed: u64) -> Self {
        let mut p = Self::zeros(kind);
        if let ModelKind::Mlp { .. } = kind {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for b in p.layout.blocks.iter().filter(|b| b.shape.1 > 1) {
                let bound = 1.0 / libm::sqrt(b.shape.1 as f64);
                for w in &mut p.theta[b.range.clone()] {
                    *w = rng.gen_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.theta[b.range.clone()])
    }
}

#[inline]
fn linear(t: &[f64], x: &[f64], inputs: usize) -> f64 {
    crate::util::dot(&t[..inputs], x) + t[inputs]
}

/// `out = W x + b` with `W = t[w..b_start]` row-major and `b` right after it.
fn affine(t: &[f64], w: usize, b_start: usize, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = crate::util::dot(&t[w + k * cols..w + (k + 1) * cols], x) + t[b_start + k];
    }
    debug_assert_eq!(w + out.len() * cols, b_start);
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-libm::fabs(z)))
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: &[f64], y: f64, id: usize) -> Example {
        Example { x: x.to_vec(), y, id }
    }

    #[test]
    fn logistic_at_zero() {
        let kind = ModelKind::BinaryLogistic { inputs: 3 };
        let p = ModelParams::zeros(&kind);
        let batch = [ex(&[1.0, -2.0, 0.5], 1.0, 0), ex(&[4.0, 0.0, 1.0], 0.0, 1)];
        let (mean, per) = kind.loss(&p, &batch).unwrap();
        for l in per {
            assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!((mean - core::f64::consts::LN_2).abs() < 1e-15);
        let g = kind.per_sample_grads(&p, &batch[..1]).unwrap();
        assert_eq!(g.row(0), &[-0.5, 1.0, -0.25, -0.5]);
        assert_eq!(g.ids(), &[0]);
    }

    #[test]
    fn interpolating_linear_model_has_zero_loss() {
        let kind = ModelKind::LinearRegression { inputs: 2 };
        let p = ModelParams::from_vec(&kind, vec![2.0, -1.0, 0.5]).unwrap();
        let batch: Vec<Example> = [[1.0, 1.0], [0.0, 3.0], [-2.0, 0.25]]
            .iter()
            .enumerate()
            .map(|(i, x)| ex(x, 2.0 * x[0] - x[1] + 0.5, i))
            .collect();
        let (mean, _) = kind.loss(&p, &batch).unwrap();
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn layout_partitions_params() {
        let kind = ModelKind::Mlp { inputs: 5, hidden: 4, classes: 3 };
        let l = kind.layout();
        let mut next = 0;
        for b in l.blocks() {
            assert_eq!(b.range.start, next);
            assert_eq!(b.range.len(), b.shape.0 * b.shape.1);
            next = b.range.end;
        }
        assert_eq!(next, 5 * 4 + 4 + 4 * 3 + 3);
        assert_eq!(kind.param_dim(), next);
    }

    #[test]
    fn errors() {
        let kind = ModelKind::MultinomialLogistic { inputs: 2, classes: 3 };
        let p = ModelParams::zeros(&kind);
        assert!(matches!(
            kind.loss(&p, &[ex(&[f64::NAN, 0.0], 0.0, 0)]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            kind.loss(&p, &[ex(&[0.0, 0.0], 3.0, 0)]),
            Err(Error::InvalidLabel { .. })
        ));
        assert!(matches!(
            kind.loss(&p, &[ex(&[0.0], 0.0, 0)]),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty: [Example; 0] = [];
        assert!(kind.per_sample_grads(&p, &empty).is_err());
        assert!(ModelKind::Mlp { inputs: 2, hidden: 3, classes: 1 }.validate().is_err());
    }

    #[test]
    fn identical_examples_give_identical_rows() {
        let kind = ModelKind::Mlp { inputs: 3, hidden: 4, classes: 3 };
        let p = ModelParams::init(&kind, 1);
        let batch: Vec<Example> = (0..5).map(|i| ex(&[0.3, -1.0, 2.0], 2.0, i)).collect();
        let g = kind.per_sample_grads(&p, &batch).unwrap();
        for r in 1..5 {
            assert_eq!(g.row(r), g.row(0));
        }
    }

    #[test]
    fn predict() {
        let kind = ModelKind::MultinomialLogistic { inputs: 1, classes: 3 };
        let p = ModelParams::from_vec(&kind, vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(kind.predict(&p, &[2.0]).unwrap(), 0.0);
        assert_eq!(kind.predict(&p, &[-2.0]).unwrap(), 2.0);
    }
}

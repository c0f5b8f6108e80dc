use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::data::Dataset;
use crate::error::{Error, Result};

/// Anything local SGD can descend: a mean loss over a batch of sample
/// indices of a dataset, with its gradient.
pub trait Objective: Sync {
    fn num_params(&self) -> usize;

    fn loss_and_grad(&self, params: &[f64], data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Multinomial logistic regression.
    LogisticRegression,
    /// One ReLU hidden layer of the given width.
    Mlp { hidden: usize },
}

/// A classifier architecture. Parameters are a flat vector: weights row-major
/// (one row per output unit), then biases, layer by layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize, classes: usize) -> Result<Self> {
        if input_dim == 0 || classes < 2 || matches!(kind, ModelKind::Mlp { hidden: 0 }) {
            return Err(Error::Config(format!(
                "model needs input_dim >= 1, classes >= 2 and a non-empty hidden layer, got {kind:?} {input_dim}x{classes}"
            )));
        }
        Ok(Self { kind, input_dim, classes })
    }

    pub fn logistic(input_dim: usize, classes: usize) -> Result<Self> {
        Self::new(ModelKind::LogisticRegression, input_dim, classes)
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp { hidden }, input_dim, classes)
    }

    pub fn num_params(&self) -> usize {
        let (p, c) = (self.input_dim, self.classes);
        match self.kind {
            ModelKind::LogisticRegression => c * (p + 1),
            ModelKind::Mlp { hidden } => hidden * (p + 1) + c * (hidden + 1),
        }
    }

    /// Zeros for logistic regression; He-normal weights and zero biases for
    /// the MLP.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        if let ModelKind::Mlp { hidden } = self.kind {
            let (p, c) = (self.input_dim, self.classes);
            let layer1 = Normal::new(0.0, (2.0 / p as f64).sqrt()).expect("positive std");
            let layer2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).expect("positive std");
            for w in &mut params[..hidden * p] {
                *w = layer1.sample(rng);
            }
            let w2 = hidden * (p + 1);
            for w in &mut params[w2..w2 + c * hidden] {
                *w = layer2.sample(rng);
            }
        }
        params
    }

    fn check(&self, params: &[f64], data: &Dataset) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::LengthMismatch { expected: self.num_params(), actual: params.len() });
        }
        if data.dim() != self.input_dim || data.classes() != self.classes {
            return Err(Error::Dataset(format!(
                "data is {}x{}, model expects {}x{}",
                data.dim(),
                data.classes(),
                self.input_dim,
                self.classes
            )));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, value: params[i] });
        }
        Ok(())
    }

    /// Output logits for one sample; `hidden` receives the pre-activations
    /// of the hidden layer (left empty for logistic regression).
    fn forward(&self, params: &[f64], x: &[f64], hidden_pre: &mut Vec<f64>, logits: &mut [f64]) {
        let p = self.input_dim;
        match self.kind {
            ModelKind::LogisticRegression => {
                let (w, b) = params.split_at(self.classes * p);
                affine(w, b, x, logits);
            }
            ModelKind::Mlp { hidden } => {
                let (w1, rest) = params.split_at(hidden * p);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(self.classes * hidden);
                hidden_pre.resize(hidden, 0.0);
                affine(w1, b1, x, hidden_pre);
                let act: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
                affine(w2, b2, &act, logits);
            }
        }
    }

    /// Mean cross-entropy and its exact gradient over `batch`.
    pub fn loss_and_grad(&self, params: &[f64], data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(params, data)?;
        if batch.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        let (p, c) = (self.input_dim, self.classes);
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut pre = Vec::new();
        let mut logits = vec![0.0; c];
        for &i in batch {
            let x = data.row(i);
            let y = data.label(i);
            self.forward(params, x, &mut pre, &mut logits);
            loss += softmax_in_place(&mut logits, y);
            // logits now holds d loss / d logits
            match self.kind {
                ModelKind::LogisticRegression => {
                    let (gw, gb) = grad.split_at_mut(c * p);
                    outer_add(gw, gb, &logits, x);
                }
                ModelKind::Mlp { hidden } => {
                    let w2 = &params[hidden * (p + 1)..hidden * (p + 1) + c * hidden];
                    let act: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
                    let (g1, g2) = grad.split_at_mut(hidden * (p + 1));
                    let (gw2, gb2) = g2.split_at_mut(c * hidden);
                    outer_add(gw2, gb2, &logits, &act);
                    let mut back = vec![0.0; hidden];
                    for (k, &g) in logits.iter().enumerate() {
                        for (h, b) in back.iter_mut().enumerate() {
                            *b += w2[k * hidden + h] * g;
                        }
                    }
                    for (b, &a) in back.iter_mut().zip(&pre) {
                        if a <= 0.0 {
                            *b = 0.0;
                        }
                    }
                    let (gw1, gb1) = g1.split_at_mut(hidden * p);
                    outer_add(gw1, gb1, &back, x);
                }
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, params: &[f64], data: &Dataset, batch: &[usize]) -> Result<f64> {
        self.check(params, data)?;
        let mut pre = Vec::new();
        let mut logits = vec![0.0; self.classes];
        let mut total = 0.0;
        for &i in batch {
            self.forward(params, data.row(i), &mut pre, &mut logits);
            total += softmax_in_place(&mut logits, data.label(i));
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean cross-entropy over the whole dataset.
    pub fn full_loss(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        self.loss(params, data, &all)
    }

    /// Hidden-layer inputs to the rectifier for one sample; empty for
    /// logistic regression. The loss is not differentiable where one is 0.
    pub fn hidden_pre_activations(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut pre = Vec::new();
        let mut logits = vec![0.0; self.classes];
        self.forward(params, x, &mut pre, &mut logits);
        pre
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let mut pre = Vec::new();
        let mut logits = vec![0.0; self.classes];
        self.forward(params, x, &mut pre, &mut logits);
        argmax(&logits)
    }

    /// Fraction of samples classified correctly.
    pub fn accuracy(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        self.check(params, data)?;
        let correct = (0..data.len())
            .filter(|&i| self.predict(params, data.row(i)) == data.label(i))
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

impl Objective for ModelSpec {
    fn num_params(&self) -> usize {
        ModelSpec::num_params(self)
    }

    fn loss_and_grad(&self, params: &[f64], data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        ModelSpec::loss_and_grad(self, params, data, batch)
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let p = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = b[k] + w[k * p..(k + 1) * p].iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
    }
}

fn outer_add(gw: &mut [f64], gb: &mut [f64], g: &[f64], x: &[f64]) {
    let p = x.len();
    for (k, &gk) in g.iter().enumerate() {
        gb[k] += gk;
        for (w, &xi) in gw[k * p..(k + 1) * p].iter_mut().zip(x) {
            *w += gk * xi;
        }
    }
}

/// Replaces logits by `softmax - onehot(label)` and returns the
/// cross-entropy.
fn softmax_in_place(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = logits[label] - max;
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    let loss = sum.ln() - shifted;
    for z in logits.iter_mut() {
        *z /= sum;
    }
    logits[label] -= 1.0;
    loss
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelSpec::logistic(20, 10).unwrap().num_params(), 210);
        assert_eq!(ModelSpec::mlp(20, 16, 10).unwrap().num_params(), 16 * 21 + 10 * 17);
        assert!(ModelSpec::mlp(4, 0, 3).is_err());
        assert!(ModelSpec::logistic(4, 1).is_err());
    }

    #[test]
    fn uniform_predictions_at_zero() {
        let data = Dataset::new(vec![1.0, -2.0, 0.5, 3.0], vec![0, 1], 2, 2).unwrap();
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let theta = vec![0.0; spec.num_params()];
        let (loss, grad) = spec.loss_and_grad(&theta, &data, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (_, swapped) = spec.loss_and_grad(&theta, &data, &[1, 0]).unwrap();
        assert_eq!(grad, swapped);
    }

    #[test]
    fn softmax_loss_is_stable_for_large_logits() {
        let mut z = [1000.0, 0.0, -1000.0];
        let loss = softmax_in_place(&mut z, 0);
        assert!(loss.abs() < 1e-12);
        let mut z = [1000.0, 0.0];
        assert!((softmax_in_place(&mut z, 1) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_batch_gives_the_same_mean() {
        let data = super::super::make_synthetic(3, 4, 5, 2.0, &mut seeded(1)).unwrap();
        for spec in [ModelSpec::logistic(4, 3).unwrap(), ModelSpec::mlp(4, 5, 3).unwrap()] {
            let theta = spec.init_params(&mut seeded(2));
            let batch: Vec<usize> = (0..6).collect();
            let twice: Vec<usize> = batch.iter().chain(&batch).copied().collect();
            let (l1, g1) = spec.loss_and_grad(&theta, &data, &batch).unwrap();
            let (l2, g2) = spec.loss_and_grad(&theta, &data, &twice).unwrap();
            assert!((l1 - l2).abs() < 1e-12);
            assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let data = Dataset::new(vec![1.0, 2.0], vec![0], 2, 2).unwrap();
        let spec = ModelSpec::logistic(3, 2).unwrap();
        assert!(spec.loss_and_grad(&[0.0; 8], &data, &[0]).is_err());
        let spec = ModelSpec::logistic(2, 2).unwrap();
        assert!(spec.loss_and_grad(&[0.0; 5], &data, &[0]).is_err());
        assert!(spec.loss_and_grad(&[f64::NAN; 6], &data, &[0]).is_err());
    }

    #[test]
    fn gradients_agree_with_central_differences() {
        use crate::mlkit::finite_difference_error;
        let data = super::super::make_synthetic(3, 4, 10, 2.0, &mut seeded(3)).unwrap();
        for spec in [ModelSpec::logistic(4, 3).unwrap(), ModelSpec::mlp(4, 6, 3).unwrap()] {
            let theta: Vec<f64> = spec.init_params(&mut seeded(4)).iter().map(|p| p + 0.1).collect();
            let batch = [0, 3, 7, 11, 20];
            let (_, grad) = spec.loss_and_grad(&theta, &data, &batch).unwrap();
            let loss = |p: &[f64]| spec.loss(p, &data, &batch).unwrap();
            assert!(finite_difference_error(&theta, &grad, 1e-4, loss) < 1e-4, "{:?}", spec.kind);

            let mut wrong = grad.clone();
            wrong[1] *= 1.01;
            assert!(finite_difference_error(&theta, &wrong, 1e-4, loss) > 1e-3);
        }
    }

    #[test]
    fn pre_activations_have_hidden_width() {
        let spec = ModelSpec::mlp(2, 3, 2).unwrap();
        let theta: Vec<f64> = (0..spec.num_params()).map(|i| i as f64 * 0.1).collect();
        let pre = spec.hidden_pre_activations(&theta, &[1.0, -1.0]);
        // unit 0: weights (0.0, 0.1), bias 0.6
        assert!((pre[0] - 0.5).abs() < 1e-12);
        assert_eq!(pre.len(), 3);
        assert!(ModelSpec::logistic(2, 2).unwrap().hidden_pre_activations(&[0.0; 6], &[1.0, 1.0]).is_empty());
    }
}

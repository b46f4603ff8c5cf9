//! Two-block feedforward classifier: a tanh feature extractor followed by a
//! linear classification head, with hand-written reverse-mode gradients and
//! SGD-with-momentum.
//!
//! The model family is fixed (dense layers only), so backprop is coded
//! directly per architecture instead of through a general autodiff graph.
//! All arithmetic is `f64` and single-threaded; given the same inputs every
//! operation is bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Element-wise activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn forward(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `y = activation(x W + b)` with `W` of shape
/// `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias length {} does not match weight columns {}",
                bias.len(),
                weight.cols()
            )));
        }
        if !bias.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("bias entries must be finite".into()));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    /// Seeded uniform init in `[-1/sqrt(in_dim), +1/sqrt(in_dim)]`, zero bias.
    fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = 1.0 / (in_dim as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        DenseLayer {
            weight: Matrix::from_vec(in_dim, out_dim, data).expect("sized init"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `x W + b` followed by the activation.
    fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = input.matmul(&self.weight)?;
        out.add_row_vector(&self.bias)?;
        Ok(out.map(|v| self.activation.forward(v)))
    }
}

/// Feature extractor plus linear head. The extractor may be empty, in which
/// case features are the raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    extractor: Vec<DenseLayer>,
    head: DenseLayer,
}

impl Model {
    /// Builds `input_dim -> hidden[0] -> ... -> hidden[last] -> num_classes`
    /// with tanh hidden layers and a linear head, parameters drawn from `rng`.
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Argument("input_dim must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::Argument("num_classes must be at least 2".into()));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::Argument("hidden dims must be positive".into()));
        }
        let mut extractor = Vec::with_capacity(hidden.len());
        let mut dim = input_dim;
        for &h in hidden {
            extractor.push(DenseLayer::init(dim, h, Activation::Tanh, rng));
            dim = h;
        }
        let head = DenseLayer::init(dim, num_classes, Activation::Identity, rng);
        Ok(Model { extractor, head })
    }

    /// Assembles a model from explicit layers, checking that dimensions
    /// compose.
    pub fn from_parts(extractor: Vec<DenseLayer>, head: DenseLayer) -> Result<Self> {
        for pair in extractor.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "extractor layers do not compose: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if let Some(last) = extractor.last() {
            if last.out_dim() != head.in_dim() {
                return Err(Error::Shape(format!(
                    "head input dim {} does not match extractor output {}",
                    head.in_dim(),
                    last.out_dim()
                )));
            }
        }
        Ok(Model { extractor, head })
    }

    pub fn input_dim(&self) -> usize {
        self.extractor
            .first()
            .map(|l| l.in_dim())
            .unwrap_or_else(|| self.head.in_dim())
    }

    /// Dimension of the extracted features consumed by the head.
    pub fn feature_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn extractor(&self) -> &[DenseLayer] {
        &self.extractor
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    /// Runs the batch through extractor and head.
    pub fn forward(&self, batch: &Matrix) -> Result<ForwardPass> {
        let full = self.forward_full(batch)?;
        Ok(ForwardPass {
            features: full.features,
            probs: full.probs,
        })
    }

    /// Forward pass keeping every intermediate activation for backprop.
    fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.rows() == 0 {
            return Err(Error::Shape("batch must have at least one row".into()));
        }
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut activations: Vec<Matrix> = Vec::with_capacity(self.extractor.len());
        let mut current = batch;
        for layer in &self.extractor {
            let out = layer.forward(current)?;
            activations.push(out);
            current = activations.last().expect("just pushed");
        }
        let logits = self.head.forward(current)?;
        if !logits.is_finite() || activations.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite activation in forward pass".into()));
        }
        Ok(ForwardCache {
            activations,
            logits,
        })
    }

    /// Reverse-mode gradients of the scalar loss whose logit-gradient is
    /// supplied.
    pub fn backward(&self, batch: &Matrix, logit_grad: &Matrix) -> Result<Gradients> {
        self.backward_with(batch, Some(logit_grad), None)
    }

    /// Reverse-mode gradients with upstream gradients injected at the logits
    /// and/or at the extractor output. Feature-level gradients are how the
    /// domain-alignment term reaches the extractor without passing through
    /// the head.
    pub fn backward_with(
        &self,
        batch: &Matrix,
        logit_grad: Option<&Matrix>,
        feature_grad: Option<&Matrix>,
    ) -> Result<Gradients> {
        let cache = self.forward_cached(batch)?;
        let features: &Matrix = cache.activations.last().unwrap_or(batch);
        let batch_rows = batch.rows();

        let mut grads = Gradients::zeros_like(self);

        // Gradient flowing into the extractor output.
        let mut feat_grad = Matrix::zeros(batch_rows, self.feature_dim());
        if let Some(lg) = logit_grad {
            if lg.rows() != cache.logits.rows() || lg.cols() != cache.logits.cols() {
                return Err(Error::Shape(format!(
                    "logit grad is {}x{}, logits are {}x{}",
                    lg.rows(),
                    lg.cols(),
                    cache.logits.rows(),
                    cache.logits.cols()
                )));
            }
            grads.head.weight = features.transpose().matmul(lg)?;
            grads.head.bias = lg.column_sums();
            feat_grad = lg.matmul(&self.head.weight.transpose())?;
        }
        if let Some(fg) = feature_grad {
            if fg.rows() != batch_rows || fg.cols() != self.feature_dim() {
                return Err(Error::Shape(format!(
                    "feature grad is {}x{}, features are {}x{}",
                    fg.rows(),
                    fg.cols(),
                    batch_rows,
                    self.feature_dim()
                )));
            }
            feat_grad.add_assign(fg)?;
        }

        // Walk the extractor backwards.
        let mut upstream = feat_grad;
        for idx in (0..self.extractor.len()).rev() {
            let layer = &self.extractor[idx];
            let output = &cache.activations[idx];
            let input: &Matrix = if idx == 0 {
                batch
            } else {
                &cache.activations[idx - 1]
            };
            // dL/dz = dL/dy * act'(z), with act' expressed through y.
            let mut pre_grad = upstream;
            for (g, &y) in pre_grad.data_mut().iter_mut().zip(output.data()) {
                *g *= layer.activation.grad_from_output(y);
            }
            grads.extractor[idx].weight = input.transpose().matmul(&pre_grad)?;
            grads.extractor[idx].bias = pre_grad.column_sums();
            upstream = pre_grad.matmul(&layer.weight.transpose())?;
        }
        Ok(grads)
    }

    /// Total number of scalar parameters.
    pub fn param_len(&self) -> usize {
        self.extractor
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Flat read access to parameter `i` (extractor layers first, weights
    /// before bias within a layer, head last).
    pub fn param(&self, mut i: usize) -> f64 {
        for layer in self.extractor.iter().chain(std::iter::once(&self.head)) {
            let w = layer.weight.data().len();
            if i < w {
                return layer.weight.data()[i];
            }
            i -= w;
            if i < layer.bias.len() {
                return layer.bias[i];
            }
            i -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat write access matching [`Model::param`].
    pub fn set_param(&mut self, mut i: usize, value: f64) {
        for layer in self
            .extractor
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
        {
            let w = layer.weight.data().len();
            if i < w {
                layer.weight.data_mut()[i] = value;
                return;
            }
            i -= w;
            if i < layer.bias.len() {
                layer.bias[i] = value;
                return;
            }
            i -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// Features and class probabilities from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub features: Matrix,
    pub probs: Matrix,
}

/// Forward pass that also exposes the raw logits.
#[derive(Debug, Clone)]
pub struct FullForward {
    pub features: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
}

impl Model {
    /// Like [`Model::forward`] but also returns the raw logits.
    pub fn forward_full(&self, batch: &Matrix) -> Result<FullForward> {
        let cache = self.forward_cached(batch)?;
        let probs = softmax_rows(&cache.logits)?;
        // With an empty extractor the features are the inputs themselves.
        let features = match cache.activations.into_iter().next_back() {
            Some(f) => f,
            None => batch.clone(),
        };
        Ok(FullForward {
            features,
            logits: cache.logits,
            probs,
        })
    }
}

struct ForwardCache {
    activations: Vec<Matrix>,
    logits: Matrix,
}

/// Numerically stabilized softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax of empty vector".into()));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("softmax input must be finite".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let probs = softmax(logits.row(r))?;
        for (c, p) in probs.into_iter().enumerate() {
            out.set(r, c, p);
        }
    }
    Ok(out)
}

/// Per-layer gradient buffers, shape-congruent with a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<LayerGrads>,
    pub head: LayerGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn add_assign(&mut self, other: &LayerGrads) -> Result<()> {
        self.weight.add_assign(&other.weight)?;
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        Ok(())
    }

    fn scale(&mut self, s: f64) {
        self.weight.scale(s);
        for b in &mut self.bias {
            *b *= s;
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            extractor: model.extractor.iter().map(LayerGrads::zeros_like).collect(),
            head: LayerGrads::zeros_like(&model.head),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.extractor.len() != other.extractor.len() {
            return Err(Error::Shape("gradient layer counts differ".into()));
        }
        for (a, b) in self.extractor.iter_mut().zip(&other.extractor) {
            a.add_assign(b)?;
        }
        self.head.add_assign(&other.head)
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.extractor {
            g.scale(s);
        }
        self.head.scale(s);
    }

    pub fn is_finite(&self) -> bool {
        self.extractor.iter().all(LayerGrads::is_finite) && self.head.is_finite()
    }

    /// Flat read access mirroring [`Model::param`] ordering.
    pub fn param(&self, mut i: usize) -> f64 {
        for layer in self.extractor.iter().chain(std::iter::once(&self.head)) {
            let w = layer.weight.data().len();
            if i < w {
                return layer.weight.data()[i];
            }
            i -= w;
            if i < layer.bias.len() {
                return layer.bias[i];
            }
            i -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// SGD with classical momentum.
///
/// Per step: `velocity <- momentum * velocity - lr * grad` followed by
/// `param <- param + velocity`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    learning_rate: f64,
    momentum: f64,
    velocity: Gradients,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, model: &Model) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Argument("momentum must lie in [0, 1)".into()));
        }
        Ok(SgdMomentum {
            learning_rate,
            momentum,
            velocity: Gradients::zeros_like(model),
        })
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient in sgd step".into()));
        }
        if grads.extractor.len() != model.extractor.len() {
            return Err(Error::Shape("gradient layer counts differ".into()));
        }
        let layers = model
            .extractor
            .iter_mut()
            .chain(std::iter::once(&mut model.head));
        let grads_iter = grads.extractor.iter().chain(std::iter::once(&grads.head));
        let vel_iter = self
            .velocity
            .extractor
            .iter_mut()
            .chain(std::iter::once(&mut self.velocity.head));
        for ((layer, grad), vel) in layers.zip(grads_iter).zip(vel_iter) {
            if layer.weight.rows() != grad.weight.rows()
                || layer.weight.cols() != grad.weight.cols()
                || layer.bias.len() != grad.bias.len()
            {
                return Err(Error::Shape("gradient shape does not match model".into()));
            }
            for ((w, &g), v) in layer
                .weight
                .data_mut()
                .iter_mut()
                .zip(grad.weight.data())
                .zip(vel.weight.data_mut())
            {
                *v = self.momentum * *v - self.learning_rate * g;
                *w += *v;
            }
            for ((b, &g), v) in layer.bias.iter_mut().zip(&grad.bias).zip(&mut vel.bias) {
                *v = self.momentum * *v - self.learning_rate * g;
                *b += *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_head_model(weight: Vec<f64>, in_dim: usize, classes: usize) -> Model {
        let head = DenseLayer::new(
            Matrix::from_vec(in_dim, classes, weight).unwrap(),
            vec![0.0; classes],
            Activation::Identity,
        )
        .unwrap();
        Model::from_parts(vec![], head).unwrap()
    }

    #[test]
    fn softmax_uniform_for_zero_logits() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_stabilized_against_overflow() {
        let p = softmax(&[1000.0, 1000.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[0.0, 3.0_f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let shifted: Vec<f64> = logits.iter().map(|v| v + 17.5).collect();
            let a = softmax(&logits).unwrap();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_on_simplex_at_large_magnitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let p = softmax(&logits).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn softmax_empty_is_shape_error() {
        assert!(matches!(softmax(&[]), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_zero_head_gives_uniform_probs() {
        let model = single_head_model(vec![0.0; 3 * 4], 3, 4);
        let batch = Matrix::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.5]).unwrap();
        let out = model.forward(&batch).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                assert!((out.probs.get(r, c) - 0.25).abs() < 1e-15);
            }
        }
        // Identity extractor: features are the inputs.
        assert_eq!(out.features.cols(), 3);
    }

    #[test]
    fn forward_softmax_closed_form_through_head() {
        // x = [1], W = [[0, ln 3]] gives logits (0, ln 3).
        let model = single_head_model(vec![0.0, 3.0_f64.ln()], 1, 2);
        let batch = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let out = model.forward_full(&batch).unwrap();
        assert!((out.probs.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((out.probs.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let model = single_head_model(vec![0.0; 6], 3, 2);
        let batch = Matrix::zeros(2, 4);
        assert!(matches!(model.forward(&batch), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(3, &[4], 2, &mut rng).unwrap();
        let batch = Matrix::from_vec(2, 3, vec![0.1; 6]).unwrap();
        let grads = model.backward(&batch, &Matrix::zeros(2, 2)).unwrap();
        let zero = Gradients::zeros_like(&model);
        assert_eq!(grads, zero);
    }

    #[test]
    fn backward_matches_finite_differences_linear_loss() {
        // Scalar loss sum(a .* logits) has constant logit gradient a.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Model::new(2, &[3], 2, &mut rng).unwrap();
        let batch =
            Matrix::from_vec(3, 2, vec![0.2, -0.4, 1.0, 0.3, -0.7, 0.9]).unwrap();
        let coeff = Matrix::from_vec(
            3,
            2,
            (0..6).map(|i| 0.3 * (i as f64) - 0.8).collect(),
        )
        .unwrap();
        let grads = model.backward(&batch, &coeff).unwrap();
        let n = model.param_len();
        assert!(n <= 50);
        let h = 1e-5;
        for i in 0..n {
            let orig = model.param(i);
            model.set_param(i, orig + h);
            let plus: f64 = model
                .forward_full(&batch)
                .unwrap()
                .logits
                .data()
                .iter()
                .zip(coeff.data())
                .map(|(l, c)| l * c)
                .sum();
            model.set_param(i, orig - h);
            let minus: f64 = model
                .forward_full(&batch)
                .unwrap()
                .logits
                .data()
                .iter()
                .zip(coeff.data())
                .map(|(l, c)| l * c)
                .sum();
            model.set_param(i, orig);
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.param(i);
            let scale = analytic.abs().max(numeric.abs()).max(1.0);
            assert!(
                (analytic - numeric).abs() <= 1e-4 * scale,
                "param {i}: analytic {analytic} numeric {numeric}"
            );
        }
    }

    #[test]
    fn backward_mean_loss_ignores_duplicates() {
        // Mean-reduced loss over a duplicated sample equals the single-sample
        // gradient: feed upstream grads already divided by batch size.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::new(2, &[3], 2, &mut rng).unwrap();
        let single = Matrix::from_vec(1, 2, vec![0.4, -0.2]).unwrap();
        let doubled = Matrix::from_vec(2, 2, vec![0.4, -0.2, 0.4, -0.2]).unwrap();
        let up_single = Matrix::from_vec(1, 2, vec![0.7, -0.3]).unwrap();
        let up_doubled = Matrix::from_vec(2, 2, vec![0.35, -0.15, 0.35, -0.15]).unwrap();
        let a = model.backward(&single, &up_single).unwrap();
        let b = model.backward(&doubled, &up_doubled).unwrap();
        for i in 0..model.param_len() {
            assert!((a.param(i) - b.param(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_zero_grad_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Model::new(2, &[3], 2, &mut rng).unwrap();
        let before = model.clone();
        let grads = Gradients::zeros_like(&model);
        let mut opt = SgdMomentum::new(0.1, 0.9, &model).unwrap();
        opt.step(&mut model, &grads).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn sgd_single_step_hand_computed() {
        // Scalar parameter 1.0, grad 2.0, lr 0.1, momentum 0 -> 0.8.
        let head = DenseLayer::new(
            Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        let mut model = Model::from_parts(vec![], head).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        grads.head.weight.set(0, 0, 2.0);
        let mut opt = SgdMomentum::new(0.1, 0.0, &model).unwrap();
        opt.step(&mut model, &grads).unwrap();
        assert!((model.param(0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = Model::new(2, &[], 2, &mut rng).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        grads.head.weight.data_mut()[0] = f64::NAN;
        let mut opt = SgdMomentum::new(0.1, 0.0, &model).unwrap();
        assert!(matches!(
            opt.step(&mut model, &grads),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn seeded_init_is_bitwise_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let m1 = Model::new(4, &[8, 3], 2, &mut a).unwrap();
        let m2 = Model::new(4, &[8, 3], 2, &mut b).unwrap();
        assert_eq!(m1, m2);
    }
}

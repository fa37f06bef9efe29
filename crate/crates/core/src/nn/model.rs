use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    SoftmaxXent,
    LinearMse,
    HingeMargin,
}

impl OutputHead {
    pub fn name(self) -> &'static str {
        match self {
            OutputHead::SoftmaxXent => "softmax_xent",
            OutputHead::LinearMse => "linear_mse",
            OutputHead::HingeMargin => "hinge_margin",
        }
    }

    pub fn default_loss(self) -> Loss {
        match self {
            OutputHead::SoftmaxXent => Loss::CrossEntropy,
            OutputHead::LinearMse => Loss::Mse,
            OutputHead::HingeMargin => Loss::Hinge,
        }
    }

    pub fn is_classifier(self) -> bool {
        !matches!(self, OutputHead::LinearMse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Hinge,
    Mse,
}

/// Layer widths plus activation and output head of a dense MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_head: OutputHead,
}

impl ModelShape {
    pub fn new(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_head: OutputHead,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("a model needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(ModelShape {
            layer_sizes,
            activation,
            output_head,
        })
    }

    /// The default MNIST classifier, 784-128-64-10 with ReLU.
    pub fn mnist_default() -> Self {
        ModelShape::new(
            vec![784, 128, 64, 10],
            Activation::Relu,
            OutputHead::SoftmaxXent,
        )
        .expect("static shape")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_head(&self) -> OutputHead {
        self.output_head
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// `(weight_offset, bias_offset, n_in, n_out)` for every layer.
    pub(crate) fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let entry = (offset, offset + n_in * n_out, n_in, n_out);
                offset += (n_in + 1) * n_out;
                entry
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    shape: ModelShape,
    params: ParamVector,
}

/// Activations kept for the backward pass.
struct Trace {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Output scores of the last layer.
    scores: Array2<f64>,
}

impl Model {
    pub fn from_params(shape: ModelShape, params: ParamVector) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                expected: shape.param_count(),
                actual: params.len(),
                context: "parameter count",
            });
        }
        Ok(Model { shape, params })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        let params = ParamVector::zeros(shape.param_count());
        Model { shape, params }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(shape.param_count());
        for (_, _, n_in, n_out) in shape.layer_offsets() {
            let bound = 1.0 / (n_in as f64).sqrt();
            for _ in 0..(n_in + 1) * n_out {
                values.push(rng.gen_range(-bound..bound));
            }
        }
        Model {
            shape,
            params: ParamVector::new(values),
        }
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    /// A copy with `update` added to the parameters.
    pub fn apply_update(&self, update: &ParamVector) -> Result<Model> {
        if update.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: update.len(),
                context: "update length",
            });
        }
        Ok(Model {
            shape: self.shape.clone(),
            params: self.params.add(update),
        })
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Model> {
        Model::from_params(self.shape.clone(), params)
    }

    fn layer_views(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let p = self.params.as_slice();
        self.shape
            .layer_offsets()
            .into_iter()
            .map(|(w, b, n_in, n_out)| {
                let weights = ArrayView2::from_shape((n_in, n_out), &p[w..b]).expect("layout");
                let bias = ArrayView1::from(&p[b..b + n_out]);
                (weights, bias)
            })
            .collect()
    }

    fn check_inputs(&self, inputs: &ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.shape.input_size() && inputs.nrows() > 0 {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_size(),
                actual: inputs.ncols(),
                context: "input row width",
            });
        }
        Ok(())
    }

    fn run(&self, inputs: ArrayView2<'_, f64>, keep: bool) -> Trace {
        let layers = self.layer_views();
        let last = layers.len() - 1;
        let mut kept = Vec::with_capacity(if keep { layers.len() } else { 0 });
        let mut current = inputs.to_owned();
        for (l, (weights, bias)) in layers.iter().enumerate() {
            let mut z = current.dot(weights);
            z += bias;
            if l < last && self.shape.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            let prev = std::mem::replace(&mut current, z);
            if keep {
                kept.push(prev);
            }
        }
        Trace {
            inputs: kept,
            scores: current,
        }
    }

    /// Output scores (pre-softmax logits, margins, or regression outputs).
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if inputs.nrows() == 0 {
            return Ok(Array2::zeros((0, self.shape.output_size())));
        }
        self.check_inputs(&inputs)?;
        Ok(self.run(inputs, false).scores)
    }

    /// Predicted class per row; ties resolve to the lowest class index.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(self
            .forward(inputs)?
            .outer_iter()
            .map(|row| argmax(row.iter()))
            .collect())
    }

    /// Mean loss over `batch` and its gradient w.r.t. the parameters.
    pub fn loss_and_gradient(&self, batch: &Dataset, loss: Loss) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::invalid("loss over an empty batch"));
        }
        let inputs = batch.inputs().view();
        self.check_inputs(&inputs)?;
        let trace = self.run(inputs, true);
        let (value, d_scores) = loss_terms(&trace.scores, batch.labels(), loss, true)?;
        let d_scores = d_scores.expect("gradient requested");
        Ok((value, self.backward(trace, d_scores)))
    }

    /// Mean loss over `data` without the gradient.
    pub fn loss(&self, data: &Dataset, loss: Loss) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("loss over an empty dataset"));
        }
        let scores = self.forward(data.inputs().view())?;
        Ok(loss_terms(&scores, data.labels(), loss, false)?.0)
    }

    fn backward(&self, trace: Trace, mut delta: Array2<f64>) -> ParamVector {
        let layers = self.layer_views();
        let offsets = self.shape.layer_offsets();
        let mut grad = vec![0.0; self.shape.param_count()];
        for l in (0..layers.len()).rev() {
            let (w_off, b_off, n_in, n_out) = offsets[l];
            let input = &trace.inputs[l];
            let g_w = input.t().dot(&delta);
            // logical (row-major) order regardless of the product's memory layout
            for (dst, &v) in grad[w_off..b_off].iter_mut().zip(g_w.iter()) {
                *dst = v;
            }
            let g_b = delta.sum_axis(Axis(0));
            for (dst, &v) in grad[b_off..b_off + n_out].iter_mut().zip(g_b.iter()) {
                *dst = v;
            }
            if l > 0 {
                let mut prev = delta.dot(&layers[l].0.t());
                if self.shape.activation == Activation::Relu {
                    // input to layer l is relu(z_{l-1}); zero where inactive
                    ndarray::Zip::from(&mut prev)
                        .and(input)
                        .for_each(|d, &a| {
                            if a <= 0.0 {
                                *d = 0.0;
                            }
                        });
                }
                debug_assert_eq!(prev.ncols(), n_in);
                delta = prev;
            }
        }
        ParamVector::new(grad)
    }
}

/// Index of the largest score; the first one wins ties.
pub(crate) fn argmax<'a>(row: impl IntoIterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, &v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

fn class_labels<'a>(labels: &'a Labels, n_out: usize) -> Result<&'a [usize]> {
    match labels {
        Labels::Class { values, .. } => {
            if let Some(&label) = values.iter().find(|&&l| l >= n_out) {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: n_out,
                });
            }
            Ok(values)
        }
        Labels::Real(_) => Err(Error::invalid("classification loss needs class labels")),
    }
}

/// Mean loss and, optionally, its gradient w.r.t. the scores.
fn loss_terms(
    scores: &Array2<f64>,
    labels: &Labels,
    loss: Loss,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let (b, k) = scores.dim();
    let inv_b = 1.0 / b as f64;
    let mut grad = want_grad.then(|| Array2::<f64>::zeros((b, k)));
    let mut total = 0.0;
    match loss {
        Loss::CrossEntropy => {
            let ys = class_labels(labels, k)?;
            for (i, row) in scores.outer_iter().enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let exps: Array1<f64> = row.mapv(|v| (v - max).exp());
                let z: f64 = exps.sum();
                total += z.ln() + max - row[ys[i]];
                if let Some(g) = grad.as_mut() {
                    let mut gi = g.row_mut(i);
                    for c in 0..k {
                        gi[c] = exps[c] / z * inv_b;
                    }
                    gi[ys[i]] -= inv_b;
                }
            }
        }
        Loss::Hinge => {
            let ys = class_labels(labels, k)?;
            if k < 2 {
                return Err(Error::invalid("hinge loss needs at least two outputs"));
            }
            for (i, row) in scores.outer_iter().enumerate() {
                let y = ys[i];
                let mut rival = if y == 0 { 1 } else { 0 };
                for c in 0..k {
                    if c != y && row[c] > row[rival] {
                        rival = c;
                    }
                }
                let margin = 1.0 - row[y] + row[rival];
                if margin > 0.0 {
                    total += margin;
                    if let Some(g) = grad.as_mut() {
                        g[[i, y]] -= inv_b;
                        g[[i, rival]] += inv_b;
                    }
                }
            }
        }
        Loss::Mse => {
            let inv_k = 1.0 / k as f64;
            let target = |i: usize, c: usize| -> Result<f64> {
                Ok(match labels {
                    Labels::Real(values) => {
                        if k != 1 {
                            return Err(Error::invalid(
                                "regression targets need a single output unit",
                            ));
                        }
                        values[i]
                    }
                    Labels::Class { values, .. } => {
                        if values[i] >= k {
                            return Err(Error::LabelOutOfRange {
                                label: values[i],
                                classes: k,
                            });
                        }
                        if values[i] == c {
                            1.0
                        } else {
                            0.0
                        }
                    }
                })
            };
            for i in 0..b {
                for c in 0..k {
                    let diff = scores[[i, c]] - target(i, c)?;
                    total += diff * diff * inv_k;
                    if let Some(g) = grad.as_mut() {
                        g[[i, c]] = 2.0 * diff * inv_k * inv_b;
                    }
                }
            }
        }
    }
    Ok((total * inv_b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn class_set(inputs: Array2<f64>, labels: Vec<usize>, k: usize) -> Dataset {
        Dataset::new(
            "t",
            inputs,
            Labels::Class {
                values: labels,
                n_classes: k,
            },
        )
        .unwrap()
    }

    #[test]
    fn param_count_formula() {
        let s = ModelShape::new(vec![784, 128, 64, 10], Activation::Relu, OutputHead::SoftmaxXent)
            .unwrap();
        assert_eq!(s.param_count(), 785 * 128 + 129 * 64 + 65 * 10);
        assert!(ModelShape::new(vec![3], Activation::Relu, OutputHead::SoftmaxXent).is_err());
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let s = ModelShape::new(vec![3, 2], Activation::Identity, OutputHead::LinearMse).unwrap();
        let m = Model::zeros(s);
        let out = m.forward(array![[1.0, -2.0, 5.0], [0.3, 0.0, 9.0]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_two_two_one() {
        let s = ModelShape::new(vec![2, 2, 1], Activation::Relu, OutputHead::LinearMse).unwrap();
        // W1 = ones(2x2), b1 = 0, W2 = ones(2x1), b2 = 0
        let params = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let m = Model::from_params(s, ParamVector::new(params)).unwrap();
        let out = m.forward(array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(out[[0, 0]], 4.0);
    }

    #[test]
    fn empty_batch_gives_empty_output() {
        let s = ModelShape::new(vec![2, 3], Activation::Relu, OutputHead::SoftmaxXent).unwrap();
        let out = Model::zeros(s).forward(Array2::zeros((0, 2)).view()).unwrap();
        assert_eq!(out.dim(), (0, 3));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let s = ModelShape::new(vec![2, 3], Activation::Relu, OutputHead::SoftmaxXent).unwrap();
        let err = Model::zeros(s).forward(array![[1.0, 2.0, 3.0]].view());
        assert!(matches!(err, Err(Error::DimensionMismatch { expected: 2, actual: 3, .. })));
    }

    #[test]
    fn uniform_softmax_loss_is_ln_k() {
        let s = ModelShape::new(vec![3, 4, 5], Activation::Relu, OutputHead::SoftmaxXent).unwrap();
        let data = class_set(array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]], vec![0, 4], 5);
        let (loss, _) = Model::zeros(s).loss_and_gradient(&data, Loss::CrossEntropy).unwrap();
        assert_relative_eq!(loss, 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn satisfied_margin_has_zero_hinge() {
        let s = ModelShape::new(vec![1, 2], Activation::Identity, OutputHead::HingeMargin).unwrap();
        // score_0 = 0, score_1 = 2x: class 1 wins by >= 1 for x >= 0.5
        let m = Model::from_params(s, ParamVector::new(vec![0.0, 2.0, 0.0, 0.0])).unwrap();
        let data = class_set(array![[0.5], [1.0], [3.0]], vec![1, 1, 1], 2);
        let (loss, grad) = m.loss_and_gradient(&data, Loss::Hinge).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let s = ModelShape::new(vec![1, 2], Activation::Identity, OutputHead::SoftmaxXent).unwrap();
        let data = class_set(array![[0.5]], vec![2], 3);
        let err = Model::zeros(s).loss_and_gradient(&data, Loss::CrossEntropy);
        assert!(matches!(err, Err(Error::LabelOutOfRange { label: 2, classes: 2 })));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 1.0, 1.0]), 1);
    }
}

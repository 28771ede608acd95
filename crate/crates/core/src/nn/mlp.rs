use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// A dense feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDocument", into = "MlpDocument")]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

/// Layer inputs recorded by [`Mlp::forward_batch`], one column per sample.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activations: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: bias length {} != out dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: zero-sized layer"
                )));
            }
            if i > 0 && layers[i - 1].out_dim() != layer.in_dim() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: in dim {} does not match previous out dim {}",
                    layer.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
            if layer.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: softmax is only allowed on the final layer"
                )));
            }
            if layer
                .weights
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: non-finite parameter"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random initialization: He-uniform for relu layers, Glorot-uniform
    /// otherwise, zero biases. `sizes` has one more entry than `activations`.
    pub fn init(sizes: &[usize], activations: &[Activation], rng: &mut SeededRng) -> Result<Self> {
        if sizes.len() != activations.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} sizes for {} layers",
                sizes.len(),
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    Activation::Linear | Activation::Softmax => {
                        (6.0 / (fan_in + fan_out) as f64).sqrt()
                    }
                };
                // Filled row by row so the draw order matches the serialized layout.
                let weights = DMatrix::from_row_iterator(
                    fan_out,
                    fan_in,
                    (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)),
                );
                Layer {
                    weights,
                    bias: DVector::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.in_dim(), input.len())?;
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network input".into()));
        }
        let mut x = DVector::from_column_slice(input);
        for layer in &self.layers {
            let mut z = &layer.weights * &x + &layer.bias;
            apply_activation(layer.activation, z.as_mut_slice());
            x = z;
        }
        Ok(x.as_slice().to_vec())
    }

    /// Forward pass over a batch whose columns are samples.
    pub fn forward_batch(&self, inputs: DMatrix<f64>) -> Result<ForwardTrace> {
        check_dim(self.in_dim(), inputs.nrows())?;
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network input".into()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs);
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let mut z = &layer.weights * x;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
                apply_activation(layer.activation, col.as_mut_slice());
            }
            activations.push(z);
        }
        Ok(ForwardTrace { activations })
    }

    /// Backpropagates `output_grad` (same shape as the trace output) and
    /// returns parameter gradients summed over the batch plus the gradient
    /// with respect to the batch inputs.
    pub fn backward_batch(
        &self,
        trace: &ForwardTrace,
        output_grad: &DMatrix<f64>,
    ) -> Result<(MlpGrads, DMatrix<f64>)> {
        let out = trace.output();
        if output_grad.shape() != out.shape() || trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "output gradient shape {:?} does not match forward output {:?}",
                output_grad.shape(),
                out.shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let post = &trace.activations[i + 1];
            activation_backward(layer.activation, post, &mut delta);
            let input = &trace.activations[i];
            let w_grad = &delta * input.transpose();
            let b_grad = delta.column_sum();
            let next = layer.weights.tr_mul(&delta);
            grads.push((w_grad, b_grad));
            delta = next;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    /// Single-sample backward pass.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        check_dim(self.out_dim(), output_grad.len())?;
        let trace = self.forward_batch(DMatrix::from_column_slice(input.len(), 1, input))?;
        let g = DMatrix::from_column_slice(output_grad.len(), 1, output_grad);
        let (grads, input_grad) = self.backward_batch(&trace, &g)?;
        Ok((grads, input_grad.as_slice().to_vec()))
    }

    /// Parameters flattened layer by layer: weights row-major, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend(layer.weights.transpose().iter());
            flat.extend(layer.bias.iter());
        }
        flat
    }

    /// Copy of `self` with parameters taken from a [`Mlp::to_flat`] layout.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        check_dim(self.param_count(), flat.len())?;
        let mut rest = flat;
        let mut out = self.clone();
        for layer in &mut out.layers {
            let (rows, cols) = layer.weights.shape();
            let (w, tail) = rest.split_at(rows * cols);
            layer.weights = DMatrix::from_row_slice(rows, cols, w);
            let (b, tail) = tail.split_at(rows);
            layer.bias = DVector::from_column_slice(b);
            rest = tail;
        }
        Ok(out)
    }
}

fn apply_activation(activation: Activation, z: &mut [f64]) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => softmax_in_place(z),
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Turns a gradient w.r.t. a layer's output into one w.r.t. its pre-activation.
fn activation_backward(activation: Activation, post: &DMatrix<f64>, delta: &mut DMatrix<f64>) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => delta.zip_apply(post, |d, p| {
            if p <= 0.0 {
                *d = 0.0
            }
        }),
        Activation::Softmax => {
            for (mut d, s) in delta.column_iter_mut().zip(post.column_iter()) {
                let dot = d.dot(&s);
                d.zip_apply(&s, |g, s| *g = s * (*g - dot));
            }
        }
    }
}

impl MlpGrads {
    pub fn zeros_like(params: &Mlp) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| {
                    (
                        DMatrix::zeros(l.out_dim(), l.in_dim()),
                        DVector::zeros(l.out_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    pub fn matches(&self, params: &Mlp) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|((w, b), l)| w.shape() == l.weights.shape() && b.len() == l.bias.len())
    }

    /// Same layout as [`Mlp::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in &self.layers {
            flat.extend(w.transpose().iter());
            flat.extend(b.iter());
        }
        flat
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    activation: Activation,
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpDocument {
    layers: Vec<LayerDocument>,
}

impl From<Mlp> for MlpDocument {
    fn from(mlp: Mlp) -> Self {
        MlpDocument {
            layers: mlp
                .layers
                .into_iter()
                .map(|l| LayerDocument {
                    activation: l.activation,
                    rows: l.out_dim(),
                    cols: l.in_dim(),
                    weights: l.weights.transpose().as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpDocument> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDocument) -> Result<Self> {
        let layers = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                if l.weights.len() != l.rows * l.cols {
                    return Err(Error::InvalidArgument(format!(
                        "layer {i}: {} weights for a {}x{} matrix",
                        l.weights.len(),
                        l.rows,
                        l.cols
                    )));
                }
                Ok(Layer {
                    weights: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                    bias: DVector::from_vec(l.bias),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: DMatrix<f64>, b: Vec<f64>, activation: Activation) -> Mlp {
        Mlp::new(vec![Layer {
            weights: w,
            bias: DVector::from_vec(b),
            activation,
        }])
        .unwrap()
    }

    #[test]
    fn identity_linear_and_relu() {
        let id = DMatrix::identity(2, 2);
        let lin = single(id.clone(), vec![0.0, 0.0], Activation::Linear);
        assert_eq!(lin.forward(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        let relu = single(id, vec![0.0, 0.0], Activation::Relu);
        assert_eq!(relu.forward(&[3.0, -1.0]).unwrap(), vec![3.0, 0.0]);
    }

    #[test]
    fn hand_matrix_multiply() {
        let net = single(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![0.5],
            Activation::Linear,
        );
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), vec![5.5]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = single(DMatrix::identity(2, 2), vec![0.0, 0.0], Activation::Linear);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(net.forward(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn construction_checks() {
        let soft = Layer {
            weights: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
            activation: Activation::Softmax,
        };
        let lin = Layer {
            activation: Activation::Linear,
            ..soft.clone()
        };
        assert!(Mlp::new(vec![soft.clone(), lin.clone()]).is_err());
        assert!(Mlp::new(vec![lin.clone(), soft]).is_ok());
        let wide = Layer {
            weights: DMatrix::zeros(3, 3),
            bias: DVector::zeros(3),
            activation: Activation::Linear,
        };
        assert!(Mlp::new(vec![lin, wide]).is_err());
        assert!(Mlp::new(vec![]).is_err());
    }

    #[test]
    fn softmax_output_on_simplex() {
        let mut rng = SeededRng::new(4);
        let net = Mlp::init(
            &[5, 7, 4],
            &[Activation::Relu, Activation::Softmax],
            &mut rng,
        )
        .unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| 20.0 * rng.normal()).collect();
            let y = net.forward(&x).unwrap();
            assert!(y.iter().all(|&v| v >= 0.0));
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_layer_gradient_is_input() {
        let net = single(
            DMatrix::from_row_slice(1, 3, &[0.2, -0.4, 0.1]),
            vec![0.3],
            Activation::Linear,
        );
        let x = [1.5, -2.0, 0.25];
        let (grads, input_grad) = net.backward(&x, &[1.0]).unwrap();
        assert_eq!(grads.layers[0].0.as_slice(), &x);
        assert_eq!(grads.layers[0].1[0], 1.0);
        assert_eq!(input_grad, vec![0.2, -0.4, 0.1]);
    }

    #[test]
    fn relu_flat_region_has_zero_input_gradient() {
        let net = single(
            DMatrix::identity(2, 2),
            vec![-10.0, -10.0],
            Activation::Relu,
        );
        let (_, input_grad) = net.backward(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(input_grad, vec![0.0, 0.0]);
    }

    #[test]
    fn batch_matches_single_forward() {
        let mut rng = SeededRng::new(8);
        let net = Mlp::init(
            &[3, 6, 2],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        let batch = DMatrix::from_fn(3, 4, |r, c| xs[c][r]);
        let trace = net.forward_batch(batch).unwrap();
        for (c, x) in xs.iter().enumerate() {
            let y = net.forward(x).unwrap();
            for r in 0..2 {
                assert!((trace.output()[(r, c)] - y[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = SeededRng::new(2);
        let net = Mlp::init(
            &[3, 4, 2],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.param_count());
        assert_eq!(net.with_flat(&flat).unwrap(), net);
        // row-major layout
        assert_eq!(flat[1], net.layers()[0].weights[(0, 1)]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = SeededRng::new(12);
        let net = Mlp::init(
            &[4, 3, 2],
            &[Activation::Relu, Activation::Softmax],
            &mut rng,
        )
        .unwrap();
        let json = serde_json::to_string(&net).unwrap();
        assert!(json.contains("\"activation\":\"softmax\""));
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn json_rejects_invalid_document() {
        let bad = r#"{"layers":[{"activation":"linear","rows":2,"cols":2,"weights":[1,2,3],"bias":[0,0]}]}"#;
        assert!(serde_json::from_str::<Mlp>(bad).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = Mlp::init(&[3, 3], &[Activation::Linear], &mut SeededRng::new(1)).unwrap();
        let b = Mlp::init(&[3, 3], &[Activation::Linear], &mut SeededRng::new(1)).unwrap();
        let c = Mlp::init(&[3, 3], &[Activation::Linear], &mut SeededRng::new(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 6.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= limit));
    }
}

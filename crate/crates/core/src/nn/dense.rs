use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier_init, Gradients, NnError};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::ReLU => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalisation with learnable scale/shift and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// Weight of the old running value in each update.
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// How to build one layer: output width, activation, dropout, batch-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub outputs: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn hidden(outputs: usize, dropout: f64) -> Self {
        Self {
            outputs,
            activation: Activation::ReLU,
            dropout,
            batch_norm: true,
        }
    }

    pub fn output(outputs: usize, activation: Activation) -> Self {
        Self {
            outputs,
            activation,
            dropout: 0.0,
            batch_norm: false,
        }
    }
}

/// `x W + b`, optional batch-norm, activation, then inverted dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRecord", try_from = "LayerRecord")]
pub struct Layer {
    /// `(inputs, outputs)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub dropout: f64,
    pub batch_norm: Option<BatchNorm>,
}

impl Layer {
    pub fn new(inputs: usize, spec: LayerSpec, seed: u64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(NnError::BadHyperparameter(format!(
                "dropout rate {} outside [0, 1)",
                spec.dropout
            )));
        }
        Ok(Self {
            weights: xavier_init((inputs, spec.outputs), seed)?,
            bias: Array1::zeros(spec.outputs),
            activation: spec.activation,
            dropout: spec.dropout,
            batch_norm: spec.batch_norm.then(|| BatchNorm::new(spec.outputs)),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Whether batch statistics (train) or running statistics (eval) were used.
    batch_stats: bool,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    bn: Option<BnCache>,
    activated: Array2<f64>,
    /// Dropout mask with the inverted scale folded in.
    mask: Option<Array2<f64>>,
}

/// Intermediate values of a forward pass, tied to the parameter generation
/// that produced them.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
    #[serde(skip)]
    generation: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn new(inputs: usize, specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = inputs;
        for (k, spec) in specs.iter().enumerate() {
            layers.push(Layer::new(width, *spec, derive_seed(seed, &[k as u64]))?);
            width = spec.outputs;
        }
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(NnError::ShapeMismatch {
                    expected: (pair[0].outputs(), pair[1].outputs()),
                    found: (pair[1].inputs(), pair[1].outputs()),
                });
            }
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mark the parameters as changed; outstanding caches become stale.
    pub fn bump_generation(&mut self) {
        self.generation += 1;
    }

    /// Set every weight, bias and batch-norm shift to zero (scales stay 1).
    pub fn zero_parameters(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
            if let Some(bn) = &mut l.batch_norm {
                bn.beta.fill(0.0);
            }
        }
        self.generation += 1;
    }

    /// Forward pass. Train mode draws dropout masks from `rng` and updates
    /// batch-norm running statistics; Eval mode is a pure function of the
    /// weights and input.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        for layer in &mut self.layers {
            let mut h = x.dot(&layer.weights) + &layer.bias;
            let bn = layer
                .batch_norm
                .as_mut()
                .map(|bn| batch_norm_forward(bn, &mut h, mode));
            h.mapv_inplace(|v| layer.activation.apply(v));
            let activated = h;
            let (out, mask) = if mode == Mode::Train && layer.dropout > 0.0 {
                let keep = 1.0 - layer.dropout;
                let mask = Array2::from_shape_simple_fn(activated.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&activated * &mask, Some(mask))
            } else {
                (activated.clone(), None)
            };
            caches.push(LayerCache {
                input: x,
                bn,
                activated,
                mask,
            });
            x = out;
        }
        Ok((
            x,
            ForwardCache {
                generation: self.generation,
                layers: caches,
            },
        ))
    }

    /// Eval-mode inference.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(batch)?;
        let mut x = batch.to_owned();
        for layer in &self.layers {
            let mut h = x.dot(&layer.weights) + &layer.bias;
            if let Some(bn) = &layer.batch_norm {
                Zip::from(h.rows_mut()).for_each(|mut row| {
                    Zip::from(&mut row)
                        .and(&bn.running_mean)
                        .and(&bn.running_var)
                        .and(&bn.gamma)
                        .and(&bn.beta)
                        .for_each(|v, &m, &var, &g, &b| {
                            *v = g * (*v - m) / (var + bn.eps).sqrt() + b;
                        });
                });
            }
            h.mapv_inplace(|v| layer.activation.apply(v));
            x = h;
        }
        Ok(x)
    }

    /// Exact gradients of the loss with respect to every parameter, given the
    /// gradient of the loss with respect to the network output. Also returns
    /// the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        let expected = cache
            .layers
            .last()
            .map(|c| c.activated.dim())
            .unwrap_or((0, 0));
        if output_grad.dim() != expected {
            return Err(NnError::ShapeMismatch {
                expected,
                found: output_grad.dim(),
            });
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.to_owned();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            if let Some(mask) = &lc.mask {
                g *= mask;
            }
            Zip::from(&mut g)
                .and(&lc.activated)
                .for_each(|gv, &a| *gv *= layer.activation.derivative_from_output(a));
            let mut bn_grads = None;
            if let (Some(bn), Some(bc)) = (&layer.batch_norm, &lc.bn) {
                let (dz, dgamma, dbeta) = batch_norm_backward(bn, bc, &g);
                g = dz;
                bn_grads = Some((dgamma, dbeta));
            }
            let dw = lc.input.t().dot(&g);
            let db = g.sum_axis(Axis(0));
            let dx = g.dot(&layer.weights.t());
            let mut bufs = vec![into_vec(dw), db.to_vec()];
            if let Some((dgamma, dbeta)) = bn_grads {
                bufs.push(dgamma.to_vec());
                bufs.push(dbeta.to_vec());
            }
            per_layer.push(bufs);
            g = dx;
        }
        per_layer.reverse();
        Ok((Gradients(per_layer.into_iter().flatten().collect()), g))
    }

    /// Parameter buffers: per layer weights, bias, then gamma/beta if the
    /// layer is batch-normalised.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            if let Some(bn) = &l.batch_norm {
                out.push(bn.gamma.as_slice().expect("standard layout"));
                out.push(bn.beta.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut l.batch_norm {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<(), NnError> {
        if batch.ncols() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: (batch.nrows(), self.input_dim()),
                found: batch.dim(),
            });
        }
        Ok(())
    }
}

fn into_vec(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

fn batch_norm_forward(bn: &mut BatchNorm, h: &mut Array2<f64>, mode: Mode) -> BnCache {
    let n = h.nrows() as f64;
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
            let var = h.var_axis(Axis(0), 0.0);
            let unbiased = if n > 1.0 {
                &var * (n / (n - 1.0))
            } else {
                var.clone()
            };
            let m = bn.momentum;
            bn.running_mean = &bn.running_mean * m + &mean * (1.0 - m);
            bn.running_var = &bn.running_var * m + &unbiased * (1.0 - m);
            (mean, var, true)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone(), false),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = (&*h - &mean) * &inv_std;
    *h = &xhat * &bn.gamma + &bn.beta;
    BnCache {
        xhat,
        inv_std,
        batch_stats,
    }
}

fn batch_norm_backward(
    bn: &BatchNorm,
    cache: &BnCache,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &bn.gamma;
    let dz = if cache.batch_stats {
        let n = dy.nrows() as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dz = &dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        dz *= &(&cache.inv_std / n);
        dz
    } else {
        &dxhat * &cache.inv_std
    };
    (dz, dgamma, dbeta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BatchNormRecord {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    eps: f64,
}

/// Checkpoint form of a layer: shapes plus row-major parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    dropout: f64,
    weights: Vec<f64>,
    bias: Vec<f64>,
    batch_norm: Option<BatchNormRecord>,
}

impl From<Layer> for LayerRecord {
    fn from(l: Layer) -> Self {
        Self {
            inputs: l.inputs(),
            outputs: l.outputs(),
            activation: l.activation,
            dropout: l.dropout,
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
            batch_norm: l.batch_norm.map(|bn| BatchNormRecord {
                gamma: bn.gamma.to_vec(),
                beta: bn.beta.to_vec(),
                running_mean: bn.running_mean.to_vec(),
                running_var: bn.running_var.to_vec(),
                momentum: bn.momentum,
                eps: bn.eps,
            }),
        }
    }
}

impl TryFrom<LayerRecord> for Layer {
    type Error = String;

    fn try_from(r: LayerRecord) -> Result<Self, String> {
        let weights = Array2::from_shape_vec((r.inputs, r.outputs), r.weights)
            .map_err(|e| format!("weights: {e}"))?;
        let width_ok = |v: &Vec<f64>| v.len() == r.outputs;
        if !width_ok(&r.bias) {
            return Err("bias length does not match outputs".into());
        }
        let batch_norm = match r.batch_norm {
            Some(b) => {
                if ![&b.gamma, &b.beta, &b.running_mean, &b.running_var]
                    .into_iter()
                    .all(width_ok)
                {
                    return Err("batch-norm length does not match outputs".into());
                }
                Some(BatchNorm {
                    gamma: b.gamma.into(),
                    beta: b.beta.into(),
                    running_mean: b.running_mean.into(),
                    running_var: b.running_var.into(),
                    momentum: b.momentum,
                    eps: b.eps,
                })
            }
            None => None,
        };
        Ok(Layer {
            weights,
            bias: r.bias.into(),
            activation: r.activation,
            dropout: r.dropout,
            batch_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net(n: usize) -> DenseNet {
        let mut net = DenseNet::new(n, &[LayerSpec::output(n, Activation::Identity)], 0).unwrap();
        net.layers_mut()[0].weights = Array2::eye(n);
        net
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = identity_net(3);
        let x = array![[1.0, -2.0, 0.5], [0.0, 3.0, 4.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, _) = net.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn sigmoid_head_is_bounded() {
        let net = DenseNet::new(
            4,
            &[
                LayerSpec::hidden(8, 0.0),
                LayerSpec::output(2, Activation::Sigmoid),
            ],
            3,
        )
        .unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - 2.0) * 10.0 + j as f64);
        let y = net.predict(x.view()).unwrap();
        assert!(y
            .iter()
            .all(|&v| v > 0.0 && v < 1.0 || v == 1.0 || v == 0.0));
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn train_mode_is_deterministic_per_seed() {
        let base = DenseNet::new(
            3,
            &[
                LayerSpec::hidden(6, 0.2),
                LayerSpec::output(1, Activation::Sigmoid),
            ],
            5,
        )
        .unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let run = || {
            let mut net = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            net.forward(x.view(), Mode::Train, &mut rng).unwrap().0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_and_stale_cache() {
        let mut net = identity_net(2);
        let bad = Array2::<f64>::zeros((1, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            net.forward(bad.view(), Mode::Eval, &mut rng),
            Err(NnError::ShapeMismatch { .. })
        ));
        let x = Array2::<f64>::ones((1, 2));
        let (_, cache) = net.forward(x.view(), Mode::Train, &mut rng).unwrap();
        net.bump_generation();
        assert_eq!(
            net.backward(&cache, x.view()).unwrap_err(),
            NnError::StaleCache
        );
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut net = DenseNet::new(
            3,
            &[
                LayerSpec::hidden(4, 0.0),
                LayerSpec::output(2, Activation::Tanh),
            ],
            1,
        )
        .unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64) - (j as f64) * 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng).unwrap();
        let (g, dx) = net
            .backward(&cache, Array2::zeros(y.raw_dim()).view())
            .unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_mse_gradient_matches_closed_form() {
        // y = X W, loss = mean((XW - Y)^2); dL/dW = 2 X^T (XW - Y) / count
        let mut net = DenseNet::new(3, &[LayerSpec::output(2, Activation::Identity)], 4).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let target = Array2::from_shape_fn((6, 2), |(i, j)| (i + j) as f64 * 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng).unwrap();
        let (_, grad) = super::super::mse_loss(y.view(), target.view()).unwrap();
        let (g, _) = net.backward(&cache, grad.view()).unwrap();
        let w = &net.layers()[0].weights;
        let expected = x.t().dot(&(x.dot(w) - &target)) * (2.0 / 12.0);
        for (a, b) in g.0[0].iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn layer_roundtrips_through_json() {
        let net = DenseNet::new(
            3,
            &[
                LayerSpec::hidden(4, 0.2),
                LayerSpec::output(1, Activation::Sigmoid),
            ],
            8,
        )
        .unwrap();
        let text = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, net);
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activated output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer computing `act(x·Wᵀ + b)` for a batch `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// out × in
    pub weight: Tensor,
    /// 1 × out
    pub bias: Option<Tensor>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul_t(&self.weight)?;
        if let Some(b) = &self.bias {
            y.add_row_broadcast(b)?;
        }
        if self.activation != Activation::Identity {
            let act = self.activation;
            y.values_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        debug_assert!(y.is_finite(), "non-finite activation");
        Ok(y)
    }
}

/// Intermediates of one forward pass: the input and activated output of each layer.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
}

/// Parameter gradients for one network, laid out like its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Option<Tensor>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.layers.iter().map(|l| Tensor::zeros(l.out_dim(), l.in_dim())).collect(),
            biases: net.layers.iter().map(|l| l.bias.as_ref().map(|_| Tensor::zeros(1, l.out_dim()))).collect(),
        }
    }

    /// Elementwise `self += other`, in layer order.
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                    *x += y;
                }
            }
        }
    }

    /// Flattened in the same order as [`Mlp::params_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.values());
            if let Some(b) = b {
                out.extend_from_slice(b.values());
            }
        }
        out
    }
}

/// Chained dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    #[serde(skip)]
    trace: Option<Trace>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dims("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dims(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if let Some(b) = &l.bias {
                if b.shape() != (1, l.out_dim()) {
                    return Err(Error::dims("bias shape does not match layer output"));
                }
            }
        }
        Ok(Mlp { layers, trace: None })
    }

    /// Glorot-uniform initialised network over `dims` (input, hidden..., output).
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::dims("need at least input and output dims"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            let activation = if i + 2 == dims.len() { output } else { hidden };
            layers.push(Dense {
                weight: Tensor::from_vec(fan_out, fan_in, values)?,
                bias: bias.then(|| Tensor::zeros(1, fan_out)),
                activation,
            });
        }
        Mlp::new(layers)
    }

    /// Single bias-free identity layer acting as `y = W·x`.
    pub fn linear_map(weight: Tensor) -> Self {
        Mlp { layers: vec![Dense { weight, bias: None, activation: Activation::Identity }], trace: None }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.as_ref().map_or(0, Tensor::len)).sum()
    }

    /// Σ‖W‖² over weight matrices; biases excluded.
    pub fn weight_sum_squares(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.sum_squares()).sum()
    }

    /// Parameters in a fixed order: W₀, b₀, W₁, b₁, ...
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            if let Some(b) = l.bias.as_mut() {
                out.push(b);
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            if let Some(b) = l.bias.as_ref() {
                out.push(b);
            }
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::dims(format!("network expects {} inputs, got {}", self.in_dim(), x.cols())));
        }
        Ok(())
    }

    /// Read-only inference; safe to call concurrently on a frozen network.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.layers[0].forward(x)?;
        for l in &self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn infer_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.infer(&Tensor::row_vector(x))?.into_values())
    }

    /// Forward pass returning the trace needed for [`Mlp::backward_traced`].
    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let y = l.forward(&h)?;
            inputs.push(h);
            h = y.clone();
            outputs.push(y);
        }
        Ok((h, Trace { inputs, outputs }))
    }

    /// Backpropagates `upstream` (∂loss/∂output) through a recorded trace,
    /// adding parameter gradients into `grads`. Returns ∂loss/∂input.
    pub fn backward_traced(&self, trace: &Trace, upstream: &Tensor, grads: &mut MlpGrads) -> Result<Tensor> {
        let last = trace.outputs.last().ok_or(Error::NoForwardPass)?;
        if upstream.shape() != last.shape() {
            return Err(Error::dims(format!("upstream gradient {:?} vs output {:?}", upstream.shape(), last.shape())));
        }
        let mut delta = upstream.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation != Activation::Identity {
                let act = l.activation;
                for (d, &a) in delta.values_mut().iter_mut().zip(trace.outputs[i].values()) {
                    *d *= act.derivative_from_output(a);
                }
            }
            delta.t_matmul_into(&trace.inputs[i], &mut grads.weights[i])?;
            if let Some(gb) = grads.biases[i].as_mut() {
                for (g, s) in gb.values_mut().iter_mut().zip(delta.col_sums().values()) {
                    *g += s;
                }
            }
            delta = delta.matmul(&l.weight)?;
        }
        debug_assert!(delta.is_finite(), "non-finite gradient");
        Ok(delta)
    }

    /// Forward pass that records intermediates for a later [`Mlp::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, trace) = self.forward_traced(x)?;
        self.trace = Some(trace);
        Ok(y)
    }

    /// Accumulates parameter gradients into each parameter's grad slot and
    /// returns the gradient with respect to the input of the last forward pass.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let trace = self.trace.take().ok_or(Error::NoForwardPass)?;
        let mut grads = MlpGrads::zeros_like(self);
        let dx = self.backward_traced(&trace, upstream, &mut grads);
        self.trace = Some(trace);
        let dx = dx?;
        self.accumulate(&grads)?;
        Ok(dx)
    }

    /// Adds `grads` into the parameters' grad slots.
    pub fn accumulate(&mut self, grads: &MlpGrads) -> Result<()> {
        for ((l, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            l.weight.accumulate_grad(gw.values())?;
            if let (Some(b), Some(gb)) = (l.bias.as_mut(), gb) {
                b.accumulate_grad(gb.values())?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn single(weight: Tensor, bias: Option<Tensor>, activation: Activation) -> Mlp {
        Mlp::new(vec![Dense { weight, bias, activation }]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Mlp::linear_map(Tensor::identity(2));
        assert_eq!(net.infer_vec(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weight_tanh_layer_outputs_zero() {
        let net = single(Tensor::zeros(3, 2), None, Activation::Tanh);
        assert_eq!(net.infer_vec(&[5.0, -7.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn affine_scalar_layer() {
        let net = single(
            Tensor::from_vec(1, 1, vec![2.0]).unwrap(),
            Some(Tensor::from_vec(1, 1, vec![1.0]).unwrap()),
            Activation::Identity,
        );
        assert_eq!(net.infer_vec(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn sum_loss_gradient_of_scalar_weight() {
        let mut net = Mlp::linear_map(Tensor::from_vec(1, 1, vec![1.0]).unwrap());
        net.forward(&Tensor::row_vector(&[2.0])).unwrap();
        let dx = net.backward(&Tensor::row_vector(&[1.0])).unwrap();
        assert_eq!(net.layers()[0].weight.grad().unwrap(), &[2.0]);
        assert_eq!(dx.values(), &[1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::glorot(&[3, 5, 2], Activation::Tanh, Activation::Identity, true, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3], [-0.4, 0.5, 0.9]]).unwrap();
        net.forward(&x).unwrap();
        net.backward(&Tensor::zeros(2, 2)).unwrap();
        for p in net.params() {
            assert!(p.grad().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut net = Mlp::linear_map(Tensor::identity(2));
        assert!(matches!(net.backward(&Tensor::zeros(1, 2)), Err(Error::NoForwardPass)));
    }

    #[test]
    fn dimension_checks() {
        let net = Mlp::linear_map(Tensor::identity(2));
        assert!(matches!(net.infer_vec(&[1.0, 2.0, 3.0]), Err(Error::DimensionMismatch(_))));
        let bad = Mlp::new(vec![
            Dense { weight: Tensor::zeros(3, 2), bias: None, activation: Activation::Tanh },
            Dense { weight: Tensor::zeros(1, 4), bias: None, activation: Activation::Identity },
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn bias_free_map_is_pure_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let net = Mlp::linear_map(Tensor::from_vec(3, 4, w.clone()).unwrap());
        assert_eq!(net.num_params(), 12);
        let x = [0.3, -0.2, 0.7, 1.1];
        let y = net.infer_vec(&x).unwrap();
        for r in 0..3 {
            let expect: f64 = (0..4).map(|c| w[r * 4 + c] * x[c]).sum();
            assert!((y[r] - expect).abs() < 1e-15);
        }
    }
}

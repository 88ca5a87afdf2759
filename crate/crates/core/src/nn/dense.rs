use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{join, Module};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the
    /// activation output `y`.
    fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Sigmoid => grad.zip_mut_with(y, |g, &y| *g *= y * (1.0 - y)),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Affine layer `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform `±1/√fan_in` initialization of weights and bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weight = Array2::from_shape_simple_fn((output, input), &mut draw);
        let bias = Array1::from_shape_simple_fn(output, &mut draw);
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: ArrayView2<f64>, dz: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &dz.t().dot(&x);
        grad.bias += &dz.sum_axis(Axis(0));
        dz.dot(&self.weight)
    }
}

impl Module for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weight"), self.weight.shape(), self.weight.as_slice().expect("standard layout"));
        f(&join(prefix, "bias"), self.bias.shape(), self.bias.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weight.as_slice_mut().expect("standard layout"));
        f(self.bias.as_slice_mut().expect("standard layout"));
    }
}

/// Fully connected network: hidden layers share one activation, the last
/// layer has its own.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Layer inputs and outputs recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("non-empty network")
    }
}

impl Mlp {
    /// `sizes = [input, hidden…, output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers, hidden, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").output_dim()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(current.view());
            self.activation(k).apply(&mut z);
            inputs.push(current);
            current = z.clone();
            outputs.push(z);
        }
        MlpCache { inputs, outputs }
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut current = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(current.view());
            self.activation(k).apply(&mut z);
            current = z;
        }
        current
    }

    /// Reverse pass for a cached forward. Parameter gradients are added to
    /// `grads`; the input gradient is returned.
    pub fn backward(&self, cache: &MlpCache, output_grad: ArrayView2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut delta = output_grad.to_owned();
        for k in (0..self.layers.len()).rev() {
            self.activation(k).backprop(&cache.outputs[k], &mut delta);
            delta = self.layers[k].backward(cache.inputs[k].view(), delta.view(), &mut grads.layers[k]);
        }
        delta
    }
}

impl Module for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layer{k}")), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for layer in &mut self.layers {
            layer.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng).zeros_like();
        let y = net.predict(array![[1.0, -2.0, 3.0]].view());
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_network_passes_input_through() {
        let mut layer = Dense::zeros(3, 3);
        layer.weight = Array2::eye(3);
        let net = Mlp {
            layers: vec![layer],
            hidden: Activation::Identity,
            output: Activation::Identity,
        };
        let x = array![[0.5, -1.5, 2.0]];
        assert_eq!(net.predict(x.view()), x);
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 6, 3], Activation::Tanh, Activation::Tanh, &mut rng);
        let x = array![[0.1, 0.2, -0.3, 0.4]];
        let cache = net.forward(x.view());
        let mut g = net.zeros_like();
        net.backward(&cache, Array2::zeros((1, 3)).view(), &mut g);
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn gradient_scales_linearly_with_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 6, 3], Activation::Relu, Activation::Identity, &mut rng);
        let x = array![[0.1, 0.2, -0.3, 0.4], [1.0, -1.0, 0.5, 0.0]];
        let cache = net.forward(x.view());
        let dy = array![[1.0, -2.0, 0.5], [0.3, 0.1, -0.7]];
        let mut g1 = net.zeros_like();
        net.backward(&cache, dy.view(), &mut g1);
        let mut g3 = net.zeros_like();
        net.backward(&cache, (&dy * 3.0).view(), &mut g3);
        g1.add_scaled(&g3, -1.0 / 3.0);
        assert!(g1.l2_norm() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}

//! Dense layers and multilayer perceptrons with exact backpropagation.
//!
//! All passes are batch-first: inputs are `(batch, in_dim)` row-major
//! matrices. A single vector is a batch of one. Caches record the shapes and
//! the parameter generation they were produced against so that a backward
//! pass on stale activations is rejected instead of silently returning wrong
//! gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numnet::Parameters;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Linear => x,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Linear => 0,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// `y = act(W x + b)` with `W` stored `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    weights: Array2<T>,
    bias: Array1<T>,
    activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim("dense layer bias", weights.nrows(), bias.len()));
        }
        // Parameter blocks are exposed as flat slices.
        let weights = weights.as_standard_layout().into_owned();
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights =
            Array2::from_shape_fn((out_dim, in_dim), |_| T::of(rng.random_range(-limit..=limit)));
        Self {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn cast<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer {
            weights: self.weights.mapv(|w| U::of(w.to_f64_lossy())),
            bias: self.bias.mapv(|b| U::of(b.to_f64_lossy())),
            activation: self.activation,
        }
    }
}

/// Feed-forward stack of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
    generation: u64,
}

impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations retained by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    /// Input to each evaluated layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activation of each evaluated layer.
    pre: Vec<Array2<T>>,
    output: Array2<T>,
    generation: u64,
    dims: Vec<usize>,
}

impl<T: Scalar> MlpCache<T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }

    pub fn into_output(self) -> Array2<T> {
        self.output
    }

    /// Number of layers this cache covers.
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    pub fn pre_activation(&self, layer: usize) -> &Array2<T> {
        &self.pre[layer]
    }

    pub fn layer_input(&self, layer: usize) -> &Array2<T> {
        &self.inputs[layer]
    }
}

/// Gradient set shaped exactly like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn scale(&mut self, factor: T) {
        for w in &mut self.weights {
            w.mapv_inplace(|x| x * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|x| x * factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.iter().all(|x| *x == T::zero()))
            && self.biases.iter().all(|b| b.iter().all(|x| *x == T::zero()))
    }
}

impl<T: Scalar> Parameters<T> for MlpGrads<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

impl<T: Scalar> Mlp<T> {
    /// Builds from explicit layers; consecutive dimensions must chain.
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim("layer chaining", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    /// Glorot-initialised network over `sizes` (input first). Hidden layers
    /// use relu; the last layer uses `last`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], last: Activation, rng: &mut R) -> Result<Self> {
        Self::with_activations(sizes, Activation::Relu, last, rng)
    }

    pub fn with_activations<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        last: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "layer sizes need an input and an output, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { last } else { hidden };
                DenseLayer::glorot(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &DenseLayer<T> {
        &self.layers[k]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Neuron counts, input first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.out_dim()));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn zero_grads(&self) -> MlpGrads<T> {
        MlpGrads {
            weights: self
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    /// Converts the parameters to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(DenseLayer::cast).collect(),
            generation: 0,
        }
    }

    /// Mutable access to one layer's weights and bias. Invalidates caches.
    pub fn layer_params_mut(&mut self, k: usize) -> (&mut Array2<T>, &mut Array1<T>) {
        self.generation += 1;
        let layer = &mut self.layers[k];
        (&mut layer.weights, &mut layer.bias)
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::dim("mlp input", self.input_dim(), x.len()))?;
        let cache = self.forward_batch(view)?;
        let y = cache.output.row(0).to_vec();
        Ok((y, cache))
    }

    /// Single-vector backward pass: returns `dx` and the parameter gradients.
    pub fn backward(&self, cache: &MlpCache<T>, dy: &[T]) -> Result<(Vec<T>, MlpGrads<T>)> {
        let dy = ArrayView2::from_shape((1, dy.len()), dy)
            .map_err(|_| Error::dim("mlp output gradient", self.output_dim(), dy.len()))?;
        let mut grads = self.zero_grads();
        let dx = self
            .backward_batch_into(cache, dy, &mut grads, true)?
            .expect("dx requested");
        Ok((dx.row(0).to_vec(), grads))
    }

    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<MlpCache<T>> {
        self.forward_batch_prefix(x, self.layers.len())
    }

    /// Forward pass through the first `depth` layers only.
    pub fn forward_batch_prefix(&self, x: ArrayView2<T>, depth: usize) -> Result<MlpCache<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), x.ncols()));
        }
        if depth == 0 || depth > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix depth {depth} outside 1..={}",
                self.layers.len()
            )));
        }
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut current = x.to_owned();
        for layer in &self.layers[..depth] {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.bias;
            let act = layer.activation;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(current);
            pre.push(z);
            current = out;
        }
        Ok(MlpCache {
            inputs,
            pre,
            output: current,
            generation: self.generation,
            dims: self.layer_sizes(),
        })
    }

    fn check_cache(&self, cache: &MlpCache<T>) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache("parameters changed since the forward pass"));
        }
        if cache.dims != self.layer_sizes() {
            return Err(Error::StaleCache("layer sizes differ from the forward pass"));
        }
        Ok(())
    }

    /// Backpropagates `dy` (gradient w.r.t. the cache output) through the
    /// layers the cache covers, accumulating into `grads`. Returns the input
    /// gradient when `need_dx` is set.
    pub fn backward_batch_into(
        &self,
        cache: &MlpCache<T>,
        dy: ArrayView2<T>,
        grads: &mut MlpGrads<T>,
        need_dx: bool,
    ) -> Result<Option<Array2<T>>> {
        self.check_cache(cache)?;
        let depth = cache.depth();
        let out_dim = self.layers[depth - 1].out_dim();
        if dy.ncols() != out_dim {
            return Err(Error::dim("mlp output gradient", out_dim, dy.ncols()));
        }
        if dy.nrows() != cache.output.nrows() {
            return Err(Error::dim("mlp batch size", cache.output.nrows(), dy.nrows()));
        }
        let mut delta = dy.to_owned();
        for k in (0..depth).rev() {
            let layer = &self.layers[k];
            if layer.activation == Activation::Relu {
                Zip::from(&mut delta).and(&cache.pre[k]).for_each(|d, &z| {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                });
            }
            ndarray::linalg::general_mat_mul(
                T::one(),
                &delta.t(),
                &cache.inputs[k],
                T::one(),
                &mut grads.weights[k],
            );
            grads.biases[k] += &delta.sum_axis(Axis(0));
            if k > 0 || need_dx {
                delta = delta.dot(&layer.weights);
            }
        }
        Ok(if need_dx { Some(delta) } else { None })
    }
}

impl<T: Scalar> Parameters<T> for Mlp<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weights.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.generation += 1;
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_return_activated_bias() {
        let layer = DenseLayer::new(
            Array2::<f64>::zeros((3, 2)),
            array![1.5, -2.0, 0.25],
            Activation::Relu,
        )
        .unwrap();
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let (y, _) = mlp.forward(&[7.0, -3.0]).unwrap();
        assert_eq!(y, vec![1.5, 0.0, 0.25]);
    }

    #[test]
    fn identity_linear_layer() {
        let layer =
            DenseLayer::new(Array2::<f64>::eye(2), Array1::zeros(2), Activation::Linear).unwrap();
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        assert_eq!(mlp.forward(&[1.0, 2.0]).unwrap().0, vec![1.0, 2.0]);
    }

    #[test]
    fn random_relu_net_matches_hand_rolled_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::<f64>::with_activations(&[3, 2], Activation::Relu, Activation::Relu, &mut rng)
            .unwrap();
        let x = [0.3, -1.2, 2.0];
        let w = mlp.layer(0).weights();
        let b = mlp.layer(0).bias();
        let mut expect = [0.0; 2];
        for (r, e) in expect.iter_mut().enumerate() {
            let mut acc = b[r];
            for c in 0..3 {
                acc += w[[r, c]] * x[c];
            }
            *e = acc.max(0.0);
        }
        let (y, _) = mlp.forward(&x).unwrap();
        for (a, e) in y.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_chain_rule() {
        let layer = DenseLayer::new(array![[2.5]], array![0.5], Activation::Linear).unwrap();
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let (_, cache) = mlp.forward(&[3.0]).unwrap();
        let (dx, g) = mlp.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 3.0);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(dx, vec![2.5]);
    }

    #[test]
    fn relu_dead_zone_blocks_gradient() {
        let layer = DenseLayer::new(array![[1.0], [1.0]], array![-10.0, 0.0], Activation::Relu)
            .unwrap();
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let (_, cache) = mlp.forward(&[2.0]).unwrap();
        let (dx, g) = mlp.backward(&cache, &[1.0, 1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 0.0);
        assert_eq!(g.biases[0][0], 0.0);
        assert_eq!(g.weights[0][[1, 0]], 2.0);
        assert_eq!(dx, vec![1.0]);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::<f64>::new(&[3, 4, 1], Activation::Linear, &mut rng).unwrap();
        assert!(matches!(mlp.forward(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = Mlp::<f64>::new(&[2, 3, 1], Activation::Linear, &mut rng).unwrap();
        let (_, cache) = mlp.forward(&[1.0, 2.0]).unwrap();
        mlp.blocks_mut()[0][0] += 1.0;
        assert!(matches!(mlp.backward(&cache, &[1.0]), Err(Error::StaleCache(_))));

        let other = Mlp::<f64>::new(&[2, 5, 1], Activation::Linear, &mut rng).unwrap();
        let (_, cache) = other.forward(&[1.0, 2.0]).unwrap();
        assert!(mlp.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let a = DenseLayer::<f64>::zeros(2, 3, Activation::Relu);
        let b = DenseLayer::<f64>::zeros(4, 1, Activation::Linear);
        assert!(Mlp::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::<f64>::new(&[5, 8, 8, 2], Activation::Linear, &mut rng).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 1.5];
        let a = mlp.forward(&x).unwrap().0;
        let b = mlp.forward(&x).unwrap().0;
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

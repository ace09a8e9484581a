//! Minimal dense-network engine: MLPs with analytic gradients, Adam, and
//! parameter accounting.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, DenseLayer, Mlp, MlpCache, MlpGrads};

/// Access to a model's learnable parameters as an ordered list of flat blocks.
///
/// Gradient sets implement the same trait with an identical block order, so
/// an optimizer can zip the two.
pub trait Parameters<T> {
    fn blocks(&self) -> Vec<&[T]>;
    fn blocks_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

/// A standalone affine map counted alongside an MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearBlock {
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl LinearBlock {
    pub const fn with_bias(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            bias: true,
        }
    }

    pub const fn count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias { self.out_dim } else { 0 }
    }
}

/// Weights and biases of a dense stack with the given neuron counts.
pub fn dense_param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// All parameters of `mlp` plus the listed standalone linear blocks.
pub fn param_count<T: crate::Scalar>(mlp: &Mlp<T>, extra_linear_blocks: &[LinearBlock]) -> usize {
    mlp.param_count() + extra_linear_blocks.iter().map(LinearBlock::count).sum::<usize>()
}

/// Rows of `q` in lexicographic order of their bit patterns.
///
/// Both operators reduce over cloud points; evaluating those sums on a
/// canonically ordered cloud makes the output bitwise independent of the
/// order in which points were supplied.
pub fn canonical_rows<T: crate::Scalar>(q: ndarray::ArrayView2<T>) -> ndarray::Array2<T> {
    let mut order: Vec<usize> = (0..q.nrows()).collect();
    order.sort_by(|&a, &b| {
        q.row(a)
            .iter()
            .zip(q.row(b))
            .map(|(x, y)| x.to_f64_lossy().total_cmp(&y.to_f64_lossy()))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    q.select(ndarray::Axis(0), &order)
}

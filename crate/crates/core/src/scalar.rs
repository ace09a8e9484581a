//! Floating-point scalar abstraction shared by the network code.
//!
//! Everything that does arithmetic on learnable parameters is generic over
//! [`Scalar`], which is implemented for `f32` and `f64`. Data generation and
//! file formats stay in `f64`.

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable for network parameters and activations.
pub trait Scalar: NdFloat + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    /// Widening conversion to `f64`.
    fn to_f64_lossy(self) -> f64;

    /// Short type tag used in checkpoint config echoes.
    const NAME: &'static str;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
    const NAME: &'static str = "f64";
}

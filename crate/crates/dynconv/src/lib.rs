//! Razor dynamic convolution and static-guided dynamic modules.
//!
//! A small, dependency-light neural-kernel library: dense NCHW tensors, a
//! brute-force convolution oracle next to an im2col fast path, dynamic
//! convolutions whose kernels are per-sample mixtures of candidate kernels
//! ("razor" dynamic convolution, RDConv), and the static-guided variant
//! (SGDM) where asymmetric static strips multiplicatively cap the dynamic
//! kernel weights. Forward *and* backward passes are explicit — there is no
//! autograd tape — and everything runs on the CPU.
//!
//! The math is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); tests and the experiment harness run in `f64`. The
//! concrete aliases at the crate root ([`Tensor64`] and friends) are the
//! recommended entry points.

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod fixture;
pub mod rdconv;
pub mod sgdm;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, Tensor, TensorGrad};

/// Scalar element type for all tensor math.
///
/// Deliberately a closed little alias-trait: the library is exercised in
/// double precision, `f32` exists as a storage/deployment option.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub(crate) fn s<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 must convert into every Scalar")
}

/// Convert a scalar back to `f64` (lossless for both supported types).
#[inline]
pub(crate) fn to_f64<T: Scalar>(x: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).expect("every Scalar must convert to f64")
}

/// Logistic sigmoid; used by attention, the spatial gate, and baselines.
#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    s::<T>(1.0) / (s::<T>(1.0) + (-x).exp())
}

/// Double-precision tensor — the default working type.
pub type Tensor64 = tensor::Tensor<f64>;
/// Single-precision tensor (storage mode; not used by the test suites).
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision value+gradient pair.
pub type TensorGrad64 = tensor::TensorGrad<f64>;
/// Double-precision static convolution kernel.
pub type ConvKernel64 = conv::ConvKernel<f64>;
/// Double-precision razor dynamic convolution layer.
pub type RdconvLayer64 = rdconv::RdconvLayer<f64>;
/// Double-precision static-guided dynamic module.
pub type SgdmModule64 = sgdm::SgdmModule<f64>;

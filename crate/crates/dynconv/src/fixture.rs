//! Deterministic fixture generation.
//!
//! A splitmix64 recurrence mapped to doubles: pure 64-bit integer ops plus an
//! exact power-of-two division, so any other language reproduces the same
//! values bit for bit. Frozen expectations in the test suites were computed
//! from inputs regenerated this way in an independent environment.

use crate::tensor::{Dims, Tensor};
use crate::{s, Scalar};

pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[-1, 1)`.
    pub fn next_sym(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }
}

/// `n` symmetric uniform draws.
pub fn fill_values<T: Scalar>(rng: &mut SplitMix64, n: usize) -> Vec<T> {
    (0..n).map(|_| s::<T>(rng.next_sym())).collect()
}

/// Tensor with entries in `[-1, 1)`, drawn in row-major order from `seed`.
pub fn fill_tensor<T: Scalar>(seed: u64, dims: Dims) -> Tensor<T> {
    let mut rng = SplitMix64::new(seed);
    let data = fill_values(&mut rng, dims.count());
    Tensor::new(dims, data).expect("fill_tensor builds a matching buffer")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_frozen() {
        // First outputs for seed 42, pinned so regenerated fixtures can be
        // trusted across environments.
        let mut r = SplitMix64::new(42);
        assert_eq!(r.next_u64(), 13679457532755275413);

        let mut r = SplitMix64::new(42);
        let expect = [
            4.83129757543646621e-01,
            -6.80179214246159791e-01,
            -4.42797739489722675e-01,
            -3.11618566952724940e-01,
        ];
        for e in expect {
            assert_eq!(r.next_sym(), e);
        }
    }

    #[test]
    fn draws_stay_in_range() {
        let mut r = SplitMix64::new(7);
        for _ in 0..1000 {
            let u = r.next_unit();
            assert!((0.0..1.0).contains(&u));
            let v = r.next_sym();
            assert!((-1.0..1.0).contains(&v));
        }
    }

    #[test]
    fn fill_tensor_is_deterministic() {
        let a = fill_tensor::<f64>(9, Dims::new(2, 2, 3, 3));
        let b = fill_tensor::<f64>(9, Dims::new(2, 2, 3, 3));
        assert_eq!(a, b);
        let c = fill_tensor::<f64>(10, Dims::new(2, 2, 3, 3));
        assert_ne!(a, c);
    }
}

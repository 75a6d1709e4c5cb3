use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;

use super::array::Tensor;
use super::scalar::Scalar;

/// Seeded generator used for every random draw in the crate.
#[derive(Clone, Debug)]
pub struct SeedRng(SplitMix64);

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    /// Independent child stream, stable for a given `(parent seed, key)`.
    pub fn derive(seed: u64, key: u64) -> Self {
        let mut mix = SplitMix64::seed_from_u64(seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self::new(mix.random())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn uniform_tensor<S: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::of(self.uniform(lo, hi)))
    }

    pub fn normal_tensor<S: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::of(std * self.normal()))
    }

    pub fn inner(&mut self) -> &mut SplitMix64 {
        &mut self.0
    }
}

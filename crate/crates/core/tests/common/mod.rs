#![allow(dead_code)]

pub mod grad;
pub mod oracles;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use replaynet_core::nn::Tensor;

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed, so adding draws in one consumer never shifts another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Float, Tensor};

/// Stream identifiers for the consumers of the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Batch = 3,
    Check = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Child stream for the `index`-th item of a consumer (e.g. one image pair).
pub fn item_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream as u64);
    rng
}

/// Tensor of i.i.d. values uniform in `[-1, 1)`.
pub fn random_tensor<F: Float>(shape: &[usize], seed: u64) -> Tensor<F> {
    let mut rng = stream_rng(seed, Stream::Check);
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64_lossy(rng.gen_range(-1.0..1.0))).collect();
    Tensor::from_vec(shape, data).expect("non-empty shape")
}

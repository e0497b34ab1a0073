//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(seed, purpose, index)`, so any stream can be rebuilt independently of
//! the order in which other streams were consumed.

use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Permutation = 2,
    StreamSplit = 3,
    EpochOrder = 4,
    FisherSample = 5,
    ToyProblem = 6,
    ToyStart = 7,
    FlipSample = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(purpose as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// `amount` distinct indices below `length`, in sampling order.
pub fn sample_indices(seed: u64, purpose: Purpose, stream_index: u64, length: usize, amount: usize) -> Vec<usize> {
    let amount = amount.min(length);
    index::sample(&mut stream(seed, purpose, stream_index), length, amount).into_vec()
}

//! Deterministic stream derivation from a single run seed.
//!
//! Every random draw in a run flows from one `u64` seed. Each logical
//! consumer gets its own counter-indexed stream, so parallel execution
//! order cannot change what any consumer sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels; the discriminant is part of the derivation, so adding
/// labels never disturbs existing streams.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Noise = 1,
    TraceShape = 2,
    SeriesValues = 3,
}

/// Derives the RNG for `(seed, stream, index)`.
pub fn derive(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | (index & 0xffff_ffff));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::RngCore;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = derive(7, Stream::Noise, 0);
        let mut b = derive(7, Stream::Noise, 1);
        let mut a2 = derive(7, Stream::Noise, 0);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xs2: Vec<u64> = (0..4).map(|_| a2.next_u64()).collect();
        assert_eq!(xs, xs2);
        assert_ne!(xs, ys);
    }

    #[test]
    fn seed_changes_every_stream() {
        let mut a = derive(1, Stream::SeriesValues, 3);
        let mut b = derive(2, Stream::SeriesValues, 3);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// A stream of uniform draws in `[0, 1)`.
pub trait UnitSource {
    fn next_unit(&mut self) -> f64;

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    /// `true` with probability `p`.
    fn coin(&mut self, p: f64) -> bool {
        self.next_unit() < p
    }

    /// Uniform integer in `0..=max`.
    fn index_up_to(&mut self, max: usize) -> usize {
        let i = libm::floor(self.next_unit() * (max as f64 + 1.0)) as usize;
        i.min(max)
    }
}

/// Counter-based generator keyed by `(seed, image_index, draw_counter)`.
///
/// Each image gets its own ChaCha8 stream, so the draws for image `i` do not
/// depend on how many other images were processed first or on which thread.
#[derive(Debug, Clone)]
pub struct AugRng {
    inner: ChaCha8Rng,
    counter: u64,
}

impl AugRng {
    pub fn new(seed: u64, image_index: u64) -> Self {
        Self::at(seed, image_index, 0)
    }

    /// Positions the stream at draw number `counter`.
    pub fn at(seed: u64, image_index: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(image_index);
        // one draw = one u64 = two 32-bit words
        inner.set_word_pos(counter as u128 * 2);
        AugRng { inner, counter }
    }

    /// Number of draws taken so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }
}

impl UnitSource for AugRng {
    fn next_unit(&mut self) -> f64 {
        self.counter += 1;
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Replays a fixed list of draws; panics when exhausted.
#[derive(Debug, Clone, Default)]
pub struct Scripted {
    draws: VecDeque<f64>,
}

impl Scripted {
    pub fn new(draws: impl Into<Vec<f64>>) -> Self {
        Scripted {
            draws: draws.into().into(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.draws.len()
    }
}

impl UnitSource for Scripted {
    fn next_unit(&mut self) -> f64 {
        self.draws.pop_front().expect("scripted draws exhausted")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_addressable_by_counter() {
        let mut a = AugRng::new(42, 7);
        let seq: Vec<f64> = (0..10).map(|_| a.next_unit()).collect();
        assert_eq!(a.counter(), 10);
        let mut b = AugRng::at(42, 7, 4);
        assert_eq!(b.next_unit(), seq[4]);
        assert!(seq.iter().all(|u| (0.0..1.0).contains(u)));
        let mut other = AugRng::new(42, 8);
        assert_ne!(other.next_unit(), seq[0]);
    }

    #[test]
    fn index_up_to_covers_range() {
        assert_eq!(Scripted::new([0.0]).index_up_to(5), 0);
        assert_eq!(Scripted::new([0.999_999]).index_up_to(5), 5);
        assert_eq!(Scripted::new([0.5]).index_up_to(0), 0);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
    rng: ChaCha8Rng,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::new(), capacity, next: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Exactly `batch` items, or an empty vector if nothing is stored.
    pub fn sample(&mut self, batch: usize) -> Vec<T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| self.items[self.rng.random_range(0..self.items.len())].clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 0);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        let mut held: Vec<_> = b.iter().copied().collect();
        held.sort();
        assert_eq!(held, vec![2, 3, 4]);
    }

    #[test]
    fn empty_buffer_samples_nothing() {
        let mut b: ReplayBuffer<u8> = ReplayBuffer::new(4, 0);
        assert!(b.sample(8).is_empty());
    }

    #[test]
    fn sampling_is_uniform_with_replacement() {
        let mut b = ReplayBuffer::new(10, 42);
        for i in 0..4 {
            b.push(i);
        }
        let draws = b.sample(40_000);
        assert_eq!(draws.len(), 40_000);
        for k in 0..4 {
            let f = draws.iter().filter(|&&d| d == k).count() as f64 / 40_000.0;
            assert!((f - 0.25).abs() < 0.01, "{k}: {f}");
        }
        // Batch larger than the buffer is fine with replacement.
        assert_eq!(b.sample(7).len(), 7);
    }
}

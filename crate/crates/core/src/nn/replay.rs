use rand::Rng;

/// Fixed-capacity FIFO ring of experience records.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Uniform sampling with replacement. Empty buffers yield nothing.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, batch: usize, rng: &mut R) -> Vec<&'a T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }

    /// Records from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.cursor = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut buf = ReplayBuffer::new(100);
        (0..50).for_each(|i| buf.push(i));
        let a: Vec<i32> = buf.sample(10, &mut ChaCha8Rng::seed_from_u64(7)).into_iter().copied().collect();
        let b: Vec<i32> = buf.sample(10, &mut ChaCha8Rng::seed_from_u64(7)).into_iter().copied().collect();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn never_returns_evicted_or_foreign_records(cap in 1usize..40, extra in 0usize..60, seed: u64) {
            let mut buf = ReplayBuffer::new(cap);
            let total = cap + extra;
            for i in 0..total {
                buf.push(i);
            }
            prop_assert_eq!(buf.len(), cap);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &x in buf.sample(64, &mut rng) {
                prop_assert!(x >= extra && x < total);
            }
            prop_assert!(buf.iter().all(|&x| x >= extra));
        }
    }
}

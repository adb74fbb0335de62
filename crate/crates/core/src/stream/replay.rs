use rand::seq::index;
use rand::Rng as _;

use crate::rng::Rng;

/// Fixed-capacity exemplar store filled by reservoir sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    seen_count: u64,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen_count: 0,
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

    /// Number of items ever offered to the buffer.
    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    /// Keeps the item outright while there is room; afterwards it replaces a
    /// uniformly chosen slot with probability `capacity / (seen + 1)`.
    pub fn reservoir_insert(&mut self, item: T, rng: &mut Rng) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else if self.capacity > 0 {
            let j = rng.random_range(0..=self.seen_count);
            if (j as usize) < self.capacity {
                self.items[j as usize] = item;
            }
        }
        self.seen_count += 1;
    }

    /// Up to `n` distinct items chosen uniformly; everything when fewer are stored.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<T> {
        if n == 0 || self.items.is_empty() {
            return Vec::new();
        }
        if n >= self.items.len() {
            return self.items.clone();
        }
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn under_capacity_keeps_everything() {
        let mut rng = seeded(0);
        let mut buf = ReplayBuffer::new(2);
        buf.reservoir_insert(1, &mut rng);
        buf.reservoir_insert(2, &mut rng);
        assert_eq!(buf.items(), &[1, 2]);

        let mut big = ReplayBuffer::new(50);
        for i in 0..30 {
            big.reservoir_insert(i, &mut rng);
        }
        assert_eq!(big.items(), (0..30).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn occupancy_is_min_of_seen_and_capacity() {
        let mut rng = seeded(1);
        let mut buf = ReplayBuffer::new(7);
        for i in 0..100u64 {
            buf.reservoir_insert(i, &mut rng);
            assert_eq!(buf.len() as u64, (i + 1).min(7));
        }
        assert_eq!(buf.seen_count(), 100);
    }

    #[test]
    fn sampling_without_replacement() {
        let mut rng = seeded(2);
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10 {
            buf.reservoir_insert(i, &mut rng);
        }
        let mut s = buf.sample(4, &mut rng);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 4);
        assert_eq!(buf.sample(25, &mut rng).len(), 10);
        assert!(ReplayBuffer::<u8>::new(3).sample(2, &mut rng).is_empty());
    }
}

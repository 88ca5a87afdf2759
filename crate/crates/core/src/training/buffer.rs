use rand::Rng;

use crate::error::{Error, Result};

/// Fixed-capacity FIFO ring with uniform sampling over the occupied region.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
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

    /// Appends, overwriting the oldest item once full.
    pub fn store(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Storage slot of the `k`-th oldest item.
    fn slot(&self, k: usize) -> usize {
        if self.items.len() < self.capacity {
            k
        } else {
            (self.next + k) % self.capacity
        }
    }

    /// `k`-th oldest item.
    pub fn get(&self, k: usize) -> Option<&T> {
        (k < self.items.len()).then(|| &self.items[self.slot(k)])
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.items.len()).map(move |k| &self.items[self.slot(k)])
    }

    /// `k` age indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < k || k == 0 {
            return Err(Error::NoData(format!(
                "cannot sample {k} items from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..k).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&T>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| &self.items[self.slot(i)])
            .collect())
    }

    /// Rebuilds a buffer from items listed oldest first.
    pub fn from_items(capacity: usize, items: Vec<T>) -> Result<Self> {
        if items.len() > capacity {
            return Err(Error::Checkpoint(format!(
                "{} stored items exceed capacity {capacity}",
                items.len()
            )));
        }
        let mut buf = Self::new(capacity)?;
        for item in items {
            buf.store(item);
        }
        Ok(buf)
    }
}

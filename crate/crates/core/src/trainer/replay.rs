//! Fixed-capacity ring buffer of transitions with uniform batch sampling.

use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    /// Successor after `steps` environment steps.
    pub s_next: Vec<f64>,
    /// Discounted reward sum over the spanned steps.
    pub reward: f64,
    pub done: bool,
    /// Number of environment steps spanned (1 for plain transitions).
    pub steps: usize,
}

impl Experience {
    pub fn single(s: Vec<f64>, a: Vec<f64>, s_next: Vec<f64>, reward: f64, done: bool) -> Self {
        Self { s, a, s_next, reward, done, steps: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, data: Vec::with_capacity(capacity.min(1 << 20)), next: 0 }
    }

    pub fn push(&mut self, e: Experience) {
        if self.data.len() < self.capacity {
            self.data.push(e);
        } else {
            self.data[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Uniform sample without replacement within the batch.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Experience> {
        let amount = batch.min(self.data.len());
        rand::seq::index::sample(rng, self.data.len(), amount)
            .into_iter()
            .map(|i| &self.data[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn exp(tag: f64) -> Experience {
        Experience::single(vec![tag], vec![0.0], vec![tag], 0.0, false)
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut rb = ReplayBuffer::new(3);
        for i in 0..5 {
            rb.push(exp(i as f64));
        }
        assert_eq!(rb.len(), 3);
        let tags: Vec<f64> = rb.data.iter().map(|e| e.s[0]).collect();
        assert!(tags.contains(&4.0) && tags.contains(&3.0) && tags.contains(&2.0));
    }

    #[test]
    fn batch_has_no_duplicates() {
        let mut rb = ReplayBuffer::new(100);
        for i in 0..50 {
            rb.push(exp(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = rb.sample(20, &mut rng);
        assert_eq!(batch.len(), 20);
        let mut tags: Vec<f64> = batch.iter().map(|e| e.s[0]).collect();
        tags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        tags.dedup();
        assert_eq!(tags.len(), 20);
    }
}

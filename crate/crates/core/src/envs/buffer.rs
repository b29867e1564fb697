use super::EnvError;
use crate::numcore::{Matrix, Rng};

/// One experience tuple `(s, a, r, s', done)`.
///
/// `done` marks genuine termination only; time-limit truncation is not
/// recorded here.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// A minibatch laid out as row-per-sample matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Matrix,
    pub next_obs: Matrix,
    pub dones: Matrix,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        assert!(!items.is_empty(), "empty batch");
        let n = items.len();
        let (od, ad) = (items[0].obs.len(), items[0].action.len());
        let mut obs = Matrix::zeros((n, od));
        let mut actions = Matrix::zeros((n, ad));
        let mut next_obs = Matrix::zeros((n, od));
        let mut rewards = Matrix::zeros((n, 1));
        let mut dones = Matrix::zeros((n, 1));
        for (i, t) in items.iter().enumerate() {
            obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.obs[..]));
            actions.row_mut(i).assign(&ndarray::ArrayView1::from(&t.action[..]));
            next_obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_obs[..]));
            rewards[[i, 0]] = t.reward;
            dones[[i, 0]] = if t.done { 1.0 } else { 0.0 };
        }
        Self {
            obs,
            actions,
            rewards,
            next_obs,
            dones,
        }
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rewards.iter().copied().collect()
    }
}

/// FIFO ring of transitions sampled uniformly with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest-first view of the stored transitions.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.next };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    pub fn sample_indices(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<usize>, EnvError> {
        if self.storage.is_empty() {
            return Err(EnvError::EmptyBuffer);
        }
        Ok((0..batch_size).map(|_| rng.below(self.storage.len())).collect())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<Batch, EnvError> {
        let idx = self.sample_indices(batch_size, rng)?;
        let items: Vec<&Transition> = idx.iter().map(|&i| &self.storage[i]).collect();
        Ok(Batch::from_transitions(&items))
    }

    /// The whole buffer as one batch.
    pub fn all(&self) -> Result<Batch, EnvError> {
        if self.storage.is_empty() {
            return Err(EnvError::EmptyBuffer);
        }
        let items: Vec<&Transition> = self.iter().collect();
        Ok(Batch::from_transitions(&items))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(r: f64) -> Transition {
        Transition {
            obs: vec![r],
            action: vec![0.0],
            reward: r,
            next_obs: vec![r + 1.0],
            done: false,
        }
    }

    #[test]
    fn push_grows_then_evicts_oldest() {
        let mut b = ReplayBuffer::new(2);
        b.push(tr(0.0));
        assert_eq!(b.len(), 1);
        b.push(tr(1.0));
        b.push(tr(2.0));
        assert_eq!(b.len(), 2);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0]);
    }

    #[test]
    fn fills_to_capacity() {
        let mut b = ReplayBuffer::new(10_000);
        for i in 0..10_000 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 10_000);
    }

    #[test]
    fn single_item_is_repeated() {
        let mut b = ReplayBuffer::new(8);
        b.push(tr(7.0));
        let batch = b.sample(4, &mut Rng::new(0)).unwrap();
        assert_eq!(batch.rewards(), vec![7.0; 4]);
    }

    #[test]
    fn empty_buffer_errors() {
        let b = ReplayBuffer::new(8);
        assert!(matches!(b.sample(1, &mut Rng::new(0)), Err(EnvError::EmptyBuffer)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..100 {
            b.push(tr(i as f64));
        }
        let x = b.sample(32, &mut Rng::new(5)).unwrap();
        let y = b.sample(32, &mut Rng::new(5)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let n = 50;
        let mut b = ReplayBuffer::new(n);
        for i in 0..n {
            b.push(tr(i as f64));
        }
        let mut rng = Rng::new(99);
        let mut counts = vec![0usize; n];
        let draws = 100_000;
        for _ in 0..draws / 250 {
            for i in b.sample_indices(250, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 49 degrees of freedom: the 0.999 quantile is about 85.4
        assert!(chi2 < 85.4, "chi-square {chi2}");
    }
}

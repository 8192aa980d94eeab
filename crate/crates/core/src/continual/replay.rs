use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Classic reservoir sampling: uniform victim.
    Uniform,
    /// Loss-aware reservoir sampling: victim drawn with probability
    /// proportional to `1 / (ℓ + ε)`.
    Lars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored<T> {
    pub item: T,
    /// Latest prediction loss of the stored sample.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Appended,
    Replaced { victim: usize },
    Discarded,
}

/// Bounded reservoir of past samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    entries: Vec<Scored<T>>,
    capacity: usize,
    seen: u64,
    mode: ReplayMode,
    epsilon: f64,
    pub(crate) rng: ChaCha8Rng,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, mode: ReplayMode, epsilon: f64, seed: u64) -> Result<Self> {
        Self::with_rng(capacity, mode, epsilon, ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn with_rng(capacity: usize, mode: ReplayMode, epsilon: f64, rng: ChaCha8Rng) -> Result<Self> {
        if capacity == 0 {
            return Err(TwinError::Config("replay capacity must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(TwinError::Config("replay epsilon must be positive".into()));
        }
        Ok(Self {
            entries: Vec::with_capacity(capacity),
            capacity,
            seen: 0,
            mode,
            epsilon,
            rng,
        })
    }

    pub(crate) fn restore(
        entries: Vec<Scored<T>>,
        capacity: usize,
        seen: u64,
        mode: ReplayMode,
        epsilon: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut buf = Self::with_rng(capacity, mode, epsilon, rng)?;
        if entries.len() > capacity || (entries.len() as u64) > seen {
            return Err(TwinError::Format("replay counters inconsistent with entries".into()));
        }
        buf.entries = entries;
        buf.seen = seen;
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of samples offered to the buffer so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn entries(&self) -> &[Scored<T>] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Option<&Scored<T>> {
        self.entries.get(i)
    }

    pub fn set_loss(&mut self, i: usize, loss: f64) -> Result<()> {
        check_loss(loss)?;
        let e = self
            .entries
            .get_mut(i)
            .ok_or_else(|| TwinError::Config(format!("no replay entry {i}")))?;
        e.loss = loss;
        Ok(())
    }

    /// Reservoir test: always keep while not full, otherwise keep with
    /// probability `capacity / seen` and evict one victim.
    pub fn insert(&mut self, item: T, loss: f64) -> Result<InsertOutcome> {
        check_loss(loss)?;
        self.seen += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(Scored { item, loss });
            return Ok(InsertOutcome::Appended);
        }
        let j = self.rng.random_range(0..self.seen);
        if j >= self.capacity as u64 {
            return Ok(InsertOutcome::Discarded);
        }
        let victim = match self.mode {
            // `j` is already uniform over the slots.
            ReplayMode::Uniform => j as usize,
            ReplayMode::Lars => self.choose_victim(),
        };
        self.entries[victim] = Scored { item, loss };
        Ok(InsertOutcome::Replaced { victim })
    }

    /// Eviction distribution over the current entries.
    pub fn victim_probabilities(&self) -> Vec<f64> {
        let n = self.entries.len();
        match self.mode {
            ReplayMode::Uniform => vec![1.0 / n as f64; n],
            ReplayMode::Lars => {
                let inv: Vec<f64> = self
                    .entries
                    .iter()
                    .map(|e| 1.0 / (e.loss + self.epsilon))
                    .collect();
                let s: f64 = inv.iter().sum();
                inv.into_iter().map(|x| x / s).collect()
            }
        }
    }

    /// Draws one victim index from [`Self::victim_probabilities`].
    pub fn choose_victim(&mut self) -> usize {
        let n = self.entries.len();
        assert!(n > 0, "victim requested from an empty buffer");
        match self.mode {
            ReplayMode::Uniform => self.rng.random_range(0..n),
            ReplayMode::Lars => {
                let inv: Vec<f64> = self
                    .entries
                    .iter()
                    .map(|e| 1.0 / (e.loss + self.epsilon))
                    .collect();
                let total: f64 = inv.iter().sum();
                let mut u = self.rng.random::<f64>() * total;
                for (i, w) in inv.iter().enumerate() {
                    if u < *w {
                        return i;
                    }
                    u -= w;
                }
                n - 1
            }
        }
    }

    /// Uniform draw of `k` distinct indices; `k` is clamped to the buffer
    /// size and the flag reports whether that happened.
    pub fn sample_indices(&mut self, k: usize) -> (Vec<usize>, bool) {
        let n = self.entries.len();
        let take = k.min(n);
        (
            rand::seq::index::sample(&mut self.rng, n, take).into_vec(),
            take < k,
        )
    }
}

fn check_loss(loss: f64) -> Result<()> {
    if !(loss >= 0.0 && loss.is_finite()) {
        return Err(TwinError::NonFinite(format!("replay loss {loss}")));
    }
    Ok(())
}

//! Fixed-capacity episodic memory.
//!
//! Two update policies: `Random` keeps each incoming item with probability
//! capacity/n and overwrites a uniformly random slot; `Reservoir` is classic
//! algorithm R, where the acceptance draw doubles as the eviction slot so
//! that every stream prefix is represented uniformly. Items may carry the
//! network logits recorded at insertion time for distillation replay.

use std::path::Path;

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePolicy {
    Random,
    Reservoir,
}

#[derive(Debug, Clone)]
pub struct MemoryItem {
    /// C×H×W image.
    pub image: Tensor,
    pub label: usize,
    pub task_id: usize,
    /// Logits recorded when the item was stored; never updated afterwards.
    pub logits: Option<Vec<Real>>,
    /// Position in the global stream, 0-based.
    pub seen_index: usize,
}

#[derive(Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    policy: UpdatePolicy,
    items: Vec<MemoryItem>,
    n_seen: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, policy: UpdatePolicy) -> ReplayBuffer {
        ReplayBuffer { capacity, policy, items: Vec::new(), n_seen: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }

    /// Offers one stream item to the buffer.
    pub fn update(&mut self, item: MemoryItem, rng: &mut impl Rng) {
        self.n_seen += 1;
        if self.capacity == 0 {
            return;
        }
        if self.items.len() < self.capacity {
            self.items.push(item);
            return;
        }
        match self.policy {
            UpdatePolicy::Reservoir => {
                let draw = rng.gen_range(0..self.n_seen);
                self.reservoir_step(item, draw);
            }
            UpdatePolicy::Random => {
                let accept = rng.gen_range(0..self.n_seen) < self.capacity;
                if accept {
                    let slot = rng.gen_range(0..self.capacity);
                    self.items[slot] = item;
                }
            }
        }
    }

    /// The reservoir transition given the already-sampled draw in
    /// `[0, n_seen)`: store iff the draw lands below capacity, evicting the
    /// slot at the draw. Exposed so tests can enumerate every branch.
    pub fn reservoir_step(&mut self, item: MemoryItem, draw: usize) {
        debug_assert!(self.items.len() == self.capacity);
        if draw < self.capacity {
            self.items[draw] = item;
        }
    }

    /// Uniform sample without replacement of `min(batch_size, len)` items.
    /// An empty buffer yields an empty batch.
    pub fn retrieve(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<&MemoryItem> {
        let take = batch_size.min(self.items.len());
        if take == 0 {
            return Vec::new();
        }
        // partial Fisher-Yates over indices
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        for i in 0..take {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..take].iter().map(|&i| &self.items[i]).collect()
    }

    /// All stored items with the given label, ordered by seen_index.
    pub fn class_samples(&self, class_id: usize) -> Vec<&MemoryItem> {
        let mut out: Vec<&MemoryItem> =
            self.items.iter().filter(|item| item.label == class_id).collect();
        out.sort_by_key(|item| item.seen_index);
        out
    }

    /// Labels currently present, ascending and deduplicated.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.items.iter().map(|i| i.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Snapshot CSV (label, task, seen index per slot) for audit.
    pub fn audit_csv(&self) -> String {
        let mut out = String::from("slot,label,task_id,seen_index\n");
        for (slot, item) in self.items.iter().enumerate() {
            out.push_str(&format!("{slot},{},{},{}\n", item.label, item.task_id, item.seen_index));
        }
        out
    }

    /// Writes [`ReplayBuffer::audit_csv`] to a file.
    pub fn dump_audit(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.audit_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(label: usize, seen_index: usize) -> MemoryItem {
        MemoryItem {
            image: Tensor::zeros(&[1, 1, 1]),
            label,
            task_id: 0,
            logits: None,
            seen_index,
        }
    }

    #[test]
    fn fills_before_evicting() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for policy in [UpdatePolicy::Random, UpdatePolicy::Reservoir] {
            let mut buf = ReplayBuffer::new(4, policy);
            for i in 0..4 {
                buf.update(item(i, i), &mut rng);
            }
            assert_eq!(buf.len(), 4);
            let mut labels: Vec<usize> = buf.items().iter().map(|i| i.label).collect();
            labels.sort_unstable();
            assert_eq!(labels, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut buf = ReplayBuffer::new(0, UpdatePolicy::Reservoir);
        for i in 0..10 {
            buf.update(item(0, i), &mut rng);
        }
        assert!(buf.is_empty());
        assert_eq!(buf.n_seen(), 10);
    }

    #[test]
    fn retrieve_clamps_and_handles_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut buf = ReplayBuffer::new(8, UpdatePolicy::Random);
        assert!(buf.retrieve(5, &mut rng).is_empty());
        for i in 0..3 {
            buf.update(item(i, i), &mut rng);
        }
        let batch = buf.retrieve(5, &mut rng);
        assert_eq!(batch.len(), 3);
        let mut seen: Vec<usize> = batch.iter().map(|i| i.seen_index).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3, "retrieval must be without replacement");
    }

    #[test]
    fn class_samples_in_insertion_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut buf = ReplayBuffer::new(8, UpdatePolicy::Random);
        for (i, label) in [0usize, 1, 0].into_iter().enumerate() {
            buf.update(item(label, i), &mut rng);
        }
        let zeros = buf.class_samples(0);
        assert_eq!(zeros.len(), 2);
        assert_eq!(zeros[0].seen_index, 0);
        assert_eq!(zeros[1].seen_index, 2);
        assert!(buf.class_samples(9).is_empty());
    }

    #[test]
    fn class_partition_covers_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut buf = ReplayBuffer::new(16, UpdatePolicy::Reservoir);
        for i in 0..40 {
            buf.update(item(i % 5, i), &mut rng);
        }
        let total: usize =
            buf.present_classes().iter().map(|&c| buf.class_samples(c).len()).sum();
        assert_eq!(total, buf.len());
    }

    #[test]
    fn audit_dump_row_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut buf = ReplayBuffer::new(4, UpdatePolicy::Random);
        for i in 0..6 {
            buf.update(item(i % 2, i), &mut rng);
        }
        let dir = std::env::temp_dir().join("oclsim_replay_audit");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("audit.csv");
        buf.dump_audit(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + buf.len());
        std::fs::remove_file(&path).unwrap();
    }
}
